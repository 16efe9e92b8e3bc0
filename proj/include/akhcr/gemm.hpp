#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "akhcr/parallel.hpp"

// Blocked, packed GEMM used by matmul, conv (im2col) and dense layers.
// The reduction over k always runs in ascending order for every output
// element and parallelism only partitions output tiles, so results are
// bit-identical regardless of the worker count.

namespace akhcr::detail {

enum class Trans : std::uint8_t { no, yes };

template <class T>
struct GemmTile;
template <>
struct GemmTile<float> {
  static constexpr int MR = 6;
  static constexpr int NR = 32;
};
template <>
struct GemmTile<double> {
  static constexpr int MR = 6;
  static constexpr int NR = 16;
};

inline constexpr std::int64_t kGemmKC = 256;
inline constexpr std::int64_t kGemmMC = 96;

template <class T, int MR, int NR>
inline void gemm_micro_kernel(std::int64_t kc, const T* ap, const T* bp, T* c,
                              std::int64_t ldc, int mr, int nr, bool overwrite) {
  T acc[MR * NR] = {};
  for (std::int64_t k = 0; k < kc; ++k) {
    const T* a = ap + k * MR;
    const T* b = bp + k * NR;
    for (int i = 0; i < MR; ++i) {
      const T ai = a[i];
      T* row = acc + i * NR;
      for (int j = 0; j < NR; ++j) row[j] += ai * b[j];
    }
  }
  if (overwrite) {
    for (int i = 0; i < mr; ++i)
      for (int j = 0; j < nr; ++j) c[i * ldc + j] = acc[i * NR + j];
  } else {
    for (int i = 0; i < mr; ++i)
      for (int j = 0; j < nr; ++j) c[i * ldc + j] += acc[i * NR + j];
  }
}

// Packs rows [m0, m0+mc) x cols [k0, k0+kc) of A(op) into MR-high panels,
// panel-major, k fastest-within-panel: ap[(panel*kc + k)*MR + row].
template <class T, int MR>
inline void gemm_pack_a(Trans ta, const T* A, std::int64_t lda, std::int64_t m0,
                        std::int64_t mc, std::int64_t k0, std::int64_t kc, T* ap) {
  const std::int64_t panels = (mc + MR - 1) / MR;
  for (std::int64_t p = 0; p < panels; ++p) {
    const std::int64_t mbase = m0 + p * MR;
    const int valid = static_cast<int>(std::min<std::int64_t>(MR, m0 + mc - mbase));
    T* dst = ap + p * kc * MR;
    if (ta == Trans::no) {
      for (std::int64_t k = 0; k < kc; ++k)
        for (int r = 0; r < MR; ++r)
          dst[k * MR + r] = (r < valid) ? A[(mbase + r) * lda + (k0 + k)] : T(0);
    } else {
      for (std::int64_t k = 0; k < kc; ++k)
        for (int r = 0; r < MR; ++r)
          dst[k * MR + r] = (r < valid) ? A[(k0 + k) * lda + (mbase + r)] : T(0);
    }
  }
}

// Packs rows [k0, k0+kc) x cols [0, N) of B(op) into NR-wide panels:
// bp[(panel*kc + k)*NR + col].
template <class T, int NR>
inline void gemm_pack_b(Trans tb, const T* B, std::int64_t ldb, std::int64_t k0,
                        std::int64_t kc, std::int64_t N, T* bp) {
  const std::int64_t panels = (N + NR - 1) / NR;
  parallel_for(0, panels, 8, [&](std::int64_t plo, std::int64_t phi) {
    for (std::int64_t p = plo; p < phi; ++p) {
      const std::int64_t nbase = p * NR;
      const int valid = static_cast<int>(std::min<std::int64_t>(NR, N - nbase));
      T* dst = bp + p * kc * NR;
      if (tb == Trans::no) {
        for (std::int64_t k = 0; k < kc; ++k) {
          const T* src = B + (k0 + k) * ldb + nbase;
          T* out = dst + k * NR;
          int j = 0;
          for (; j < valid; ++j) out[j] = src[j];
          for (; j < NR; ++j) out[j] = T(0);
        }
      } else {
        for (std::int64_t k = 0; k < kc; ++k) {
          T* out = dst + k * NR;
          for (int j = 0; j < NR; ++j)
            out[j] = (j < valid) ? B[(nbase + j) * ldb + (k0 + k)] : T(0);
        }
      }
    }
  });
}

// C(M x N, ldc) = A(op) * B(op), or += when accumulate is set.
// A is stored M x K (lda) or K x M when ta == Trans::yes; B likewise.
template <class T>
void gemm(Trans ta, Trans tb, std::int64_t M, std::int64_t N, std::int64_t K,
          const T* A, std::int64_t lda, const T* B, std::int64_t ldb, T* C,
          std::int64_t ldc, bool accumulate = false) {
  if (M <= 0 || N <= 0) return;
  if (K <= 0) {
    if (!accumulate)
      for (std::int64_t i = 0; i < M; ++i)
        std::memset(C + i * ldc, 0, static_cast<std::size_t>(N) * sizeof(T));
    return;
  }

  constexpr int MR = GemmTile<T>::MR;
  constexpr int NR = GemmTile<T>::NR;
  const std::int64_t bpanels = (N + NR - 1) / NR;
  std::unique_ptr<T[]> bp(new T[static_cast<std::size_t>(bpanels) * kGemmKC * NR]);

  for (std::int64_t k0 = 0; k0 < K; k0 += kGemmKC) {
    const std::int64_t kc = std::min(kGemmKC, K - k0);
    gemm_pack_b<T, NR>(tb, B, ldb, k0, kc, N, bp.get());
    const bool overwrite = (k0 == 0) && !accumulate;

    parallel_for(0, M, kGemmMC, [&](std::int64_t m0, std::int64_t m1) {
      const std::int64_t mc = m1 - m0;
      const std::int64_t apanels = (mc + MR - 1) / MR;
      std::vector<T> ap(static_cast<std::size_t>(apanels) * kc * MR);
      gemm_pack_a<T, MR>(ta, A, lda, m0, mc, k0, kc, ap.data());

      for (std::int64_t q = 0; q < bpanels; ++q) {
        const std::int64_t nbase = q * NR;
        const int nr = static_cast<int>(std::min<std::int64_t>(NR, N - nbase));
        const T* bpanel = bp.get() + q * kc * NR;
        for (std::int64_t p = 0; p < apanels; ++p) {
          const std::int64_t mbase = m0 + p * MR;
          const int mr = static_cast<int>(std::min<std::int64_t>(MR, m1 - mbase));
          gemm_micro_kernel<T, MR, NR>(kc, ap.data() + p * kc * MR, bpanel,
                                       C + mbase * ldc + nbase, ldc, mr, nr,
                                       overwrite);
        }
      }
    });
  }
}

}  // namespace akhcr::detail
