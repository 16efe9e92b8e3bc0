#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <utility>
#include <vector>

#include "akhcr/tensor.hpp"

namespace akhcr {

enum class Mode { train, infer };
enum class Padding { valid, same };

// ---------------------------------------------------------------- convolution

// kernel layout [kh, kw, Cin, Cout]; stride fixed at 1, "same" zero padding
template <class T>
struct ConvParamsT {
  TensorT<T> kernel;
  TensorT<T> bias;
};
using ConvParams = ConvParamsT<float>;

template <class T>
struct ConvGradsT {
  TensorT<T> dkernel, dbias, dx;
};

namespace detail {

// im2col for same-padded stride-1 convolution: one row per output position,
// columns [ky][kx][cin]. Rows of different samples are written by independent
// chunks, so the fill parallelizes without reordering anything.
template <class T>
void im2col_same(const TensorT<T>& x, int kh, int kw, T* col) {
  const std::int64_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
  const std::int64_t k = static_cast<std::int64_t>(kh) * kw * c;
  const int pad_y = kh / 2, pad_x = kw / 2;
  parallel_for(0, n, 1, [&](std::int64_t nlo, std::int64_t nhi) {
    for (std::int64_t ni = nlo; ni < nhi; ++ni) {
      const T* img = x.data.data() + ni * h * w * c;
      T* row = col + ni * h * w * k;
      for (std::int64_t oy = 0; oy < h; ++oy) {
        for (std::int64_t ox = 0; ox < w; ++ox, row += k) {
          T* dst = row;
          for (int ky = 0; ky < kh; ++ky, dst += kw * c) {
            const std::int64_t iy = oy + ky - pad_y;
            if (iy < 0 || iy >= h) {
              std::memset(dst, 0, static_cast<std::size_t>(kw * c) * sizeof(T));
              continue;
            }
            const std::int64_t x_lo = std::max<std::int64_t>(0, ox - pad_x);
            const std::int64_t x_hi = std::min<std::int64_t>(w - 1, ox + kw - 1 - pad_x);
            const std::int64_t lead = (x_lo - (ox - pad_x)) * c;
            const std::int64_t body = (x_hi - x_lo + 1) * c;
            if (lead > 0) std::memset(dst, 0, static_cast<std::size_t>(lead) * sizeof(T));
            std::memcpy(dst + lead, img + (iy * w + x_lo) * c,
                        static_cast<std::size_t>(body) * sizeof(T));
            const std::int64_t tail = kw * c - lead - body;
            if (tail > 0)
              std::memset(dst + lead + body, 0, static_cast<std::size_t>(tail) * sizeof(T));
          }
        }
      }
    }
  });
}

// scatter-add of column gradients back to the input image
template <class T>
void col2im_same(const T* col, int kh, int kw, TensorT<T>& dx) {
  const std::int64_t n = dx.shape[0], h = dx.shape[1], w = dx.shape[2], c = dx.shape[3];
  const std::int64_t k = static_cast<std::int64_t>(kh) * kw * c;
  const int pad_y = kh / 2, pad_x = kw / 2;
  parallel_for(0, n, 1, [&](std::int64_t nlo, std::int64_t nhi) {
    for (std::int64_t ni = nlo; ni < nhi; ++ni) {
      T* img = dx.data.data() + ni * h * w * c;
      const T* row = col + ni * h * w * k;
      for (std::int64_t oy = 0; oy < h; ++oy) {
        for (std::int64_t ox = 0; ox < w; ++ox, row += k) {
          const T* src = row;
          for (int ky = 0; ky < kh; ++ky, src += kw * c) {
            const std::int64_t iy = oy + ky - pad_y;
            if (iy < 0 || iy >= h) continue;
            const std::int64_t x_lo = std::max<std::int64_t>(0, ox - pad_x);
            const std::int64_t x_hi = std::min<std::int64_t>(w - 1, ox + kw - 1 - pad_x);
            const T* s = src + (x_lo - (ox - pad_x)) * c;
            T* d = img + (iy * w + x_lo) * c;
            const std::int64_t count = (x_hi - x_lo + 1) * c;
            for (std::int64_t i = 0; i < count; ++i) d[i] += s[i];
          }
        }
      }
    }
  });
}

template <class T>
void check_conv_args(const TensorT<T>& x, const ConvParamsT<T>& p) {
  if (x.rank() != 4)
    throw ShapeError("conv2d expects NHWC input, got " + x.shape.str());
  if (p.kernel.rank() != 4)
    throw ShapeError("conv2d kernel must be [kh,kw,Cin,Cout], got " + p.kernel.shape.str());
  const std::int64_t kh = p.kernel.shape[0], kw = p.kernel.shape[1];
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ShapeError("conv2d kernel extents must be odd for same padding, got " +
                     p.kernel.shape.str());
  if (p.kernel.shape[2] != x.shape[3])
    throw ShapeError("conv2d channel mismatch: input " + x.shape.str() + ", kernel " +
                     p.kernel.shape.str());
  if (p.bias.rank() != 1 || p.bias.shape[0] != p.kernel.shape[3])
    throw ShapeError("conv2d bias must be [Cout], got " + p.bias.shape.str());
}

}  // namespace detail

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvParamsT<T>& p) {
  detail::check_conv_args(x, p);
  const std::int64_t n = x.shape[0], h = x.shape[1], w = x.shape[2];
  const int kh = static_cast<int>(p.kernel.shape[0]), kw = static_cast<int>(p.kernel.shape[1]);
  const std::int64_t cin = p.kernel.shape[2], cout = p.kernel.shape[3];
  const std::int64_t rows = n * h * w;
  const std::int64_t k = static_cast<std::int64_t>(kh) * kw * cin;

  TensorT<T> out(Shape{n, h, w, cout});
  const T* col = nullptr;
  std::unique_ptr<T[]> col_buf;
  if (kh == 1 && kw == 1) {
    col = x.data.data();  // 1x1: the input already is the column matrix
  } else {
    col_buf.reset(new T[static_cast<std::size_t>(rows * k)]);
    detail::im2col_same(x, kh, kw, col_buf.get());
    col = col_buf.get();
  }
  detail::gemm(detail::Trans::no, detail::Trans::no, rows, cout, k, col, k,
               p.kernel.data.data(), cout, out.data.data(), cout);

  const T* bias = p.bias.data.data();
  parallel_for(0, rows, 4096, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t r = lo; r < hi; ++r) {
      T* dst = out.data.data() + r * cout;
      for (std::int64_t ch = 0; ch < cout; ++ch) dst[ch] += bias[ch];
    }
  });
  return out;
}

template <class T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& x, const ConvParamsT<T>& p,
                              const TensorT<T>& upstream) {
  detail::check_conv_args(x, p);
  const std::int64_t n = x.shape[0], h = x.shape[1], w = x.shape[2];
  const int kh = static_cast<int>(p.kernel.shape[0]), kw = static_cast<int>(p.kernel.shape[1]);
  const std::int64_t cin = p.kernel.shape[2], cout = p.kernel.shape[3];
  if (upstream.shape != Shape{n, h, w, cout})
    throw ShapeError("conv2d upstream shape " + upstream.shape.str() + " does not match " +
                     Shape{n, h, w, cout}.str());
  const std::int64_t rows = n * h * w;
  const std::int64_t k = static_cast<std::int64_t>(kh) * kw * cin;

  ConvGradsT<T> g;
  g.dkernel = TensorT<T>(p.kernel.shape);
  g.dbias = TensorT<T>(p.bias.shape);
  g.dx = TensorT<T>(x.shape);

  const T* col = nullptr;
  std::unique_ptr<T[]> col_buf;
  if (kh == 1 && kw == 1) {
    col = x.data.data();
  } else {
    col_buf.reset(new T[static_cast<std::size_t>(rows * k)]);
    detail::im2col_same(x, kh, kw, col_buf.get());
    col = col_buf.get();
  }

  // dkernel[k][cout] = col^T * upstream
  detail::gemm(detail::Trans::yes, detail::Trans::no, k, cout, rows, col, k,
               upstream.data.data(), cout, g.dkernel.data.data(), cout);

  // dbias: per-channel sum over all rows, fixed row order
  {
    std::vector<double> acc(static_cast<std::size_t>(cout), 0.0);
    const T* up = upstream.data.data();
    for (std::int64_t r = 0; r < rows; ++r, up += cout)
      for (std::int64_t ch = 0; ch < cout; ++ch)
        acc[static_cast<std::size_t>(ch)] += static_cast<double>(up[ch]);
    for (std::int64_t ch = 0; ch < cout; ++ch)
      g.dbias[ch] = static_cast<T>(acc[static_cast<std::size_t>(ch)]);
  }

  // dcol = upstream * kernel^T, then scatter back
  if (kh == 1 && kw == 1) {
    detail::gemm(detail::Trans::no, detail::Trans::yes, rows, k, cout,
                 upstream.data.data(), cout, p.kernel.data.data(), cout,
                 g.dx.data.data(), k);
  } else {
    std::unique_ptr<T[]> dcol(new T[static_cast<std::size_t>(rows * k)]);
    detail::gemm(detail::Trans::no, detail::Trans::yes, rows, k, cout,
                 upstream.data.data(), cout, p.kernel.data.data(), cout, dcol.get(), k);
    detail::col2im_same(dcol.get(), kh, kw, g.dx);
  }
  return g;
}

// --------------------------------------------------------------- max pooling

struct MaxPoolCache {
  Shape in_shape, out_shape;
  std::vector<std::int64_t> argmax;  // flat input index per output cell
  int window = 0, stride = 0;
  Padding padding = Padding::valid;
};

inline std::int64_t pooled_extent(std::int64_t in, int window, int stride, Padding pad) {
  if (pad == Padding::valid) {
    if (in < window) throw ShapeError("maxpool window larger than input extent");
    return (in - window) / stride + 1;
  }
  return (in + stride - 1) / stride;  // ceil(in/stride)
}

// Padding::same behaves as padding with a -inf sentinel: out-of-bounds cells
// never win. Ties go to the first cell in row-major scan order.
template <class T>
std::pair<TensorT<T>, MaxPoolCache> maxpool_forward(const TensorT<T>& x, int window,
                                                    int stride, Padding padding) {
  if (x.rank() != 4)
    throw ShapeError("maxpool expects NHWC input, got " + x.shape.str());
  if (window < 1 || stride < 1) throw ShapeError("maxpool window/stride must be >= 1");
  const std::int64_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
  const std::int64_t oh = pooled_extent(h, window, stride, padding);
  const std::int64_t ow = pooled_extent(w, window, stride, padding);
  // SAME centers the window footprint, matching pad-with-sentinel semantics
  std::int64_t off_y = 0, off_x = 0;
  if (padding == Padding::same) {
    off_y = -std::max<std::int64_t>(0, ((oh - 1) * stride + window - h) / 2);
    off_x = -std::max<std::int64_t>(0, ((ow - 1) * stride + window - w) / 2);
  }

  TensorT<T> out(Shape{n, oh, ow, c});
  MaxPoolCache cache;
  cache.in_shape = x.shape;
  cache.out_shape = out.shape;
  cache.argmax.resize(static_cast<std::size_t>(out.size()));
  cache.window = window;
  cache.stride = stride;
  cache.padding = padding;

  parallel_for(0, n, 1, [&](std::int64_t nlo, std::int64_t nhi) {
    for (std::int64_t ni = nlo; ni < nhi; ++ni) {
      const T* img = x.data.data() + ni * h * w * c;
      for (std::int64_t oy = 0; oy < oh; ++oy)
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const std::int64_t base_out = (((ni * oh + oy) * ow) + ox) * c;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            T best = std::numeric_limits<T>::lowest();
            std::int64_t best_idx = -1;
            for (int ky = 0; ky < window; ++ky) {
              const std::int64_t iy = oy * stride + off_y + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < window; ++kx) {
                const std::int64_t ix = ox * stride + off_x + kx;
                if (ix < 0 || ix >= w) continue;
                const T v = img[(iy * w + ix) * c + ch];
                if (best_idx < 0 || v > best) {
                  best = v;
                  best_idx = (ni * h * w + iy * w + ix) * c + ch;
                }
              }
            }
            out[base_out + ch] = best;
            cache.argmax[static_cast<std::size_t>(base_out + ch)] = best_idx;
          }
        }
    }
  });
  return {std::move(out), std::move(cache)};
}

template <class T>
TensorT<T> maxpool_backward(const MaxPoolCache& cache, const TensorT<T>& upstream) {
  if (upstream.shape != cache.out_shape)
    throw ShapeError("maxpool upstream shape " + upstream.shape.str() +
                     " does not match forward output " + cache.out_shape.str());
  TensorT<T> dx(cache.in_shape);
  const std::int64_t n = cache.out_shape[0];
  const std::int64_t per_n_out = upstream.size() / n;
  parallel_for(0, n, 1, [&](std::int64_t nlo, std::int64_t nhi) {
    for (std::int64_t ni = nlo; ni < nhi; ++ni)
      for (std::int64_t i = ni * per_n_out; i < (ni + 1) * per_n_out; ++i) {
        const std::int64_t src = cache.argmax[static_cast<std::size_t>(i)];
        if (src >= 0) dx[src] += upstream[i];
      }
  });
  return dx;
}

// --------------------------------------------------------- batch normalization

template <class T>
struct BatchNormParamsT {
  TensorT<T> gamma, beta;
  TensorT<T> running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.9;
};
using BatchNormParams = BatchNormParamsT<float>;

template <class T>
struct BnCacheT {
  TensorT<T> x;
  std::vector<double> mean, inv_std;
  Mode mode = Mode::infer;
};

template <class T>
struct BnGradsT {
  TensorT<T> dgamma, dbeta, dx;
};

namespace detail {
template <class T>
std::int64_t bn_channels(const TensorT<T>& x) {
  if (x.rank() != 4 && x.rank() != 2)
    throw ShapeError("batchnorm expects NHWC or NF input, got " + x.shape.str());
  return x.shape[x.rank() - 1];
}
}  // namespace detail

// Normalizes per channel over all non-channel axes with biased batch variance.
// Train mode updates the running stats in place:
//   running = momentum * running + (1 - momentum) * batch.
template <class T>
std::pair<TensorT<T>, BnCacheT<T>> batchnorm_forward(const TensorT<T>& x,
                                                     BatchNormParamsT<T>& p, Mode mode) {
  const std::int64_t c = detail::bn_channels(x);
  if (p.gamma.size() != c || p.beta.size() != c || p.running_mean.size() != c ||
      p.running_var.size() != c)
    throw ShapeError("batchnorm parameter size does not match channel count " +
                     std::to_string(c));
  const std::int64_t rows = x.size() / c;
  if (mode == Mode::train && x.shape[0] < 2)
    throw DataError("batchnorm train mode needs a batch of at least 2, got " +
                    std::to_string(x.shape[0]));

  BnCacheT<T> cache;
  cache.mode = mode;
  cache.mean.assign(static_cast<std::size_t>(c), 0.0);
  cache.inv_std.assign(static_cast<std::size_t>(c), 0.0);

  std::vector<double> var(static_cast<std::size_t>(c), 0.0);
  if (mode == Mode::train) {
    parallel_for(0, c, 8, [&](std::int64_t clo, std::int64_t chi) {
      for (std::int64_t ch = clo; ch < chi; ++ch) {
        double sum = 0.0;
        for (std::int64_t r = 0; r < rows; ++r)
          sum += static_cast<double>(x[r * c + ch]);
        const double m = sum / static_cast<double>(rows);
        double sq = 0.0;
        for (std::int64_t r = 0; r < rows; ++r) {
          const double d = static_cast<double>(x[r * c + ch]) - m;
          sq += d * d;
        }
        const double v = sq / static_cast<double>(rows);
        cache.mean[static_cast<std::size_t>(ch)] = m;
        var[static_cast<std::size_t>(ch)] = v;
        cache.inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(v + p.eps);
      }
    });
    for (std::int64_t ch = 0; ch < c; ++ch) {
      p.running_mean[ch] = static_cast<T>(p.momentum * p.running_mean[ch] +
                                          (1.0 - p.momentum) * cache.mean[static_cast<std::size_t>(ch)]);
      p.running_var[ch] = static_cast<T>(p.momentum * p.running_var[ch] +
                                         (1.0 - p.momentum) * var[static_cast<std::size_t>(ch)]);
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      cache.mean[static_cast<std::size_t>(ch)] = static_cast<double>(p.running_mean[ch]);
      cache.inv_std[static_cast<std::size_t>(ch)] =
          1.0 / std::sqrt(static_cast<double>(p.running_var[ch]) + p.eps);
    }
  }

  TensorT<T> out(x.shape);
  parallel_for(0, rows, 1024, [&](std::int64_t rlo, std::int64_t rhi) {
    for (std::int64_t r = rlo; r < rhi; ++r)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double xhat = (static_cast<double>(x[r * c + ch]) -
                             cache.mean[static_cast<std::size_t>(ch)]) *
                            cache.inv_std[static_cast<std::size_t>(ch)];
        out[r * c + ch] = static_cast<T>(static_cast<double>(p.gamma[ch]) * xhat +
                                         static_cast<double>(p.beta[ch]));
      }
  });
  cache.x = x;
  return {std::move(out), std::move(cache)};
}

template <class T>
BnGradsT<T> batchnorm_backward(const BnCacheT<T>& cache, const TensorT<T>& gamma,
                               const TensorT<T>& upstream) {
  if (cache.mode != Mode::train)
    throw UsageError("batchnorm_backward needs a train-mode forward cache");
  if (upstream.shape != cache.x.shape)
    throw ShapeError("batchnorm upstream shape mismatch");
  const std::int64_t c = detail::bn_channels(cache.x);
  const std::int64_t rows = cache.x.size() / c;
  const double m = static_cast<double>(rows);

  BnGradsT<T> g;
  g.dgamma = TensorT<T>(gamma.shape);
  g.dbeta = TensorT<T>(gamma.shape);
  g.dx = TensorT<T>(cache.x.shape);

  parallel_for(0, c, 4, [&](std::int64_t clo, std::int64_t chi) {
    for (std::int64_t ch = clo; ch < chi; ++ch) {
      const double mean = cache.mean[static_cast<std::size_t>(ch)];
      const double inv_std = cache.inv_std[static_cast<std::size_t>(ch)];
      double sum_up = 0.0, sum_up_xhat = 0.0;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double up = static_cast<double>(upstream[r * c + ch]);
        const double xhat = (static_cast<double>(cache.x[r * c + ch]) - mean) * inv_std;
        sum_up += up;
        sum_up_xhat += up * xhat;
      }
      g.dbeta[ch] = static_cast<T>(sum_up);
      g.dgamma[ch] = static_cast<T>(sum_up_xhat);
      const double scale = static_cast<double>(gamma[ch]) * inv_std / m;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double up = static_cast<double>(upstream[r * c + ch]);
        const double xhat = (static_cast<double>(cache.x[r * c + ch]) - mean) * inv_std;
        g.dx[r * c + ch] = static_cast<T>(scale * (m * up - sum_up - xhat * sum_up_xhat));
      }
    }
  });
  return g;
}

// ----------------------------------------------------------------------- relu

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

// subgradient at 0 is 0
template <class T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& upstream) {
  if (x.shape != upstream.shape) throw ShapeError("relu_backward shape mismatch");
  TensorT<T> dx(x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? upstream[i] : T(0);
  return dx;
}

// -------------------------------------------------------------------- dropout

template <class T>
struct DropoutResultT {
  TensorT<T> out;
  std::vector<std::uint8_t> mask;  // 1 = kept; empty in infer mode or at rate 0
};

// Inverted dropout: survivors are scaled by 1/(1-rate) so inference is a pure
// pass-through.
template <class T>
DropoutResultT<T> dropout_forward(const TensorT<T>& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw RangeError("dropout rate must be in [0,1), got " + std::to_string(rate));
  DropoutResultT<T> res;
  if (mode == Mode::infer || rate == 0.0) {
    res.out = x;
    return res;
  }
  res.out = TensorT<T>(x.shape);
  res.mask.resize(static_cast<std::size_t>(x.size()));
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const bool keep = rng.uniform() >= rate;
    res.mask[static_cast<std::size_t>(i)] = keep ? 1 : 0;
    res.out[i] = keep ? x[i] * scale : T(0);
  }
  return res;
}

template <class T>
TensorT<T> dropout_backward(const std::vector<std::uint8_t>& mask, double rate,
                            const TensorT<T>& upstream) {
  if (mask.empty()) return upstream;  // identity forward
  if (mask.size() != static_cast<std::size_t>(upstream.size()))
    throw ShapeError("dropout mask size mismatch");
  TensorT<T> dx(upstream.shape);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::int64_t i = 0; i < upstream.size(); ++i)
    dx[i] = mask[static_cast<std::size_t>(i)] ? upstream[i] * scale : T(0);
  return dx;
}

// -------------------------------------------------------- channel concatenation

template <class T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels needs at least one input");
  const std::int64_t n = xs[0].shape[0], h = xs[0].shape[1], w = xs[0].shape[2];
  std::int64_t total_c = 0;
  for (const auto& x : xs) {
    if (x.rank() != 4) throw ShapeError("concat_channels expects NHWC inputs");
    if (x.shape[0] != n || x.shape[1] != h || x.shape[2] != w)
      throw ShapeError("concat_channels spatial mismatch: " + x.shape.str() + " vs " +
                       xs[0].shape.str());
    total_c += x.shape[3];
  }
  TensorT<T> out(Shape{n, h, w, total_c});
  const std::int64_t positions = n * h * w;
  parallel_for(0, positions, 1024, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t pos = lo; pos < hi; ++pos) {
      T* dst = out.data.data() + pos * total_c;
      for (const auto& x : xs) {
        const std::int64_t c = x.shape[3];
        std::memcpy(dst, x.data.data() + pos * c, static_cast<std::size_t>(c) * sizeof(T));
        dst += c;
      }
    }
  });
  return out;
}

// exact left inverse of concat_channels for the backward pass
template <class T>
std::vector<TensorT<T>> split_channels(const TensorT<T>& x,
                                       const std::vector<std::int64_t>& counts) {
  if (x.rank() != 4) throw ShapeError("split_channels expects NHWC input");
  std::int64_t total_c = 0;
  for (std::int64_t c : counts) total_c += c;
  if (total_c != x.shape[3])
    throw ShapeError("split_channels counts do not sum to channel extent");
  const std::int64_t n = x.shape[0], h = x.shape[1], w = x.shape[2];
  std::vector<TensorT<T>> outs;
  outs.reserve(counts.size());
  for (std::int64_t c : counts) outs.emplace_back(Shape{n, h, w, c});
  const std::int64_t positions = n * h * w;
  parallel_for(0, positions, 1024, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t pos = lo; pos < hi; ++pos) {
      const T* src = x.data.data() + pos * total_c;
      for (std::size_t i = 0; i < counts.size(); ++i) {
        const std::int64_t c = counts[i];
        std::memcpy(outs[i].data.data() + pos * c, src,
                    static_cast<std::size_t>(c) * sizeof(T));
        src += c;
      }
    }
  });
  return outs;
}

// ---------------------------------------------------------------------- dense

template <class T>
struct DenseParamsT {
  TensorT<T> weight;  // [n_in, n_out]
  TensorT<T> bias;    // [n_out]
};
using DenseParams = DenseParamsT<float>;

template <class T>
struct DenseGradsT {
  TensorT<T> dweight, dbias, dx;
};

template <class T>
TensorT<T> dense_forward(const TensorT<T>& x, const DenseParamsT<T>& p) {
  if (x.rank() != 2) throw ShapeError("dense expects [N,F] input, got " + x.shape.str());
  if (p.weight.rank() != 2 || x.shape[1] != p.weight.shape[0])
    throw ShapeError("dense width mismatch: input " + x.shape.str() + ", weight " +
                     p.weight.shape.str());
  if (p.bias.size() != p.weight.shape[1]) throw ShapeError("dense bias size mismatch");
  const std::int64_t n = x.shape[0], f = x.shape[1], out_w = p.weight.shape[1];
  TensorT<T> out(Shape{n, out_w});
  detail::gemm(detail::Trans::no, detail::Trans::no, n, out_w, f, x.data.data(), f,
               p.weight.data.data(), out_w, out.data.data(), out_w);
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t j = 0; j < out_w; ++j) out[r * out_w + j] += p.bias[j];
  return out;
}

template <class T>
DenseGradsT<T> dense_backward(const TensorT<T>& x, const DenseParamsT<T>& p,
                              const TensorT<T>& upstream) {
  const std::int64_t n = x.shape[0], f = x.shape[1], out_w = p.weight.shape[1];
  if (upstream.shape != Shape{n, out_w})
    throw ShapeError("dense upstream shape mismatch: " + upstream.shape.str());
  DenseGradsT<T> g;
  g.dweight = TensorT<T>(p.weight.shape);
  g.dbias = TensorT<T>(p.bias.shape);
  g.dx = TensorT<T>(x.shape);
  detail::gemm(detail::Trans::yes, detail::Trans::no, f, out_w, n, x.data.data(), f,
               upstream.data.data(), out_w, g.dweight.data.data(), out_w);
  detail::gemm(detail::Trans::no, detail::Trans::yes, n, f, out_w, upstream.data.data(),
               out_w, p.weight.data.data(), out_w, g.dx.data.data(), f);
  std::vector<double> acc(static_cast<std::size_t>(out_w), 0.0);
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t j = 0; j < out_w; ++j)
      acc[static_cast<std::size_t>(j)] += static_cast<double>(upstream[r * out_w + j]);
  for (std::int64_t j = 0; j < out_w; ++j)
    g.dbias[j] = static_cast<T>(acc[static_cast<std::size_t>(j)]);
  return g;
}

// -------------------------------------------------------------------- flatten

template <class T>
TensorT<T> flatten(const TensorT<T>& x) {
  if (x.rank() != 4) throw ShapeError("flatten expects NHWC input, got " + x.shape.str());
  return TensorT<T>(Shape{x.shape[0], x.shape[1] * x.shape[2] * x.shape[3]}, x.data);
}

template <class T>
TensorT<T> unflatten(const TensorT<T>& x, const Shape& target) {
  if (x.size() != target.numel())
    throw ShapeError("unflatten element count mismatch: " + x.shape.str() + " vs " +
                     target.str());
  return TensorT<T>(target, x.data);
}

}  // namespace akhcr
