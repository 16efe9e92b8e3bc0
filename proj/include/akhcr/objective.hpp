#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "akhcr/params.hpp"
#include "akhcr/tensor.hpp"

namespace akhcr {

struct LossConfig {
  double lambda = 1e-3;                      // L2 strength
  std::vector<std::string> regularized;      // dense kernels only
};

struct LossReport {
  double data_loss = 0.0;  // mean cross-entropy over the batch
  double reg_loss = 0.0;   // (lambda / 2m) * sum ||W||^2
  double total = 0.0;
};

// Row-wise softmax with max subtraction. Rows sum to 1 within 1e-6 for any
// finite input, including extreme logits.
template <class T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() != 2)
    throw ShapeError("softmax expects [N,C] logits, got " + logits.shape.str());
  if (!all_finite(logits)) throw NumericError("softmax input contains NaN/Inf");
  const std::int64_t n = logits.shape[0], c = logits.shape[1];
  TensorT<T> out(logits.shape);
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = logits.data.data() + r * c;
    T* dst = out.data.data() + r * c;
    T max_v = row[0];
    for (std::int64_t j = 1; j < c; ++j) max_v = std::max(max_v, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - max_v));
      dst[j] = static_cast<T>(e);
      denom += e;
    }
    for (std::int64_t j = 0; j < c; ++j)
      dst[j] = static_cast<T>(static_cast<double>(dst[j]) / denom);
  }
  return out;
}

inline constexpr double kProbFloor = 1e-12;

namespace detail {
template <class T>
std::vector<int> onehot_to_indices(const TensorT<T>& labels) {
  if (labels.rank() != 2)
    throw ShapeError("one-hot labels must be [N,C], got " + labels.shape.str());
  const std::int64_t n = labels.shape[0], c = labels.shape[1];
  std::vector<int> idx(static_cast<std::size_t>(n), -1);
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t j = 0; j < c; ++j)
      if (labels[r * c + j] != T(0)) {
        if (idx[static_cast<std::size_t>(r)] >= 0)
          throw RangeError("one-hot label row " + std::to_string(r) +
                           " has more than one nonzero entry");
        idx[static_cast<std::size_t>(r)] = static_cast<int>(j);
      }
    if (idx[static_cast<std::size_t>(r)] < 0)
      throw RangeError("one-hot label row " + std::to_string(r) + " is all zero");
  }
  return idx;
}

inline void check_labels(const std::vector<int>& labels, std::int64_t n, std::int64_t c) {
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeError("label count " + std::to_string(labels.size()) +
                     " does not match batch size " + std::to_string(n));
  for (int v : labels)
    if (v < 0 || v >= c)
      throw RangeError("label " + std::to_string(v) + " out of range [0," +
                       std::to_string(c) + ")");
}
}  // namespace detail

// Mean over the batch of -log(p[true class]). Probabilities below the floor
// are clamped; `clamped`, when given, receives the number of clamped rows so
// callers can log a warning.
template <class T>
double cce(const TensorT<T>& probs, const std::vector<int>& labels,
           std::int64_t* clamped = nullptr) {
  if (probs.rank() != 2)
    throw ShapeError("cce expects [N,C] probabilities, got " + probs.shape.str());
  const std::int64_t n = probs.shape[0], c = probs.shape[1];
  detail::check_labels(labels, n, c);
  std::int64_t floored = 0;
  double sum = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    double p = static_cast<double>(probs[r * c + labels[static_cast<std::size_t>(r)]]);
    if (p < kProbFloor) {
      p = kProbFloor;
      ++floored;
    }
    sum -= std::log(p);
  }
  if (clamped) *clamped = floored;
  return sum / static_cast<double>(n);
}

template <class T>
double cce(const TensorT<T>& probs, const TensorT<T>& onehot,
           std::int64_t* clamped = nullptr) {
  return cce(probs, detail::onehot_to_indices(onehot), clamped);
}

// (lambda / 2m) * sum over configured kernels of the squared entries.
template <class T>
double l2_penalty(const ParamStoreT<T>& store, const LossConfig& cfg, std::int64_t m) {
  if (m < 1) throw RangeError("l2_penalty: batch size must be >= 1");
  if (cfg.lambda == 0.0 || cfg.regularized.empty()) return 0.0;
  double sum_sq = 0.0;
  for (const auto& name : cfg.regularized) {
    const auto it = store.find(name);
    if (it == store.end())
      throw ConfigError("l2_penalty: unknown parameter '" + name + "'");
    for (const T v : it->second.data) sum_sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return cfg.lambda / (2.0 * static_cast<double>(m)) * sum_sq;
}

// Total loss J and the fused softmax-cross-entropy gradient at the logits,
// grad = (softmax(logits) - onehot) / N. The L2 term (lambda/m) W is applied
// to the regularized kernels during the model backward pass, not here.
template <class T>
std::pair<LossReport, TensorT<T>> loss_and_logit_grad(const TensorT<T>& logits,
                                                      const std::vector<int>& labels,
                                                      const ParamStoreT<T>& store,
                                                      const LossConfig& cfg,
                                                      std::int64_t* clamped = nullptr) {
  const std::int64_t n = logits.shape[0], c = logits.shape[1];
  detail::check_labels(labels, n, c);
  const TensorT<T> probs = softmax(logits);
  LossReport report;
  report.data_loss = cce(probs, labels, clamped);
  report.reg_loss = l2_penalty(store, cfg, n);
  report.total = report.data_loss + report.reg_loss;

  TensorT<T> grad(logits.shape);
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    const std::int64_t t = labels[static_cast<std::size_t>(r)];
    for (std::int64_t j = 0; j < c; ++j) {
      const T delta = (j == t) ? T(1) : T(0);
      grad[r * c + j] = (probs[r * c + j] - delta) * inv_n;
    }
  }
  return {report, std::move(grad)};
}

}  // namespace akhcr
