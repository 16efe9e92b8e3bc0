#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "akhcr/params.hpp"

namespace akhcr {

template <class T>
struct AdamStateT {
  struct Moments {
    TensorT<T> m, v;
  };
  std::map<std::string, Moments> moments;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};
using AdamState = AdamStateT<float>;

// One Adam update over every parameter in the store. Moments are created
// zero-initialized on first use; t advances once per call.
template <class T>
void adam_step(ParamStoreT<T>& store, const ParamStoreT<T>& grads, AdamStateT<T>& state,
               double lr) {
  if (lr <= 0.0) throw RangeError("adam_step: learning rate must be positive");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  for (auto& [name, param] : store) {
    const auto git = grads.find(name);
    if (git == grads.end())
      throw ShapeError("adam_step: missing gradient for parameter '" + name + "'");
    const TensorT<T>& g = git->second;
    if (g.shape != param.shape)
      throw ShapeError("adam_step: gradient shape " + g.shape.str() +
                       " does not match parameter '" + name + "' " + param.shape.str());
    if (!all_finite(g))
      throw NumericError("adam_step: non-finite gradient for parameter '" + name + "'");

    auto& mom = state.moments[name];
    if (mom.m.size() == 0) {
      mom.m = TensorT<T>(param.shape);
      mom.v = TensorT<T>(param.shape);
    }
    for (std::int64_t i = 0; i < param.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double m = state.beta1 * static_cast<double>(mom.m[i]) + (1.0 - state.beta1) * gi;
      const double v = state.beta2 * static_cast<double>(mom.v[i]) + (1.0 - state.beta2) * gi * gi;
      mom.m[i] = static_cast<T>(m);
      mom.v[i] = static_cast<T>(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      param[i] = static_cast<T>(static_cast<double>(param[i]) -
                                lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

// Manual epoch-by-epoch schedule: an ordered list of (epoch count, rate)
// phases, e.g. "5x0.001,3x0.0001,3x0.00004".
struct LrSchedule {
  std::vector<std::pair<int, double>> phases;

  static LrSchedule paper_default() {
    return LrSchedule{{{5, 1e-3}, {3, 1e-4}, {3, 4e-5}}};
  }

  static LrSchedule parse(const std::string& text) {
    LrSchedule s;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t comma = text.find(',', pos);
      if (comma == std::string::npos) comma = text.size();
      const std::string part = text.substr(pos, comma - pos);
      const std::size_t x = part.find('x');
      if (x == std::string::npos || x == 0 || x + 1 >= part.size())
        throw ConfigError("bad lr schedule phase '" + part + "' (want <epochs>x<rate>)");
      int count = 0;
      double rate = 0.0;
      try {
        std::size_t used = 0;
        count = std::stoi(part.substr(0, x), &used);
        if (used != x) throw std::invalid_argument("trailing");
        rate = std::stod(part.substr(x + 1), &used);
        if (used != part.size() - x - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("bad lr schedule phase '" + part + "'");
      }
      if (count < 1 || rate <= 0.0)
        throw ConfigError("lr schedule phase '" + part + "' needs count >= 1 and rate > 0");
      s.phases.emplace_back(count, rate);
      pos = comma + 1;
    }
    if (s.phases.empty()) throw ConfigError("empty lr schedule");
    return s;
  }

  int total_epochs() const {
    int n = 0;
    for (const auto& [count, rate] : phases) n += count;
    return n;
  }

  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < phases.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(phases[i].first) + "x" + format_rate(phases[i].second);
    }
    return out;
  }

  static std::string format_rate(double rate) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10f", rate);
    std::string s(buf);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

// `epoch` is 1-based.
inline double lr_for_epoch(const LrSchedule& schedule, int epoch) {
  if (epoch < 1 || epoch > schedule.total_epochs())
    throw RangeError("epoch " + std::to_string(epoch) + " outside schedule of " +
                     std::to_string(schedule.total_epochs()) + " epochs");
  int remaining = epoch;
  for (const auto& [count, rate] : schedule.phases) {
    if (remaining <= count) return rate;
    remaining -= count;
  }
  throw RangeError("unreachable: schedule lookup fell through");
}

}  // namespace akhcr
