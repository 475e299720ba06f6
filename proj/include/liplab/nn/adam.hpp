#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "liplab/nn/graph.hpp"

namespace liplab::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moment buffers start at zero and are keyed by parameter name.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update from the accumulated gradients. Throws NumericalError naming the first
  /// parameter whose gradient is not finite, before touching any weight.
  void step(ParameterStore<T>& store) {
    for (const auto& p : store.items()) {
      if (!p.grad.all_finite()) throw NumericalError("non-finite gradient for parameter '" + p.name + "'");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& p : store.items()) {
      auto& [m, v] = moments_[p.name];
      if (m.size() != p.value.size()) {
        m.assign(p.value.size(), 0.0);
        v.assign(p.value.size(), 0.0);
      }
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double g = p.grad.data[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / c1, vhat = v[i] / c2;
        p.value.data[i] = static_cast<T>(p.value.data[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  int steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace liplab::nn
