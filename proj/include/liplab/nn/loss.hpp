#pragma once

#include <algorithm>
#include <cmath>

#include "liplab/nn/graph.hpp"

namespace liplab::nn {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceSmooth = 1e-6;

/// lambda * BCE + (1 - lambda) * (1 - softDice), with BCE averaged over elements and
/// softDice = 2 sum(p t) / (sum p + sum t + 1e-6) taken over the whole batch.
/// Probabilities are clamped to [1e-7, 1 - 1e-7] inside the log terms only.
template <class T>
Var loss_bce_dice(Graph<T>& g, Var pred, const Tensor<T>& target, double lambda = 0.5) {
  const Tensor<T>& p = g.value(pred);
  if (!(p.shape == target.shape)) {
    throw ShapeError("loss_bce_dice: prediction " + p.shape.str() + " vs target " + target.shape.str());
  }
  if (lambda < 0.0 || lambda > 1.0) throw UsageError("lambda_bce must be in [0, 1]");
  const double count = static_cast<double>(p.size());
  double bce = 0.0, inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p.data[i], ti = target.data[i];
    const double pc = std::clamp(pi, kProbClamp, 1.0 - kProbClamp);
    bce -= ti * std::log(pc) + (1.0 - ti) * std::log(1.0 - pc);
    inter += pi * ti;
    psum += pi;
    tsum += ti;
  }
  if (g.tracking()) {
    for (auto v : p.data) g.decisions().push_back(v < kProbClamp ? 0u : (v > 1.0 - kProbClamp ? 2u : 1u));
  }
  bce /= count;
  const double denom = psum + tsum + kDiceSmooth;
  const double dice = 2.0 * inter / denom;
  const double loss = lambda * bce + (1.0 - lambda) * (1.0 - dice);
  return g.record("loss_bce_dice", Tensor<T>(Shape{}, static_cast<T>(loss)), {pred},
                  [pred, target, lambda, count, inter, denom](Graph<T>& g, const Tensor<T>& dy) {
                    const auto& pv = g.value(pred).data;
                    auto& dp = g.grad(pred).data;
                    const double scale = dy.data[0];
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      const double pi = pv[i], ti = target.data[i];
                      double d_bce = 0.0;
                      if (pi >= kProbClamp && pi <= 1.0 - kProbClamp) d_bce = (-ti / pi + (1.0 - ti) / (1.0 - pi)) / count;
                      const double d_dice = (2.0 * ti * denom - 2.0 * inter) / (denom * denom);
                      dp[i] += static_cast<T>(scale * (lambda * d_bce - (1.0 - lambda) * d_dice));
                    }
                  });
}

/// Mean squared error.
template <class T>
Var mse_loss(Graph<T>& g, Var pred, const Tensor<T>& target) {
  const Tensor<T>& p = g.value(pred);
  if (!(p.shape == target.shape)) throw ShapeError("mse_loss: " + p.shape.str() + " vs " + target.shape.str());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p.data[i]) - target.data[i];
    s += d * d;
  }
  const double count = static_cast<double>(p.size());
  return g.record("mse_loss", Tensor<T>(Shape{}, static_cast<T>(s / count)), {pred},
                  [pred, target, count](Graph<T>& g, const Tensor<T>& dy) {
                    const auto& pv = g.value(pred).data;
                    auto& dp = g.grad(pred).data;
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      dp[i] += static_cast<T>(dy.data[0] * 2.0 * (static_cast<double>(pv[i]) - target.data[i]) / count);
                    }
                  });
}

}  // namespace liplab::nn
