#pragma once

// Central finite-difference verification of analytic gradients (run in double precision).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "liplab/nn/graph.hpp"

namespace liplab::nn {

struct GradCheckOptions {
  double eps = 1e-3;
  double tolerance = 1e-4;
  /// Entries sampled per parameter tensor; 0 checks every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 1;
  /// When a perturbation flips a relu sign, pool argmax or loss clamp, eps is divided by 10 up to
  /// this many times so the difference quotient stays on one smooth piece.
  int max_shrinks = 4;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t kink_retries = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;

  bool passed() const {
    return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.passed; });
  }
  double worst() const {
    double w = 0.0;
    for (const auto& p : params) w = std::max(w, p.max_rel_error);
    return w;
  }
  std::string to_text() const {
    std::ostringstream os;
    os.precision(3);
    for (const auto& p : params) {
      os << (p.passed ? "PASS " : "FAIL ") << p.name << " entries=" << p.checked << " max_rel_err=" << std::scientific
         << p.max_rel_error << std::defaultfloat << " kink_retries=" << p.kink_retries << "\n";
    }
    return os.str();
  }
};

/// Relative error |a - n| / max(|a|, |n|, floor), where floor = 1e-3 * (largest |n| in the same
/// tensor) + 1e-10, so entries whose gradient cancels to ~0 are judged against the tensor's scale.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `forward(graph)` must build a scalar loss from the store's parameters and return it.
template <class Forward>
GradCheckReport grad_check(ParameterStore<double>& store, Forward&& forward, const GradCheckOptions& opt = {}) {
  auto evaluate = [&](std::vector<std::uint32_t>* decisions) {
    Graph<double> g;
    g.track_decisions(decisions != nullptr);
    const Var loss = forward(g);
    if (decisions) *decisions = std::move(g.decisions());
    return g.value(loss).data.at(0);
  };

  store.zero_grad();
  std::vector<std::uint32_t> base;
  {
    Graph<double> g;
    g.track_decisions(true);
    const Var loss = forward(g);
    base = g.decisions();
    g.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  Rng rng(opt.seed);
  for (auto& p : store.items()) {
    std::vector<std::size_t> entries(p.value.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opt.max_entries && entries.size() > opt.max_entries) {
      for (std::size_t i = 0; i < opt.max_entries; ++i) std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
      entries.resize(opt.max_entries);
    }
    ParamCheck pc;
    pc.name = p.name;
    std::vector<std::pair<double, double>> pairs;
    for (std::size_t k : entries) {
      const double saved = p.value.data[k];
      double eps = opt.eps, numeric = 0.0;
      for (int attempt = 0;; ++attempt) {
        std::vector<std::uint32_t> plus_d, minus_d;
        p.value.data[k] = saved + eps;
        const double plus = evaluate(&plus_d);
        p.value.data[k] = saved - eps;
        const double minus = evaluate(&minus_d);
        p.value.data[k] = saved;
        numeric = (plus - minus) / (2.0 * eps);
        if ((plus_d == base && minus_d == base) || attempt == opt.max_shrinks) break;
        ++pc.kink_retries;
        eps /= 10.0;
      }
      pairs.emplace_back(p.grad.data[k], numeric);
    }
    double scale = 0.0;
    for (auto [a, n] : pairs) scale = std::max(scale, std::abs(n));
    const double floor = 1e-3 * scale + 1e-10;
    for (auto [a, n] : pairs) pc.max_rel_error = std::max(pc.max_rel_error, relative_error(a, n, floor));
    pc.checked = pairs.size();
    pc.passed = pc.max_rel_error < opt.tolerance;
    report.params.push_back(pc);
  }
  return report;
}

}  // namespace liplab::nn
