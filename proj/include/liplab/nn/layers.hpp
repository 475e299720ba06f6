#pragma once

// Parameter initialisation and composite blocks (attention gate).

#include <cmath>
#include <string>

#include "liplab/nn/graph.hpp"
#include "liplab/nn/ops.hpp"

namespace liplab::nn {

/// U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
template <class T>
void he_uniform(Tensor<T>& w, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-limit, limit));
}

/// Declares `name.w` (cout, cin, k, k) and, optionally, `name.b` (1, cout, 1, 1) = 0.
template <class T>
void declare_conv(ParameterStore<T>& store, const std::string& name, int cin, int cout, int k, Rng& rng,
                  bool bias = true) {
  he_uniform(store.add(name + ".w", Shape{cout, cin, k, k}).value, cin * k * k, rng);
  if (bias) store.add(name + ".b", Shape{1, cout, 1, 1});
}

/// Declares `name.w` (cin, cout, 2, 2) and `name.b`.
template <class T>
void declare_conv_transpose(ParameterStore<T>& store, const std::string& name, int cin, int cout, Rng& rng) {
  he_uniform(store.add(name + ".w", Shape{cin, cout, 2, 2}).value, cin, rng);
  store.add(name + ".b", Shape{1, cout, 1, 1});
}

/// Parameters of one attention gate, bound into a graph.
struct AttentionWeights {
  Var skip_proj;  ///< (inter, c_skip, 1, 1), applied with stride 2
  Var gate_proj;  ///< (inter, c_gate, 1, 1)
  Var gate_bias;  ///< (1, inter, 1, 1)
  Var psi;        ///< (1, inter, 1, 1)
  Var psi_bias;   ///< (1, 1, 1, 1)
};

template <class T>
void declare_attention(ParameterStore<T>& store, const std::string& name, int c_skip, int c_gate, int inter, Rng& rng) {
  declare_conv(store, name + ".skip", c_skip, inter, 1, rng, false);
  declare_conv(store, name + ".gate", c_gate, inter, 1, rng, true);
  declare_conv(store, name + ".psi", inter, 1, 1, rng, true);
}

template <class T>
AttentionWeights bind_attention(Graph<T>& g, ParameterStore<T>& store, const std::string& name) {
  return {g.parameter(store.get(name + ".skip.w")), g.parameter(store.get(name + ".gate.w")),
          g.parameter(store.get(name + ".gate.b")), g.parameter(store.get(name + ".psi.w")),
          g.parameter(store.get(name + ".psi.b"))};
}

/// alpha = sigmoid(psi(relu(W_s skip_down + W_g gate + b_g)) + b_psi) at gate resolution, upsampled
/// (nearest) to the skip resolution. Shape (n, 1, H_skip, W_skip), values in (0, 1).
template <class T>
Var attention_coefficients(Graph<T>& g, Var skip, Var gate, const AttentionWeights& w) {
  const Shape ss = g.shape(skip), gs = g.shape(gate);
  if (ss.n != gs.n || ss.h != 2 * gs.h || ss.w != 2 * gs.w) {
    throw ShapeError("attention_gate: gate " + gs.str() + " must be half the spatial size of skip " + ss.str());
  }
  const Var theta = conv2d(g, skip, w.skip_proj, {}, {2, Padding::valid});
  const Var phi = conv2d(g, gate, w.gate_proj, w.gate_bias, {1, Padding::valid});
  const Var act = relu(g, add(g, theta, phi));
  const Var alpha = sigmoid(g, conv2d(g, act, w.psi, w.psi_bias, {1, Padding::valid}));
  return upsample2(g, alpha);
}

/// skip scaled by its attention coefficients.
template <class T>
Var attention_gate(Graph<T>& g, Var skip, Var gate, const AttentionWeights& w) {
  return scale_by_map(g, skip, attention_coefficients(g, skip, gate, w));
}

}  // namespace liplab::nn
