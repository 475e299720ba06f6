#pragma once

// Reverse-mode differentiation over a recorded tape of tensor operations.

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "liplab/error.hpp"
#include "liplab/nn/tensor.hpp"

namespace liplab::nn {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named parameters in creation order. References stay valid as parameters are added.
template <class T>
class ParameterStore {
 public:
  ParameterStore() = default;
  explicit ParameterStore(std::uint64_t seed) : seed_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    params_.push_back({name, Tensor<T>(shape), Tensor<T>(shape)});
    return params_.back();
  }

  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), T{});
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::deque<Parameter<T>>& items() { return params_; }
  const std::deque<Parameter<T>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  /// Copies values (not gradients) into another store with identical names and shapes.
  template <class U>
  void copy_values_to(ParameterStore<U>& other) const {
    for (const auto& p : params_) {
      auto& q = other.get(p.name);
      if (!(q.value.shape == p.value.shape)) throw ShapeError("shape mismatch for parameter '" + p.name + "'");
      q.value.data.assign(p.value.data.begin(), p.value.data.end());
    }
  }

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t seed_ = 0;
};

/// Handle to a graph node.
struct Var {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  Graph() = default;
  /// With `with_grad` false, parameters enter as constants and no backward closures are kept.
  explicit Graph(bool with_grad) : grad_enabled_(with_grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant leaf; never receives a gradient.
  Var input(Tensor<T> value) {
    if (!value.all_finite()) throw NumericalError("non-finite value in graph input");
    nodes_.push_back({std::move(value), {}, {}, nullptr, false, "input"});
    return {nodes_.size() - 1};
  }

  /// Leaf bound to a parameter; backward accumulates straight into the parameter's gradient.
  Var parameter(Parameter<T>& p) {
    nodes_.push_back({p.value, {}, {}, grad_enabled_ ? &p : nullptr, grad_enabled_, p.name});
    return {nodes_.size() - 1};
  }

  /// Records an operation output. `backward` is called at most once, with the gradient of the output.
  Var record(const char* op, Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    if (!value.all_finite()) throw NumericalError(std::string("non-finite output from ") + op);
    bool needs = false;
    for (Var v : inputs) needs = needs || (v.valid() && nodes_[v.id].requires_grad);
    nodes_.push_back({std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs, op});
    return {nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape; }
  bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }

  /// Gradient accumulator for `v`, allocated as zeros on first use.
  Tensor<T>& grad(Var v) {
    Node& node = nodes_.at(v.id);
    if (node.param) return node.param->grad;
    if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape);
    return node.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse order, once each.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw ShapeError("backward needs a scalar output");
    if (!requires_grad(loss)) return;
    grad(loss).data[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.backward || node.grad.empty()) continue;
      node.backward(*this, node.grad);
      node.backward = nullptr;
      node.grad = Tensor<T>();
    }
  }

  /// Non-smooth branch decisions (relu signs, pool argmax, clamps) when tracking is enabled.
  void track_decisions(bool on) { tracking_ = on; }
  bool tracking() const { return tracking_; }
  std::vector<std::uint32_t>& decisions() { return decisions_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    std::string op;
  };
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> decisions_;
  bool tracking_ = false;
  bool grad_enabled_ = true;
};

}  // namespace liplab::nn
