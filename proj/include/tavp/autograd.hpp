/* Copyright 2026 The TAVP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef TAVP_AUTOGRAD_HPP_
#define TAVP_AUTOGRAD_HPP_

// Reverse-mode differentiation over a per-step tape. A Graph lives for one
// forward/backward pass; parameters outlive it and receive gradients through
// their leaf nodes.

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "tavp/tensor.hpp"

namespace tavp {

struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), trainable(train) {}

  std::string name;
  Tensor value;
  Tensor grad;  // empty until a backward pass touches it
  bool trainable = true;

  void zero_grad() { grad = Tensor(); }
  double grad_squared_norm() const { return grad.empty() ? 0.0 : grad.squared_norm(); }
  // Namespace is the first dotted component of the name.
  std::string name_space() const { return name.substr(0, name.find('.')); }
};

class Graph;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  int dim(int i) const { return value().dim(i); }
  bool requires_grad() const;
  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// grad_in[k] is null when input k does not require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  // The parameter must stay alive and unmodified until backward() returns.
  Var parameter(Parameter& p) {
    Node& n = nodes_.emplace_back();
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = p.trainable;
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& v : inputs) {
      if (v.graph_ != this) throw Error("variable belongs to a different graph");
      needs = needs || nodes_[v.id_].requires_grad;
    }
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    if (needs) {
      n.requires_grad = true;
      n.inputs.reserve(inputs.size());
      for (const Var& v : inputs) n.inputs.push_back(v.id_);
      n.backward = std::move(fn);
    }
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  const Tensor& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of a scalar root with respect to every trainable leaf; results
  // are accumulated into Parameter::grad.
  void backward(const Var& root) {
    if (root.graph_ != this) throw Error("root belongs to a different graph");
    if (value(root.id_).size() != 1) {
      throw ShapeError("backward() needs a scalar root, got " + shape_str(value(root.id_).shape()));
    }
    if (!nodes_[root.id_].requires_grad) return;
    nodes_[root.id_].grad = Tensor(value(root.id_).shape(), 1.0);
    std::vector<Tensor*> grads_in;
    for (int id = root.id_; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) {
        if (n.param->grad.empty()) {
          n.param->grad = std::move(n.grad);
        } else {
          n.param->grad += n.grad;
        }
        n.grad = Tensor();
        continue;
      }
      if (!n.backward) continue;
      grads_in.assign(n.inputs.size(), nullptr);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        Node& in = nodes_[n.inputs[k]];
        if (!in.requires_grad) continue;
        if (in.grad.empty()) in.grad = Tensor(value(n.inputs[k]).shape());
        grads_in[k] = &in.grad;
      }
      n.backward(n.grad, grads_in);
      // Release intermediate buffers as we go.
      n.grad = Tensor();
      n.backward = nullptr;
    }
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    Tensor grad;
  };
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline bool Var::requires_grad() const { return graph_->requires_grad(id_); }

}  // namespace tavp

#endif  // TAVP_AUTOGRAD_HPP_
