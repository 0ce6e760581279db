// Copyright 2026 The popcal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "popcal/tensor.h"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace popcal {

std::int64_t element_count(const Dims& dims) {
  std::int64_t n = 1;
  for (auto d : dims) {
    if (d < 0) throw ShapeError("negative dimension in " + dims_string(dims));
    n *= d;
  }
  return n;
}

std::string dims_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ", ";
    os << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Dims dims, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(static_cast<std::size_t>(element_count(dims)), 0.0);
  node_->dims = std::move(dims);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Dims dims, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (element_count(dims) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("Tensor: shape " + dims_string(dims) + " needs " +
                     std::to_string(element_count(dims)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_->dims = std::move(dims);
  node_->value.assign(values.begin(), values.end());
  node_->requires_grad = requires_grad;
}

Tensor Tensor::from_buffer(Dims dims, Buffer values, bool requires_grad) {
  if (element_count(dims) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("Tensor: shape " + dims_string(dims) + " needs " +
                     std::to_string(element_count(dims)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->dims = std::move(dims);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Dims{}, std::vector<double>{v}, requires_grad);
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("dim: axis " + std::to_string(axis) +
                     " out of range for " + dims_string(dims()));
  }
  return node_->dims[a];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + dims_string(dims()) +
                     " is not a scalar");
  }
  return node_->value[0];
}

std::span<double> Tensor::mutable_grad() {
  return {node_->grad_buffer(), node_->value.size()};
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return from_buffer(node_->dims, node_->value, false);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                dims_string(dims()));
  }
  if (node_->consumed) {
    throw std::logic_error("backward: graph already consumed by a previous backward()");
  }
  if (!node_->requires_grad) {
    node_->consumed = true;
    return;
  }

  // Iterative post-order DFS over recorded (non-leaf) nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && child->backward && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    n->backward = nullptr;
    n->inputs.clear();
    n->consumed = true;
  }
}

}  // namespace popcal
