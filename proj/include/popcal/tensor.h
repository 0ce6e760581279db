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

#ifndef POPCAL_TENSOR_H_
#define POPCAL_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace popcal {

using Dims = std::vector<std::int64_t>;

std::int64_t element_count(const Dims& dims);
std::string dims_string(const Dims& dims);

// Raised when an op receives operands of incompatible shape. The message
// names the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// 64-byte aligned storage. Vectorised kernels peel loops according to the
// address, so a fixed alignment keeps results bit-identical across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlignment}));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t{kAlignment}); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {

struct Node {
  Dims dims;
  Buffer value;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs. Empty for leaves.
  std::function<void(Node&)> backward;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

}  // namespace detail

// Dense row-major float64 array. Copies share storage; a tensor produced by an
// op on inputs that require grad records the op so backward() can run.
// Each recorded graph is single-use: backward() consumes it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, bool requires_grad = false);
  Tensor(Dims dims, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_buffer(Dims dims, Buffer values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Dims& dims() const { return node_->dims; }
  int rank() const { return static_cast<int>(node_->dims.size()); }
  // Negative axes count from the end.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const {
    return static_cast<std::int64_t>(node_->value.size());
  }

  std::span<const double> values() const { return node_->value; }
  // Direct writes bypass the tape; for initialisation and optimizers only.
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double operator[](std::int64_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // Reverse-mode sweep from this scalar. Throws if this is not a scalar or
  // if the graph was already consumed by an earlier call.
  void backward() const;

  // New leaf with copied values and no history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

}  // namespace popcal

#endif  // POPCAL_TENSOR_H_
