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

#ifndef POPCAL_OPS_H_
#define POPCAL_OPS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "popcal/rng.h"
#include "popcal/tensor.h"

// Differentiable operators. Every op checks operand shapes and throws
// ShapeError naming itself and the offending shapes.
namespace popcal::ops {

// [m, k] x [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with suffix broadcasting: b's shape must equal a's shape or a
// trailing suffix of it (e.g. [B, D] + [D]). Result has a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// Along the last axis.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// Full reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t begin, std::int64_t end);
Tensor reshape(const Tensor& a, Dims dims);

// x [N, C, H, W], weight [F, C, K, K], bias [F]; stride 1, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int padding);
// Non-overlapping k x k max pooling; H and W must be divisible by k.
Tensor maxpool2d(const Tensor& x, int k);

struct BatchNormStats {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
};
// Per-channel normalisation of x [N, C, H, W]. Train mode normalises with
// batch statistics (biased variance) and folds them into `stats` with the
// given momentum (unbiased variance); eval mode uses `stats` only.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, bool train, double momentum = 0.1,
                   double eps = 1e-5);

// table [V, E], ids in [0, V) -> [ids.size(), E]
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Inverted dropout: zeroes each element with probability p, scales survivors
// by 1/(1-p). The mask is drawn from rng.
Tensor dropout(const Tensor& x, double p, RngStream& rng);

// a [B, n, D], b [B, D] -> [B, n] with out[i, k] = a[i, k, :] . b[i, :]
Tensor batched_dot(const Tensor& a, const Tensor& b);

// a [B, K], index[i] in [0, K) -> [B] with out[i] = a[i, index[i]]
Tensor gather_last(const Tensor& a, std::span<const int> index);

// Elementwise log(mean_j exp(x_j)) over same-shaped tensors, computed stably.
Tensor log_mean_exp(const std::vector<Tensor>& xs);

// Forward value `hard`, gradient passed straight to `soft`.
Tensor straight_through(const Tensor& soft, std::vector<double> hard);

// Gumbel-Softmax sample along the last axis. With straight_through the
// forward value is the one-hot argmax of the soft sample and gradients flow
// through the soft sample.
Tensor gumbel_softmax(const Tensor& logits, double temperature,
                      bool straight_through, RngStream& rng);

// Index of the largest entry in each last-axis row; ties go to the lowest
// index.
std::vector<int> argmax_last(const Tensor& a);

}  // namespace popcal::ops

#endif  // POPCAL_OPS_H_
