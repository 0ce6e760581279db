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

#ifndef POPCAL_LAYERS_H_
#define POPCAL_LAYERS_H_

#include <optional>
#include <string>
#include <vector>

#include "popcal/ops.h"
#include "popcal/rng.h"
#include "popcal/tensor.h"

namespace popcal {

// Parameters are initialised from per-name sub-streams of the build rng, so
// a parameter's initial value depends only on (seed, name, row) and not on
// the construction order or sizes of anything else.
Tensor init_uniform(Dims dims, double bound, const RngStream& rng);
// Row r of the table is drawn from rng.split(r), so tables of different
// vocabulary sizes agree on their shared prefix.
Tensor init_rows(std::int64_t rows, std::int64_t cols, double bound, const RngStream& rng);

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, const RngStream& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

// conv3x3(pad 1) -> batchnorm -> relu -> maxpool 2x2, repeated.
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(int blocks, int filters, int in_channels, const RngStream& rng);

  // x [N, C, H, W] -> [N, filters * (H >> blocks) * (W >> blocks)].
  // When dropout_rng is set and rate > 0, dropout follows every block but
  // the last.
  Tensor forward(const Tensor& x, bool train, double dropout_rate,
                 RngStream* dropout_rng) const;
  void collect(const std::string& prefix, ParamList& params, ParamList& buffers) const;

  struct Block {
    Tensor weight, bias, gamma, beta;
    // Mutable so eval-mode forwards stay const; train mode updates them.
    mutable ops::BatchNormStats stats;
  };
  std::vector<Block> blocks;
};

// Multi-layer GRU, one step at a time:
//   r = sigma(x Wxr + bxr + h Whr + bhr)
//   z = sigma(x Wxz + bxz + h Whz + bhz)
//   n = tanh(x Wxn + bxn + r * (h Whn + bhn))
//   h' = (1 - z) * n + z * h
class Gru {
 public:
  Gru() = default;
  Gru(int input, int hidden, int layers, const RngStream& rng);

  // Returns the new per-layer states. With dropout_rng and rate > 0, the
  // output of every layer except the last is dropped before feeding the next.
  std::vector<Tensor> step(const Tensor& x, const std::vector<Tensor>& h,
                           double dropout_rate, RngStream* dropout_rng) const;
  void collect(const std::string& prefix, ParamList& out) const;

  int hidden = 0;
  struct Layer {
    Tensor wx, wh, bx, bh;  // [in, 3H], [H, 3H], [3H], [3H]; gate order r, z, n
  };
  std::vector<Layer> layers;
};

}  // namespace popcal

#endif  // POPCAL_LAYERS_H_
