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

#include "popcal/layers.h"

#include <cmath>

namespace popcal {

Tensor init_uniform(Dims dims, double bound, const RngStream& rng) {
  RngStream r = rng;
  std::vector<double> v(static_cast<std::size_t>(element_count(dims)));
  for (auto& x : v) x = r.uniform(-bound, bound);
  return Tensor(std::move(dims), std::move(v), true);
}

Tensor init_rows(std::int64_t rows, std::int64_t cols, double bound, const RngStream& rng) {
  std::vector<double> v(static_cast<std::size_t>(rows * cols));
  for (std::int64_t i = 0; i < rows; ++i) {
    RngStream r = rng.split(static_cast<std::uint64_t>(i));
    for (std::int64_t j = 0; j < cols; ++j) v[i * cols + j] = r.uniform(-bound, bound);
  }
  return Tensor({rows, cols}, std::move(v), true);
}

Linear::Linear(int in, int out, const RngStream& rng)
    : weight(init_uniform({in, out}, 1.0 / std::sqrt(in), rng.split("weight"))),
      bias(Tensor({out}, true)) {}

Tensor Linear::forward(const Tensor& x) const {
  return ops::add(ops::matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

ConvEncoder::ConvEncoder(int n_blocks, int filters, int in_channels, const RngStream& rng) {
  int c = in_channels;
  for (int i = 0; i < n_blocks; ++i) {
    const RngStream br = rng.split("block" + std::to_string(i));
    Block b;
    b.weight = init_uniform({filters, c, 3, 3}, 1.0 / std::sqrt(9.0 * c), br.split("weight"));
    b.bias = Tensor({filters}, true);
    b.gamma = Tensor({filters}, std::vector<double>(filters, 1.0), true);
    b.beta = Tensor({filters}, true);
    b.stats.running_mean = Tensor({filters});
    b.stats.running_var = Tensor({filters}, std::vector<double>(filters, 1.0));
    blocks.push_back(std::move(b));
    c = filters;
  }
}

Tensor ConvEncoder::forward(const Tensor& x, bool train, double dropout_rate,
                            RngStream* dropout_rng) const {
  Tensor h = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    h = ops::conv2d(h, b.weight, b.bias, 1);
    h = ops::batchnorm2d(h, b.gamma, b.beta, b.stats, train);
    h = ops::maxpool2d(ops::relu(h), 2);
    if (dropout_rng && dropout_rate > 0.0 && i + 1 < blocks.size()) {
      h = ops::dropout(h, dropout_rate, *dropout_rng);
    }
  }
  return ops::reshape(h, {h.dim(0), h.numel() / h.dim(0)});
}

void ConvEncoder::collect(const std::string& prefix, ParamList& params, ParamList& buffers) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    params.push_back({p + ".conv.weight", blocks[i].weight});
    params.push_back({p + ".conv.bias", blocks[i].bias});
    params.push_back({p + ".bn.gamma", blocks[i].gamma});
    params.push_back({p + ".bn.beta", blocks[i].beta});
    buffers.push_back({p + ".bn.running_mean", blocks[i].stats.running_mean});
    buffers.push_back({p + ".bn.running_var", blocks[i].stats.running_var});
  }
}

Gru::Gru(int input, int hidden_size, int n_layers, const RngStream& rng) : hidden(hidden_size) {
  const double bound = 1.0 / std::sqrt(hidden_size);
  int in = input;
  for (int l = 0; l < n_layers; ++l) {
    const RngStream lr = rng.split("layer" + std::to_string(l));
    Layer layer;
    layer.wx = init_uniform({in, 3 * hidden_size}, 1.0 / std::sqrt(in), lr.split("wx"));
    layer.wh = init_uniform({hidden_size, 3 * hidden_size}, bound, lr.split("wh"));
    layer.bx = Tensor({3 * hidden_size}, true);
    layer.bh = Tensor({3 * hidden_size}, true);
    layers.push_back(std::move(layer));
    in = hidden_size;
  }
}

std::vector<Tensor> Gru::step(const Tensor& x, const std::vector<Tensor>& h, double dropout_rate,
                              RngStream* dropout_rng) const {
  std::vector<Tensor> out;
  out.reserve(layers.size());
  Tensor input = x;
  const std::int64_t hs = hidden;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& L = layers[l];
    const Tensor gx = ops::add(ops::matmul(input, L.wx), L.bx);
    const Tensor gh = ops::add(ops::matmul(h[l], L.wh), L.bh);
    const Tensor r = ops::sigmoid(ops::add(ops::slice(gx, 1, 0, hs), ops::slice(gh, 1, 0, hs)));
    const Tensor z =
        ops::sigmoid(ops::add(ops::slice(gx, 1, hs, 2 * hs), ops::slice(gh, 1, hs, 2 * hs)));
    const Tensor n = ops::tanh(
        ops::add(ops::slice(gx, 1, 2 * hs, 3 * hs), ops::mul(r, ops::slice(gh, 1, 2 * hs, 3 * hs))));
    // (1 - z) * n + z * h == n + z * (h - n)
    Tensor next = ops::add(n, ops::mul(z, ops::sub(h[l], n)));
    out.push_back(next);
    input = next;
    if (dropout_rng && dropout_rate > 0.0 && l + 1 < layers.size()) {
      input = ops::dropout(input, dropout_rate, *dropout_rng);
    }
  }
  return out;
}

void Gru::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    out.push_back({p + ".wx", layers[l].wx});
    out.push_back({p + ".wh", layers[l].wh});
    out.push_back({p + ".bx", layers[l].bx});
    out.push_back({p + ".bh", layers[l].bh});
  }
}

}  // namespace popcal
