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

#ifndef POPCAL_TESTS_GRADCHECK_H_
#define POPCAL_TESTS_GRADCHECK_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "popcal/ops.h"
#include "popcal/rng.h"
#include "popcal/tensor.h"

namespace popcal::testing {

// Central finite differences against reverse mode. The loss must be
// rebuilt from scratch on each call since graphs are single-use.
// Returns the worst relative error over every element of every input, with
// the denominator floored at `floor` so vanishing derivatives compare
// absolutely.
inline double max_relative_error(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor> inputs, double h = 1e-5,
                                 double floor = 1e-6) {
  for (auto& t : inputs) t.clear_grad();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto vals = inputs[k].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = loss_fn().item();
      vals[i] = saved - h;
      const double down = loss_fn().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double err = std::abs(a - numeric) / std::max(scale, floor);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline Tensor random_tensor(Dims dims, RngStream& rng, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = true) {
  std::vector<double> v(static_cast<std::size_t>(element_count(dims)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(dims), std::move(v), requires_grad);
}

// Random fixed weights so every output element contributes to the loss.
inline Tensor weighted_sum(const Tensor& out, RngStream& rng) {
  std::vector<double> w(static_cast<std::size_t>(out.numel()));
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return ops::sum(ops::mul(out, Tensor(out.dims(), std::move(w))));
}
}  // namespace popcal::testing

#endif  // POPCAL_TESTS_GRADCHECK_H_
