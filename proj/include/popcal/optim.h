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

#ifndef POPCAL_OPTIM_H_
#define POPCAL_OPTIM_H_

#include <cstdint>
#include <vector>

#include "popcal/tensor.h"

namespace popcal {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  // One buffer per parameter, in ParamList order. Empty until the first step.
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

AdamState make_adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Bias-corrected Adam update of every parameter, then zeroes the grads.
// Throws std::logic_error naming the first parameter without a grad.
void adam_step(ParamList& params, AdamState& state);

}  // namespace popcal

#endif  // POPCAL_OPTIM_H_
