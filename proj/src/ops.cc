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

#include "popcal/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace popcal::ops {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Tensor record(const char* op, Dims dims, Buffer value,
              const std::vector<Tensor>& inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->dims = std::move(dims);
  node->value = std::move(value);
  node->op = op;
  bool needs_grad = false;
  for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

// Grad buffer of input i, or nullptr when that input does not need one.
double* input_grad(Node& out, std::size_t i) {
  Node& in = *out.inputs[i];
  return in.requires_grad ? in.grad_buffer() : nullptr;
}

const Buffer& input_value(const Node& out, std::size_t i) {
  return out.inputs[i]->value;
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  shape_fail(op, "incompatible shapes " + dims_string(a.dims()) + " and " +
                     dims_string(b.dims()));
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) shape_fail(op, "undefined tensor operand");
}

bool is_suffix(const Dims& full, const Dims& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.begin(), suffix.end(),
                    full.end() - static_cast<std::ptrdiff_t>(suffix.size()));
}

std::int64_t last_dim(const char* op, const Tensor& a) {
  if (a.rank() < 1) shape_fail(op, "needs rank >= 1, got " + dims_string(a.dims()));
  return a.dims().back();
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  require_defined(op, a);
  const auto& x = a.values();
  Buffer y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return record(op, a.dims(), std::move(y), {a}, [deriv](Node& out) {
    double* gx = input_grad(out, 0);
    if (!gx) return;
    const auto& x = input_value(out, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      gx[i] += out.grad[i] * deriv(x[i], out.value[i]);
    }
  });
}

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const char* op, Binary kind, const Tensor& a, const Tensor& b) {
  require_defined(op, a);
  require_defined(op, b);
  if (!is_suffix(a.dims(), b.dims())) shape_fail(op, a, b);
  const std::size_t inner = static_cast<std::size_t>(b.numel());
  const std::size_t total = static_cast<std::size_t>(a.numel());
  const auto& x = a.values();
  const auto& z = b.values();
  Buffer y(total);
  if (inner > 0) {
    for (std::size_t i = 0; i < total; ++i) {
      const double bv = z[i % inner];
      switch (kind) {
        case Binary::kAdd: y[i] = x[i] + bv; break;
        case Binary::kSub: y[i] = x[i] - bv; break;
        case Binary::kMul: y[i] = x[i] * bv; break;
      }
    }
  }
  return record(op, a.dims(), std::move(y), {a, b}, [kind, inner](Node& out) {
    double* ga = input_grad(out, 0);
    double* gb = input_grad(out, 1);
    const auto& g = out.grad;
    const auto& x = input_value(out, 0);
    const auto& z = input_value(out, 1);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = i % inner;
      switch (kind) {
        case Binary::kAdd:
          if (ga) ga[i] += g[i];
          if (gb) gb[j] += g[i];
          break;
        case Binary::kSub:
          if (ga) ga[i] += g[i];
          if (gb) gb[j] -= g[i];
          break;
        case Binary::kMul:
          if (ga) ga[i] += g[i] * z[j];
          if (gb) gb[j] += g[i] * x[i];
          break;
      }
    }
  });
}

struct Strides {
  std::int64_t outer = 1;  // product of dims before axis
  std::int64_t inner = 1;  // product of dims after axis
};

Strides strides_around(const Dims& dims, int axis) {
  Strides s;
  for (int i = 0; i < axis; ++i) s.outer *= dims[i];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) s.inner *= dims[i];
  return s;
}

int normalise_axis(const char* op, int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    shape_fail(op, "axis " + std::to_string(axis) + " out of range for rank " +
                       std::to_string(rank));
  }
  return a;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail("matmul", a, b);
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer y(static_cast<std::size_t>(m * n));
  MutMap(y.data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return record("matmul", {m, n}, std::move(y), {a, b}, [m, k, n](Node& out) {
    ConstMap g(out.grad.data(), m, n);
    if (double* ga = input_grad(out, 0)) {
      MutMap(ga, m, k).noalias() += g * ConstMap(input_value(out, 1).data(), k, n).transpose();
    }
    if (double* gb = input_grad(out, 1)) {
      MutMap(gb, k, n).noalias() += ConstMap(input_value(out, 0).data(), m, k).transpose() * g;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", Binary::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", Binary::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", Binary::kMul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x < 0.0 ? 0.0 : x; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor softmax(const Tensor& a) {
  require_defined("softmax", a);
  const std::int64_t k = last_dim("softmax", a);
  const std::int64_t rows = k ? a.numel() / k : 0;
  const auto& x = a.values();
  Buffer y(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * k;
    double* yr = y.data() + r * k;
    const double m = *std::max_element(xr, xr + k);
    double total = 0.0;
    for (std::int64_t i = 0; i < k; ++i) total += (yr[i] = std::exp(xr[i] - m));
    for (std::int64_t i = 0; i < k; ++i) yr[i] /= total;
  }
  return record("softmax", a.dims(), std::move(y), {a}, [rows, k](Node& out) {
    double* gx = input_grad(out, 0);
    if (!gx) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* yr = out.value.data() + r * k;
      const double* gr = out.grad.data() + r * k;
      double dot = 0.0;
      for (std::int64_t i = 0; i < k; ++i) dot += gr[i] * yr[i];
      for (std::int64_t i = 0; i < k; ++i) gx[r * k + i] += yr[i] * (gr[i] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  require_defined("log_softmax", a);
  const std::int64_t k = last_dim("log_softmax", a);
  const std::int64_t rows = k ? a.numel() / k : 0;
  const auto& x = a.values();
  Buffer y(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * k;
    double* yr = y.data() + r * k;
    const double m = *std::max_element(xr, xr + k);
    double total = 0.0;
    for (std::int64_t i = 0; i < k; ++i) total += std::exp(xr[i] - m);
    const double lse = m + std::log(total);
    for (std::int64_t i = 0; i < k; ++i) yr[i] = xr[i] - lse;
  }
  return record("log_softmax", a.dims(), std::move(y), {a}, [rows, k](Node& out) {
    double* gx = input_grad(out, 0);
    if (!gx) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* yr = out.value.data() + r * k;
      const double* gr = out.grad.data() + r * k;
      double total = 0.0;
      for (std::int64_t i = 0; i < k; ++i) total += gr[i];
      for (std::int64_t i = 0; i < k; ++i) gx[r * k + i] += gr[i] - std::exp(yr[i]) * total;
    }
  });
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double total = 0.0;
  for (double v : a.values()) total += v;
  return record("sum", {}, {total}, {a}, [](Node& out) {
    double* gx = input_grad(out, 0);
    if (!gx) return;
    const double g = out.grad[0];
    const std::size_t n = input_value(out, 0).size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  if (a.numel() == 0) shape_fail("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) shape_fail("concat", "no operands");
  for (const auto& p : parts) require_defined("concat", p);
  const int rank = parts[0].rank();
  const int ax = normalise_axis("concat", axis, rank);
  Dims dims = parts[0].dims();
  dims[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    for (int i = 0; ok && i < rank; ++i) ok = i == ax || p.dims()[i] == parts[0].dims()[i];
    if (!ok) shape_fail("concat", parts[0], p);
    dims[ax] += p.dims()[ax];
  }
  const Strides s = strides_around(dims, ax);
  std::vector<std::int64_t> widths;  // contiguous block width per part
  for (const auto& p : parts) widths.push_back(p.dims()[ax] * s.inner);
  const std::int64_t row = dims[ax] * s.inner;
  Buffer y(static_cast<std::size_t>(element_count(dims)));
  std::int64_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const auto& x = parts[j].values();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(x.data() + o * widths[j], widths[j], y.data() + o * row + offset);
    }
    offset += widths[j];
  }
  return record("concat", dims, std::move(y), parts, [widths, row, outer = s.outer](Node& out) {
    std::int64_t offset = 0;
    for (std::size_t j = 0; j < widths.size(); ++j) {
      if (double* gx = input_grad(out, j)) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* g = out.grad.data() + o * row + offset;
          double* dst = gx + o * widths[j];
          for (std::int64_t i = 0; i < widths[j]; ++i) dst[i] += g[i];
        }
      }
      offset += widths[j];
    }
  });
}

Tensor slice(const Tensor& a, int axis, std::int64_t begin, std::int64_t end) {
  require_defined("slice", a);
  const int ax = normalise_axis("slice", axis, a.rank());
  if (begin < 0 || end > a.dims()[ax] || begin > end) {
    shape_fail("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") invalid for axis " + std::to_string(ax) + " of " +
                            dims_string(a.dims()));
  }
  Dims dims = a.dims();
  dims[ax] = end - begin;
  const Strides s = strides_around(a.dims(), ax);
  const std::int64_t src_row = a.dims()[ax] * s.inner;
  const std::int64_t width = (end - begin) * s.inner;
  const std::int64_t start = begin * s.inner;
  Buffer y(static_cast<std::size_t>(s.outer * width));
  const auto& x = a.values();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data() + o * src_row + start, width, y.data() + o * width);
  }
  return record("slice", dims, std::move(y), {a},
                [outer = s.outer, src_row, width, start](Node& out) {
                  double* gx = input_grad(out, 0);
                  if (!gx) return;
                  for (std::int64_t o = 0; o < outer; ++o) {
                    const double* g = out.grad.data() + o * width;
                    double* dst = gx + o * src_row + start;
                    for (std::int64_t i = 0; i < width; ++i) dst[i] += g[i];
                  }
                });
}

Tensor reshape(const Tensor& a, Dims dims) {
  require_defined("reshape", a);
  if (element_count(dims) != a.numel()) {
    shape_fail("reshape", "cannot view " + dims_string(a.dims()) + " as " + dims_string(dims));
  }
  Buffer y(a.values().begin(), a.values().end());
  return record("reshape", std::move(dims), std::move(y), {a}, [](Node& out) {
    double* gx = input_grad(out, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < out.grad.size(); ++i) gx[i] += out.grad[i];
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int padding) {
  require_defined("conv2d", x);
  require_defined("conv2d", weight);
  require_defined("conv2d", bias);
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) ||
      weight.dim(2) != weight.dim(3)) {
    shape_fail("conv2d", x, weight);
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) shape_fail("conv2d", weight, bias);
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t f = weight.dim(0), k = weight.dim(2);
  const std::int64_t ho = h + 2 * padding - k + 1, wo = w + 2 * padding - k + 1;
  if (ho <= 0 || wo <= 0) shape_fail("conv2d", x, weight);
  const std::int64_t ckk = c * k * k, hw = ho * wo;

  const bool keep_cols = weight.requires_grad() || x.requires_grad();
  Buffer cols(static_cast<std::size_t>(keep_cols ? n * ckk * hw : ckk * hw));
  Buffer y(static_cast<std::size_t>(n * f * hw));
  const auto& xv = x.values();
  ConstMap wmat(weight.values().data(), f, ckk);
  Eigen::Map<const Eigen::VectorXd> b(bias.values().data(), f);

  for (std::int64_t s = 0; s < n; ++s) {
    double* col = cols.data() + (keep_cols ? s * ckk * hw : 0);
    const double* xs = xv.data() + s * c * h * w;
    for (std::int64_t ci = 0; ci < c; ++ci) {
      for (std::int64_t ki = 0; ki < k; ++ki) {
        for (std::int64_t kj = 0; kj < k; ++kj) {
          double* dst = col + ((ci * k + ki) * k + kj) * hw;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy + ki - padding;
            if (iy < 0 || iy >= h) {
              std::fill_n(dst + oy * wo, wo, 0.0);
              continue;
            }
            const double* src = xs + (ci * h + iy) * w;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const std::int64_t ix = ox + kj - padding;
              dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
    MutMap ys(y.data() + s * f * hw, f, hw);
    ys.noalias() = wmat * ConstMap(col, ckk, hw);
    ys.colwise() += b;
  }

  auto backward = [n, c, h, w, f, k, ho, wo, ckk, hw, padding,
                   cols = std::move(cols)](Node& out) {
    double* gx = input_grad(out, 0);
    double* gw = input_grad(out, 1);
    double* gb = input_grad(out, 2);
    const auto& wv = input_value(out, 1);
    Buffer dcol(gx ? static_cast<std::size_t>(ckk * hw) : 0);
    for (std::int64_t s = 0; s < n; ++s) {
      ConstMap g(out.grad.data() + s * f * hw, f, hw);
      ConstMap col(cols.data() + s * ckk * hw, ckk, hw);
      if (gw) MutMap(gw, f, ckk).noalias() += g * col.transpose();
      if (gb) Eigen::Map<Eigen::VectorXd>(gb, f) += g.rowwise().sum();
      if (!gx) continue;
      MutMap(dcol.data(), ckk, hw).noalias() = ConstMap(wv.data(), f, ckk).transpose() * g;
      double* xs = gx + s * c * h * w;
      for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t ki = 0; ki < k; ++ki) {
          for (std::int64_t kj = 0; kj < k; ++kj) {
            const double* src = dcol.data() + ((ci * k + ki) * k + kj) * hw;
            for (std::int64_t oy = 0; oy < ho; ++oy) {
              const std::int64_t iy = oy + ki - padding;
              if (iy < 0 || iy >= h) continue;
              double* dst = xs + (ci * h + iy) * w;
              for (std::int64_t ox = 0; ox < wo; ++ox) {
                const std::int64_t ix = ox + kj - padding;
                if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
              }
            }
          }
        }
      }
    }
  };
  return record("conv2d", {n, f, ho, wo}, std::move(y), {x, weight, bias}, std::move(backward));
}

Tensor maxpool2d(const Tensor& x, int k) {
  require_defined("maxpool2d", x);
  if (x.rank() != 4 || k <= 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    shape_fail("maxpool2d", "window " + std::to_string(k) + " does not tile " +
                                dims_string(x.dims()));
  }
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = h / k, wo = w / k;
  const std::size_t total = static_cast<std::size_t>(n * c * ho * wo);
  Buffer y(total);
  std::vector<std::int64_t> arg(total);
  const auto& xv = x.values();
  std::size_t o = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const double* xp = xv.data() + plane * h * w;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox, ++o) {
        std::int64_t best = (oy * k) * w + ox * k;
        for (std::int64_t dy = 0; dy < k; ++dy) {
          for (std::int64_t dx = 0; dx < k; ++dx) {
            const std::int64_t idx = (oy * k + dy) * w + ox * k + dx;
            if (xp[idx] > xp[best] || std::isnan(xp[idx])) best = idx;
          }
        }
        y[o] = xp[best];
        arg[o] = plane * h * w + best;
      }
    }
  }
  return record("maxpool2d", {n, c, ho, wo}, std::move(y), {x},
                [arg = std::move(arg)](Node& out) {
                  double* gx = input_grad(out, 0);
                  if (!gx) return;
                  for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += out.grad[i];
                });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, bool train, double momentum, double eps) {
  require_defined("batchnorm2d", x);
  if (x.rank() != 4) shape_fail("batchnorm2d", "input must be [N, C, H, W], got " + dims_string(x.dims()));
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &stats.running_mean, &stats.running_var}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != c) shape_fail("batchnorm2d", x, *t);
  }
  const std::int64_t m = n * hw;
  const auto& xv = x.values();
  Buffer mu(c), istd(c);
  if (train) {
    if (m < 2) shape_fail("batchnorm2d", "train mode needs more than one value per channel");
    auto rm = stats.running_mean.mutable_values();
    auto rv = stats.running_var.mutable_values();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* p = xv.data() + (i * c + ch) * hw;
        for (std::int64_t j = 0; j < hw; ++j) s += p[j];
      }
      const double mean = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* p = xv.data() + (i * c + ch) * hw;
        for (std::int64_t j = 0; j < hw; ++j) ss += (p[j] - mean) * (p[j] - mean);
      }
      const double var = ss / static_cast<double>(m);
      mu[ch] = mean;
      istd[ch] = 1.0 / std::sqrt(var + eps);
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mean;
      rv[ch] = (1.0 - momentum) * rv[ch] +
               momentum * var * static_cast<double>(m) / static_cast<double>(m - 1);
    }
  } else {
    const auto rm = stats.running_mean.values();
    const auto rv = stats.running_var.values();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mu[ch] = rm[ch];
      istd[ch] = 1.0 / std::sqrt(rv[ch] + eps);
    }
  }
  const auto gv = gamma.values();
  const auto bv = beta.values();
  Buffer xhat(xv.size()), y(xv.size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (i * c + ch) * hw;
      for (std::int64_t j = 0; j < hw; ++j) {
        const double xh = (xv[base + j] - mu[ch]) * istd[ch];
        xhat[base + j] = xh;
        y[base + j] = gv[ch] * xh + bv[ch];
      }
    }
  }
  return record("batchnorm2d", x.dims(), std::move(y), {x, gamma, beta},
                [n, c, hw, m, train, istd = std::move(istd), xhat = std::move(xhat)](Node& out) {
                  double* gx = input_grad(out, 0);
                  double* gg = input_grad(out, 1);
                  double* gb = input_grad(out, 2);
                  const auto& gamma = input_value(out, 1);
                  const auto& g = out.grad;
                  for (std::int64_t ch = 0; ch < c; ++ch) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::int64_t i = 0; i < n; ++i) {
                      const std::int64_t base = (i * c + ch) * hw;
                      for (std::int64_t j = 0; j < hw; ++j) {
                        sum_g += g[base + j];
                        sum_gx += g[base + j] * xhat[base + j];
                      }
                    }
                    if (gg) gg[ch] += sum_gx;
                    if (gb) gb[ch] += sum_g;
                    if (!gx) continue;
                    const double k = gamma[ch] * istd[ch];
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::int64_t i = 0; i < n; ++i) {
                      const std::int64_t base = (i * c + ch) * hw;
                      for (std::int64_t j = 0; j < hw; ++j) {
                        const std::int64_t e = base + j;
                        gx[e] += train ? k * (g[e] - inv_m * (sum_g + xhat[e] * sum_gx))
                                       : k * g[e];
                      }
                    }
                  }
                });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_defined("embedding", table);
  if (table.rank() != 2) shape_fail("embedding", "table must be [V, E], got " + dims_string(table.dims()));
  const std::int64_t v = table.dim(0), e = table.dim(1);
  const auto n = static_cast<std::int64_t>(ids.size());
  Buffer y(static_cast<std::size_t>(n * e));
  const auto& tv = table.values();
  for (std::int64_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) +
                              " out of range for table " + dims_string(table.dims()));
    }
    std::copy_n(tv.data() + ids[i] * e, e, y.data() + i * e);
  }
  return record("embedding", {n, e}, std::move(y), {table},
                [ids = std::vector<int>(ids.begin(), ids.end()), e](Node& out) {
                  double* gt = input_grad(out, 0);
                  if (!gt) return;
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    const double* g = out.grad.data() + i * e;
                    double* dst = gt + static_cast<std::int64_t>(ids[i]) * e;
                    for (std::int64_t j = 0; j < e; ++j) dst[j] += g[j];
                  }
                });
}

Tensor dropout(const Tensor& x, double p, RngStream& rng) {
  require_defined("dropout", x);
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Buffer mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  return mul(x, Tensor::from_buffer(x.dims(), std::move(mask)));
}

Tensor batched_dot(const Tensor& a, const Tensor& b) {
  require_defined("batched_dot", a);
  require_defined("batched_dot", b);
  if (a.rank() != 3 || b.rank() != 2 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_fail("batched_dot", a, b);
  }
  const std::int64_t bs = a.dim(0), n = a.dim(1), d = a.dim(2);
  Buffer y(static_cast<std::size_t>(bs * n));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::int64_t i = 0; i < bs; ++i) {
    for (std::int64_t k = 0; k < n; ++k) {
      double s = 0.0;
      const double* ar = av.data() + (i * n + k) * d;
      const double* br = bv.data() + i * d;
      for (std::int64_t j = 0; j < d; ++j) s += ar[j] * br[j];
      y[i * n + k] = s;
    }
  }
  return record("batched_dot", {bs, n}, std::move(y), {a, b}, [bs, n, d](Node& out) {
    double* ga = input_grad(out, 0);
    double* gb = input_grad(out, 1);
    const auto& av = input_value(out, 0);
    const auto& bv = input_value(out, 1);
    for (std::int64_t i = 0; i < bs; ++i) {
      for (std::int64_t k = 0; k < n; ++k) {
        const double g = out.grad[i * n + k];
        const std::int64_t row = (i * n + k) * d;
        for (std::int64_t j = 0; j < d; ++j) {
          if (ga) ga[row + j] += g * bv[i * d + j];
          if (gb) gb[i * d + j] += g * av[row + j];
        }
      }
    }
  });
}

Tensor gather_last(const Tensor& a, std::span<const int> index) {
  require_defined("gather_last", a);
  if (a.rank() != 2 || a.dim(0) != static_cast<std::int64_t>(index.size())) {
    shape_fail("gather_last", "input " + dims_string(a.dims()) + " with " +
                                  std::to_string(index.size()) + " indices");
  }
  const std::int64_t rows = a.dim(0), k = a.dim(1);
  Buffer y(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < rows; ++i) {
    if (index[i] < 0 || index[i] >= k) {
      throw std::out_of_range("gather_last: index " + std::to_string(index[i]) +
                              " out of range for " + dims_string(a.dims()));
    }
    y[i] = a.values()[i * k + index[i]];
  }
  return record("gather_last", {rows}, std::move(y), {a},
                [idx = std::vector<int>(index.begin(), index.end()), k](Node& out) {
                  double* gx = input_grad(out, 0);
                  if (!gx) return;
                  for (std::size_t i = 0; i < idx.size(); ++i) gx[i * k + idx[i]] += out.grad[i];
                });
}

Tensor log_mean_exp(const std::vector<Tensor>& xs) {
  if (xs.empty()) shape_fail("log_mean_exp", "no operands");
  for (const auto& x : xs) {
    require_defined("log_mean_exp", x);
    if (x.dims() != xs[0].dims()) shape_fail("log_mean_exp", xs[0], x);
  }
  const std::size_t count = xs.size();
  const std::size_t total = static_cast<std::size_t>(xs[0].numel());
  const double log_count = std::log(static_cast<double>(count));
  Buffer y(total);
  for (std::size_t i = 0; i < total; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& x : xs) m = std::max(m, x.values()[i]);
    if (m == -std::numeric_limits<double>::infinity()) {
      y[i] = m;
      continue;
    }
    double s = 0.0;
    for (const auto& x : xs) s += std::exp(x.values()[i] - m);
    y[i] = m + (std::log(s) - log_count);
  }
  return record("log_mean_exp", xs[0].dims(), std::move(y), xs, [count, log_count](Node& out) {
    for (std::size_t j = 0; j < count; ++j) {
      double* gx = input_grad(out, j);
      if (!gx) continue;
      const auto& x = input_value(out, j);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isinf(out.value[i])) continue;
        gx[i] += out.grad[i] * std::exp(x[i] - out.value[i] - log_count);
      }
    }
  });
}

Tensor straight_through(const Tensor& soft, std::vector<double> hard_values) {
  Buffer hard(hard_values.begin(), hard_values.end());
  require_defined("straight_through", soft);
  if (static_cast<std::int64_t>(hard.size()) != soft.numel()) {
    shape_fail("straight_through", "hard value count " + std::to_string(hard.size()) +
                                       " does not match " + dims_string(soft.dims()));
  }
  return record("straight_through", soft.dims(), std::move(hard), {soft}, [](Node& out) {
    double* gx = input_grad(out, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < out.grad.size(); ++i) gx[i] += out.grad[i];
  });
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, bool straight_through_on,
                      RngStream& rng) {
  require_defined("gumbel_softmax", logits);
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("gumbel_softmax: temperature must be > 0, got " +
                                std::to_string(temperature));
  }
  const std::int64_t k = last_dim("gumbel_softmax", logits);
  Buffer noise(static_cast<std::size_t>(logits.numel()));
  for (auto& g : noise) g = rng.gumbel();
  Tensor soft = softmax(scale(add(logits, Tensor::from_buffer(logits.dims(), std::move(noise))), 1.0 / temperature));
  if (!straight_through_on) return soft;
  Buffer hard(static_cast<std::size_t>(soft.numel()), 0.0);
  const auto idx = argmax_last(soft);
  for (std::size_t r = 0; r < idx.size(); ++r) hard[r * k + idx[r]] = 1.0;
  return straight_through(soft, std::vector<double>(hard.begin(), hard.end()));
}

std::vector<int> argmax_last(const Tensor& a) {
  require_defined("argmax_last", a);
  const std::int64_t k = last_dim("argmax_last", a);
  if (k == 0) shape_fail("argmax_last", "empty last axis");
  const std::int64_t rows = a.numel() / k;
  std::vector<int> out(static_cast<std::size_t>(rows));
  const auto& v = a.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * k;
    out[r] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace popcal::ops
