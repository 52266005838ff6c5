/*
 * Copyright 2026 The vqbridge Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "vqbridge/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "vqbridge/error.hpp"

namespace vqbridge::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void fail(const std::string& op, const std::string& msg) { throw ContractViolation(op + ": " + msg); }

void same_tape(const std::string& op, const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) fail(op, "operands live on different tapes");
}

int last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }
int rows_of(const Tensor& t) {
  const int c = last_dim(t);
  return c == 0 ? 0 : static_cast<int>(t.size() / static_cast<std::size_t>(c));
}

bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

// Elementwise unary op with derivative expressed through (x, y).
template <class F, class D>
Var unary(const Var& x, F f, D df) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const int xi = x.id();
  return x.tape().push(std::move(y), x.requires_grad(), [xi, df](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    if (gx.empty()) return;
    auto gy = t.out_grad(self);
    const Tensor& xv = t.value(xi);
    const Tensor& yv = t.value(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2) fail("matmul", "rhs must be rank 2, got " + shape_str(bv.shape()));
  if (av.rank() < 2 || (trans_a && av.rank() != 2)) fail("matmul", "lhs has invalid shape " + shape_str(av.shape()));
  const int a_rows = rows_of(av), a_cols = last_dim(av);
  const int m = trans_a ? a_cols : a_rows;
  const int k = trans_a ? a_rows : a_cols;
  const int kb = trans_b ? bv.dim(1) : bv.dim(0);
  const int n = trans_b ? bv.dim(0) : bv.dim(1);
  if (k != kb) {
    fail("matmul", "inner dims differ: lhs " + shape_str(av.shape()) + (trans_a ? "^T" : "") + " vs rhs " +
                       shape_str(bv.shape()) + (trans_b ? "^T" : ""));
  }
  Shape out_shape;
  if (trans_a) {
    out_shape = {m, n};
  } else {
    out_shape.assign(av.shape().begin(), av.shape().end() - 1);
    out_shape.push_back(n);
  }
  Tensor y(out_shape);
  CMapMat A(av.data(), a_rows, a_cols);
  CMapMat B(bv.data(), bv.dim(0), bv.dim(1));
  MapMat Y(y.data(), m, n);
  if (trans_a && trans_b) Y.noalias() = A.transpose() * B.transpose();
  else if (trans_a) Y.noalias() = A.transpose() * B;
  else if (trans_b) Y.noalias() = A * B.transpose();
  else Y.noalias() = A * B;

  const int ai = a.id(), bi = b.id();
  return a.tape().push(std::move(y), any_grad({a, b}),
                       [ai, bi, m, n, a_rows, a_cols, trans_a, trans_b](Tape& t, int self) {
                         const Tensor& av = t.value(ai);
                         const Tensor& bv = t.value(bi);
                         CMapMat A(av.data(), a_rows, a_cols);
                         CMapMat B(bv.data(), bv.dim(0), bv.dim(1));
                         CMapMat G(t.out_grad(self).data(), m, n);
                         auto ga = t.grad_buffer(ai);
                         if (!ga.empty()) {
                           MapMat GA(ga.data(), a_rows, a_cols);
                           // dA_logical = G * B_logical^T
                           if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
                           else if (!trans_a && trans_b) GA.noalias() += G * B;
                           else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
                           else GA.noalias() += B.transpose() * G.transpose();
                         }
                         auto gb = t.grad_buffer(bi);
                         if (!gb.empty()) {
                           MapMat GB(gb.data(), bv.dim(0), bv.dim(1));
                           // dB_logical = A_logical^T * G
                           if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
                           else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
                           else if (trans_a && !trans_b) GB.noalias() += A * G;
                           else GB.noalias() += G.transpose() * A.transpose();
                         }
                       });
}

Var bmm(const Var& a, const Var& b, bool trans_b) {
  same_tape("bmm", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0)) {
    fail("bmm", "expected [n,m,k] and [n,k,p], got " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const int nb = av.dim(0), m = av.dim(1), k = av.dim(2);
  const int kb = trans_b ? bv.dim(2) : bv.dim(1);
  const int p = trans_b ? bv.dim(1) : bv.dim(2);
  if (k != kb) fail("bmm", "inner dims differ: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor y({nb, m, p});
  const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * p,
                    sy = static_cast<std::size_t>(m) * p;
  for (int i = 0; i < nb; ++i) {
    CMapMat A(av.data() + i * sa, m, k);
    MapMat Y(y.data() + i * sy, m, p);
    if (trans_b) Y.noalias() = A * CMapMat(bv.data() + i * sb, p, k).transpose();
    else Y.noalias() = A * CMapMat(bv.data() + i * sb, k, p);
  }
  const int ai = a.id(), bi = b.id();
  return a.tape().push(std::move(y), any_grad({a, b}), [=](Tape& t, int self) {
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    const double* g = t.out_grad(self).data();
    auto ga = t.grad_buffer(ai);
    auto gb = t.grad_buffer(bi);
    for (int i = 0; i < nb; ++i) {
      CMapMat G(g + i * sy, m, p);
      CMapMat A(av.data() + i * sa, m, k);
      if (!ga.empty()) {
        MapMat GA(ga.data() + i * sa, m, k);
        if (trans_b) GA.noalias() += G * CMapMat(bv.data() + i * sb, p, k);
        else GA.noalias() += G * CMapMat(bv.data() + i * sb, k, p).transpose();
      }
      if (!gb.empty()) {
        if (trans_b) MapMat(gb.data() + i * sb, p, k).noalias() += G.transpose() * A;
        else MapMat(gb.data() + i * sb, k, p).noalias() += A.transpose() * G;
      }
    }
  });
}

namespace {
template <class Combine, class DA, class DB>
Var binary(const char* name, const Var& a, const Var& b, Combine f, DA da, DB db) {
  same_tape(name, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) fail(name, "shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor y(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) y[i] = f(av[i], bv[i]);
  const int ai = a.id(), bi = b.id();
  return a.tape().push(std::move(y), any_grad({a, b}), [ai, bi, da, db](Tape& t, int self) {
    auto gy = t.out_grad(self);
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    auto ga = t.grad_buffer(ai);
    if (!ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * da(av[i], bv[i]);
    auto gb = t.grad_buffer(bi);
    if (!gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * db(av[i], bv[i]);
  });
}
}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_row(const Var& x, const Var& b) {
  same_tape("add_row", x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  const int c = last_dim(xv);
  if (bv.size() != static_cast<std::size_t>(c)) {
    fail("add_row", "bias " + shape_str(bv.shape()) + " does not match last dim of " + shape_str(xv.shape()));
  }
  Tensor y = xv;
  const int r = rows_of(xv);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) y[static_cast<std::size_t>(i) * c + j] += bv[static_cast<std::size_t>(j)];
  const int xi = x.id(), bi = b.id();
  return x.tape().push(std::move(y), any_grad({x, b}), [xi, bi, r, c](Tape& t, int self) {
    auto gy = t.out_grad(self);
    auto gx = t.grad_buffer(xi);
    if (!gx.empty())
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    auto gb = t.grad_buffer(bi);
    if (!gb.empty())
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gb[static_cast<std::size_t>(j)] += gy[static_cast<std::size_t>(i) * c + j];
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var softmax(const Var& x, const Tensor* bias) {
  const Tensor& xv = x.value();
  if (bias != nullptr && bias->shape() != xv.shape()) {
    fail("softmax", "bias " + shape_str(bias->shape()) + " does not match input " + shape_str(xv.shape()));
  }
  const int c = last_dim(xv), r = rows_of(xv);
  Tensor y(xv.shape());
  for (int i = 0; i < r; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, xv[o + j] + (bias ? (*bias)[o + j] : 0.0));
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      y[o + j] = std::exp(xv[o + j] + (bias ? (*bias)[o + j] : 0.0) - mx);
      s += y[o + j];
    }
    for (int j = 0; j < c; ++j) y[o + j] /= s;
  }
  const int xi = x.id();
  return x.tape().push(std::move(y), x.requires_grad(), [xi, r, c](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    const Tensor& yv = t.value(self);
    for (int i = 0; i < r; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += gy[o + j] * yv[o + j];
      for (int j = 0; j < c; ++j) gx[o + j] += yv[o + j] * (gy[o + j] - dot);
    }
  });
}

Var log_softmax(const Var& x) {
  const Tensor& xv = x.value();
  const int c = last_dim(xv), r = rows_of(xv);
  Tensor y(xv.shape());
  for (int i = 0; i < r; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, xv[o + j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(xv[o + j] - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < c; ++j) y[o + j] = xv[o + j] - lse;
  }
  const int xi = x.id();
  return x.tape().push(std::move(y), x.requires_grad(), [xi, r, c](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    const Tensor& yv = t.value(self);
    for (int i = 0; i < r; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * c;
      double s = 0.0;
      for (int j = 0; j < c; ++j) s += gy[o + j];
      for (int j = 0; j < c; ++j) gx[o + j] += gy[o + j] - std::exp(yv[o + j]) * s;
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  same_tape("layer_norm", x, gain);
  same_tape("layer_norm", x, bias);
  const Tensor& xv = x.value();
  const int c = last_dim(xv), r = rows_of(xv);
  if (gain.value().size() != static_cast<std::size_t>(c) || bias.value().size() != static_cast<std::size_t>(c)) {
    fail("layer_norm", "gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                           " do not match last dim of " + shape_str(xv.shape()));
  }
  const Tensor& g = gain.value();
  const Tensor& b = bias.value();
  Tensor y(xv.shape());
  // Normalized values and reciprocal std per row, kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * c;
    // Shifted by the first element so a constant row centers to exact zeros.
    const double x0 = xv[o];
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += xv[o + j] - x0;
    m /= c;
    double v = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = (xv[o + j] - x0) - m;
      v += d * d;
    }
    v /= c;
    const double rs = 1.0 / std::sqrt(v + eps);
    (*rstd)[static_cast<std::size_t>(i)] = rs;
    for (int j = 0; j < c; ++j) {
      const double h = ((xv[o + j] - x0) - m) * rs;
      (*xhat)[o + j] = h;
      y[o + j] = h * g[static_cast<std::size_t>(j)] + b[static_cast<std::size_t>(j)];
    }
  }
  const int xi = x.id(), gi = gain.id(), bi = bias.id();
  return x.tape().push(std::move(y), any_grad({x, gain, bias}), [=](Tape& t, int self) {
    auto gy = t.out_grad(self);
    const Tensor& g = t.value(gi);
    auto gx = t.grad_buffer(xi);
    auto gg = t.grad_buffer(gi);
    auto gb = t.grad_buffer(bi);
    std::vector<double> dh(static_cast<std::size_t>(c));
    for (int i = 0; i < r; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * c;
      double s1 = 0.0, s2 = 0.0;
      for (int j = 0; j < c; ++j) {
        const double d = gy[o + j] * g[static_cast<std::size_t>(j)];
        dh[static_cast<std::size_t>(j)] = d;
        s1 += d;
        s2 += d * (*xhat)[o + j];
        if (!gg.empty()) gg[static_cast<std::size_t>(j)] += gy[o + j] * (*xhat)[o + j];
        if (!gb.empty()) gb[static_cast<std::size_t>(j)] += gy[o + j];
      }
      if (gx.empty()) continue;
      s1 /= c;
      s2 /= c;
      const double rs = (*rstd)[static_cast<std::size_t>(i)];
      for (int j = 0; j < c; ++j) gx[o + j] += rs * (dh[static_cast<std::size_t>(j)] - s1 - (*xhat)[o + j] * s2);
    }
  });
}

Var gelu(const Var& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + a * v * v * v))); },
      [](double v, double) {
        const double u = k * (v + a * v * v * v);
        const double th = std::tanh(u);
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * a * v * v);
      });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var dropout(const Var& x, const Tensor& mask) {
  if (mask.shape() != x.shape()) {
    fail("dropout_mask_apply", "mask " + shape_str(mask.shape()) + " does not match input " + shape_str(x.shape()));
  }
  Var m = x.tape().constant(mask);
  return mul(x, m);
}

Var embedding(const Var& table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) fail("embedding_lookup", "table must be rank 2, got " + shape_str(tv.shape()));
  const int rows = tv.dim(0), d = tv.dim(1);
  Tensor y({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= rows) {
      fail("embedding_lookup", "id " + std::to_string(id) + " at position " + std::to_string(i) +
                                   " out of range for table " + shape_str(tv.shape()));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, y.data() + i * d);
  }
  const int ti = table.id();
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape().push(std::move(y), table.requires_grad(), [ti, d, saved = std::move(saved)](Tape& t, int self) {
    auto gt = t.grad_buffer(ti);
    auto gy = t.out_grad(self);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      double* dst = gt.data() + static_cast<std::size_t>(saved[i]) * d;
      for (int j = 0; j < d; ++j) dst[j] += gy[i * d + j];
    }
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) fail("concat", "no inputs");
  const int r = rows_of(parts[0].value());
  std::vector<int> widths;
  std::vector<int> ids;
  int total = 0;
  bool need = false;
  for (const auto& p : parts) {
    same_tape("concat", parts[0], p);
    if (rows_of(p.value()) != r || p.value().rank() != parts[0].value().rank()) {
      fail("concat", "row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    widths.push_back(last_dim(p.value()));
    ids.push_back(p.id());
    total += widths.back();
    need = need || p.requires_grad();
  }
  Shape out_shape = parts[0].shape();
  out_shape.back() = total;
  Tensor y(out_shape);
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    const int w = widths[k];
    for (int i = 0; i < r; ++i)
      std::copy_n(pv.data() + static_cast<std::size_t>(i) * w, w, y.data() + static_cast<std::size_t>(i) * total + off);
    off += w;
  }
  return parts[0].tape().push(std::move(y), need, [ids, widths, r, total](Tape& t, int self) {
    auto gy = t.out_grad(self);
    int off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const int w = widths[k];
      auto g = t.grad_buffer(ids[k]);
      if (!g.empty())
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < w; ++j)
            g[static_cast<std::size_t>(i) * w + j] += gy[static_cast<std::size_t>(i) * total + off + j];
      off += w;
    }
  });
}

Var slice(const Var& x, int begin, int end) {
  const Tensor& xv = x.value();
  const int c = last_dim(xv), r = rows_of(xv);
  if (begin < 0 || end > c || begin >= end) {
    fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                      shape_str(xv.shape()));
  }
  const int w = end - begin;
  Shape out_shape = xv.shape();
  out_shape.back() = w;
  Tensor y(out_shape);
  for (int i = 0; i < r; ++i)
    std::copy_n(xv.data() + static_cast<std::size_t>(i) * c + begin, w, y.data() + static_cast<std::size_t>(i) * w);
  const int xi = x.id();
  return x.tape().push(std::move(y), x.requires_grad(), [xi, r, c, w, begin](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < w; ++j)
        gx[static_cast<std::size_t>(i) * c + begin + j] += gy[static_cast<std::size_t>(i) * w + j];
  });
}

Var gather_rows(const Var& x, std::span<const int> rows) {
  const Tensor& xv = x.value();
  const int c = last_dim(xv), r = rows_of(xv);
  Tensor y({static_cast<int>(rows.size()), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= r) {
      fail("gather_rows", "row " + std::to_string(rows[i]) + " out of range for " + shape_str(xv.shape()));
    }
    std::copy_n(xv.data() + static_cast<std::size_t>(rows[i]) * c, c, y.data() + i * c);
  }
  const int xi = x.id();
  std::vector<int> saved(rows.begin(), rows.end());
  return x.tape().push(std::move(y), x.requires_grad(), [xi, c, saved = std::move(saved)](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(saved[i]) * c + j] += gy[i * c + j];
  });
}

Var mean_pool(const Var& x, int batch, int time, std::span<const std::uint8_t> mask) {
  const Tensor& xv = x.value();
  const int d = last_dim(xv);
  if (rows_of(xv) != batch * time || mask.size() != static_cast<std::size_t>(batch * time)) {
    fail("mean_pool", "input " + shape_str(xv.shape()) + " / mask size " + std::to_string(mask.size()) +
                          " inconsistent with batch=" + std::to_string(batch) + " time=" + std::to_string(time));
  }
  std::vector<double> inv(static_cast<std::size_t>(batch));
  Tensor y({batch, d});
  for (int b = 0; b < batch; ++b) {
    int n = 0;
    for (int s = 0; s < time; ++s) n += mask[static_cast<std::size_t>(b * time + s)] ? 1 : 0;
    if (n == 0) fail("mean_pool", "sentence " + std::to_string(b) + " has no non-pad positions");
    inv[static_cast<std::size_t>(b)] = 1.0 / n;
    for (int s = 0; s < time; ++s) {
      if (!mask[static_cast<std::size_t>(b * time + s)]) continue;
      for (int j = 0; j < d; ++j) y[static_cast<std::size_t>(b) * d + j] += xv[static_cast<std::size_t>(b * time + s) * d + j];
    }
    for (int j = 0; j < d; ++j) y[static_cast<std::size_t>(b) * d + j] *= inv[static_cast<std::size_t>(b)];
  }
  const int xi = x.id();
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return x.tape().push(std::move(y), x.requires_grad(), [=, m = std::move(m)](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    for (int b = 0; b < batch; ++b)
      for (int s = 0; s < time; ++s) {
        if (!m[static_cast<std::size_t>(b * time + s)]) continue;
        for (int j = 0; j < d; ++j)
          gx[static_cast<std::size_t>(b * time + s) * d + j] +=
              gy[static_cast<std::size_t>(b) * d + j] * inv[static_cast<std::size_t>(b)];
      }
  });
}

Var split_heads(const Var& x, int batch, int time, int heads) {
  const Tensor& xv = x.value();
  const int d = last_dim(xv);
  if (rows_of(xv) != batch * time || heads <= 0 || d % heads != 0) {
    fail("split_heads", "input " + shape_str(xv.shape()) + " incompatible with batch=" + std::to_string(batch) +
                            " time=" + std::to_string(time) + " heads=" + std::to_string(heads));
  }
  const int dh = d / heads;
  Tensor y({batch * heads, time, dh});
  for (int b = 0; b < batch; ++b)
    for (int s = 0; s < time; ++s)
      for (int h = 0; h < heads; ++h)
        std::copy_n(xv.data() + static_cast<std::size_t>(b * time + s) * d + h * dh, dh,
                    y.data() + (static_cast<std::size_t>(b * heads + h) * time + s) * dh);
  const int xi = x.id();
  return x.tape().push(std::move(y), x.requires_grad(), [=](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    for (int b = 0; b < batch; ++b)
      for (int s = 0; s < time; ++s)
        for (int h = 0; h < heads; ++h)
          for (int e = 0; e < dh; ++e)
            gx[static_cast<std::size_t>(b * time + s) * d + h * dh + e] +=
                gy[(static_cast<std::size_t>(b * heads + h) * time + s) * dh + e];
  });
}

Var merge_heads(const Var& x, int batch, int heads) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || xv.dim(0) != batch * heads) {
    fail("merge_heads", "input " + shape_str(xv.shape()) + " incompatible with batch=" + std::to_string(batch) +
                            " heads=" + std::to_string(heads));
  }
  const int time = xv.dim(1), dh = xv.dim(2), d = dh * heads;
  Tensor y({batch * time, d});
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int s = 0; s < time; ++s)
        std::copy_n(xv.data() + (static_cast<std::size_t>(b * heads + h) * time + s) * dh, dh,
                    y.data() + static_cast<std::size_t>(b * time + s) * d + h * dh);
  const int xi = x.id();
  return x.tape().push(std::move(y), x.requires_grad(), [=](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h)
        for (int s = 0; s < time; ++s)
          for (int e = 0; e < dh; ++e)
            gx[(static_cast<std::size_t>(b * heads + h) * time + s) * dh + e] +=
                gy[static_cast<std::size_t>(b * time + s) * d + h * dh + e];
  });
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const int xi = x.id();
  return x.tape().push(x.value().reshaped(std::move(shape)), x.requires_grad(), [xi](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

Var sum(const Var& x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.vec()) s += v;
  const int xi = x.id();
  return x.tape().push(Tensor(Shape{}, {s}), x.requires_grad(), [xi](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    const double g = t.out_grad(self)[0];
    for (double& v : gx) v += g;
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  if (n == 0) fail("mean", "empty input");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var row_norm(const Var& x) {
  const Tensor& xv = x.value();
  const int c = last_dim(xv), r = rows_of(xv);
  Tensor y({r});
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += xv[static_cast<std::size_t>(i) * c + j] * xv[static_cast<std::size_t>(i) * c + j];
    y[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  const int xi = x.id();
  return x.tape().push(std::move(y), x.requires_grad(), [xi, r, c](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    const Tensor& xv = t.value(xi);
    const Tensor& yv = t.value(self);
    for (int i = 0; i < r; ++i) {
      const double n = yv[static_cast<std::size_t>(i)];
      if (n == 0.0) continue;
      const double f = gy[static_cast<std::size_t>(i)] / n;
      for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += f * xv[static_cast<std::size_t>(i) * c + j];
    }
  });
}

Var pick(const Var& x, std::span<const int> idx) {
  const Tensor& xv = x.value();
  const int c = last_dim(xv), r = rows_of(xv);
  if (idx.size() != static_cast<std::size_t>(r)) {
    fail("pick", "index count " + std::to_string(idx.size()) + " does not match rows of " + shape_str(xv.shape()));
  }
  Tensor y({r});
  for (int i = 0; i < r; ++i) {
    const int k = idx[static_cast<std::size_t>(i)];
    if (k < 0 || k >= c) fail("pick", "class " + std::to_string(k) + " out of range [0," + std::to_string(c) + ")");
    y[static_cast<std::size_t>(i)] = xv[static_cast<std::size_t>(i) * c + k];
  }
  const int xi = x.id();
  std::vector<int> saved(idx.begin(), idx.end());
  return x.tape().push(std::move(y), x.requires_grad(), [xi, c, saved = std::move(saved)](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    for (std::size_t i = 0; i < saved.size(); ++i) gx[i * c + static_cast<std::size_t>(saved[i])] += gy[i];
  });
}

Var log(const Var& x, double eps) {
  return unary(
      x, [eps](double v) { return std::log(std::max(v, eps)); },
      [eps](double v, double) { return v > eps ? 1.0 / v : 0.0; });
}

Var log1m(const Var& x, double eps) {
  return unary(
      x, [eps](double v) { return std::log(std::max(1.0 - v, eps)); },
      [eps](double v, double) { return 1.0 - v > eps ? -1.0 / (1.0 - v) : 0.0; });
}

Var smoothed_nll(const Var& log_probs, std::span<const int> targets, double smoothing) {
  const Tensor& lp = log_probs.value();
  const int v = last_dim(lp), r = rows_of(lp);
  if (targets.size() != static_cast<std::size_t>(r)) {
    fail("smoothed_nll", "target count " + std::to_string(targets.size()) + " does not match rows of " +
                             shape_str(lp.shape()));
  }
  int n = 0;
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    const int k = targets[static_cast<std::size_t>(i)];
    if (k < 0) continue;
    if (k >= v) fail("smoothed_nll", "target " + std::to_string(k) + " out of range [0," + std::to_string(v) + ")");
    const std::size_t o = static_cast<std::size_t>(i) * v;
    double all = 0.0;
    for (int j = 0; j < v; ++j) all += lp[o + j];
    total += -(1.0 - smoothing) * lp[o + k] - smoothing / v * all;
    ++n;
  }
  if (n == 0) fail("smoothed_nll", "no non-pad targets");
  const int li = log_probs.id();
  std::vector<int> saved(targets.begin(), targets.end());
  return log_probs.tape().push(
      Tensor(Shape{}, {total / n}), log_probs.requires_grad(),
      [li, v, n, smoothing, saved = std::move(saved)](Tape& t, int self) {
        auto g = t.grad_buffer(li);
        const double gy = t.out_grad(self)[0] / n;
        for (std::size_t i = 0; i < saved.size(); ++i) {
          if (saved[i] < 0) continue;
          const std::size_t o = i * static_cast<std::size_t>(v);
          for (int j = 0; j < v; ++j) g[o + j] -= gy * smoothing / v;
          g[o + static_cast<std::size_t>(saved[i])] -= gy * (1.0 - smoothing);
        }
      });
}

Var stop_gradient(const Var& x) { return x.tape().constant(x.value()); }

Var straight_through(const Var& src, const Var& dst) {
  same_tape("straight_through", src, dst);
  if (src.shape() != dst.shape()) {
    fail("straight_through", "shape mismatch " + shape_str(src.shape()) + " vs " + shape_str(dst.shape()));
  }
  const int si = src.id();
  return src.tape().push(dst.value(), src.requires_grad(), [si](Tape& t, int self) {
    auto gs = t.grad_buffer(si);
    auto gy = t.out_grad(self);
    for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += gy[i];
  });
}

Var gradient_reversal(const Var& x) {
  const int xi = x.id();
  return x.tape().push(x.value(), x.requires_grad(), [xi](Tape& t, int self) {
    auto gx = t.grad_buffer(xi);
    auto gy = t.out_grad(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= gy[i];
  });
}

}  // namespace vqbridge::ops
