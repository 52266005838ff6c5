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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vqbridge/tensor.hpp"

/// Differentiable primitives. Every op records itself on the tape of its
/// inputs and checks shapes, throwing ContractViolation that names the op.
/// Matrices are row-major; "rows" means all leading dims flattened.
namespace vqbridge::ops {

// [m,k]x[k,n] with optional transposition of either stored operand. A rank>2
// `a` (no transpose) is flattened to rows.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
// Batched: [n,m,k]x[n,k,p] -> [n,m,p]; with trans_b, b is stored as [n,p,k].
Var bmm(const Var& a, const Var& b, bool trans_b = false);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// x[..., n] + b[n]
Var add_row(const Var& x, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b);

// Softmax over the last dim of (x + bias). `bias` is a constant of x's shape;
// use a large negative value to mask.
Var softmax(const Var& x, const Tensor* bias = nullptr);
Var log_softmax(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var gelu(const Var& x);
Var relu(const Var& x);
// Elementwise product with an externally generated (already rescaled) mask.
Var dropout(const Var& x, const Tensor& mask);

Var embedding(const Var& table, std::span<const int> ids);
Var concat(std::span<const Var> parts);
Var slice(const Var& x, int begin, int end);
Var gather_rows(const Var& x, std::span<const int> rows);
// x[B*T, D] -> [B, D], averaging rows with mask != 0.
Var mean_pool(const Var& x, int batch, int time, std::span<const std::uint8_t> mask);

// [B*T, H*d] <-> [B*H, T, d]
Var split_heads(const Var& x, int batch, int time, int heads);
Var merge_heads(const Var& x, int batch, int heads);
Var reshape(const Var& x, Shape shape);

Var sum(const Var& x);
Var mean(const Var& x);
// Euclidean norm of each row; the subgradient at a zero row is zero.
Var row_norm(const Var& x);
// y[i] = x[i, idx[i]]
Var pick(const Var& x, std::span<const int> idx);
// log(max(x, eps)) and log(max(1 - x, eps)).
Var log(const Var& x, double eps = 1e-7);
Var log1m(const Var& x, double eps = 1e-7);
// Mean over rows with target >= 0 of the cross-entropy against
// (1 - smoothing) * onehot(target) + smoothing / V.
Var smoothed_nll(const Var& log_probs, std::span<const int> targets, double smoothing);

Var stop_gradient(const Var& x);
// Forward value of `dst`; the whole incoming gradient goes to `src`.
Var straight_through(const Var& src, const Var& dst);
// Identity forward, negated gradient backward.
Var gradient_reversal(const Var& x);

}  // namespace vqbridge::ops
