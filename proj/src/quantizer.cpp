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

#include "vqbridge/quantizer.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <tuple>

#include "vqbridge/error.hpp"
#include "vqbridge/ops.hpp"
#include "vqbridge/random.hpp"

namespace vqbridge {

void QuantizerConfig::validate(int d_model) const {
  if (codebook_size < 1) throw ConfigError("codebook_size: must be >= 1");
  if (n_slices < 1) throw ConfigError("n_slices: must be >= 1");
  if (d_model % n_slices != 0) {
    throw ConfigError("n_slices: " + std::to_string(n_slices) + " does not divide d_model " + std::to_string(d_model));
  }
  if (!(alpha_codebook >= 0.0)) throw ConfigError("alpha_codebook: must be >= 0");
  if (!(alpha_commitment >= 0.0)) throw ConfigError("alpha_commitment: must be >= 0");
  if (!(p_quantize >= 0.0 && p_quantize <= 1.0)) throw ConfigError("p_quantize: must lie in [0,1]");
}

Codebook::Codebook(int size, int dim) : entries_("codebook", Tensor({size, dim})) {
  if (size < 1 || dim < 1) throw ContractViolation("codebook: invalid size " + std::to_string(size) + "x" + std::to_string(dim));
}

void Codebook::init_normal(double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& x : entries_.value.vec()) x = normal01(rng) * stddev;
}

namespace {

int nearest_strided(const double* query, const double* base, int rows, int stride, int width) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < rows; ++k) {
    const double* e = base + static_cast<std::size_t>(k) * stride;
    double d = 0.0;
    for (int j = 0; j < width; ++j) {
      const double diff = query[j] - e[j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

int nearest_slice(std::span<const double> query, const Tensor& table) {
  if (table.rank() != 2 || table.dim(1) != static_cast<int>(query.size())) {
    throw ContractViolation("nearest_slice: query width " + std::to_string(query.size()) + " vs table " +
                            shape_str(table.shape()));
  }
  return nearest_strided(query.data(), table.data(), table.dim(0), table.dim(1), table.dim(1));
}

std::vector<int> lookup_codes(const Tensor& states, const Tensor& codebook, int n_slices,
                              std::span<const std::uint8_t> mask) {
  const int d = codebook.dim(1), k = codebook.dim(0);
  if (states.rank() != 2 || states.dim(1) != d || d % n_slices != 0) {
    throw ContractViolation("lookup_codes: states " + shape_str(states.shape()) + " vs codebook " +
                            shape_str(codebook.shape()) + " with " + std::to_string(n_slices) + " slices");
  }
  const int rows = states.dim(0), w = d / n_slices;
  std::vector<int> codes(static_cast<std::size_t>(rows) * n_slices, -1);
  for (int r = 0; r < rows; ++r) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(r)]) continue;
    for (int s = 0; s < n_slices; ++s)
      codes[static_cast<std::size_t>(r) * n_slices + s] =
          nearest_strided(states.data() + static_cast<std::size_t>(r) * d + s * w, codebook.data() + s * w, k, d, w);
  }
  return codes;
}

Var gather_quantized(const Var& codebook, std::span<const int> codes, int n_slices) {
  const int d = codebook.shape()[1];
  const int w = d / n_slices;
  const std::size_t rows = codes.size() / static_cast<std::size_t>(n_slices);
  std::vector<Var> parts;
  parts.reserve(static_cast<std::size_t>(n_slices));
  std::vector<int> ids(rows);
  for (int s = 0; s < n_slices; ++s) {
    for (std::size_t r = 0; r < rows; ++r) ids[r] = std::max(0, codes[r * n_slices + s]);
    parts.push_back(ops::embedding(ops::slice(codebook, s * w, (s + 1) * w), ids));
  }
  return n_slices == 1 ? parts[0] : ops::concat(parts);
}

std::pair<Var, Var> quantizer_losses(const Var& enc, const Var& q_enc, int n_slices) {
  if (enc.shape() != q_enc.shape()) {
    throw ContractViolation("quantizer_losses: shape mismatch " + shape_str(enc.shape()) + " vs " +
                            shape_str(q_enc.shape()));
  }
  const int d = enc.shape().back();
  const int rows = static_cast<int>(enc.value().size()) / d;
  const Shape per_slice{rows * n_slices, d / n_slices};
  Var cb = ops::mean(ops::row_norm(ops::reshape(ops::sub(ops::stop_gradient(enc), q_enc), per_slice)));
  Var cm = ops::mean(ops::row_norm(ops::reshape(ops::sub(enc, ops::stop_gradient(q_enc)), per_slice)));
  return {cb, cm};
}

QuantizerOutput quantize(const EncodedBatch& enc, const Var& codebook, const QuantizerConfig& cfg, double gate_draw) {
  const Tensor& states = enc.states.value();
  const int d = states.dim(1);
  if (codebook.shape()[1] != d) {
    throw ContractViolation("quantize: codebook dim " + std::to_string(codebook.shape()[1]) + " != d_model " +
                            std::to_string(d));
  }
  for (int r = 0; r < enc.rows(); ++r)
    for (int j = 0; j < d; ++j)
      if (!std::isfinite(states[static_cast<std::size_t>(r) * d + j])) {
        throw NumericError("quantize: non-finite encoder state at batch " + std::to_string(r / enc.len) +
                           ", position " + std::to_string(r % enc.len) + ", dim " + std::to_string(j));
      }

  QuantizerOutput out;
  out.codes = lookup_codes(states, codebook.value(), cfg.n_slices, enc.padding_mask);
  out.used_quantized = gate_draw < cfg.p_quantize;

  std::vector<int> rows;
  std::vector<int> live_codes;
  for (int r = 0; r < enc.rows(); ++r) {
    if (!enc.padding_mask[static_cast<std::size_t>(r)]) continue;
    rows.push_back(r);
    for (int s = 0; s < cfg.n_slices; ++s) live_codes.push_back(out.codes[static_cast<std::size_t>(r) * cfg.n_slices + s]);
  }
  if (rows.empty()) throw ContractViolation("quantize: batch has no non-pad tokens");
  Var enc_live = ops::gather_rows(enc.states, rows);
  Var q_live = gather_quantized(codebook, live_codes, cfg.n_slices);
  std::tie(out.loss_codebook, out.loss_commitment) = quantizer_losses(enc_live, q_live, cfg.n_slices);

  if (out.used_quantized) {
    out.context = ops::straight_through(enc.states, gather_quantized(codebook, out.codes, cfg.n_slices));
  } else {
    out.context = enc.states;
  }
  return out;
}

}  // namespace vqbridge
