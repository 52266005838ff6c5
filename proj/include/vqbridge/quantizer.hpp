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
#include <utility>
#include <vector>

#include "vqbridge/tensor.hpp"
#include "vqbridge/transformer.hpp"

namespace vqbridge {

struct QuantizerConfig {
  int codebook_size = 256;  // K
  int n_slices = 4;         // S
  double alpha_codebook = 1.0;
  double alpha_commitment = 1.001;
  double p_quantize = 0.5;

  void validate(int d_model) const;
};

/// Trainable K x D table; slice j of every row is the lookup space for
/// dimensions [j*D/S, (j+1)*D/S) of the encoder state.
class Codebook {
 public:
  Codebook(int size, int dim);

  int size() const { return entries_.value.dim(0); }
  int dim() const { return entries_.value.dim(1); }
  Parameter& entries() { return entries_; }
  const Parameter& entries() const { return entries_; }

  // i.i.d. normal entries with the given standard deviation.
  void init_normal(double stddev, std::uint64_t seed);

 private:
  Parameter entries_;
};

struct QuantizerOutput {
  Var context;
  std::vector<int> codes;  // [rows * S]; -1 at padded rows
  Var loss_codebook;
  Var loss_commitment;
  bool used_quantized = false;
};

// Index of the row of `table` ([K, w]) nearest to `query` in Euclidean
// distance; ties resolve to the smallest index.
int nearest_slice(std::span<const double> query, const Tensor& table);

// Per-slice codes for every row of `states` ([rows, D]) against `codebook`
// ([K, D]). Rows with mask == 0 get -1.
std::vector<int> lookup_codes(const Tensor& states, const Tensor& codebook, int n_slices,
                              std::span<const std::uint8_t> mask);

// Concatenated slice entries for the given codes ([rows*S]; -1 -> row 0).
Var gather_quantized(const Var& codebook, std::span<const int> codes, int n_slices);

// Mean per-slice Euclidean distances with stop-gradient on one side:
// first = |sg[enc] - q| (codebook), second = |enc - sg[q]| (commitment).
std::pair<Var, Var> quantizer_losses(const Var& enc, const Var& q_enc, int n_slices);

// Quantized context with probability p (gate_draw < p); codes and both losses
// are computed on every call, over non-pad rows only.
QuantizerOutput quantize(const EncodedBatch& enc, const Var& codebook, const QuantizerConfig& cfg,
                         double gate_draw);

}  // namespace vqbridge
