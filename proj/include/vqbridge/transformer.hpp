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
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vqbridge/random.hpp"
#include "vqbridge/tensor.hpp"

namespace vqbridge {

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 64;
  int n_heads = 4;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int d_ffn = 256;
  double dropout = 0.3;
  double attn_dropout = 0.1;
  double label_smoothing = 0.1;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

/// Encoder output enc(X) for a padded batch, rows laid out as [batch*len, d].
struct EncodedBatch {
  Var states;
  int batch = 0;
  int len = 0;
  std::vector<std::uint8_t> padding_mask;  // 1 = real token

  int rows() const { return batch * len; }
};

/// Pre-norm encoder-decoder transformer with tied embeddings and sinusoidal
/// positions. Parameters live in a fixed-size vector, so Parameter addresses
/// are stable for the model's lifetime.
class Transformer {
 public:
  Transformer(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& param(std::string_view name);
  const Parameter& param(std::string_view name) const;

  /// Parameters bound to one tape.
  struct Bound {
    Tape* tape = nullptr;
    std::vector<Var> vars;
  };
  // `trainable` selects parameters that receive gradients (all by default).
  Bound bind(Tape& tape, bool trainable = true);

  // tokens: [batch*len] row-major, kPad marks padding.
  EncodedBatch encode(Bound& bound, std::span<const int> tokens, int batch, int len,
                      DropoutSource* dropout = nullptr) const;

  // Returns logits [batch*tgt_len, vocab]. Position t only sees tgt_in[0..t].
  Var decode(Bound& bound, const Var& context, std::span<const std::uint8_t> context_mask, int batch, int src_len,
             std::span<const int> tgt_in, int tgt_len, DropoutSource* dropout = nullptr) const;

 private:
  int index(std::string_view name) const;
  const Var& v(const Bound& b, const std::string& name) const;

  Var embed(Bound& b, std::span<const int> tokens, int batch, int len, DropoutSource* dropout) const;
  Var attention(Bound& b, const std::string& prefix, const Var& xq, const Var& xkv, int batch, int tq, int tk,
                const Tensor& bias, DropoutSource* dropout) const;
  Var feed_forward(Bound& b, const std::string& prefix, const Var& x, DropoutSource* dropout) const;
  Var norm(Bound& b, const std::string& prefix, const Var& x) const;
  Var residual_dropout(const Var& x, DropoutSource* dropout) const;

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> index_;
};

// Sinusoidal position table [len, d].
Tensor sinusoidal_positions(int len, int d);

}  // namespace vqbridge
