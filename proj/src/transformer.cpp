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

#include "vqbridge/transformer.hpp"

#include <cmath>
#include <random>

#include "vqbridge/error.hpp"
#include "vqbridge/ops.hpp"
#include "vqbridge/vocab.hpp"

namespace vqbridge {

namespace {

constexpr double kMasked = -1e9;

void require(bool ok, const std::string& key, const std::string& msg) {
  if (!ok) throw ConfigError(key + ": " + msg);
}

Tensor xavier(std::mt19937_64& rng, int fan_in, int fan_out) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (auto& x : t.vec()) x = (2.0 * uniform01(rng) - 1.0) * a;
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size > 4, "vocab_size", "must exceed the 4 reserved specials");
  require(d_model > 0, "d_model", "must be positive");
  require(n_heads > 0 && d_model % n_heads == 0, "n_heads", "must divide d_model");
  require(n_layers_enc >= 1, "n_layers_enc", "must be >= 1");
  require(n_layers_dec >= 1, "n_layers_dec", "must be >= 1");
  require(d_ffn > 0, "d_ffn", "must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout", "must lie in [0,1)");
  require(attn_dropout >= 0.0 && attn_dropout < 1.0, "attn_dropout", "must lie in [0,1)");
  require(label_smoothing >= 0.0 && label_smoothing <= 1.0, "label_smoothing", "must lie in [0,1]");
}

Tensor sinusoidal_positions(int len, int d) {
  Tensor t({len, d});
  const int half = d / 2;
  for (int p = 0; p < len; ++p)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
      t[static_cast<std::size_t>(p) * d + i] = std::sin(p * freq);
      t[static_cast<std::size_t>(p) * d + half + i] = std::cos(p * freq);
    }
  return t;
}

Transformer::Transformer(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(derive_seed(seed, 1));
  const int d = cfg_.d_model, f = cfg_.d_ffn;
  auto add = [&](const std::string& name, Tensor t) { params_.emplace_back(name, std::move(t)); };
  auto add_norm = [&](const std::string& p) {
    add(p + ".g", Tensor({d}, 1.0));
    add(p + ".b", Tensor({d}, 0.0));
  };
  auto add_attn = [&](const std::string& p) {
    for (const char* w : {"q", "k", "v", "o"}) {
      add(p + ".w" + w, xavier(rng, d, d));
      add(p + ".b" + w, Tensor({d}, 0.0));
    }
  };
  auto add_ffn = [&](const std::string& p) {
    add(p + ".w1", xavier(rng, d, f));
    add(p + ".b1", Tensor({f}, 0.0));
    add(p + ".w2", xavier(rng, f, d));
    add(p + ".b2", Tensor({d}, 0.0));
  };

  Tensor emb({cfg_.vocab_size, d});
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& x : emb.vec()) x = normal01(rng) * sd;
  for (int j = 0; j < d; ++j) emb[static_cast<std::size_t>(kPad) * d + j] = 0.0;
  add("embed", std::move(emb));

  for (int l = 0; l < cfg_.n_layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l);
    add_norm(p + ".ln1");
    add_attn(p + ".self");
    add_norm(p + ".ln2");
    add_ffn(p + ".ffn");
  }
  add_norm("enc.ln");
  for (int l = 0; l < cfg_.n_layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l);
    add_norm(p + ".ln1");
    add_attn(p + ".self");
    add_norm(p + ".ln2");
    add_attn(p + ".cross");
    add_norm(p + ".ln3");
    add_ffn(p + ".ffn");
  }
  add_norm("dec.ln");
  for (std::size_t i = 0; i < params_.size(); ++i) index_.emplace(params_[i].name, static_cast<int>(i));
}

int Transformer::index(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it != index_.end()) return it->second;
  throw ContractViolation("transformer: no parameter named '" + std::string(name) + "'");
}

Parameter& Transformer::param(std::string_view name) { return params_[static_cast<std::size_t>(index(name))]; }
const Parameter& Transformer::param(std::string_view name) const {
  return params_[static_cast<std::size_t>(index(name))];
}

Transformer::Bound Transformer::bind(Tape& tape, bool trainable) {
  Bound b;
  b.tape = &tape;
  b.vars.reserve(params_.size());
  for (auto& p : params_) b.vars.push_back(tape.param(p, trainable));
  return b;
}

const Var& Transformer::v(const Bound& b, const std::string& name) const {
  return b.vars[static_cast<std::size_t>(index(name))];
}

Var Transformer::residual_dropout(const Var& x, DropoutSource* dropout) const {
  if (dropout == nullptr || cfg_.dropout <= 0.0) return x;
  return ops::dropout(x, dropout->mask(x.shape(), cfg_.dropout));
}

Var Transformer::embed(Bound& b, std::span<const int> tokens, int batch, int len, DropoutSource* dropout) const {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg_.vocab_size) {
      throw ContractViolation("transformer: token id " + std::to_string(tokens[i]) + " at position " +
                              std::to_string(i) + " outside vocab of size " + std::to_string(cfg_.vocab_size));
    }
  }
  const int d = cfg_.d_model;
  Var e = ops::scale(ops::embedding(v(b, "embed"), tokens), std::sqrt(static_cast<double>(d)));
  const Tensor pos = sinusoidal_positions(len, d);
  Tensor tiled({batch * len, d});
  for (int i = 0; i < batch; ++i)
    std::copy(pos.vec().begin(), pos.vec().end(), tiled.data() + static_cast<std::size_t>(i) * len * d);
  return residual_dropout(ops::add(e, b.tape->constant(std::move(tiled))), dropout);
}

Var Transformer::norm(Bound& b, const std::string& prefix, const Var& x) const {
  return ops::layer_norm(x, v(b, prefix + ".g"), v(b, prefix + ".b"));
}

Var Transformer::attention(Bound& b, const std::string& p, const Var& xq, const Var& xkv, int batch, int tq, int tk,
                           const Tensor& bias, DropoutSource* dropout) const {
  const int h = cfg_.n_heads;
  const int dh = cfg_.d_model / h;
  Var q = ops::split_heads(ops::linear(xq, v(b, p + ".wq"), v(b, p + ".bq")), batch, tq, h);
  Var k = ops::split_heads(ops::linear(xkv, v(b, p + ".wk"), v(b, p + ".bk")), batch, tk, h);
  Var val = ops::split_heads(ops::linear(xkv, v(b, p + ".wv"), v(b, p + ".bv")), batch, tk, h);
  Var scores = ops::scale(ops::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Var probs = ops::softmax(scores, &bias);
  if (dropout != nullptr && cfg_.attn_dropout > 0.0) probs = ops::dropout(probs, dropout->mask(probs.shape(), cfg_.attn_dropout));
  Var ctx = ops::merge_heads(ops::bmm(probs, val), batch, h);
  return ops::linear(ctx, v(b, p + ".wo"), v(b, p + ".bo"));
}

Var Transformer::feed_forward(Bound& b, const std::string& p, const Var& x, DropoutSource* dropout) const {
  Var hdn = ops::gelu(ops::linear(x, v(b, p + ".w1"), v(b, p + ".b1")));
  hdn = residual_dropout(hdn, dropout);
  return ops::linear(hdn, v(b, p + ".w2"), v(b, p + ".b2"));
}

EncodedBatch Transformer::encode(Bound& b, std::span<const int> tokens, int batch, int len,
                                 DropoutSource* dropout) const {
  if (batch <= 0 || len <= 0 || tokens.size() != static_cast<std::size_t>(batch) * len) {
    throw ContractViolation("encode: token count " + std::to_string(tokens.size()) + " != batch " +
                            std::to_string(batch) + " x len " + std::to_string(len));
  }
  EncodedBatch out;
  out.batch = batch;
  out.len = len;
  out.padding_mask.resize(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) out.padding_mask[i] = tokens[i] != kPad ? 1 : 0;

  const int h = cfg_.n_heads;
  Tensor bias({batch * h, len, len});
  for (int bi = 0; bi < batch; ++bi)
    for (int hi = 0; hi < h; ++hi)
      for (int q = 0; q < len; ++q)
        for (int k = 0; k < len; ++k)
          if (!out.padding_mask[static_cast<std::size_t>(bi * len + k)])
            bias[(static_cast<std::size_t>(bi * h + hi) * len + q) * len + k] = kMasked;

  Var x = embed(b, tokens, batch, len, dropout);
  for (int l = 0; l < cfg_.n_layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l);
    Var n1 = norm(b, p + ".ln1", x);
    Var a = attention(b, p + ".self", n1, n1, batch, len, len, bias, dropout);
    x = ops::add(x, residual_dropout(a, dropout));
    x = ops::add(x, residual_dropout(feed_forward(b, p + ".ffn", norm(b, p + ".ln2", x), dropout), dropout));
  }
  out.states = norm(b, "enc.ln", x);
  return out;
}

Var Transformer::decode(Bound& b, const Var& context, std::span<const std::uint8_t> context_mask, int batch,
                        int src_len, std::span<const int> tgt_in, int tgt_len, DropoutSource* dropout) const {
  const int d = cfg_.d_model, h = cfg_.n_heads;
  if (context.value().rank() != 2 || context.shape()[1] != d || context.shape()[0] != batch * src_len) {
    throw ContractViolation("decode: context " + shape_str(context.shape()) + " does not match [" +
                            std::to_string(batch * src_len) + "," + std::to_string(d) + "]");
  }
  if (context_mask.size() != static_cast<std::size_t>(batch) * src_len) {
    throw ContractViolation("decode: context mask size " + std::to_string(context_mask.size()) + " mismatch");
  }
  if (tgt_len <= 0 || tgt_in.size() != static_cast<std::size_t>(batch) * tgt_len) {
    throw ContractViolation("decode: target count " + std::to_string(tgt_in.size()) + " != batch " +
                            std::to_string(batch) + " x len " + std::to_string(tgt_len));
  }
  Tensor causal({batch * h, tgt_len, tgt_len});
  for (int n = 0; n < batch * h; ++n)
    for (int q = 0; q < tgt_len; ++q)
      for (int k = q + 1; k < tgt_len; ++k) causal[(static_cast<std::size_t>(n) * tgt_len + q) * tgt_len + k] = kMasked;
  Tensor cross({batch * h, tgt_len, src_len});
  for (int bi = 0; bi < batch; ++bi)
    for (int hi = 0; hi < h; ++hi)
      for (int q = 0; q < tgt_len; ++q)
        for (int k = 0; k < src_len; ++k)
          if (!context_mask[static_cast<std::size_t>(bi * src_len + k)])
            cross[(static_cast<std::size_t>(bi * h + hi) * tgt_len + q) * src_len + k] = kMasked;

  Var x = embed(b, tgt_in, batch, tgt_len, dropout);
  for (int l = 0; l < cfg_.n_layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l);
    Var n1 = norm(b, p + ".ln1", x);
    x = ops::add(x, residual_dropout(attention(b, p + ".self", n1, n1, batch, tgt_len, tgt_len, causal, dropout),
                                     dropout));
    Var n2 = norm(b, p + ".ln2", x);
    x = ops::add(x, residual_dropout(attention(b, p + ".cross", n2, context, batch, tgt_len, src_len, cross, dropout),
                                     dropout));
    x = ops::add(x, residual_dropout(feed_forward(b, p + ".ffn", norm(b, p + ".ln3", x), dropout), dropout));
  }
  Var out = norm(b, "dec.ln", x);
  return ops::matmul(out, v(b, "embed"), false, true);
}

}  // namespace vqbridge
