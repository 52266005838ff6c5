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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <set>

#include "test_util.hpp"
#include "vqbridge/error.hpp"
#include "vqbridge/inference.hpp"
#include "vqbridge/ops.hpp"
#include "vqbridge/vocab.hpp"

using namespace vqbridge;

namespace {

constexpr int kVocab = 14;
constexpr int kTag = 4;

ModelConfig cfg() {
  ModelConfig c;
  c.vocab_size = kVocab;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  c.d_ffn = 16;
  c.dropout = 0.0;
  c.attn_dropout = 0.0;
  return c;
}

// Greedy argmax with a full decoder pass per step, written against the raw
// encode/decode interface.
std::vector<int> greedy_oracle(Transformer& m, const std::vector<int>& src_tokens, int max_len) {
  std::vector<int> src{kTag};
  src.insert(src.end(), src_tokens.begin(), src_tokens.end());
  std::vector<int> prefix{kBos};
  for (int step = 0; step < max_len; ++step) {
    Tape tape(false);
    auto b = m.bind(tape, false);
    auto enc = m.encode(b, src, 1, static_cast<int>(src.size()));
    const int t = static_cast<int>(prefix.size());
    auto logits = m.decode(b, enc.states, enc.padding_mask, 1, static_cast<int>(src.size()), prefix, t);
    int best = -1;
    double best_v = -1e300;
    for (int v = 0; v < kVocab; ++v) {
      if (v == kPad || v == kBos) continue;
      const double x = logits.value()[static_cast<std::size_t>(t - 1) * kVocab + v];
      if (x > best_v) {
        best_v = x;
        best = v;
      }
    }
    if (best == kEos) break;
    prefix.push_back(best);
  }
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<std::vector<int>> random_sources(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> s(2 + rng() % 5);
    for (auto& x : s) x = 5 + static_cast<int>(rng() % (kVocab - 5));
    out.push_back(s);
  }
  return out;
}

// Random models are close to uniform; sharpen the output layer so EOS and
// repeated tokens both occur.
Transformer sharpened(std::uint64_t seed) {
  Transformer m(cfg(), seed);
  auto& e = m.param("embed").value.vec();
  for (auto& x : e) x *= 4.0;
  // Output weights are tied to the embedding; a longer EOS row makes
  // termination likely within a few steps.
  for (int j = 0; j < cfg().d_model; ++j) e[static_cast<std::size_t>(kEos) * cfg().d_model + j] *= 3.0;
  return m;
}

}  // namespace

TEST_CASE("beam 1 equals greedy decoding on 50 random inputs") {
  Transformer m = sharpened(1);
  DecodeConfig dc;
  dc.beam_size = 1;
  dc.max_len = 10;
  int with_eos = 0;
  for (const auto& src : random_sources(50, 2)) {
    const auto hyps = beam_search(m, nullptr, 1, src, kTag, dc);
    REQUIRE(hyps.size() == 1);
    CHECK(hyps[0].tokens == greedy_oracle(m, src, dc.max_len));
    with_eos += hyps[0].finished;
  }
  CHECK(with_eos > 0);
}

TEST_CASE("wider beams find hypotheses at least as good under the normalized score") {
  Transformer m = sharpened(3);
  DecodeConfig one, five;
  one.beam_size = 1;
  five.beam_size = 5;
  one.max_len = five.max_len = 10;
  for (const auto& src : random_sources(30, 4)) {
    const auto a = beam_search(m, nullptr, 1, src, kTag, one);
    const auto b = beam_search(m, nullptr, 1, src, kTag, five);
    CHECK(b.front().score >= a.front().score - 1e-12);
  }
}

TEST_CASE("beam returns distinct hypotheses sorted by score") {
  Transformer m = sharpened(5);
  DecodeConfig dc;
  dc.beam_size = 4;
  dc.max_len = 8;
  for (const auto& src : random_sources(10, 6)) {
    const auto hyps = beam_search(m, nullptr, 1, src, kTag, dc);
    CHECK(hyps.size() <= 4);
    CHECK(hyps.size() >= 1);
    std::set<std::vector<int>> seen;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      CHECK(seen.insert(hyps[i].tokens).second);
      if (i > 0) CHECK(hyps[i - 1].score >= hyps[i].score);
      for (int t : hyps[i].tokens) CHECK((t != kPad && t != kBos && t != kEos));
      const double len = static_cast<double>(hyps[i].tokens.size() + (hyps[i].finished ? 1 : 0));
      CHECK(hyps[i].score == doctest::Approx(hyps[i].log_prob / std::max(1.0, len)));
    }
  }
}

TEST_CASE("scores are the model's log-probabilities") {
  Transformer m = sharpened(7);
  DecodeConfig dc;
  dc.beam_size = 3;
  dc.max_len = 6;
  const std::vector<int> src{6, 7, 8};
  const auto hyps = beam_search(m, nullptr, 1, src, kTag, dc);
  for (const auto& h : hyps) {
    std::vector<int> tin{kBos};
    tin.insert(tin.end(), h.tokens.begin(), h.tokens.end());
    std::vector<int> tout = h.tokens;
    if (h.finished) tout.push_back(kEos);
    tin.resize(tout.size());
    Tape tape(false);
    auto b = m.bind(tape, false);
    const std::vector<int> s{kTag, 6, 7, 8};
    auto enc = m.encode(b, s, 1, 4);
    auto lp = ops::log_softmax(m.decode(b, enc.states, enc.padding_mask, 1, 4, tin, static_cast<int>(tin.size())));
    double total = 0.0;
    for (std::size_t i = 0; i < tout.size(); ++i) total += lp.value()[i * kVocab + static_cast<std::size_t>(tout[i])];
    CHECK(h.log_prob == doctest::Approx(total).epsilon(1e-10));
  }
}

TEST_CASE("cluster-center context") {
  Transformer m = sharpened(8);
  Codebook cb(6, 8);
  cb.init_normal(1.0, 9);
  const std::vector<int> src{5, 9, 11, 6};
  auto cont = encode_source(m, &cb, 2, src, kTag, ContextMode::kContinuous);
  auto cent = encode_source(m, &cb, 2, src, kTag, ContextMode::kClusterCenters);
  CHECK(cont.states.shape() == cent.states.shape());
  CHECK(cont.states.vec() != cent.states.vec());
  const auto codes = lookup_codes(cont.states, cb.entries().value, 2, {});
  for (int r = 0; r < cent.len; ++r)
    for (int s = 0; s < 2; ++s)
      for (int j = 0; j < 4; ++j)
        CHECK(cent.states[static_cast<std::size_t>(r) * 8 + s * 4 + j] ==
              cb.entries().value[static_cast<std::size_t>(codes[static_cast<std::size_t>(r) * 2 + s]) * 8 + s * 4 + j]);
  DecodeConfig dc;
  dc.context_mode = ContextMode::kClusterCenters;
  CHECK_THROWS_AS(beam_search(m, nullptr, 2, src, kTag, dc), ContractViolation);
  CHECK_NOTHROW(beam_search(m, &cb, 2, src, kTag, dc));
}

TEST_CASE("errors and determinism") {
  Transformer m = sharpened(10);
  DecodeConfig dc;
  CHECK_THROWS_AS(beam_search(m, nullptr, 1, std::vector<int>{}, kTag, dc), ContractViolation);
  dc.beam_size = 0;
  CHECK_THROWS_AS(dc.validate(), ConfigError);
  CHECK_THROWS_AS(parse_context_mode("centroids"), ConfigError);
  CHECK(parse_context_mode("cluster_centers") == ContextMode::kClusterCenters);

  DecodeConfig ok;
  const auto srcs = random_sources(12, 11);
  const auto a = translate_all(m, nullptr, 1, srcs, kTag, ok, 1);
  const auto b = translate_all(m, nullptr, 1, srcs, kTag, ok, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].tokens == b[i].tokens);
    CHECK(a[i].score == b[i].score);
  }
}

TEST_CASE("token accuracy") {
  CHECK(token_accuracy({{1, 2, 3}}, {{1, 2, 3}}) == 1.0);
  CHECK(token_accuracy({{1, 9}, {}}, {{1, 2, 3}, {4}}) == 0.25);
  CHECK(token_accuracy({{1, 2, 3, 4, 5}}, {{1, 2}}) == 1.0);
  CHECK_THROWS_AS(token_accuracy({{1}}, {}), ContractViolation);
}

TEST_CASE("thread budget comes from the environment") {
  ::setenv("VQBRIDGE_THREADS", "3", 1);
  CHECK(thread_budget() == 3);
  ::setenv("VQBRIDGE_THREADS", "zero", 1);
  CHECK(thread_budget() == 1);
  ::unsetenv("VQBRIDGE_THREADS");
  CHECK(thread_budget() == 1);
}

TEST_CASE("teacher-forced accuracy matches per-sentence argmax") {
  Transformer m = sharpened(12);
  Vocab vocab;
  REQUIRE(vocab.add(Vocab::lang_tag("y")) == kTag);
  for (int i = 5; i < kVocab; ++i) vocab.add("t" + std::to_string(i));
  LanguagePair pair{"x", "y", random_sources(9, 13), random_sources(9, 14)};
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < pair.size(); ++i) {
    std::vector<int> src{kTag};
    src.insert(src.end(), pair.src[i].begin(), pair.src[i].end());
    std::vector<int> tin{kBos};
    tin.insert(tin.end(), pair.tgt[i].begin(), pair.tgt[i].end() - 1);
    Tape tape(false);
    auto b = m.bind(tape, false);
    auto enc = m.encode(b, src, 1, static_cast<int>(src.size()));
    auto logits = m.decode(b, enc.states, enc.padding_mask, 1, static_cast<int>(src.size()), tin,
                           static_cast<int>(tin.size()));
    for (std::size_t t = 0; t < tin.size(); ++t) {
      int best = kEos;  // first id after <pad> and <s>
      for (int v = kEos + 1; v < kVocab; ++v)
        if (logits.value()[t * kVocab + v] > logits.value()[t * kVocab + best]) best = v;
      hit += best == pair.tgt[i][t];
      ++total;
    }
  }
  CHECK(forced_token_accuracy(m, pair, vocab, 4) == doctest::Approx(static_cast<double>(hit) / total).epsilon(1e-15));
  CHECK(forced_token_accuracy(m, pair, vocab, 1) == forced_token_accuracy(m, pair, vocab, 64));
}
