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

#include "vqbridge/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "vqbridge/data.hpp"
#include "vqbridge/error.hpp"
#include "vqbridge/ops.hpp"
#include "vqbridge/vocab.hpp"

namespace vqbridge {

ContextMode parse_context_mode(const std::string& name) {
  if (name == "continuous") return ContextMode::kContinuous;
  if (name == "cluster_centers") return ContextMode::kClusterCenters;
  throw ConfigError("context_mode: expected continuous or cluster_centers, got '" + name + "'");
}

const char* context_mode_name(ContextMode m) {
  return m == ContextMode::kContinuous ? "continuous" : "cluster_centers";
}

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size: must be >= 1");
  if (max_len < 1) throw ConfigError("max_len: must be >= 1");
}

SourceContext encode_source(const Transformer& model, const Codebook* codebook, int n_slices,
                            std::span<const int> tokens, int target_tag, ContextMode mode) {
  if (tokens.empty()) throw ContractViolation("translate: empty source sentence");
  const auto src = make_source(tokens, target_tag);
  Tape tape(false);
  auto bound = const_cast<Transformer&>(model).bind(tape, false);
  const EncodedBatch enc = model.encode(bound, src, 1, static_cast<int>(src.size()));
  SourceContext ctx{enc.states.value(), enc.padding_mask, enc.len};
  if (mode == ContextMode::kClusterCenters) {
    if (codebook == nullptr) throw ContractViolation("translate: cluster_centers mode needs a codebook");
    const auto codes = lookup_codes(ctx.states, codebook->entries().value, n_slices, ctx.mask);
    Var table = tape.constant(codebook->entries().value);
    ctx.states = gather_quantized(table, codes, n_slices).value();
  }
  return ctx;
}

Tensor next_token_log_probs(const Transformer& model, const SourceContext& ctx,
                            const std::vector<std::vector<int>>& prefixes) {
  const int n = static_cast<int>(prefixes.size());
  const int t = static_cast<int>(prefixes.front().size());
  const int d = ctx.states.dim(1);
  Tensor context({n * ctx.len, d});
  std::vector<std::uint8_t> mask;
  std::vector<int> tgt;
  for (int i = 0; i < n; ++i) {
    std::copy(ctx.states.data(), ctx.states.data() + ctx.states.size(),
              context.data() + static_cast<std::size_t>(i) * ctx.states.size());
    mask.insert(mask.end(), ctx.mask.begin(), ctx.mask.end());
    tgt.insert(tgt.end(), prefixes[static_cast<std::size_t>(i)].begin(), prefixes[static_cast<std::size_t>(i)].end());
  }
  Tape tape(false);
  auto bound = const_cast<Transformer&>(model).bind(tape, false);
  Var logits = model.decode(bound, tape.constant(std::move(context)), mask, n, ctx.len, tgt, t);
  std::vector<int> last(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) last[static_cast<std::size_t>(i)] = i * t + t - 1;
  return ops::log_softmax(ops::gather_rows(logits, last)).value();
}

std::vector<Hypothesis> beam_search(const Transformer& model, const Codebook* codebook, int n_slices,
                                    std::span<const int> tokens, int target_tag, const DecodeConfig& cfg) {
  cfg.validate();
  const SourceContext ctx = encode_source(model, codebook, n_slices, tokens, target_tag, cfg.context_mode);
  const int v = model.config().vocab_size;

  struct Live {
    std::vector<int> prefix;  // starts with <s>
    double log_prob;
  };
  std::vector<Live> beams{{{kBos}, 0.0}};
  std::vector<Hypothesis> done;

  for (int step = 0; step < cfg.max_len && !beams.empty(); ++step) {
    const int width = cfg.beam_size - static_cast<int>(done.size());
    if (width <= 0) break;
    std::vector<std::vector<int>> prefixes;
    for (const auto& b : beams) prefixes.push_back(b.prefix);
    const Tensor lp = next_token_log_probs(model, ctx, prefixes);

    struct Cand {
      double log_prob;
      int beam, token;
    };
    std::vector<Cand> cands;
    cands.reserve(beams.size() * static_cast<std::size_t>(v));
    for (std::size_t b = 0; b < beams.size(); ++b)
      for (int tok = 0; tok < v; ++tok) {
        if (tok == kPad || tok == kBos) continue;
        cands.push_back({beams[b].log_prob + lp[b * static_cast<std::size_t>(v) + static_cast<std::size_t>(tok)],
                         static_cast<int>(b), tok});
      }
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(width), cands.size());
    // Deterministic order: higher log-prob, then earlier beam, then smaller id.
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = cands[i];
      const auto& parent = beams[static_cast<std::size_t>(c.beam)].prefix;
      if (c.token == kEos) {
        Hypothesis h;
        h.tokens.assign(parent.begin() + 1, parent.end());
        h.log_prob = c.log_prob;
        h.score = c.log_prob / static_cast<double>(h.tokens.size() + 1);
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        auto p = parent;
        p.push_back(c.token);
        next.push_back({std::move(p), c.log_prob});
      }
    }
    beams = std::move(next);
  }
  // Hypotheses cut off by max_len still compete, normalized by their length.
  for (const auto& b : beams) {
    if (static_cast<int>(done.size()) >= cfg.beam_size) break;
    Hypothesis h;
    h.tokens.assign(b.prefix.begin() + 1, b.prefix.end());
    h.log_prob = b.log_prob;
    h.score = b.log_prob / static_cast<double>(std::max<std::size_t>(1, h.tokens.size()));
    done.push_back(std::move(h));
  }
  std::stable_sort(done.begin(), done.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return done;
}

std::vector<Hypothesis> translate_all(const Transformer& model, const Codebook* codebook, int n_slices,
                                      const std::vector<std::vector<int>>& sentences, int target_tag,
                                      const DecodeConfig& cfg, int threads) {
  cfg.validate();
  std::vector<Hypothesis> out(sentences.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < sentences.size(); i = next++) {
      try {
        auto hyps = beam_search(model, codebook, n_slices, sentences[i], target_tag, cfg);
        out[i] = hyps.empty() ? Hypothesis{} : std::move(hyps.front());
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(sentences.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

double token_accuracy(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references) {
  if (hypotheses.size() != references.size()) {
    throw ContractViolation("token_accuracy: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                            std::to_string(references.size()) + " references");
  }
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    total += references[i].size();
    for (std::size_t j = 0; j < references[i].size() && j < hypotheses[i].size(); ++j)
      hit += hypotheses[i][j] == references[i][j];
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

double forced_token_accuracy(const Transformer& model, const LanguagePair& pair, const Vocab& vocab, int batch_size) {
  if (pair.size() == 0) throw ContractViolation("forced_token_accuracy: empty language pair");
  if (batch_size < 1) throw ContractViolation("forced_token_accuracy: batch_size must be >= 1");
  auto& m = const_cast<Transformer&>(model);  // bind() only reads parameter values here
  const int V = model.config().vocab_size;
  std::size_t hit = 0, total = 0;
  for (std::size_t start = 0; start < pair.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(pair.size(), start + static_cast<std::size_t>(batch_size)); ++i) idx.push_back(i);
    const Batch b = make_batch(pair, idx, vocab, 0);
    Tape tape(false);
    auto bound = m.bind(tape, false);
    auto enc = model.encode(bound, b.src, b.size, b.src_len);
    const Var logits = model.decode(bound, enc.states, enc.padding_mask, b.size, b.src_len, b.tgt_in, b.tgt_len);
    const auto& lv = logits.value();
    for (std::size_t row = 0; row < b.tgt_out.size(); ++row) {
      const int want = b.tgt_out[row];
      if (want < 0 || want == kEos) continue;
      int best = -1;
      for (int v = 0; v < V; ++v) {
        if (v == kPad || v == kBos) continue;
        if (best < 0 || lv[row * V + v] > lv[row * V + best]) best = v;
      }
      hit += best == want;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

int thread_budget() {
  const char* env = std::getenv("VQBRIDGE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<int>(std::min<long>(n, 256));
}

}  // namespace vqbridge
