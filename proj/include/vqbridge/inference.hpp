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

#include <span>
#include <string>
#include <vector>

#include "vqbridge/data.hpp"
#include "vqbridge/quantizer.hpp"
#include "vqbridge/transformer.hpp"

namespace vqbridge {

enum class ContextMode { kContinuous, kClusterCenters };

ContextMode parse_context_mode(const std::string& name);  // "continuous" | "cluster_centers"
const char* context_mode_name(ContextMode m);

struct DecodeConfig {
  int beam_size = 5;
  int max_len = 64;  // generated tokens, </s> included
  ContextMode context_mode = ContextMode::kContinuous;

  void validate() const;
};

struct Hypothesis {
  std::vector<int> tokens;  // without <s> and </s>
  double log_prob = 0.0;
  double score = 0.0;  // log_prob / length, length counting </s> when finished
  bool finished = false;
};

/// Decoder context for one source sentence: continuous encoder states or
/// their cluster centers.
struct SourceContext {
  Tensor states;  // [len, D]
  std::vector<std::uint8_t> mask;
  int len = 0;
};

SourceContext encode_source(const Transformer& model, const Codebook* codebook, int n_slices,
                            std::span<const int> tokens, int target_tag, ContextMode mode);

// Next-token log-probabilities [n_prefixes, V] at the last position of each
// prefix (all prefixes have equal length and start with <s>).
Tensor next_token_log_probs(const Transformer& model, const SourceContext& ctx,
                            const std::vector<std::vector<int>>& prefixes);

// Beam search with length-normalized scores. Finished hypotheses leave the
// beam and each one takes up one of the beam_size slots. <pad> and <s> are
// never emitted. Returns up to beam_size distinct hypotheses, best first.
std::vector<Hypothesis> beam_search(const Transformer& model, const Codebook* codebook, int n_slices,
                                    std::span<const int> tokens, int target_tag, const DecodeConfig& cfg);

// Best hypothesis for each sentence; sentences are spread over `threads`
// workers (results do not depend on the worker count).
std::vector<Hypothesis> translate_all(const Transformer& model, const Codebook* codebook, int n_slices,
                                      const std::vector<std::vector<int>>& sentences, int target_tag,
                                      const DecodeConfig& cfg, int threads = 1);

// Position-wise matches against the reference over total reference length.
double token_accuracy(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references);

// Teacher-forced position-wise accuracy of the argmax next token over the
// pair's target tokens (</s> excluded). Much cheaper than decoding long
// sequences.
double forced_token_accuracy(const Transformer& model, const LanguagePair& pair, const Vocab& vocab,
                             int batch_size = 32);

// Worker count from VQBRIDGE_THREADS (default 1, never below 1).
int thread_budget();

}  // namespace vqbridge
