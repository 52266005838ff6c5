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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vqbridge/data.hpp"
#include "vqbridge/quantizer.hpp"
#include "vqbridge/tensor.hpp"
#include "vqbridge/transformer.hpp"

namespace vqbridge {

/// Discrete codes of one sentence: S codes per source token, the S codes of
/// each token stored contiguously.
struct CodeSequence {
  std::string lang;
  int sentence_id = 0;
  std::vector<int> codes;
};

// Encodes each sentence (prefixed with `target_tag`, no dropout) and looks up
// per-slice codes for its tokens. The tag position and padding are excluded,
// so a t-token sentence yields S*t codes. The gate plays no part.
std::vector<CodeSequence> extract_codes(const Transformer& model, const Codebook& codebook, int n_slices,
                                        const std::vector<std::vector<int>>& sentences, const std::string& lang,
                                        int target_tag, int batch_size = 64);

// Encoder states [tokens, D] for the same positions extract_codes uses.
Tensor collect_encoder_states(const Transformer& model, const std::vector<std::vector<int>>& sentences,
                              int target_tag, int batch_size = 64);

/// Per-slice code probabilities after adding `smoothing` to every count.
struct CodeDistribution {
  int codebook_size = 0;
  int n_slices = 0;
  std::vector<std::vector<double>> slices;
};

CodeDistribution code_distribution(std::span<const CodeSequence> seqs, int codebook_size, int n_slices,
                                   double smoothing = 1e-8);

struct KlDivergence {
  std::vector<double> per_slice;
  double mean = 0.0;
};

// D_KL(p || q) per slice and averaged over slices.
KlDivergence code_kl(const CodeDistribution& p, const CodeDistribution& q);

// Full matrix M[i][j] = mean-over-slices D_KL(P_i || P_j).
std::vector<std::vector<double>> code_kl_matrix(const std::vector<CodeDistribution>& dists);

// Writes `<prefix>.<src lang>` / `<prefix>.<tgt lang>` with one line of
// space-separated decimal codes per sentence, pairing sequences by
// sentence_id. Returns the number of sentences skipped for lack of a partner.
std::size_t export_code_translation_corpus(std::span<const CodeSequence> src, std::span<const CodeSequence> tgt,
                                           const std::string& prefix);

// Cumulative explained-variance ratio of the first n principal components of
// the row-centered data [N, D]. Constant data gives a step to 1.
std::vector<double> pca_explained_variance(const Tensor& states, int n_components);

struct SliceUsage {
  int active = 0;
  double entropy = 0.0;              // natural log
  std::vector<double> top_shares;    // largest m shares, descending
};

struct UsageStats {
  std::vector<SliceUsage> slices;
  double mean_entropy = 0.0;
  bool collapse = false;  // some slice uses fewer than the threshold entries
};

// codes: flat [rows*S], -1 entries ignored.
UsageStats usage_stats(std::span<const int> codes, int codebook_size, int n_slices, int top_m = 5,
                       int collapse_threshold = 2);

// Off-target when no token is in the target vocabulary, or when against some
// other language the tokens exclusive to that language are at least as many
// as those exclusive to the target (ties with evidence count as off-target).
// Tokens shared by both languages are not evidence either way.
bool is_off_target(const std::vector<std::string>& hypothesis, const std::string& target_lang,
                   const FamilyManifest& family);
double off_target_rate(const std::vector<std::vector<std::string>>& hypotheses, const std::string& target_lang,
                       const FamilyManifest& family);

}  // namespace vqbridge
