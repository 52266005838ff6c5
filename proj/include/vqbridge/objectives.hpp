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
#include <string>
#include <vector>

#include "vqbridge/data.hpp"
#include "vqbridge/quantizer.hpp"
#include "vqbridge/tensor.hpp"
#include "vqbridge/transformer.hpp"

namespace vqbridge {

struct LossBreakdown {
  double l_mt = 0.0;
  double l_codebook = 0.0;
  double l_commitment = 0.0;
  double l_similarity = 0.0;
  double l_classifier = 0.0;
  double l_adv = 0.0;
  double total = 0.0;
};

// Mean label-smoothed cross-entropy over targets >= 0.
Var translation_loss(const Var& logits, std::span<const int> targets, double smoothing);

// Mean over the batch of the L2 distance between mean-pooled (non-pad)
// source and target encoder states.
Var similarity_loss(const EncodedBatch& src, const EncodedBatch& tgt);

/// Token-level linear language classifier on encoder states.
class LanguageClassifier {
 public:
  LanguageClassifier(int d_model, int n_languages, std::uint64_t seed);

  int n_languages() const { return params_[1].value.dim(0); }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  struct Bound {
    Var w, b;
  };
  Bound bind(Tape& tape, bool trainable);

  // Per-token class probabilities [non-pad tokens, L] and the matching
  // per-token labels (each token inherits its sentence's label).
  Var token_probabilities(const Bound& bound, const Var& states, std::span<const std::uint8_t> mask, int len,
                          std::span<const int> sentence_labels, std::vector<int>* token_labels) const;

 private:
  std::vector<Parameter> params_;  // w [D, L], b [L]
};

// -mean_tokens log p_c
Var classifier_loss(const Var& token_probs, std::span<const int> token_labels);
// mean_tokens log(1 - p_c), with p_c clamped to 1 - 1e-7.
Var adversarial_loss(const Var& token_probs, std::span<const int> token_labels);

/// Which objective a step optimizes.
enum class Phase {
  kJoint,           // translation plus enabled quantizer / similarity terms
  kClassifier,      // classifier parameters only, via the classifier loss
  kEncoderDecoder,  // model parameters via translation + adversarial loss
};

const char* phase_name(Phase p);

struct ObjectiveConfig {
  bool use_quantizer = true;
  QuantizerConfig quantizer;
  double similarity_weight = 0.0;
  bool adversarial = false;
  double label_smoothing = 0.1;
};

struct StepLoss {
  Var total;
  LossBreakdown breakdown;
  std::vector<int> codes;  // [src rows * S], empty without a quantizer
  bool used_quantized = false;
};

// Builds the loss graph for one batch on `tape`. The bound model and
// classifier decide which parameters receive gradients. In the
// encoder-decoder phase a gradient reversal sits between encoder and
// classifier: its forward value is 𝓛_MT + 𝓛_adv while the encoder descends
// 𝓛_MT - 𝓛_adv, which lowers the true-language probability.
StepLoss build_step_loss(const Transformer& model, Transformer::Bound& bound, const Var* codebook,
                         const LanguageClassifier* classifier, const LanguageClassifier::Bound* clf_bound,
                         const Batch& batch, const ObjectiveConfig& cfg, Phase phase, double gate_draw,
                         DropoutSource* dropout);

}  // namespace vqbridge
