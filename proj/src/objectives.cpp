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

#include "vqbridge/objectives.hpp"

#include <cmath>
#include <random>

#include "vqbridge/error.hpp"
#include "vqbridge/ops.hpp"
#include "vqbridge/random.hpp"

namespace vqbridge {

Var translation_loss(const Var& logits, std::span<const int> targets, double smoothing) {
  return ops::smoothed_nll(ops::log_softmax(logits), targets, smoothing);
}

Var similarity_loss(const EncodedBatch& src, const EncodedBatch& tgt) {
  if (src.batch != tgt.batch) {
    throw ContractViolation("similarity_loss: batch sizes differ (" + std::to_string(src.batch) + " vs " +
                            std::to_string(tgt.batch) + ")");
  }
  Var ps = ops::mean_pool(src.states, src.batch, src.len, src.padding_mask);
  Var pt = ops::mean_pool(tgt.states, tgt.batch, tgt.len, tgt.padding_mask);
  return ops::mean(ops::row_norm(ops::sub(ps, pt)));
}

LanguageClassifier::LanguageClassifier(int d_model, int n_languages, std::uint64_t seed) {
  if (n_languages < 2) throw ContractViolation("classifier: need at least two languages");
  std::mt19937_64 rng(seed);
  Tensor w({d_model, n_languages});
  const double a = std::sqrt(6.0 / (d_model + n_languages));
  for (auto& x : w.vec()) x = (2.0 * uniform01(rng) - 1.0) * a;
  params_.emplace_back("classifier.w", std::move(w));
  params_.emplace_back("classifier.b", Tensor({n_languages}));
}

LanguageClassifier::Bound LanguageClassifier::bind(Tape& tape, bool trainable) {
  return {tape.param(params_[0], trainable), tape.param(params_[1], trainable)};
}

Var LanguageClassifier::token_probabilities(const Bound& bound, const Var& states, std::span<const std::uint8_t> mask,
                                            int len, std::span<const int> sentence_labels,
                                            std::vector<int>* token_labels) const {
  std::vector<int> rows;
  std::vector<int> labels;
  const int n_lang = n_languages();
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) continue;
    const int label = sentence_labels[r / static_cast<std::size_t>(len)];
    if (label < 0 || label >= n_lang) {
      throw ContractViolation("classifier: label " + std::to_string(label) + " outside [0," + std::to_string(n_lang) + ")");
    }
    rows.push_back(static_cast<int>(r));
    labels.push_back(label);
  }
  if (token_labels) *token_labels = std::move(labels);
  return ops::softmax(ops::linear(ops::gather_rows(states, rows), bound.w, bound.b));
}

Var classifier_loss(const Var& token_probs, std::span<const int> token_labels) {
  return ops::scale(ops::mean(ops::log(ops::pick(token_probs, token_labels))), -1.0);
}

Var adversarial_loss(const Var& token_probs, std::span<const int> token_labels) {
  return ops::mean(ops::log1m(ops::pick(token_probs, token_labels)));
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kJoint: return "joint";
    case Phase::kClassifier: return "classifier";
    case Phase::kEncoderDecoder: return "encoder_decoder";
  }
  return "?";
}

StepLoss build_step_loss(const Transformer& model, Transformer::Bound& bound, const Var* codebook,
                         const LanguageClassifier* classifier, const LanguageClassifier::Bound* clf_bound,
                         const Batch& batch, const ObjectiveConfig& cfg, Phase phase, double gate_draw,
                         DropoutSource* dropout) {
  StepLoss out;
  LossBreakdown& lb = out.breakdown;
  if (phase != Phase::kJoint && (classifier == nullptr || clf_bound == nullptr)) {
    throw ContractViolation(std::string("build_step_loss: phase '") + phase_name(phase) + "' needs a classifier");
  }

  EncodedBatch enc = model.encode(bound, batch.src, batch.size, batch.src_len, dropout);

  if (phase == Phase::kClassifier) {
    // Encoder output is a constant here; only the classifier learns.
    std::vector<int> labels;
    Var probs = classifier->token_probabilities(*clf_bound, ops::stop_gradient(enc.states), enc.padding_mask,
                                                enc.len, batch.src_lang_id, &labels);
    out.total = classifier_loss(probs, labels);
    lb.l_classifier = lb.total = out.total.value()[0];
    return out;
  }

  Var context = enc.states;
  std::vector<Var> terms;
  if (cfg.use_quantizer && codebook != nullptr) {
    QuantizerOutput q = quantize(enc, *codebook, cfg.quantizer, gate_draw);
    context = q.context;
    out.codes = std::move(q.codes);
    out.used_quantized = q.used_quantized;
    lb.l_codebook = q.loss_codebook.value()[0];
    lb.l_commitment = q.loss_commitment.value()[0];
    // Zero-weight terms stay out of the graph so a disabled quantizer leaves
    // every other gradient bit-identical.
    if (cfg.quantizer.alpha_codebook != 0.0) terms.push_back(ops::scale(q.loss_codebook, cfg.quantizer.alpha_codebook));
    if (cfg.quantizer.alpha_commitment != 0.0) {
      terms.push_back(ops::scale(q.loss_commitment, cfg.quantizer.alpha_commitment));
    }
  }

  Var logits = model.decode(bound, context, enc.padding_mask, batch.size, batch.src_len, batch.tgt_in, batch.tgt_len,
                            dropout);
  Var mt = translation_loss(logits, batch.tgt_out, cfg.label_smoothing);
  lb.l_mt = mt.value()[0];
  Var total = mt;

  if (cfg.similarity_weight != 0.0) {
    EncodedBatch tgt = model.encode(bound, batch.tgt_as_src, batch.size, batch.tgt_src_len, dropout);
    Var sim = similarity_loss(enc, tgt);
    lb.l_similarity = sim.value()[0];
    terms.push_back(ops::scale(sim, cfg.similarity_weight));
  }

  if (phase == Phase::kEncoderDecoder) {
    std::vector<int> labels;
    Var probs = classifier->token_probabilities(*clf_bound, ops::gradient_reversal(enc.states), enc.padding_mask,
                                                enc.len, batch.src_lang_id, &labels);
    Var adv = adversarial_loss(probs, labels);
    lb.l_adv = adv.value()[0];
    terms.push_back(adv);
  }

  for (const auto& t : terms) total = ops::add(total, t);
  out.total = total;
  lb.total = total.value()[0];
  return out;
}

}  // namespace vqbridge
