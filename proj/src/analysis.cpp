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

#include "vqbridge/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "vqbridge/data.hpp"
#include "vqbridge/error.hpp"
#include "vqbridge/vocab.hpp"

namespace vqbridge {

namespace {

// Runs the encoder over `sentences` in batches; calls `sink(sentence, pos,
// row pointer)` for every content token.
template <class Sink>
void for_each_token_state(const Transformer& model, const std::vector<std::vector<int>>& sentences, int target_tag,
                          int batch_size, Sink sink) {
  auto& mutable_model = const_cast<Transformer&>(model);  // bind() only reads through non-trainable leaves
  const int d = model.config().d_model;
  for (std::size_t start = 0; start < sentences.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(sentences.size(), start + static_cast<std::size_t>(batch_size));
    int len = 1;
    for (std::size_t i = start; i < end; ++i) len = std::max(len, static_cast<int>(sentences[i].size()) + 1);
    const int b = static_cast<int>(end - start);
    std::vector<int> tokens(static_cast<std::size_t>(b) * len, kPad);
    for (std::size_t i = start; i < end; ++i) {
      auto src = make_source(sentences[i], target_tag);
      std::copy(src.begin(), src.end(), tokens.begin() + static_cast<std::ptrdiff_t>((i - start) * len));
    }
    Tape tape(false);
    auto bound = mutable_model.bind(tape, false);
    EncodedBatch enc = model.encode(bound, tokens, b, len);
    const Tensor& st = enc.states.value();
    for (std::size_t i = start; i < end; ++i)
      for (std::size_t p = 0; p < sentences[i].size(); ++p) {
        const std::size_t row = (i - start) * static_cast<std::size_t>(len) + p + 1;
        sink(i, p, st.data() + row * d);
      }
  }
}

}  // namespace

std::vector<CodeSequence> extract_codes(const Transformer& model, const Codebook& codebook, int n_slices,
                                        const std::vector<std::vector<int>>& sentences, const std::string& lang,
                                        int target_tag, int batch_size) {
  const int d = model.config().d_model;
  if (codebook.dim() != d) throw ContractViolation("extract_codes: codebook dim differs from d_model");
  std::vector<CodeSequence> out(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out[i].lang = lang;
    out[i].sentence_id = static_cast<int>(i);
    out[i].codes.reserve(sentences[i].size() * static_cast<std::size_t>(n_slices));
  }
  const Tensor& table = codebook.entries().value;
  for_each_token_state(model, sentences, target_tag, batch_size, [&](std::size_t s, std::size_t, const double* row) {
    Tensor one({1, d}, std::vector<double>(row, row + d));
    const auto codes = lookup_codes(one, table, n_slices, {});
    out[s].codes.insert(out[s].codes.end(), codes.begin(), codes.end());
  });
  return out;
}

Tensor collect_encoder_states(const Transformer& model, const std::vector<std::vector<int>>& sentences,
                              int target_tag, int batch_size) {
  const int d = model.config().d_model;
  std::vector<double> rows;
  for_each_token_state(model, sentences, target_tag, batch_size,
                       [&](std::size_t, std::size_t, const double* row) { rows.insert(rows.end(), row, row + d); });
  const int n = static_cast<int>(rows.size() / static_cast<std::size_t>(d));
  return Tensor({n, d}, std::move(rows));
}

CodeDistribution code_distribution(std::span<const CodeSequence> seqs, int codebook_size, int n_slices,
                                   double smoothing) {
  CodeDistribution dist{codebook_size, n_slices, {}};
  dist.slices.assign(static_cast<std::size_t>(n_slices), std::vector<double>(static_cast<std::size_t>(codebook_size), 0.0));
  for (const auto& seq : seqs) {
    if (seq.codes.size() % static_cast<std::size_t>(n_slices) != 0) {
      throw ContractViolation("code_distribution: sequence length not divisible by slice count");
    }
    for (std::size_t i = 0; i < seq.codes.size(); ++i) {
      const int c = seq.codes[i];
      if (c < 0 || c >= codebook_size) throw ContractViolation("code_distribution: code " + std::to_string(c) + " out of range");
      dist.slices[i % static_cast<std::size_t>(n_slices)][static_cast<std::size_t>(c)] += 1.0;
    }
  }
  for (auto& s : dist.slices) {
    double z = 0.0;
    for (auto& f : s) {
      f += smoothing;
      z += f;
    }
    for (auto& f : s) f /= z;
  }
  return dist;
}

KlDivergence code_kl(const CodeDistribution& p, const CodeDistribution& q) {
  if (p.n_slices != q.n_slices || p.codebook_size != q.codebook_size) {
    throw ContractViolation("code_kl: distributions have different shapes");
  }
  KlDivergence out;
  for (int s = 0; s < p.n_slices; ++s) {
    double kl = 0.0;
    const auto& ps = p.slices[static_cast<std::size_t>(s)];
    const auto& qs = q.slices[static_cast<std::size_t>(s)];
    for (std::size_t k = 0; k < ps.size(); ++k)
      if (ps[k] > 0.0) kl += ps[k] * std::log(ps[k] / qs[k]);
    out.per_slice.push_back(kl);
    out.mean += kl;
  }
  out.mean /= p.n_slices;
  return out;
}

std::vector<std::vector<double>> code_kl_matrix(const std::vector<CodeDistribution>& dists) {
  std::vector<std::vector<double>> m(dists.size(), std::vector<double>(dists.size(), 0.0));
  for (std::size_t i = 0; i < dists.size(); ++i)
    for (std::size_t j = 0; j < dists.size(); ++j) m[i][j] = i == j ? 0.0 : code_kl(dists[i], dists[j]).mean;
  return m;
}

std::size_t export_code_translation_corpus(std::span<const CodeSequence> src, std::span<const CodeSequence> tgt,
                                           const std::string& prefix) {
  if (src.empty() || tgt.empty()) throw ContractViolation("export_code_translation_corpus: empty side");
  std::map<int, const CodeSequence*> by_id;
  for (const auto& t : tgt) by_id[t.sentence_id] = &t;
  auto line = [](const CodeSequence& s) {
    std::string out;
    for (std::size_t i = 0; i < s.codes.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(s.codes[i]);
    }
    return out;
  };
  std::vector<std::string> a, b;
  std::set<int> src_ids;
  for (const auto& s : src) src_ids.insert(s.sentence_id);
  std::size_t skipped = 0;
  for (const auto& [id, t] : by_id) skipped += src_ids.count(id) == 0;
  for (const auto& s : src) {
    auto it = by_id.find(s.sentence_id);
    if (it == by_id.end() || s.codes.empty() || it->second->codes.empty()) {
      ++skipped;
      continue;
    }
    a.push_back(line(s));
    b.push_back(line(*it->second));
  }
  write_lines(prefix + "." + src.front().lang, a);
  write_lines(prefix + "." + tgt.front().lang, b);
  return skipped;
}

std::vector<double> pca_explained_variance(const Tensor& states, int n_components) {
  if (states.rank() != 2 || states.dim(0) < 1) throw ContractViolation("pca: expected non-empty [N, D] states");
  const int n = states.dim(0), d = states.dim(1);
  if (n_components < 1 || n_components > d) {
    throw ContractViolation("pca: n_components " + std::to_string(n_components) + " outside [1," + std::to_string(d) + "]");
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> x(states.data(), n, d);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const RowMat centered = x.rowwise() - mu;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov, Eigen::EigenvaluesOnly);
  std::vector<double> eig(solver.eigenvalues().data(), solver.eigenvalues().data() + d);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  for (auto& e : eig) e = std::max(e, 0.0);
  double total = 0.0;
  for (double e : eig) total += e;
  std::vector<double> curve(static_cast<std::size_t>(n_components), 1.0);
  if (total <= 0.0) return curve;
  double acc = 0.0;
  for (int i = 0; i < n_components; ++i) {
    acc += eig[static_cast<std::size_t>(i)];
    curve[static_cast<std::size_t>(i)] = std::min(1.0, acc / total);
  }
  if (n_components == d) curve.back() = 1.0;
  return curve;
}

UsageStats usage_stats(std::span<const int> codes, int codebook_size, int n_slices, int top_m,
                       int collapse_threshold) {
  UsageStats out;
  std::vector<std::vector<double>> counts(static_cast<std::size_t>(n_slices),
                                          std::vector<double>(static_cast<std::size_t>(codebook_size), 0.0));
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const int c = codes[i];
    if (c < 0) continue;
    if (c >= codebook_size) throw ContractViolation("usage_stats: code " + std::to_string(c) + " out of range");
    counts[i % static_cast<std::size_t>(n_slices)][static_cast<std::size_t>(c)] += 1.0;
  }
  for (const auto& cs : counts) {
    SliceUsage u;
    double total = 0.0;
    for (double c : cs) total += c;
    std::vector<double> shares;
    for (double c : cs) {
      if (c <= 0.0) continue;
      ++u.active;
      const double p = c / total;
      u.entropy -= p * std::log(p);
      shares.push_back(p);
    }
    std::sort(shares.begin(), shares.end(), std::greater<>());
    shares.resize(std::min(shares.size(), static_cast<std::size_t>(std::max(0, top_m))));
    u.top_shares = std::move(shares);
    out.mean_entropy += u.entropy;
    out.collapse = out.collapse || u.active < collapse_threshold;
    out.slices.push_back(std::move(u));
  }
  out.mean_entropy /= std::max(1, n_slices);
  return out;
}

bool is_off_target(const std::vector<std::string>& hypothesis, const std::string& target_lang,
                   const FamilyManifest& family) {
  auto it = family.vocab.find(target_lang);
  if (it == family.vocab.end()) throw ContractViolation("off_target: unknown target language '" + target_lang + "'");
  const auto& target = it->second;
  const bool any_target = std::any_of(hypothesis.begin(), hypothesis.end(),
                                      [&](const std::string& t) { return target.count(t) != 0; });
  if (!any_target) return true;
  // Related languages share most tokens, so only tokens that separate the
  // target from a rival count as evidence.
  for (const auto& [lang, vocab] : family.vocab) {
    if (lang == target_lang) continue;
    int for_target = 0, for_rival = 0;
    for (const auto& tok : hypothesis) {
      const bool in_t = target.count(tok) != 0, in_r = vocab.count(tok) != 0;
      for_target += in_t && !in_r;
      for_rival += in_r && !in_t;
    }
    if (for_rival > for_target || (for_rival == for_target && for_rival > 0)) return true;
  }
  return false;
}

double off_target_rate(const std::vector<std::vector<std::string>>& hypotheses, const std::string& target_lang,
                       const FamilyManifest& family) {
  if (hypotheses.empty()) return 0.0;
  std::size_t off = 0;
  for (const auto& h : hypotheses) off += is_off_target(h, target_lang, family) ? 1 : 0;
  return static_cast<double>(off) / static_cast<double>(hypotheses.size());
}

}  // namespace vqbridge
