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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `acceptance 6 7` runs a subset. Training budgets can be
// scaled down with VQBRIDGE_ACCEPT_SCALE (e.g. 0.25) for quick looks; the
// recorded results use the full budget.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "vqbridge/analysis.hpp"
#include "vqbridge/error.hpp"
#include "vqbridge/inference.hpp"
#include "vqbridge/objectives.hpp"
#include "vqbridge/ops.hpp"
#include "vqbridge/random.hpp"
#include "vqbridge/trainer.hpp"

using namespace vqbridge;
using namespace vqbridge::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double budget_scale() {
  const char* s = std::getenv("VQBRIDGE_ACCEPT_SCALE");
  return s ? std::max(0.01, std::atof(s)) : 1.0;
}

int scaled(int steps) { return std::max(1, static_cast<int>(std::lround(steps * budget_scale()))); }

// Collects failed sub-checks so a criterion reports all of them at once.
struct Checks {
  std::vector<std::string> failed;
  void expect(bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  }
  Outcome done(const std::string& detail) const {
    if (failed.empty()) return {true, detail};
    std::string d;
    for (const auto& f : failed) d += (d.empty() ? "" : "; ") + f;
    return {false, d + (detail.empty() ? "" : " | " + detail)};
  }
};

ModelConfig tiny_model(int vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  c.d_ffn = 16;
  c.dropout = 0.0;
  c.attn_dropout = 0.0;
  return c;
}

RunConfig tiny_run() {
  RunConfig r;
  r.model.d_model = 16;
  r.model.n_heads = 2;
  r.model.n_layers_enc = 1;
  r.model.n_layers_dec = 1;
  r.model.d_ffn = 32;
  r.objective.quantizer.codebook_size = 16;
  r.objective.quantizer.n_slices = 4;
  r.optim.lr = 3e-3;
  r.optim.warmup_steps = 10;
  r.optim.tokens_per_step = 64;
  r.micro_batch_sentences = 4;
  r.seed = 5;
  return r;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome criterion_1() {
  Checks c;
  double worst = 0.0;
  auto fd = [&](const std::string& name, std::vector<Tensor> in, const ScalarFn& fn, std::vector<bool> mask = {}) {
    const auto r = grad_check(std::move(in), fn, 1e-5, 1e-3, std::move(mask));
    worst = std::max(worst, r.max_rel_error);
    c.expect(r.max_rel_error < 1e-5, name + " rel err " + fmt(r.max_rel_error));
  };
  auto fd_params = [&](const std::string& name, const std::vector<Parameter*>& ps, const std::function<Var(Tape&)>& fn,
                       std::size_t stride = 1) {
    const auto r = param_grad_check(ps, fn, 1e-6, 1e-3, stride);
    worst = std::max(worst, r.max_rel_error);
    c.expect(r.max_rel_error < 1e-5, name + " rel err " + fmt(r.max_rel_error));
  };

  std::mt19937_64 rng(11);
  auto R = [&](Shape s, double scale = 1.0) { return random_tensor(std::move(s), rng, scale); };
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb)
      fd("matmul", {R(ta ? Shape{4, 3} : Shape{3, 4}), R(tb ? Shape{5, 4} : Shape{4, 5})},
         [=](Tape&, std::vector<Var>& v) { return weighted_sum(ops::matmul(v[0], v[1], ta != 0, tb != 0)); });
  fd("bmm", {R({2, 3, 4}), R({2, 4, 5})}, [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::bmm(v[0], v[1])); });
  fd("bmm^T", {R({2, 3, 4}), R({2, 5, 4})},
     [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::bmm(v[0], v[1], true)); });
  fd("add/sub/mul/scale", {R({3, 4}), R({3, 4})}, [](Tape&, std::vector<Var>& v) {
    return weighted_sum(ops::add(ops::mul(v[0], v[1]), ops::sub(v[0], ops::scale(v[1], 0.7))));
  });
  fd("add_row", {R({3, 4}), R({4})}, [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::add_row(v[0], v[1])); });
  fd("linear", {R({3, 4}), R({4, 2}), R({2})},
     [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::linear(v[0], v[1], v[2])); });
  fd("gelu", {R({3, 4}, 2.0)}, [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::gelu(v[0])); });
  {
    Tensor x = R({3, 4}, 2.0);
    for (auto& e : x.vec()) e += e > 0 ? 0.1 : -0.1;  // keep clear of the kink
    fd("relu", {x}, [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::relu(v[0])); });
  }
  Tensor bias({2, 5});
  bias[3] = -1e9;
  fd("softmax", {R({2, 5}, 2.0)}, [&](Tape&, std::vector<Var>& v) { return weighted_sum(ops::softmax(v[0], &bias)); });
  fd("log_softmax", {R({2, 5}, 2.0)}, [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::log_softmax(v[0])); });
  fd("layer_norm", {R({3, 6}, 2.0), R({6}), R({6})},
     [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::layer_norm(v[0], v[1], v[2])); });
  const std::vector<int> ids{2, 0, 2, 4};
  fd("embedding", {R({5, 3})}, [&](Tape&, std::vector<Var>& v) { return weighted_sum(ops::embedding(v[0], ids)); });
  fd("gather_rows", {R({5, 3})}, [&](Tape&, std::vector<Var>& v) { return weighted_sum(ops::gather_rows(v[0], ids)); });
  fd("slice/concat", {R({3, 6}), R({3, 2})}, [](Tape&, std::vector<Var>& v) {
    std::vector<Var> parts{ops::slice(v[0], 1, 4), v[1], ops::slice(v[0], 0, 1)};
    return weighted_sum(ops::concat(parts));
  });
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 0};
  fd("mean_pool", {R({6, 4})}, [&](Tape&, std::vector<Var>& v) { return weighted_sum(ops::mean_pool(v[0], 2, 3, mask)); });
  fd("split/merge heads, reshape", {R({6, 4})}, [](Tape&, std::vector<Var>& v) {
    Var s = ops::split_heads(v[0], 2, 3, 2);
    return ops::add(weighted_sum(ops::reshape(s, {24}), 1), weighted_sum(ops::merge_heads(ops::scale(s, 2.0), 2, 2), 2));
  });
  fd("row_norm", {R({4, 3})}, [](Tape&, std::vector<Var>& v) { return weighted_sum(ops::row_norm(v[0])); });
  fd("sum/mean", {R({4, 3})}, [](Tape&, std::vector<Var>& v) { return ops::add(ops::mean(v[0]), ops::scale(ops::sum(v[0]), 0.3)); });
  const std::vector<int> idx{0, 2, 1, 2};
  fd("pick", {R({4, 3})}, [&](Tape&, std::vector<Var>& v) { return weighted_sum(ops::pick(ops::softmax(v[0]), idx)); });
  fd("log/log1m", {R({4, 3})}, [](Tape&, std::vector<Var>& v) {
    Var p = ops::softmax(v[0]);
    return ops::add(weighted_sum(ops::log(p), 1), weighted_sum(ops::log1m(p), 2));
  });
  const std::vector<int> tgt{1, -1, 0, 2};
  fd("smoothed_nll", {R({4, 3})},
     [&](Tape&, std::vector<Var>& v) { return ops::smoothed_nll(ops::log_softmax(v[0]), tgt, 0.1); });
  const Tensor dmask({3, 2}, {0, 2, 2, 0, 2, 2});
  fd("dropout", {R({3, 2})}, [&](Tape&, std::vector<Var>& v) { return weighted_sum(ops::dropout(v[0], dmask)); });

  // Composed objectives on a tiny model.
  const Dataset ds = Dataset::load(tiny_corpus("accept_c1", 20), 16);
  const auto& pair = ds.directions.front();
  const std::vector<std::size_t> bi{0, 1, 2};
  const Batch batch = make_batch(pair, bi, ds.vocab, ds.language_index(pair.src_lang));
  Transformer model(tiny_model(ds.vocab.size()), 3);
  Codebook cb(6, 8);
  cb.init_normal(1.0, 4);
  LanguageClassifier clf(8, static_cast<int>(ds.languages.size()), 5);
  std::vector<Parameter*> mps, cps;
  for (auto& p : model.parameters()) mps.push_back(&p);
  for (auto& p : clf.parameters()) cps.push_back(&p);
  ObjectiveConfig oc;
  oc.quantizer.codebook_size = 6;
  oc.quantizer.n_slices = 2;

  fd_params("translation", mps, [&](Tape& tape) {
    auto b = model.bind(tape);
    auto enc = model.encode(b, batch.src, batch.size, batch.src_len);
    return translation_loss(model.decode(b, enc.states, enc.padding_mask, batch.size, batch.src_len, batch.tgt_in,
                                         batch.tgt_len),
                            batch.tgt_out, 0.1);
  }, 2);
  fd_params("similarity", mps, [&](Tape& tape) {
    auto b = model.bind(tape);
    auto s = model.encode(b, batch.src, batch.size, batch.src_len);
    auto t = model.encode(b, batch.tgt_as_src, batch.size, batch.tgt_src_len);
    return similarity_loss(s, t);
  }, 2);
  {
    ObjectiveConfig q = oc;
    q.quantizer.alpha_codebook = 0.0;
    fd_params("commitment (encoder)", mps, [&](Tape& tape) {
      auto b = model.bind(tape);
      auto enc = model.encode(b, batch.src, batch.size, batch.src_len);
      return quantize(enc, tape.param(cb.entries(), false), q.quantizer, 0.9).loss_commitment;
    }, 2);
    fd_params("codebook (entries)", {&cb.entries()}, [&](Tape& tape) {
      auto b = model.bind(tape, false);
      auto enc = model.encode(b, batch.src, batch.size, batch.src_len);
      return quantize(enc, tape.param(cb.entries()), q.quantizer, 0.9).loss_codebook;
    });
  }
  {
    ObjectiveConfig j = oc;
    j.quantizer.alpha_codebook = 0.0;
    j.similarity_weight = 0.1;
    fd_params("joint MT + commitment + similarity", mps, [&](Tape& tape) {
      auto b = model.bind(tape);
      Var table = tape.param(cb.entries(), false);
      return build_step_loss(model, b, &table, nullptr, nullptr, batch, j, Phase::kJoint, 0.9, nullptr).total;
    }, 3);
  }
  fd_params("classifier", cps, [&](Tape& tape) {
    auto b = model.bind(tape, false);
    auto cbd = clf.bind(tape, true);
    return build_step_loss(model, b, nullptr, &clf, &cbd, batch, oc, Phase::kClassifier, 0.0, nullptr).total;
  });
  {
    LanguageClassifier c2(4, 3, 6);
    fd("adversarial (states)", {R({4, 4})}, [&](Tape& tape, std::vector<Var>& v) {
      auto bound = c2.bind(tape, false);
      std::vector<int> labels;
      Var p = c2.token_probabilities(bound, v[0], std::vector<std::uint8_t>{1, 1, 0, 1}, 2, std::vector<int>{1, 2},
                                     &labels);
      return adversarial_loss(p, labels);
    });
  }

  // Exact routing: stop-gradient, straight-through, gradient reversal.
  {
    Tape t;
    Var a = t.leaf(R({2})), b = t.leaf(R({2}));
    Var d = ops::stop_gradient(ops::mul(a, b));
    Var e = t.leaf(R({2}));
    t.backward(ops::sum(ops::mul(d, e)));
    const Tensor ga = t.grad(a), ge = t.grad(e);
    c.expect(ga.vec() == std::vector<double>(2, 0.0), "stop_gradient leaks");
    c.expect(ge.vec() == d.value().vec(), "stop_gradient sibling gradient");
  }
  {
    Tensor sv = R({2, 3}), dv = R({2, 3}), wv = R({3, 4});
    Tape t1;
    Var src = t1.leaf(sv), dst = t1.leaf(dv), w = t1.leaf(wv);
    t1.backward(weighted_sum(ops::matmul(ops::straight_through(src, dst), w)));
    Tape t2;
    Var dst2 = t2.leaf(dv), w2 = t2.leaf(wv);
    t2.backward(weighted_sum(ops::matmul(dst2, w2)));
    const Tensor gs = t1.grad(src), gd = t1.grad(dst), want = t2.grad(dst2);
    c.expect(gs.vec() == want.vec(), "straight-through does not copy the gradient");
    c.expect(gd.vec() == std::vector<double>(gd.size(), 0.0), "straight-through leaks into the quantized side");
  }
  {
    Tape t;
    Var x = t.leaf(R({3}));
    t.backward(ops::sum(ops::gradient_reversal(x)));
    const Tensor g = t.grad(x);
    c.expect(g.vec() == std::vector<double>(3, -1.0), "gradient reversal");
  }
  return c.done("worst relative error " + fmt(worst, 3) + " across primitive and objective checks");
}

// ---------------------------------------------------------------------------
// 2. Quantizer oracle

Outcome criterion_2() {
  Checks c;
  std::mt19937_64 rng(21);
  std::size_t compared = 0;
  for (int S : {1, 2, 4}) {
    const int D = 8, K = 32, N = 1000;
    const Tensor states = random_tensor({N, D}, rng), table = random_tensor({K, D}, rng);
    const std::vector<std::uint8_t> mask(N, 1);
    const auto codes = lookup_codes(states, table, S, mask);
    const int w = D / S;
    int mismatches = 0;
    for (int r = 0; r < N; ++r)
      for (int s = 0; s < S; ++s) {
        int best = 0;
        double best_d = INFINITY;
        for (int k = 0; k < K; ++k) {
          double d = 0.0;
          for (int j = 0; j < w; ++j) {
            const double diff = states[static_cast<std::size_t>(r) * D + s * w + j] - table[static_cast<std::size_t>(k) * D + s * w + j];
            d += diff * diff;
          }
          if (d < best_d) {
            best_d = d;
            best = k;
          }
        }
        mismatches += codes[static_cast<std::size_t>(r) * S + s] != best;
        ++compared;
      }
    c.expect(mismatches == 0, "S=" + std::to_string(S) + ": " + std::to_string(mismatches) + " mismatches");
  }
  return c.done(std::to_string(compared) + " slice lookups identical to brute force");
}

// ---------------------------------------------------------------------------
// 3. Reduction

Outcome criterion_3() {
  const Dataset ds = Dataset::load(tiny_corpus("accept_c3"), 32);
  RunConfig with = tiny_run();
  with.objective.quantizer.p_quantize = 0.0;
  with.objective.quantizer.alpha_codebook = 0.0;
  with.objective.quantizer.alpha_commitment = 0.0;
  RunConfig without = tiny_run();
  without.objective.use_quantizer = false;
  Trainer a(with, ds), b(without, ds);
  int loss_diffs = 0;
  for (int i = 0; i < 100; ++i) loss_diffs += a.step().loss.l_mt != b.step().loss.l_mt;
  std::size_t param_diffs = 0, n = 0;
  for (std::size_t i = 0; i < a.model().parameters().size(); ++i) {
    const auto& pa = a.model().parameters()[i].value.vec();
    const auto& pb = b.model().parameters()[i].value.vec();
    for (std::size_t k = 0; k < pa.size(); ++k, ++n) param_diffs += std::memcmp(&pa[k], &pb[k], sizeof(double)) != 0;
  }
  Checks c;
  c.expect(loss_diffs == 0, std::to_string(loss_diffs) + " steps with different loss");
  c.expect(param_diffs == 0, std::to_string(param_diffs) + " parameters differ");
  return c.done("100 steps; " + std::to_string(n) + " parameters bit-identical");
}

// ---------------------------------------------------------------------------
// 4. Codebook/commitment contract

Outcome criterion_4() {
  Checks c;
  std::mt19937_64 rng(9);
  const int d = 4;
  Codebook cb(5, d);
  cb.init_normal(1.0, 10);
  const Tensor x = random_tensor({3, d}, rng), w = random_tensor({3, d}, rng);
  QuantizerConfig qc;
  qc.codebook_size = 5;
  qc.n_slices = 2;
  double l_cb = 0.0, l_cm = 0.0;
  auto run = [&](double a_cb, double a_cm, bool mt) {
    cb.entries().zero_grad();
    Tape tape;
    EncodedBatch enc;
    enc.states = tape.leaf(x);
    enc.batch = 1;
    enc.len = 3;
    enc.padding_mask = {1, 1, 1};
    auto q = quantize(enc, tape.param(cb.entries()), qc, 0.0);
    l_cb = q.loss_codebook.value()[0];
    l_cm = q.loss_commitment.value()[0];
    Var total = ops::add(ops::scale(q.loss_codebook, a_cb), ops::scale(q.loss_commitment, a_cm));
    if (mt) total = ops::add(total, ops::sum(ops::mul(q.context, tape.constant(w))));
    tape.backward(total);
    return std::make_pair(tape.grad(enc.states), cb.entries().grad);
  };
  const auto [e_cb, c_cb] = run(1.0, 0.0, false);
  c.expect(l_cb == l_cm, "forward values differ");
  const auto [e_cm, c_cm] = run(0.0, 1.0, false);
  const auto [e_mt, c_mt] = run(0.0, 0.0, true);
  const auto [e_all, c_all] = run(1.0, 1.001, true);
  const auto [e_2, c_2] = run(2.0, 2.002, true);
  auto all_zero = [](const Tensor& t) { return std::all_of(t.vec().begin(), t.vec().end(), [](double g) { return g == 0.0; }); };
  c.expect(all_zero(e_cb), "encoder receives codebook-loss gradient");
  c.expect(all_zero(c_cm), "codebook receives commitment-loss gradient");
  c.expect(all_zero(c_mt), "codebook receives MT gradient");
  c.expect(e_mt.vec() == w.vec(), "straight-through does not copy the MT gradient");
  double worst = 0.0;
  for (std::size_t i = 0; i < e_all.size(); ++i) {
    worst = std::max(worst, std::abs(e_all[i] - (1.001 * e_cm[i] + e_mt[i])));
    worst = std::max(worst, std::abs((e_2[i] - e_mt[i]) - 2.0 * (e_all[i] - e_mt[i])));
  }
  for (std::size_t i = 0; i < c_all.size(); ++i) {
    worst = std::max(worst, std::abs(c_all[i] - c_cb[i]));
    worst = std::max(worst, std::abs(c_2[i] - 2.0 * c_cb[i]));
  }
  c.expect(worst <= 1e-12, "alpha linearity off by " + fmt(worst));
  return c.done("forward equal; linearity error " + fmt(worst, 3) + "; routing exact");
}

// ---------------------------------------------------------------------------
// 5. Temperature sampler

Outcome criterion_5() {
  const std::vector<std::size_t> sizes{6000, 1500, 400, 60};
  TemperatureSampler s(sizes, 5.0, 77);
  double total = 0.0;
  for (auto n : sizes) total += static_cast<double>(n);
  std::vector<double> want;
  double z = 0.0;
  for (auto n : sizes) {
    want.push_back(std::pow(static_cast<double>(n) / total, 1.0 / 5.0));
    z += want.back();
  }
  for (auto& p : want) p /= z;
  const int N = 1000000;
  std::vector<int> counts(sizes.size(), 0);
  for (int i = 0; i < N; ++i) ++counts[s.sample()];
  Checks c;
  double worst = 0.0;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    const double sd = std::sqrt(N * want[l] * (1.0 - want[l]));
    const double z_l = std::abs(counts[l] - N * want[l]) / sd;
    worst = std::max(worst, z_l);
    c.expect(z_l < 3.0, "language " + std::to_string(l) + " off by " + fmt(z_l) + " sd");
  }
  return c.done("max deviation " + fmt(worst, 3) + " sd over 10^6 draws");
}

// ---------------------------------------------------------------------------
// 11. Adversarial mirror identity and alternating routing

Outcome criterion_11() {
  Checks c;
  double worst = 0.0;
  for (int i = 1; i <= 9; ++i) {
    const double p = i / 10.0;
    Tape tape;
    const double adv =
        adversarial_loss(tape.leaf(Tensor({1, 2}, std::vector<double>{p, 1 - p})), std::vector<int>{0}).value()[0];
    const double clf =
        classifier_loss(tape.leaf(Tensor({1, 2}, std::vector<double>{1 - p, p})), std::vector<int>{0}).value()[0];
    worst = std::max(worst, std::abs(std::abs(adv) - std::abs(clf)));
  }
  c.expect(worst <= 1e-12, "mirror identity off by " + fmt(worst));

  const Dataset ds = Dataset::load(tiny_corpus("accept_c11", 20), 16);
  const auto& pair = ds.directions.front();
  const std::vector<std::size_t> bi{0, 1, 2};
  const Batch batch = make_batch(pair, bi, ds.vocab, ds.language_index(pair.src_lang));
  Transformer model(tiny_model(ds.vocab.size()), 3);
  Codebook cb(6, 8);
  cb.init_normal(1.0, 4);
  LanguageClassifier clf(8, static_cast<int>(ds.languages.size()), 5);
  ObjectiveConfig oc;
  oc.quantizer.codebook_size = 6;
  oc.quantizer.n_slices = 2;
  oc.adversarial = true;
  auto grads_zero = [](std::vector<Parameter>& ps) {
    for (auto& p : ps)
      for (double g : p.grad.vec())
        if (g != 0.0) return false;
    return true;
  };
  auto zero = [&] {
    for (auto& p : model.parameters()) p.zero_grad();
    for (auto& p : clf.parameters()) p.zero_grad();
    cb.entries().zero_grad();
  };
  {
    zero();
    Tape tape;
    auto b = model.bind(tape, false);
    Var table = tape.param(cb.entries(), false);
    auto cbd = clf.bind(tape, true);
    tape.backward(build_step_loss(model, b, &table, &clf, &cbd, batch, oc, Phase::kClassifier, 0.0, nullptr).total);
    c.expect(grads_zero(model.parameters()), "classifier phase reaches the model");
    c.expect(cb.entries().grad.vec() == std::vector<double>(cb.entries().grad.size(), 0.0),
             "classifier phase reaches the codebook");
    c.expect(!grads_zero(clf.parameters()), "classifier phase leaves the classifier untouched");
  }
  {
    zero();
    Tape tape;
    auto b = model.bind(tape, true);
    Var table = tape.param(cb.entries(), true);
    auto cbd = clf.bind(tape, false);
    tape.backward(build_step_loss(model, b, &table, &clf, &cbd, batch, oc, Phase::kEncoderDecoder, 0.0, nullptr).total);
    c.expect(grads_zero(clf.parameters()), "encoder-decoder phase reaches the classifier");
    c.expect(!grads_zero(model.parameters()), "encoder-decoder phase leaves the model untouched");
  }
  // The trainer alternates: odd steps move only the classifier.
  RunConfig rc = tiny_run();
  rc.objective.adversarial = true;
  const Dataset tds = Dataset::load(tiny_corpus("accept_c11_run"), 32);
  Trainer t(rc, tds);
  for (int step = 1; step <= 4; ++step) {
    const auto m0 = t.model().parameters()[0].value.vec();
    const auto c0 = t.classifier()->parameters()[0].value.vec();
    const auto rec = t.step();
    const bool model_moved = t.model().parameters()[0].value.vec() != m0;
    const bool clf_moved = t.classifier()->parameters()[0].value.vec() != c0;
    const bool odd = step % 2 == 1;
    c.expect(rec.phase == (odd ? Phase::kClassifier : Phase::kEncoderDecoder), "phase order at step " + std::to_string(step));
    c.expect(model_moved != odd && clf_moved == odd, "step " + std::to_string(step) + " updated the wrong group");
  }
  return c.done("mirror identity error " + fmt(worst, 3) + "; alternating updates exclusive");
}

// ---------------------------------------------------------------------------
// Desk-scale experiments (criteria 6-10)

const fs::path kWork = VQBRIDGE_ACCEPT_DIR;
const fs::path kConfigs = fs::path(VQBRIDGE_SOURCE_DIR) / "configs";
constexpr std::uint64_t kDataSeed = 17;
const int kMainSteps = 3000;
const int kShortSteps = 300;
const int kCodeSteps = 2000;

struct System {
  std::string name;
  std::string bridge;
  std::unique_ptr<GeneratedData> gen;
  std::unique_ptr<Dataset> ds;
  TrainedSystem sys;
  double seconds = 0.0;
};

std::unique_ptr<Dataset> make_data(const std::string& spec_file, const std::string& name, GeneratedData* keep) {
  const auto spec = FamilySpec::from_config(KeyValueConfig::load((kConfigs / spec_file).string()));
  const fs::path dir = kWork / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  *keep = generate_family(kDataSeed, spec);
  write_generated(*keep, dir.string());
  return std::make_unique<Dataset>(Dataset::load(dir.string(), 64));
}

RunConfig desk_config() { return RunConfig::from_config(KeyValueConfig::load((kConfigs / "desk.run").string())); }

TrainedSystem train(const RunConfig& cfg, const Dataset& ds, int steps, const std::string& tag, double* secs) {
  const auto t0 = Clock::now();
  Trainer t(cfg, ds);
  std::ofstream metrics(kWork / (tag + ".metrics.tsv"));
  t.train(steps, &metrics);
  save_checkpoint(t.checkpoint(), (kWork / (tag + ".ckpt")).string());
  if (secs) *secs = seconds_since(t0);
  std::cout << "  [" << tag << "] " << steps << " steps in " << fmt(seconds_since(t0), 3) << " s\n" << std::flush;
  return TrainedSystem::from_checkpoint(t.checkpoint());
}

// Systems are trained on first use and shared between criteria.
struct Lab {
  std::map<std::string, std::unique_ptr<System>> systems;

  System& get(const std::string& name) {
    auto& slot = systems[name];
    if (slot) return *slot;
    slot = std::make_unique<System>();
    System& s = *slot;
    s.name = name;
    s.gen = std::make_unique<GeneratedData>();
    const bool unrelated = name == "unrelated";
    s.ds = make_data(unrelated ? "unrelated.spec" : "related.spec", unrelated ? "data_unrelated" : "data_related",
                     s.gen.get());
    s.bridge = s.gen->spec.bridge;
    RunConfig cfg = desk_config();
    if (name == "baseline") cfg.objective.use_quantizer = false;
    if (name == "alpha_low" || name == "alpha_high") {
      cfg.objective.quantizer.alpha_commitment = name == "alpha_low" ? 1.001 : 2.0;
      s.sys = train(cfg, *s.ds, scaled(kShortSteps), name, &s.seconds);
    } else {
      s.sys = train(cfg, *s.ds, scaled(kMainSteps), name, &s.seconds);
    }
    return s;
  }
};

Lab& lab() {
  static Lab l;
  return l;
}

std::vector<std::string> trained_languages(const System& s) {
  std::set<std::string> langs;
  for (const auto& d : s.ds->directions) langs.insert(d.src_lang);
  return {langs.begin(), langs.end()};
}

std::vector<std::string> non_bridge(const System& s) {
  std::vector<std::string> out;
  for (const auto& l : trained_languages(s))
    if (l != s.bridge) out.push_back(l);
  return out;
}

// 6. Cluster-center vs continuous inference vs random decoding.
Outcome criterion_6() {
  System& s = lab().get("related");
  const auto langs = trained_languages(s);
  const int S = s.sys.config.objective.quantizer.n_slices;
  std::mt19937_64 rng(derive_seed(kDataSeed, 99));
  double cont = 0.0, cent = 0.0, rnd = 0.0;
  int n = 0;
  for (const auto& src : langs)
    for (const auto& tgt : langs) {
      if (src == tgt) continue;
      const auto& srcs = s.ds->test.at(src);
      const auto& refs = s.ds->test.at(tgt);
      const int tag = s.sys.vocab.lang_tag_id(tgt);
      auto acc = [&](ContextMode mode) {
        DecodeConfig dc;
        dc.context_mode = mode;
        const auto hyps = translate_all(*s.sys.model, s.sys.codebook.get(), S, srcs, tag, dc, thread_budget());
        std::vector<std::vector<int>> ids;
        for (const auto& h : hyps) ids.push_back(h.tokens);
        return token_accuracy(ids, refs);
      };
      cont += acc(ContextMode::kContinuous);
      cent += acc(ContextMode::kClusterCenters);
      std::vector<int> surface;
      for (const auto& w : s.gen->family.surface_vocab(tgt)) surface.push_back(s.sys.vocab.id(w));
      std::vector<std::vector<int>> random_hyps;
      for (const auto& r : refs) {
        std::vector<int> h(r.size());
        for (auto& t : h) t = surface[rng() % surface.size()];
        random_hyps.push_back(std::move(h));
      }
      rnd += token_accuracy(random_hyps, refs);
      ++n;
    }
  cont /= n;
  cent /= n;
  rnd /= n;
  Checks c;
  c.expect(cent < cont, "cluster centers not below continuous");
  c.expect(cent >= 5.0 * rnd, "cluster centers below 5x random");
  c.expect(cont >= 5.0 * rnd, "continuous below 5x random");
  return c.done("token accuracy over " + std::to_string(n) + " directions: continuous " + fmt(cont) +
                ", cluster centers " + fmt(cent) + ", random " + fmt(rnd) + " (training " + fmt(s.seconds, 3) + " s)");
}

std::map<std::string, std::vector<CodeSequence>> codes_of(const System& s, const std::vector<std::string>& langs,
                                                          bool probe) {
  const int S = s.sys.config.objective.quantizer.n_slices;
  const int tag = s.sys.vocab.lang_tag_id(s.bridge);
  std::map<std::string, std::vector<CodeSequence>> out;
  for (const auto& l : langs)
    out[l] = extract_codes(*s.sys.model, *s.sys.codebook, S, probe ? s.ds->probe.at(l) : s.ds->test.at(l), l, tag);
  return out;
}

// 7. Code-distribution KL among non-bridge languages.
Outcome criterion_7() {
  Checks c;
  std::map<std::string, double> mean_kl;
  for (const char* name : {"related", "unrelated"}) {
    System& s = lab().get(name);
    const auto langs = non_bridge(s);
    const auto codes = codes_of(s, langs, false);
    std::vector<CodeDistribution> dists;
    for (const auto& l : langs)
      dists.push_back(code_distribution(codes.at(l), s.sys.codebook->size(), s.sys.config.objective.quantizer.n_slices));
    const auto m = code_kl_matrix(dists);
    double sum = 0.0;
    int n = 0;
    bool asym = false;
    for (std::size_t i = 0; i < m.size(); ++i) {
      c.expect(m[i][i] == 0.0, std::string(name) + " diagonal not exactly 0");
      for (std::size_t j = 0; j < m.size(); ++j) {
        if (i == j) continue;
        sum += m[i][j];
        ++n;
        asym = asym || m[i][j] != m[j][i];
      }
    }
    c.expect(asym, std::string(name) + " matrix is symmetric");
    mean_kl[name] = sum / n;
  }
  c.expect(mean_kl["related"] < mean_kl["unrelated"], "related-bridge KL not lower");
  return c.done("mean pairwise KL: related bridge " + fmt(mean_kl["related"]) + ", unrelated bridge " +
                fmt(mean_kl["unrelated"]));
}

// 8. Code translation: one small model per system over all non-bridge
// pairs, trained on probe-set codes and scored on test-set codes.
Outcome criterion_8() {
  std::map<std::string, std::map<std::string, double>> acc;
  std::vector<std::string> pair_names;
  for (const char* name : {"related", "unrelated"}) {
    System& s = lab().get(name);
    const auto langs = non_bridge(s);
    const auto train_codes = codes_of(s, langs, true);
    const auto test_codes = codes_of(s, langs, false);
    const fs::path dir = kWork / (std::string("codetrans_") + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    CorpusManifest cm;
    cm.languages = langs;
    cm.test_prefix = "test";
    for (const auto& l : langs) {
      std::vector<std::string> lines;
      for (const auto& seq : test_codes.at(l)) {
        std::string line;
        for (std::size_t i = 0; i < seq.codes.size(); ++i) line += (i ? " " : "") + std::to_string(seq.codes[i]);
        lines.push_back(line);
      }
      write_lines((dir / ("test." + l)).string(), lines);
    }
    for (std::size_t i = 0; i < langs.size(); ++i)
      for (std::size_t j = i + 1; j < langs.size(); ++j) {
        const std::string prefix = "train_" + langs[i] + "_" + langs[j];
        export_code_translation_corpus(train_codes.at(langs[i]), train_codes.at(langs[j]), (dir / prefix).string());
        cm.pairs.push_back({langs[i], langs[j], prefix});
      }
    cm.save((dir / "corpus.manifest").string());

    RunConfig cfg = desk_config();
    cfg.objective.use_quantizer = false;
    cfg.max_len = 200;
    const Dataset cds = Dataset::load(dir.string(), cfg.max_len);
    const TrainedSystem ct = train(cfg, cds, scaled(kCodeSteps), std::string("codetrans_") + name, nullptr);
    pair_names.clear();
    for (std::size_t i = 0; i < langs.size(); ++i)
      for (std::size_t j = i + 1; j < langs.size(); ++j) {
        const auto& a = langs[i];
        const auto& b = langs[j];
        const LanguagePair ab{a, b, cds.test.at(a), cds.test.at(b)};
        const LanguagePair ba{b, a, cds.test.at(b), cds.test.at(a)};
        const std::string key = a + "-" + b;
        pair_names.push_back(key);
        acc[name][key] = 0.5 * (forced_token_accuracy(*ct.model, ab, cds.vocab) + forced_token_accuracy(*ct.model, ba, cds.vocab));
      }
  }
  int wins = 0;
  std::string detail;
  for (const auto& k : pair_names) {
    wins += acc["related"][k] > acc["unrelated"][k];
    detail += (detail.empty() ? "" : ", ") + k + " " + fmt(acc["related"][k], 3) + " vs " + fmt(acc["unrelated"][k], 3);
  }
  Checks c;
  c.expect(wins >= 2, "related bridge better on only " + std::to_string(wins) + " of 3 pairs: " + detail);
  return c.done("related vs unrelated bridge accuracy: " + detail);
}

// 9. PCA: quantizer model vs quantizer-free baseline, plus the eigen oracle.
Outcome criterion_9() {
  Checks c;
  std::mt19937_64 rng(8);
  Tensor t = random_tensor({40, 6}, rng);
  for (int i = 0; i < 40; ++i) t[static_cast<std::size_t>(i) * 6] *= 3.0;
  std::vector<double> mean(6, 0.0);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 6; ++j) mean[j] += t[static_cast<std::size_t>(i) * 6 + j] / 40;
  std::vector<std::vector<double>> cov(6, std::vector<double>(6, 0.0));
  for (int i = 0; i < 40; ++i)
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b)
        cov[a][b] += (t[static_cast<std::size_t>(i) * 6 + a] - mean[a]) * (t[static_cast<std::size_t>(i) * 6 + b] - mean[b]);
  const auto ev = jacobi_eigenvalues(cov);
  double total = 0.0, cum = 0.0, worst = 0.0;
  for (double e : ev) total += e;
  const auto got = pca_explained_variance(t, 6);
  for (int k = 0; k < 6; ++k) {
    cum += ev[k];
    worst = std::max(worst, std::abs(got[k] - cum / total));
  }
  c.expect(worst < 1e-8, "PCA differs from the Jacobi oracle by " + fmt(worst));

  std::map<std::string, double> at10;
  int k = 0;
  for (const char* name : {"related", "baseline"}) {
    System& s = lab().get(name);
    std::vector<std::vector<int>> pooled;
    for (const auto& l : trained_languages(s)) pooled.insert(pooled.end(), s.ds->test.at(l).begin(), s.ds->test.at(l).end());
    const Tensor states = collect_encoder_states(*s.sys.model, pooled, s.sys.vocab.lang_tag_id(s.bridge));
    const int D = states.dim(1);
    k = std::max(1, static_cast<int>(std::lround(0.1 * D)));
    at10[name] = pca_explained_variance(states, D)[static_cast<std::size_t>(k - 1)];
  }
  c.expect(at10["related"] > at10["baseline"], "quantizer model does not explain more variance");
  return c.done("variance explained by the first " + std::to_string(k) + " components: quantizer " +
                fmt(at10["related"]) + ", baseline " + fmt(at10["baseline"]) + "; oracle error " + fmt(worst, 3));
}

// 10. Commitment weight and codebook usage.
Outcome criterion_10() {
  std::map<std::string, double> ent;
  for (const char* name : {"alpha_low", "alpha_high"}) {
    System& s = lab().get(name);
    const auto langs = trained_languages(s);
    const auto codes = codes_of(s, langs, false);
    std::vector<int> flat;
    for (const auto& l : langs)
      for (const auto& seq : codes.at(l)) flat.insert(flat.end(), seq.codes.begin(), seq.codes.end());
    ent[name] = usage_stats(flat, s.sys.codebook->size(), s.sys.config.objective.quantizer.n_slices).mean_entropy;
  }
  Checks c;
  c.expect(ent["alpha_high"] < ent["alpha_low"], "alpha 2.0 does not lower usage entropy");
  return c.done("mean per-slice usage entropy after " + std::to_string(scaled(kShortSteps)) + " steps: alpha 1.001 " +
                fmt(ent["alpha_low"]) + ", alpha 2.0 " + fmt(ent["alpha_high"]));
}

// ---------------------------------------------------------------------------
// 12. End-to-end CLI smoke

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(VQBRIDGE_CLI) + " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> read_table(const fs::path& p, char sep) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& line : read_lines(p.string())) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, sep)) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

bool is_number(const std::string& s) {
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return !s.empty() && *end == '\0';
}

Outcome criterion_12() {
  Checks c;
  const fs::path dir = kWork / "e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "log.txt";
  const std::string d = dir.string();
  const auto t0 = Clock::now();
  const int g = run("gen-data --spec " + (kConfigs / "demo.spec").string() + " --seed 3 --out " + d + "/data", log);
  const int t = run("train --config " + (kConfigs / "demo.run").string() + " --data " + d + "/data --out " + d + "/run", log);
  const int tr = run("translate --ckpt " + d + "/run/final.ckpt --input " + d + "/data/test.a --target-lang b --out " + d +
                         "/tr --scores --reference " + d + "/data/test.b",
                     log);
  const int an = run("analyze --ckpt " + d + "/run/final.ckpt --testset " + d + "/data --which all --out " + d + "/an", log);
  const double secs = seconds_since(t0);
  c.expect(g == 0 && t == 0 && tr == 0 && an == 0, "exit codes " + std::to_string(g) + "/" + std::to_string(t) + "/" +
                                                         std::to_string(tr) + "/" + std::to_string(an));
  c.expect(secs < 300.0, "took " + fmt(secs, 3) + " s");
  if (!c.failed.empty()) return c.done("");

  try {
    const auto run_cfg = RunConfig::from_config(KeyValueConfig::load((kConfigs / "demo.run").string()));
    const int D = run_cfg.model.d_model, S = run_cfg.objective.quantizer.n_slices;
    const auto metrics = read_table(dir / "run/metrics.tsv", '\t');
    c.expect(metrics.size() == 501, "metrics rows");
    const auto n_in = read_lines(d + "/data/test.a").size();
    c.expect(read_lines(d + "/tr/hypotheses.txt").size() == n_in, "hypothesis count");
    const auto scores = read_table(dir / "tr/scores.tsv", '\t');
    c.expect(scores.size() == n_in + 1 && scores[0].size() == 5, "scores.tsv shape");
    for (std::size_t i = 1; i < scores.size(); ++i) c.expect(is_number(scores[i][1]), "non-numeric score");

    const auto langs = CorpusManifest::load(d + "/data/corpus.manifest").languages;
    const auto kl = read_table(dir / "an/kl.tsv", '\t');
    c.expect(kl.size() == langs.size() + 1, "kl.tsv rows");
    for (std::size_t i = 1; i < kl.size(); ++i) {
      c.expect(kl[i].size() == langs.size() + 1, "kl.tsv columns");
      c.expect(kl[i][i] == "0", "kl diagonal");
      for (std::size_t j = 1; j < kl[i].size(); ++j) c.expect(is_number(kl[i][j]) && std::stod(kl[i][j]) >= 0.0, "kl value");
    }
    const auto pca = read_table(dir / "an/pca.csv", ',');
    c.expect(pca.size() == static_cast<std::size_t>(D) + 1, "pca rows");
    double prev = 0.0;
    for (std::size_t i = 1; i < pca.size(); ++i) {
      const double v = std::stod(pca[i][1]);
      c.expect(v >= prev - 1e-12 && v <= 1.0 + 1e-12, "pca curve not monotone in [0,1]");
      prev = v;
    }
    c.expect(std::abs(prev - 1.0) < 1e-9, "pca curve does not end at 1");
    const auto usage = read_table(dir / "an/usage.tsv", '\t');
    c.expect(usage.size() == static_cast<std::size_t>(S) + 1 && usage[0].size() == 8, "usage.tsv shape");
    const auto off = read_table(dir / "an/offtarget.tsv", '\t');
    c.expect(off.size() == langs.size() * (langs.size() - 1) + 1, "offtarget.tsv rows");
    for (std::size_t i = 1; i < off.size(); ++i) {
      const double r = std::stod(off[i][4]);
      c.expect(r >= 0.0 && r <= 1.0, "off-target rate range");
    }
    for (const auto& l : langs) {
      const auto codes = read_table(dir / "an/codes" / (l + ".txt"), ' ');
      c.expect(!codes.empty(), "empty code file");
      for (const auto& row : codes) c.expect(row.size() % static_cast<std::size_t>(S) == 0, "code line length");
    }
    const Dataset ct = Dataset::load(d + "/an/codetrans", 200);
    c.expect(!ct.directions.empty() && ct.directions[0].size() > 0, "code-translation corpus");
    for (const char* sub : {"data", "run", "tr", "an"}) c.expect(fs::exists(dir / sub / "manifest.txt"), "manifest in " + std::string(sub));
  } catch (const std::exception& e) {
    c.expect(false, std::string("schema check threw: ") + e.what());
  }
  return c.done("gen-data, train (500 steps), translate, analyze (6 reports) in " + fmt(secs, 3) + " s");
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Outcome()>> criteria{
      {1, criterion_1},   {2, criterion_2}, {3, criterion_3}, {4, criterion_4},   {5, criterion_5},   {6, criterion_6},
      {7, criterion_7},   {8, criterion_8}, {9, criterion_9}, {10, criterion_10}, {11, criterion_11}, {12, criterion_12}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  fs::create_directories(kWork);
  if (budget_scale() != 1.0) std::cout << "note: training budgets scaled by " << budget_scale() << "\n";

  int failed = 0;
  std::vector<std::string> lines;
  for (const auto& [id, fn] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::ostringstream line;
    line << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ["
         << fmt(seconds_since(t0), 3) << " s]";
    std::cout << line.str() << '\n' << std::flush;
    lines.push_back(line.str());
    failed += !o.pass;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all selected criteria passed") << '\n';
  return failed ? 1 : 0;
}
