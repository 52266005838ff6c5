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

#include "vqbridge/trainer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "vqbridge/analysis.hpp"
#include "vqbridge/error.hpp"
#include "vqbridge/ops.hpp"
#include "vqbridge/random.hpp"

namespace vqbridge {

namespace {

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

enum Stream : std::uint64_t { kInit = 1, kDropout = 2, kSampler = 3, kGate = 4, kBatch = 5, kClassifier = 6, kCodebook = 7 };

}  // namespace

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr: must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1: must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2: must lie in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps: must be > 0");
  if (warmup_steps < 1) throw ConfigError("warmup_steps: must be >= 1");
  if (tokens_per_step < 1) throw ConfigError("tokens_per_step: must be >= 1");
  if (total_steps < 0) throw ConfigError("total_steps: must be >= 0");
}

double lr_at(const OptimConfig& cfg, int step) {
  if (step < 1) throw ContractViolation("lr_at: step must be >= 1, got " + std::to_string(step));
  const double w = cfg.warmup_steps;
  if (step <= cfg.warmup_steps) return cfg.lr * step / w;
  return cfg.lr * std::sqrt(w / step);
}

Adam::Adam(std::vector<Parameter*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    double* w = params_[i]->value.data();
    const double* g = params_[i]->grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < params_[i]->value.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

// ---- run config ------------------------------------------------------------

RunConfig RunConfig::from_config(const KeyValueConfig& c) {
  RunConfig r;
  auto& m = r.model;
  m.vocab_size = c.get_int("vocab_size", m.vocab_size);
  m.d_model = c.get_int("d_model", m.d_model);
  m.n_heads = c.get_int("n_heads", m.n_heads);
  m.n_layers_enc = c.get_int("n_layers_enc", m.n_layers_enc);
  m.n_layers_dec = c.get_int("n_layers_dec", m.n_layers_dec);
  m.d_ffn = c.get_int("d_ffn", m.d_ffn);
  m.dropout = c.get_double("dropout", m.dropout);
  m.attn_dropout = c.get_double("attn_dropout", m.attn_dropout);
  m.label_smoothing = c.get_double("label_smoothing", m.label_smoothing);
  auto& o = r.objective;
  o.label_smoothing = m.label_smoothing;
  o.use_quantizer = c.get_bool("use_quantizer", o.use_quantizer);
  o.quantizer.codebook_size = c.get_int("codebook_size", o.quantizer.codebook_size);
  o.quantizer.n_slices = c.get_int("n_slices", o.quantizer.n_slices);
  o.quantizer.alpha_codebook = c.get_double("alpha_codebook", o.quantizer.alpha_codebook);
  o.quantizer.alpha_commitment = c.get_double("alpha_commitment", o.quantizer.alpha_commitment);
  o.quantizer.p_quantize = c.get_double("p_quantize", o.quantizer.p_quantize);
  o.similarity_weight = c.get_double("similarity_weight", o.similarity_weight);
  o.adversarial = c.get_bool("adversarial", o.adversarial);
  auto& op = r.optim;
  op.lr = c.get_double("lr", op.lr);
  op.beta1 = c.get_double("beta1", op.beta1);
  op.beta2 = c.get_double("beta2", op.beta2);
  op.adam_eps = c.get_double("adam_eps", op.adam_eps);
  op.warmup_steps = c.get_int("warmup_steps", op.warmup_steps);
  op.tokens_per_step = c.get_int("tokens_per_step", op.tokens_per_step);
  op.total_steps = c.get_int("total_steps", op.total_steps);
  r.temperature = c.get_double("temperature", r.temperature);
  r.max_len = c.get_int("max_len", r.max_len);
  r.micro_batch_sentences = c.get_int("micro_batch_sentences", r.micro_batch_sentences);
  r.checkpoint_every = c.get_int("checkpoint_every", r.checkpoint_every);
  const std::string seed = c.get_string("seed", std::to_string(r.seed));
  try {
    std::size_t used = 0;
    r.seed = std::stoull(seed, &used);
    if (used != seed.size()) throw std::invalid_argument("trailing");
  } catch (const std::logic_error&) {
    throw ConfigError("seed: not an unsigned integer: '" + seed + "'");
  }
  c.reject_unknown();
  return r;
}

KeyValueConfig RunConfig::to_config() const {
  KeyValueConfig c;
  c.set("vocab_size", std::to_string(model.vocab_size));
  c.set("d_model", std::to_string(model.d_model));
  c.set("n_heads", std::to_string(model.n_heads));
  c.set("n_layers_enc", std::to_string(model.n_layers_enc));
  c.set("n_layers_dec", std::to_string(model.n_layers_dec));
  c.set("d_ffn", std::to_string(model.d_ffn));
  c.set("dropout", fmt(model.dropout));
  c.set("attn_dropout", fmt(model.attn_dropout));
  c.set("label_smoothing", fmt(model.label_smoothing));
  c.set("use_quantizer", objective.use_quantizer ? "true" : "false");
  c.set("codebook_size", std::to_string(objective.quantizer.codebook_size));
  c.set("n_slices", std::to_string(objective.quantizer.n_slices));
  c.set("alpha_codebook", fmt(objective.quantizer.alpha_codebook));
  c.set("alpha_commitment", fmt(objective.quantizer.alpha_commitment));
  c.set("p_quantize", fmt(objective.quantizer.p_quantize));
  c.set("similarity_weight", fmt(objective.similarity_weight));
  c.set("adversarial", objective.adversarial ? "true" : "false");
  c.set("lr", fmt(optim.lr));
  c.set("beta1", fmt(optim.beta1));
  c.set("beta2", fmt(optim.beta2));
  c.set("adam_eps", fmt(optim.adam_eps));
  c.set("warmup_steps", std::to_string(optim.warmup_steps));
  c.set("tokens_per_step", std::to_string(optim.tokens_per_step));
  c.set("total_steps", std::to_string(optim.total_steps));
  c.set("temperature", fmt(temperature));
  c.set("max_len", std::to_string(max_len));
  c.set("micro_batch_sentences", std::to_string(micro_batch_sentences));
  c.set("checkpoint_every", std::to_string(checkpoint_every));
  c.set("seed", std::to_string(seed));
  return c;
}

void RunConfig::validate() const {
  model.validate();
  if (objective.use_quantizer) objective.quantizer.validate(model.d_model);
  if (!(objective.similarity_weight >= 0.0)) throw ConfigError("similarity_weight: must be >= 0");
  optim.validate();
  if (!(temperature > 0.0)) throw ConfigError("temperature: must be > 0");
  if (max_len < 1) throw ConfigError("max_len: must be >= 1");
  if (micro_batch_sentences < 1) throw ConfigError("micro_batch_sentences: must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every: must be >= 0");
}

// ---- checkpoints -----------------------------------------------------------

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, StorageType dtype) {
  static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes a little-endian host");
  std::ostringstream h;
  h << "VQBRIDGE-CHECKPOINT 1\n";
  h << "dtype " << (dtype == StorageType::kF64 ? "f64" : "f32") << '\n';
  h << "step " << ckpt.step << '\n';
  const std::string cfg = ckpt.config.to_config().serialize();
  h << "config " << std::count(cfg.begin(), cfg.end(), '\n') << '\n' << cfg;
  h << "vocab " << ckpt.vocab.size() << '\n';
  for (const auto& t : ckpt.vocab) h << t << '\n';
  h << "languages";
  for (const auto& l : ckpt.languages) h << ' ' << l;
  h << '\n';
  for (const auto& [k, v] : ckpt.rng) h << "rng " << k << ' ' << v << '\n';
  for (const auto& [k, v] : ckpt.adam_steps) h << "adam_steps " << k << ' ' << v << '\n';
  for (const auto& [name, t] : ckpt.tensors) {
    h << "tensor " << name << ' ' << t.rank();
    for (int d : t.shape()) h << ' ' << d;
    h << '\n';
  }
  h << "end\n";

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint '" + path + "'");
    const std::string header = h.str();
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      if (dtype == StorageType::kF64) {
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
      } else {
        std::vector<float> f(t.data(), t.data() + t.size());
        os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
      }
    }
    if (!os) throw DataError("short write on checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  auto fail = [&](const std::string& what) { return DataError(path + ": malformed checkpoint: " + what); };
  std::string line;
  if (!std::getline(is, line) || line != "VQBRIDGE-CHECKPOINT 1") throw fail("bad magic");
  Checkpoint ck;
  StorageType dtype = StorageType::kF64;
  std::vector<std::pair<std::string, Shape>> layout;
  bool ended = false;
  while (!ended && std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dtype") {
      std::string d;
      ls >> d;
      if (d == "f64") dtype = StorageType::kF64;
      else if (d == "f32") dtype = StorageType::kF32;
      else throw fail("dtype '" + d + "'");
    } else if (key == "step") {
      ls >> ck.step;
    } else if (key == "config") {
      int n = 0;
      ls >> n;
      std::string text;
      for (int i = 0; i < n && std::getline(is, line); ++i) text += line + '\n';
      ck.config = RunConfig::from_config(KeyValueConfig::parse(text, path));
    } else if (key == "vocab") {
      std::size_t n = 0;
      ls >> n;
      for (std::size_t i = 0; i < n && std::getline(is, line); ++i) ck.vocab.push_back(line);
      if (ck.vocab.size() != n) throw fail("truncated vocab");
    } else if (key == "languages") {
      for (std::string l; ls >> l;) ck.languages.push_back(l);
    } else if (key == "rng") {
      std::string name, rest;
      ls >> name;
      std::getline(ls >> std::ws, rest);
      ck.rng[name] = rest;
    } else if (key == "adam_steps") {
      std::string name;
      int t = 0;
      ls >> name >> t;
      ck.adam_steps[name] = t;
    } else if (key == "tensor") {
      std::string name;
      int rank = 0;
      ls >> name >> rank;
      Shape s(static_cast<std::size_t>(rank));
      for (auto& d : s) ls >> d;
      if (!ls) throw fail("tensor line '" + line + "'");
      layout.emplace_back(name, s);
    } else if (key == "end") {
      ended = true;
    } else {
      throw fail("unknown header line '" + line + "'");
    }
  }
  if (!ended) throw fail("missing end marker");
  for (auto& [name, shape] : layout) {
    Tensor t(shape);
    if (dtype == StorageType::kF64) {
      is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else {
      std::vector<float> f(t.size());
      is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
      std::copy(f.begin(), f.end(), t.data());
    }
    if (!is) throw fail("truncated data for tensor '" + name + "'");
    ck.tensors.emplace_back(name, std::move(t));
  }
  return ck;
}

namespace {

void copy_into(Parameter& p, const Checkpoint& ck) {
  const Tensor* t = ck.find(p.name);
  if (t == nullptr) throw DataError("checkpoint lacks tensor '" + p.name + "'");
  if (t->shape() != p.value.shape()) {
    throw DataError("checkpoint tensor '" + p.name + "' has shape " + shape_str(t->shape()) + ", expected " +
                    shape_str(p.value.shape()));
  }
  p.value = *t;
}

}  // namespace

TrainedSystem TrainedSystem::from_checkpoint(const Checkpoint& ck) {
  TrainedSystem sys;
  sys.config = ck.config;
  for (std::size_t i = 0; i < ck.vocab.size(); ++i) {
    const int id = sys.vocab.add(ck.vocab[i]);
    if (id != static_cast<int>(i)) throw DataError("checkpoint vocab entry " + std::to_string(i) + " is out of order");
  }
  sys.languages = ck.languages;
  sys.config.model.vocab_size = sys.vocab.size();
  sys.model = std::make_unique<Transformer>(sys.config.model, derive_seed(sys.config.seed, kInit));
  for (auto& p : sys.model->parameters()) copy_into(p, ck);
  if (sys.config.objective.use_quantizer) {
    sys.codebook = std::make_unique<Codebook>(sys.config.objective.quantizer.codebook_size, sys.config.model.d_model);
    copy_into(sys.codebook->entries(), ck);
  }
  return sys;
}

TrainedSystem TrainedSystem::load(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

// ---- metrics ---------------------------------------------------------------

void write_metrics_header(std::ostream& os, int n_slices) {
  os << "step\tphase\tdirection\tgate\tlr\ttokens\tl_mt\tl_codebook\tl_commitment\tl_similarity\tl_classifier\tl_adv"
        "\ttotal\tusage_entropy";
  for (int s = 0; s < n_slices; ++s) os << "\tent_s" << s;
  os << '\n';
}

void write_metrics_row(std::ostream& os, const StepRecord& r) {
  const auto& l = r.loss;
  double mean = 0.0;
  for (double e : r.slice_entropy) mean += e;
  if (!r.slice_entropy.empty()) mean /= static_cast<double>(r.slice_entropy.size());
  os << r.step << '\t' << phase_name(r.phase) << '\t' << r.direction << '\t' << r.gate << '\t' << fmt(r.lr) << '\t'
     << r.tokens << '\t' << fmt(l.l_mt) << '\t' << fmt(l.l_codebook) << '\t' << fmt(l.l_commitment) << '\t'
     << fmt(l.l_similarity) << '\t' << fmt(l.l_classifier) << '\t' << fmt(l.l_adv) << '\t' << fmt(l.total) << '\t'
     << fmt(mean);
  for (double e : r.slice_entropy) os << '\t' << fmt(e);
  os << '\n';
}

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(RunConfig cfg, const Dataset& data) : cfg_(std::move(cfg)), data_(data) {
  cfg_.model.vocab_size = data_.vocab.size();
  cfg_.objective.label_smoothing = cfg_.model.label_smoothing;
  cfg_.validate();
  if (data_.directions.empty()) throw DataError("training data has no language pairs");

  model_ = std::make_unique<Transformer>(cfg_.model, derive_seed(cfg_.seed, kInit));
  std::vector<Parameter*> group;
  for (auto& p : model_->parameters()) group.push_back(&p);
  if (cfg_.objective.use_quantizer) {
    codebook_ = std::make_unique<Codebook>(cfg_.objective.quantizer.codebook_size, cfg_.model.d_model);
    init_codebook();
    group.push_back(&codebook_->entries());
  }
  model_opt_ = std::make_unique<Adam>(group, cfg_.optim.beta1, cfg_.optim.beta2, cfg_.optim.adam_eps);
  if (cfg_.objective.adversarial) {
    classifier_ = std::make_unique<LanguageClassifier>(cfg_.model.d_model, static_cast<int>(data_.languages.size()),
                                                       derive_seed(cfg_.seed, kClassifier));
    std::vector<Parameter*> cg;
    for (auto& p : classifier_->parameters()) cg.push_back(&p);
    clf_opt_ = std::make_unique<Adam>(cg, cfg_.optim.beta1, cfg_.optim.beta2, cfg_.optim.adam_eps);
  }
  std::vector<std::size_t> sizes;
  for (const auto& d : data_.directions) sizes.push_back(d.size());
  sampler_ = std::make_unique<TemperatureSampler>(sizes, cfg_.temperature, derive_seed(cfg_.seed, kSampler));
  dropout_ = std::make_unique<DropoutSource>(derive_seed(cfg_.seed, kDropout));
  gate_rng_.seed(derive_seed(cfg_.seed, kGate));
  batch_rng_.seed(derive_seed(cfg_.seed, kBatch));
}

// Entries start as N(0, rms^2) where rms is the root-mean-square of the
// untrained encoder's states, so initial distances are on the right scale.
void Trainer::init_codebook() {
  const auto& pair = data_.directions.front();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min<std::size_t>(32, pair.size()); ++i) idx.push_back(i);
  double rms = 1.0;
  if (!idx.empty()) {
    const Batch b = make_batch(pair, idx, data_.vocab, data_.language_index(pair.src_lang));
    Tape tape(false);
    auto bound = model_->bind(tape, false);
    const EncodedBatch enc = model_->encode(bound, b.src, b.size, b.src_len);
    double ss = 0.0;
    std::size_t n = 0;
    const Tensor& st = enc.states.value();
    const int d = cfg_.model.d_model;
    for (int r = 0; r < enc.rows(); ++r) {
      if (!enc.padding_mask[static_cast<std::size_t>(r)]) continue;
      for (int k = 0; k < d; ++k) ss += st[static_cast<std::size_t>(r) * d + k] * st[static_cast<std::size_t>(r) * d + k];
      n += static_cast<std::size_t>(d);
    }
    if (n > 0 && ss > 0.0) rms = std::sqrt(ss / static_cast<double>(n));
  }
  codebook_->init_normal(rms, derive_seed(cfg_.seed, kCodebook));
}

Phase Trainer::phase_for(int step) const {
  if (!cfg_.objective.adversarial) return Phase::kJoint;
  return step % 2 == 1 ? Phase::kClassifier : Phase::kEncoderDecoder;
}

StepRecord Trainer::step() {
  const int n = step_ + 1;
  StepRecord rec;
  rec.step = n;
  rec.phase = phase_for(n);
  rec.lr = lr_at(cfg_.optim, n);

  const std::size_t dir = sampler_->sample();
  const LanguagePair& pair = data_.directions[dir];
  rec.direction = pair.src_lang + "-" + pair.tgt_lang;
  const int src_id = data_.language_index(pair.src_lang);

  double gate_draw = 1.0;
  const bool quantizer = cfg_.objective.use_quantizer;
  if (quantizer) gate_draw = uniform01(gate_rng_);

  // Draw sentences until the target-token budget is met.
  std::vector<std::size_t> picks;
  int tokens = 0;
  while (tokens < cfg_.optim.tokens_per_step) {
    const std::size_t i = static_cast<std::size_t>(batch_rng_() % pair.size());
    picks.push_back(i);
    tokens += static_cast<int>(pair.tgt[i].size()) + 1;
  }
  rec.tokens = tokens;

  Adam& opt = rec.phase == Phase::kClassifier ? *clf_opt_ : *model_opt_;
  opt.zero_grad();
  std::vector<int> codes;
  bool used_quantized = false;
  const std::size_t mb = static_cast<std::size_t>(cfg_.micro_batch_sentences);
  for (std::size_t start = 0; start < picks.size(); start += mb) {
    const std::span<const std::size_t> part(picks.data() + start, std::min(mb, picks.size() - start));
    const Batch batch = make_batch(pair, part, data_.vocab, src_id);
    const double w = static_cast<double>(batch.target_tokens) / tokens;

    Tape tape;
    const bool model_trains = rec.phase != Phase::kClassifier;
    auto bound = model_->bind(tape, model_trains);
    std::optional<Var> cb;
    if (codebook_) cb = tape.param(codebook_->entries(), model_trains);
    std::optional<LanguageClassifier::Bound> cbound;
    if (classifier_) cbound = classifier_->bind(tape, rec.phase == Phase::kClassifier);

    StepLoss sl = build_step_loss(*model_, bound, cb ? &*cb : nullptr, classifier_.get(), cbound ? &*cbound : nullptr,
                                  batch, cfg_.objective, rec.phase, gate_draw, dropout_.get());
    if (!std::isfinite(sl.breakdown.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(n) + " (" + rec.direction +
                         "); last good checkpoint: " + (last_checkpoint_.empty() ? "none" : last_checkpoint_));
    }
    tape.backward(ops::scale(sl.total, w));

    auto& acc = rec.loss;
    const auto& b = sl.breakdown;
    acc.l_mt += w * b.l_mt;
    acc.l_codebook += w * b.l_codebook;
    acc.l_commitment += w * b.l_commitment;
    acc.l_similarity += w * b.l_similarity;
    acc.l_classifier += w * b.l_classifier;
    acc.l_adv += w * b.l_adv;
    acc.total += w * b.total;
    codes.insert(codes.end(), sl.codes.begin(), sl.codes.end());
    used_quantized = sl.used_quantized;
  }
  for (auto* p : opt.params())
    for (double g : p->grad.span())
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in '" + p->name + "' at step " + std::to_string(n) +
                           "; last good checkpoint: " + (last_checkpoint_.empty() ? "none" : last_checkpoint_));
      }
  opt.step(rec.lr);

  if (quantizer && rec.phase != Phase::kClassifier) {
    rec.gate = used_quantized ? 1 : 0;
    const int k = cfg_.objective.quantizer.codebook_size;
    const auto u = usage_stats(codes, k, cfg_.objective.quantizer.n_slices, 0, (k + 99) / 100);
    for (const auto& s : u.slices) rec.slice_entropy.push_back(s.entropy);
  } else if (quantizer) {
    rec.slice_entropy.assign(static_cast<std::size_t>(cfg_.objective.quantizer.n_slices), 0.0);
  }
  step_ = n;
  return rec;
}

void Trainer::train(int total_steps, std::ostream* metrics, const std::string& ckpt_dir) {
  const int slices = cfg_.objective.use_quantizer ? cfg_.objective.quantizer.n_slices : 0;
  if (metrics && step_ == 0) write_metrics_header(*metrics, slices);
  while (step_ < total_steps) {
    const StepRecord rec = step();
    if (metrics) {
      write_metrics_row(*metrics, rec);
      metrics->flush();
    }
    if (!ckpt_dir.empty() && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
      const std::string path = (std::filesystem::path(ckpt_dir) / ("step_" + std::to_string(step_) + ".ckpt")).string();
      save_checkpoint(checkpoint(), path);
      last_checkpoint_ = path;
    }
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.step = step_;
  ck.vocab = data_.vocab.tokens();
  ck.languages = data_.languages;
  ck.rng["batch"] = rng_state(batch_rng_);
  ck.rng["dropout"] = rng_state(dropout_->rng());
  ck.rng["gate"] = rng_state(gate_rng_);
  ck.rng["sampler"] = rng_state(sampler_->rng());
  auto dump = [&](const std::string& group, Adam& opt) {
    ck.adam_steps[group] = opt.steps();
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      ck.tensors.emplace_back(opt.params()[i]->name, opt.params()[i]->value);
    }
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      ck.tensors.emplace_back("adam.m." + opt.params()[i]->name, opt.first_moments()[i]);
      ck.tensors.emplace_back("adam.v." + opt.params()[i]->name, opt.second_moments()[i]);
    }
  };
  dump("model", *model_opt_);
  if (clf_opt_) dump("classifier", *clf_opt_);
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.vocab != data_.vocab.tokens()) throw DataError("checkpoint vocabulary does not match the training data");
  // Run length and checkpoint spacing do not affect the trajectory, so a
  // run may be extended on resume.
  auto trajectory = [](RunConfig c) {
    c.optim.total_steps = 1;
    c.checkpoint_every = 0;
    return c.to_config().serialize();
  };
  if (trajectory(ck.config) != trajectory(cfg_)) {
    throw ConfigError("checkpoint: run configuration differs from the resumed run");
  }
  auto load = [&](const std::string& group, Adam& opt) {
    auto it = ck.adam_steps.find(group);
    if (it == ck.adam_steps.end()) throw DataError("checkpoint lacks optimizer state for '" + group + "'");
    opt.set_steps(it->second);
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      Parameter* p = opt.params()[i];
      copy_into(*p, ck);
      Parameter m("adam.m." + p->name, Tensor(p->value.shape()));
      Parameter v("adam.v." + p->name, Tensor(p->value.shape()));
      copy_into(m, ck);
      copy_into(v, ck);
      opt.first_moments()[i] = m.value;
      opt.second_moments()[i] = v.value;
    }
  };
  load("model", *model_opt_);
  if (clf_opt_) load("classifier", *clf_opt_);
  auto rng = [&](const std::string& name, std::mt19937_64& r) {
    auto it = ck.rng.find(name);
    if (it == ck.rng.end()) throw DataError("checkpoint lacks rng stream '" + name + "'");
    set_rng_state(r, it->second);
  };
  rng("batch", batch_rng_);
  rng("dropout", dropout_->rng());
  rng("gate", gate_rng_);
  rng("sampler", sampler_->rng());
  step_ = ck.step;
}

}  // namespace vqbridge
