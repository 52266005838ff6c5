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

// vqbridge command-line driver: gen-data, train, translate, analyze.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vqbridge/analysis.hpp"
#include "vqbridge/config.hpp"
#include "vqbridge/data.hpp"
#include "vqbridge/error.hpp"
#include "vqbridge/inference.hpp"
#include "vqbridge/trainer.hpp"

namespace fs = std::filesystem;
using namespace vqbridge;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

constexpr const char* kManifest = "manifest.txt";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

// Same digest git assigns to a blob.
std::string blob_hash(const std::string& content) {
  return sha1_hex("blob " + std::to_string(content.size()) + '\0' + content);
}

// Files hash as blobs; directories hash their sorted (blob, relative path)
// listing. The run manifest is left out so re-runs hash the same.
std::string path_hash(const fs::path& p) {
  if (fs::is_regular_file(p)) return blob_hash(read_file(p));
  if (!fs::is_directory(p)) throw DataError("input '" + p.string() + "' does not exist");
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (!e.is_regular_file() || e.path().filename() == kManifest) continue;
    entries.emplace_back(fs::relative(e.path(), p).generic_string(), blob_hash(read_file(e.path())));
  }
  std::sort(entries.begin(), entries.end());
  std::string listing;
  for (const auto& [rel, h] : entries) listing += h + ' ' + rel + '\n';
  return sha1_hex(listing);
}

std::string inputs_hash(const std::vector<std::pair<std::string, std::string>>& inputs) {
  std::string listing;
  for (const auto& [role, path] : inputs) listing += role + ' ' + path_hash(path) + '\n';
  return sha1_hex(listing);
}

// Creates `out` as an empty directory. An existing non-empty directory is
// replaced only with --force, and only when it holds an earlier run manifest.
void prepare_out(const fs::path& out, bool force) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw ConfigError("--out: '" + out.string() + "' exists and is not a directory");
    if (!fs::is_empty(out)) {
      if (!force) throw ConfigError("--out: '" + out.string() + "' already exists; pass --force to replace it");
      if (!fs::exists(out / kManifest)) {
        throw ConfigError("--out: refusing to replace '" + out.string() + "', which was not written by vqbridge");
      }
      fs::remove_all(out);
    }
  }
  fs::create_directories(out);
}

struct RunManifest {
  std::string command;
  std::string config;
  std::string seed;
  std::string input_hash;
  std::string output;

  void write(const fs::path& dir) const {
    std::ofstream os(dir / kManifest);
    os << "command " << command << '\n'
       << "config " << (config.empty() ? "-" : config) << '\n'
       << "seed " << (seed.empty() ? "-" : seed) << '\n'
       << "input_hash " << input_hash << '\n'
       << "output " << output << '\n';
    if (!os) throw DataError("cannot write run manifest in '" + dir.string() + "'");
  }
};

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

std::vector<std::string> to_words(const Vocab& vocab, const std::vector<int>& ids) {
  std::vector<std::string> w;
  w.reserve(ids.size());
  for (int id : ids) w.push_back(vocab.token(id));
  return w;
}

std::vector<std::vector<int>> to_ids(const Vocab& vocab, const std::vector<std::string>& lines) {
  std::vector<std::vector<int>> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    std::vector<int> ids;
    for (const auto& t : tokenize(line)) ids.push_back(vocab.id(t));
    out.push_back(std::move(ids));
  }
  return out;
}

int n_slices_of(const TrainedSystem& sys) {
  return sys.codebook ? sys.config.objective.quantizer.n_slices : 1;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string spec, out;
  std::uint64_t seed = 1;
  bool force = false;
};

int cmd_gen_data(const GenDataArgs& a, const std::string& cmdline) {
  const auto spec = FamilySpec::from_config(KeyValueConfig::load(a.spec));
  const auto hash = inputs_hash({{"spec", a.spec}});
  prepare_out(a.out, a.force);
  RunManifest{cmdline, a.spec, std::to_string(a.seed), hash, a.out}.write(a.out);
  const auto data = generate_family(a.seed, spec);
  write_generated(data, a.out);
  std::cout << "wrote " << data.train.size() << " training pairs and " << data.test.size()
            << " test languages to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, data, out, resume, dtype = "f64";
  int steps = 0;
  bool force = false;
};

int cmd_train(const TrainArgs& a, const std::string& cmdline) {
  auto kv = KeyValueConfig::load(a.config);
  RunConfig cfg = RunConfig::from_config(kv);
  if (a.steps > 0) cfg.optim.total_steps = a.steps;
  cfg.validate();
  const StorageType dtype = a.dtype == "f32" ? StorageType::kF32 : StorageType::kF64;

  const Dataset ds = Dataset::load(a.data, cfg.max_len);
  std::vector<std::pair<std::string, std::string>> inputs{{"config", a.config}, {"data", a.data}};
  if (!a.resume.empty()) inputs.emplace_back("resume", a.resume);
  const auto hash = inputs_hash(inputs);
  prepare_out(a.out, a.force);
  const fs::path out(a.out);
  RunManifest{cmdline, a.config, std::to_string(cfg.seed), hash, a.out}.write(out);
  {
    std::ofstream os(out / "config.used");
    os << cfg.to_config().serialize();
  }
  std::cout << "data: " << ds.directions.size() << " directions, vocab " << ds.vocab.size() << ", kept "
            << ds.stats.kept << ", dropped " << ds.stats.dropped_too_long << " too long and "
            << ds.stats.dropped_empty << " empty\n";

  Trainer trainer(cfg, ds);
  if (!a.resume.empty()) {
    trainer.restore(load_checkpoint(a.resume));
    std::cout << "resumed at step " << trainer.current_step() << '\n';
  }
  fs::create_directories(out / "checkpoints");
  std::ofstream metrics(out / "metrics.tsv");
  if (trainer.current_step() > 0) write_metrics_header(metrics, cfg.objective.use_quantizer ? cfg.objective.quantizer.n_slices : 0);
  trainer.train(cfg.optim.total_steps, &metrics, (out / "checkpoints").string());
  save_checkpoint(trainer.checkpoint(), (out / "final.ckpt").string(), dtype);
  std::cout << "trained to step " << trainer.current_step() << "; checkpoint " << (out / "final.ckpt").string()
            << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// translate

struct TranslateArgs {
  std::string ckpt, input, target, out, context_mode = "continuous", reference;
  int beam = 5;
  int max_len = 64;
  bool scores = false;
  bool force = false;
};

int cmd_translate(const TranslateArgs& a, const std::string& cmdline) {
  DecodeConfig dc;
  dc.beam_size = a.beam;
  dc.max_len = a.max_len;
  dc.context_mode = parse_context_mode(a.context_mode);
  dc.validate();

  const auto sys = TrainedSystem::load(a.ckpt);
  if (std::find(sys.languages.begin(), sys.languages.end(), a.target) == sys.languages.end()) {
    throw ConfigError("--target-lang: '" + a.target + "' is not a language of this checkpoint");
  }
  const auto lines = read_lines(a.input);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (tokenize(lines[i]).empty()) throw DataError(a.input + ":" + std::to_string(i + 1) + ": empty source sentence");
  }
  std::vector<std::pair<std::string, std::string>> inputs{{"ckpt", a.ckpt}, {"input", a.input}};
  if (!a.reference.empty()) inputs.emplace_back("reference", a.reference);
  const auto hash = inputs_hash(inputs);
  prepare_out(a.out, a.force);
  const fs::path out(a.out);
  RunManifest{cmdline, "-", "-", hash, a.out}.write(out);

  const auto hyps = translate_all(*sys.model, sys.codebook.get(), n_slices_of(sys), to_ids(sys.vocab, lines),
                                  sys.vocab.lang_tag_id(a.target), dc, thread_budget());
  std::vector<std::string> text;
  for (const auto& h : hyps) text.push_back(detokenize(to_words(sys.vocab, h.tokens)));
  write_lines((out / "hypotheses.txt").string(), text);
  if (a.scores) {
    std::ofstream os(out / "scores.tsv");
    os << "line\tscore\tlog_prob\tlength\tfinished\n" << std::setprecision(17);
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      os << i + 1 << '\t' << hyps[i].score << '\t' << hyps[i].log_prob << '\t' << hyps[i].tokens.size() << '\t'
         << (hyps[i].finished ? 1 : 0) << '\n';
    }
  }
  if (!a.reference.empty()) {
    const auto refs = read_lines(a.reference);
    if (refs.size() != lines.size()) throw DataError("--reference: line count differs from --input");
    std::vector<std::vector<int>> hyp_ids;
    for (const auto& h : hyps) hyp_ids.push_back(h.tokens);
    const double acc = token_accuracy(hyp_ids, to_ids(sys.vocab, refs));
    std::ofstream(out / "accuracy.txt") << std::setprecision(17) << acc << '\n';
    std::cout << "token accuracy " << acc << '\n';
  }
  std::cout << "translated " << hyps.size() << " sentences into " << a.target << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// analyze

const std::vector<std::string> kReports{"codes", "kl", "pca", "usage", "offtarget", "codetrans-export"};

struct AnalyzeArgs {
  std::string ckpt, testset, out, tag_lang, split = "test";
  std::vector<std::string> which, langs;
  int beam = 5;
  int max_len = 64;
  int max_sentences = 0;
  int top_m = 5;
  bool force = false;
};

struct Multiway {
  std::vector<std::string> languages;
  std::map<std::string, std::vector<std::vector<int>>> sentences;
};

Multiway load_multiway(const fs::path& dir, const std::string& prefix, const std::vector<std::string>& langs,
                       const Vocab& vocab, int limit) {
  Multiway m;
  for (const auto& l : langs) {
    const fs::path f = dir / (prefix + "." + l);
    if (!fs::exists(f)) throw DataError("missing multiway file '" + f.string() + "'");
    auto ids = to_ids(vocab, read_lines(f.string()));
    if (limit > 0 && static_cast<int>(ids.size()) > limit) ids.resize(static_cast<std::size_t>(limit));
    m.languages.push_back(l);
    m.sentences[l] = std::move(ids);
  }
  return m;
}

std::vector<int> flatten_codes(const std::vector<CodeSequence>& seqs) {
  std::vector<int> flat;
  for (const auto& s : seqs) flat.insert(flat.end(), s.codes.begin(), s.codes.end());
  return flat;
}

std::string code_line(const CodeSequence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.codes.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(s.codes[i]);
  }
  return out;
}

int cmd_analyze(AnalyzeArgs a, const std::string& cmdline) {
  std::set<std::string> which;
  for (const auto& w : a.which) {
    if (w == "all") {
      which.insert(kReports.begin(), kReports.end());
    } else if (std::find(kReports.begin(), kReports.end(), w) != kReports.end()) {
      which.insert(w);
    } else {
      throw ConfigError("--which: unknown report '" + w + "'");
    }
  }
  if (a.split != "test" && a.split != "probe") throw ConfigError("--split: expected test or probe");

  const auto sys = TrainedSystem::load(a.ckpt);
  const fs::path dir(a.testset);
  const auto cm = CorpusManifest::load((dir / "corpus.manifest").string());
  const bool has_family = fs::exists(dir / "family.manifest");
  FamilyManifest family;
  if (has_family) family = FamilyManifest::load((dir / "family.manifest").string());

  std::vector<std::string> langs = a.langs.empty() ? cm.languages : a.langs;
  for (const auto& l : langs) {
    if (std::find(sys.languages.begin(), sys.languages.end(), l) == sys.languages.end()) {
      throw ConfigError("--langs: '" + l + "' is not a language of this checkpoint");
    }
  }
  const std::string bridge = has_family ? family.bridge : "";
  if (a.tag_lang.empty()) a.tag_lang = bridge.empty() ? sys.languages.front() : bridge;
  const int tag = sys.vocab.lang_tag_id(a.tag_lang);

  const bool needs_codes = which.count("codes") || which.count("kl") || which.count("usage") ||
                           which.count("codetrans-export");
  if (needs_codes && !sys.codebook) throw ConfigError("--which: code reports need a checkpoint trained with a quantizer");
  if (which.count("offtarget") && !has_family) throw DataError("offtarget needs family.manifest in --testset");
  const std::string prefix = a.split == "test" ? cm.test_prefix : cm.probe_prefix;
  if (prefix.empty()) throw DataError("--testset has no " + a.split + " split");

  const auto hash = inputs_hash({{"ckpt", a.ckpt}, {"testset", a.testset}});
  prepare_out(a.out, a.force);
  const fs::path out(a.out);
  RunManifest{cmdline, "-", "-", hash, a.out}.write(out);

  const Multiway mw = load_multiway(dir, prefix, langs, sys.vocab, a.max_sentences);
  const int S = n_slices_of(sys);
  const int K = sys.codebook ? sys.codebook->size() : 0;

  std::map<std::string, std::vector<CodeSequence>> codes;
  if (needs_codes) {
    for (const auto& l : langs) codes[l] = extract_codes(*sys.model, *sys.codebook, S, mw.sentences.at(l), l, tag);
  }

  if (which.count("codes")) {
    fs::create_directories(out / "codes");
    for (const auto& l : langs) {
      std::vector<std::string> lines;
      for (const auto& s : codes[l]) lines.push_back(code_line(s));
      write_lines((out / "codes" / (l + ".txt")).string(), lines);
    }
  }

  if (which.count("kl")) {
    std::vector<CodeDistribution> dists;
    for (const auto& l : langs) dists.push_back(code_distribution(codes[l], K, S));
    const auto m = code_kl_matrix(dists);
    std::ofstream os(out / "kl.tsv");
    os << "lang";
    for (const auto& l : langs) os << '\t' << l;
    os << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < langs.size(); ++i) {
      os << langs[i];
      for (std::size_t j = 0; j < langs.size(); ++j) os << '\t' << m[i][j];
      os << '\n';
    }
  }

  if (which.count("pca")) {
    std::vector<std::vector<int>> pooled;
    for (const auto& l : langs) pooled.insert(pooled.end(), mw.sentences.at(l).begin(), mw.sentences.at(l).end());
    const Tensor states = collect_encoder_states(*sys.model, pooled, tag);
    const auto curve = pca_explained_variance(states, states.dim(1));
    std::ofstream os(out / "pca.csv");
    os << "component,cumulative_explained_variance\n" << std::setprecision(17);
    for (std::size_t k = 0; k < curve.size(); ++k) os << k + 1 << ',' << curve[k] << '\n';
  }

  if (which.count("usage")) {
    std::vector<int> flat;
    for (const auto& l : langs) {
      const auto f = flatten_codes(codes[l]);
      flat.insert(flat.end(), f.begin(), f.end());
    }
    const int threshold = std::max(2, (K + 99) / 100);
    const auto u = usage_stats(flat, K, S, a.top_m, threshold);
    std::ofstream os(out / "usage.tsv");
    os << "slice\tactive\tentropy";
    for (int m = 1; m <= a.top_m; ++m) os << "\ttop" << m;
    os << '\n' << std::setprecision(17);
    for (std::size_t s = 0; s < u.slices.size(); ++s) {
      os << s << '\t' << u.slices[s].active << '\t' << u.slices[s].entropy;
      for (int m = 0; m < a.top_m; ++m) {
        os << '\t' << (m < static_cast<int>(u.slices[s].top_shares.size()) ? u.slices[s].top_shares[m] : 0.0);
      }
      os << '\n';
    }
    std::ofstream sum(out / "usage_summary.tsv");
    sum << "key\tvalue\n" << std::setprecision(17) << "mean_entropy\t" << u.mean_entropy << '\n'
        << "collapse\t" << (u.collapse ? 1 : 0) << '\n'
        << "collapse_threshold\t" << threshold << '\n'
        << "codebook_size\t" << K << '\n'
        << "n_slices\t" << S << '\n';
  }

  if (which.count("offtarget")) {
    DecodeConfig dc;
    dc.beam_size = a.beam;
    dc.max_len = a.max_len;
    dc.validate();
    std::set<std::pair<std::string, std::string>> trained;
    for (const auto& p : cm.pairs) {
      trained.insert({p.a, p.b});
      trained.insert({p.b, p.a});
    }
    std::ofstream os(out / "offtarget.tsv");
    os << "src\ttgt\tzero_shot\tsentences\toff_target_rate\ttoken_accuracy\n" << std::setprecision(17);
    for (const auto& s : langs) {
      for (const auto& t : langs) {
        if (s == t) continue;
        const auto hyps = translate_all(*sys.model, sys.codebook.get(), S, mw.sentences.at(s),
                                        sys.vocab.lang_tag_id(t), dc, thread_budget());
        std::vector<std::vector<std::string>> words;
        std::vector<std::vector<int>> ids;
        for (const auto& h : hyps) {
          words.push_back(to_words(sys.vocab, h.tokens));
          ids.push_back(h.tokens);
        }
        os << s << '\t' << t << '\t' << (trained.count({s, t}) ? 0 : 1) << '\t' << hyps.size() << '\t'
           << off_target_rate(words, t, family) << '\t' << token_accuracy(ids, mw.sentences.at(t)) << '\n';
      }
    }
  }

  if (which.count("codetrans-export")) {
    // Probe-set codes become training pairs and test-set codes the multiway
    // test split, so the directory can be passed straight to `train --data`.
    if (cm.probe_prefix.empty() || cm.test_prefix.empty()) {
      throw DataError("codetrans-export needs both test and probe splits in --testset");
    }
    std::vector<std::string> ct_langs;
    for (const auto& l : langs) {
      if (l != bridge) ct_langs.push_back(l);
    }
    if (ct_langs.size() < 2) throw ConfigError("codetrans-export needs at least two non-bridge languages");
    const Multiway probe = load_multiway(dir, cm.probe_prefix, ct_langs, sys.vocab, 0);
    const Multiway test = load_multiway(dir, cm.test_prefix, ct_langs, sys.vocab, 0);
    const fs::path ct = out / "codetrans";
    fs::create_directories(ct);
    CorpusManifest m;
    m.languages = ct_langs;
    m.test_prefix = "test";
    std::map<std::string, std::vector<CodeSequence>> probe_codes;
    for (const auto& l : ct_langs) {
      probe_codes[l] = extract_codes(*sys.model, *sys.codebook, S, probe.sentences.at(l), l, tag);
      std::vector<std::string> lines;
      for (const auto& s : extract_codes(*sys.model, *sys.codebook, S, test.sentences.at(l), l, tag)) {
        lines.push_back(code_line(s));
      }
      write_lines((ct / ("test." + l)).string(), lines);
    }
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < ct_langs.size(); ++i) {
      for (std::size_t j = i + 1; j < ct_langs.size(); ++j) {
        const std::string p = "train_" + ct_langs[i] + "_" + ct_langs[j];
        skipped += export_code_translation_corpus(probe_codes[ct_langs[i]], probe_codes[ct_langs[j]],
                                                  (ct / p).string());
        m.pairs.push_back({ct_langs[i], ct_langs[j], p});
      }
    }
    m.save((ct / "corpus.manifest").string());
    if (skipped) std::cout << "codetrans-export: skipped " << skipped << " unaligned sentences\n";
  }

  std::cout << "wrote";
  for (const auto& w : which) std::cout << ' ' << w;
  std::cout << " to " << a.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vqbridge: multilingual translation with soft discrete codes"};
  app.require_subcommand(1);
  const std::string cmdline = command_line(argc, argv);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic language family and its corpora");
  gen->add_option("--spec", gd.spec, "Family spec (key = value)")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", gd.seed, "Generation seed");
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_flag("--force", gd.force, "Replace an earlier output directory");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a translation model");
  train->add_option("--config", tr.config, "Run config (key = value)")->required()->check(CLI::ExistingFile);
  train->add_option("--data", tr.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", tr.out, "Output directory")->required();
  train->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--steps", tr.steps, "Override total_steps")->check(CLI::PositiveNumber);
  train->add_option("--dtype", tr.dtype, "Storage type of final.ckpt")->check(CLI::IsMember({"f64", "f32"}));
  train->add_flag("--force", tr.force, "Replace an earlier output directory");

  TranslateArgs tl;
  auto* translate = app.add_subcommand("translate", "Translate tokenized sentences");
  translate->add_option("--ckpt", tl.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  translate->add_option("--input", tl.input, "One tokenized sentence per line")->required()->check(CLI::ExistingFile);
  translate->add_option("--target-lang", tl.target, "Target language")->required();
  translate->add_option("--out", tl.out, "Output directory")->required();
  translate->add_option("--beam", tl.beam, "Beam size")->check(CLI::PositiveNumber);
  translate->add_option("--max-len", tl.max_len, "Maximum generated length")->check(CLI::PositiveNumber);
  translate->add_option("--context-mode", tl.context_mode, "continuous or cluster_centers");
  translate->add_option("--reference", tl.reference, "References for token accuracy")->check(CLI::ExistingFile);
  translate->add_flag("--scores", tl.scores, "Also write scores.tsv");
  translate->add_flag("--force", tl.force, "Replace an earlier output directory");

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Code, representation and off-target reports");
  analyze->add_option("--ckpt", an.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  analyze->add_option("--testset", an.testset, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--which", an.which, "Reports: codes kl pca usage offtarget codetrans-export all")
      ->required()
      ->delimiter(',');
  analyze->add_option("--out", an.out, "Output directory")->required();
  analyze->add_option("--langs", an.langs, "Restrict to these languages")->delimiter(',');
  analyze->add_option("--tag-lang", an.tag_lang, "Target tag used when encoding (default: bridge)");
  analyze->add_option("--split", an.split, "test or probe");
  analyze->add_option("--beam", an.beam, "Beam size for offtarget")->check(CLI::PositiveNumber);
  analyze->add_option("--max-len", an.max_len, "Maximum generated length for offtarget")->check(CLI::PositiveNumber);
  analyze->add_option("--max-sentences", an.max_sentences, "Use at most this many sentences per language");
  analyze->add_flag("--force", an.force, "Replace an earlier output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gd, cmdline);
    if (*train) return cmd_train(tr, cmdline);
    if (*translate) return cmd_translate(tl, cmdline);
    if (*analyze) return cmd_analyze(an, cmdline);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
