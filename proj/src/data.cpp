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

#include "vqbridge/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "vqbridge/error.hpp"
#include "vqbridge/random.hpp"

namespace vqbridge {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Family spec

FamilySpec FamilySpec::from_config(const KeyValueConfig& cfg) {
  FamilySpec spec;
  spec.name = cfg.get_string("name", spec.name);
  spec.bridge = cfg.require_string("bridge");
  const auto langs = cfg.get_list("languages");
  if (langs.empty()) throw ConfigError("languages: required comma-separated list is missing");
  spec.n_semantic_symbols = cfg.get_int("n_semantic_symbols", spec.n_semantic_symbols);
  spec.train_sentences = cfg.get_int("train_sentences", spec.train_sentences);
  spec.test_sentences = cfg.get_int("test_sentences", spec.test_sentences);
  spec.probe_sentences = cfg.get_int("probe_sentences", spec.probe_sentences);
  spec.min_len = cfg.get_int("min_len", spec.min_len);
  spec.max_len = cfg.get_int("max_len", spec.max_len);
  spec.zipf_exponent = cfg.get_double("zipf", spec.zipf_exponent);
  for (const auto& name : langs) {
    LanguageSpec l;
    l.name = name;
    const bool is_bridge = name == spec.bridge;
    l.parent = cfg.get_string("parent." + name, is_bridge ? "" : spec.bridge);
    if (l.parent == "-") l.parent.clear();
    l.relatedness = cfg.get_double("relatedness." + name, 0.0);
    if (!(l.relatedness >= 0.0 && l.relatedness <= 1.0)) {
      throw ConfigError("relatedness." + name + ": must lie in [0,1], got " + cfg.get_string("relatedness." + name, ""));
    }
    l.swap = cfg.get_bool("swap." + name, false);
    l.train_size = cfg.get_int("size." + name, 0);
    l.paired = cfg.get_bool("pair." + name, true);
    spec.languages.push_back(l);
  }
  cfg.reject_unknown();
  try {
    spec.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

void FamilySpec::validate() const {
  auto bad = [](const std::string& key, const std::string& msg) { throw ContractViolation(key + ": " + msg); };
  if (languages.size() < 2) bad("languages", "need at least two languages");
  if (n_semantic_symbols < 2) bad("n_semantic_symbols", "must be >= 2");
  if (min_len < 1 || max_len < min_len) bad("max_len", "need 1 <= min_len <= max_len");
  if (train_sentences < 1) bad("train_sentences", "must be >= 1");
  if (test_sentences < 1) bad("test_sentences", "must be >= 1");
  if (probe_sentences < 0) bad("probe_sentences", "must be >= 0");
  if (!(zipf_exponent >= 0.0)) bad("zipf", "must be >= 0");
  if (std::none_of(languages.begin(), languages.end(), [&](const LanguageSpec& l) { return l.name == bridge; })) {
    bad("bridge", "'" + bridge + "' is not among the languages");
  }
  std::set<std::string> seen;
  int paired = 0;
  for (const auto& l : languages) {
    if (l.name.empty() || l.name.find_first_of(" \t.-_/") != std::string::npos) {
      bad("languages", "invalid language name '" + l.name + "'");
    }
    if (!seen.insert(l.name).second) bad("languages", "duplicate language '" + l.name + "'");
    if (!(l.relatedness >= 0.0 && l.relatedness <= 1.0)) bad("relatedness." + l.name, "must lie in [0,1]");
    if (!l.parent.empty() && (l.parent == l.name || !seen.count(l.parent))) {
      bad("parent." + l.name, "parent '" + l.parent + "' must be listed earlier");
    }
    if (l.train_size < 0) bad("size." + l.name, "must be >= 0");
    paired += l.name != bridge && l.paired;
  }
  if (paired == 0) bad("languages", "no language is paired with the bridge");
}

// ---------------------------------------------------------------------------
// Family

SyntheticFamily SyntheticFamily::build(const FamilySpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticFamily fam;
  fam.bridge_ = spec.bridge;
  fam.n_symbols_ = spec.n_semantic_symbols;
  const int n = spec.n_semantic_symbols;
  for (std::size_t li = 0; li < spec.languages.size(); ++li) {
    const auto& ls = spec.languages[li];
    SyntheticLanguage lang{ls.name, ls.parent, ls.relatedness, ls.swap, {}};
    lang.surface.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) lang.surface[static_cast<std::size_t>(i)] = ls.name + "_" + std::to_string(i);
    if (!ls.parent.empty()) {
      const auto& parent = fam.language(ls.parent);
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(derive_seed(seed, 10 + li));
      for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[rng() % static_cast<std::uint64_t>(i + 1)]);
      const int shared = static_cast<int>(std::lround(ls.relatedness * n));
      for (int k = 0; k < shared; ++k) {
        const auto s = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
        lang.surface[s] = parent.surface[s];
      }
    }
    fam.languages_.push_back(std::move(lang));
  }
  return fam;
}

const SyntheticLanguage& SyntheticFamily::language(const std::string& name) const {
  for (const auto& l : languages_)
    if (l.name == name) return l;
  throw ContractViolation("family: unknown language '" + name + "'");
}

std::vector<std::string> SyntheticFamily::realize(const std::string& lang, std::span<const int> semantic) const {
  const auto& l = language(lang);
  std::vector<std::string> out;
  out.reserve(semantic.size());
  for (int s : semantic) {
    if (s < 0 || s >= n_symbols_) throw ContractViolation("family: semantic symbol " + std::to_string(s) + " out of range");
    out.push_back(l.surface[static_cast<std::size_t>(s)]);
  }
  if (l.swap)
    for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
  return out;
}

double SyntheticFamily::relatedness(const std::string& a, const std::string& b) const {
  const auto& la = language(a);
  const auto& lb = language(b);
  int shared = 0;
  for (int i = 0; i < n_symbols_; ++i) shared += la.surface[static_cast<std::size_t>(i)] == lb.surface[static_cast<std::size_t>(i)];
  return static_cast<double>(shared) / n_symbols_;
}

std::set<std::string> SyntheticFamily::surface_vocab(const std::string& lang) const {
  const auto& l = language(lang);
  return {l.surface.begin(), l.surface.end()};
}

namespace {

class SemanticSource {
 public:
  SemanticSource(const FamilySpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {
    double acc = 0.0;
    for (int r = 0; r < spec.n_semantic_symbols; ++r) {
      acc += 1.0 / std::pow(r + 1.0, spec.zipf_exponent);
      cumulative_.push_back(acc);
    }
    for (auto& c : cumulative_) c /= acc;
  }

  std::vector<int> next() {
    const int span = spec_.max_len - spec_.min_len + 1;
    const int len = spec_.min_len + static_cast<int>(rng_() % static_cast<std::uint64_t>(span));
    std::vector<int> seq(static_cast<std::size_t>(len));
    for (auto& s : seq) {
      const double u = uniform01(rng_);
      auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
      s = std::min(static_cast<int>(it - cumulative_.begin()), spec_.n_semantic_symbols - 1);
    }
    return seq;
  }

 private:
  const FamilySpec& spec_;
  std::mt19937_64 rng_;
  std::vector<double> cumulative_;
};

std::map<std::string, std::vector<std::string>> multiway(const FamilySpec& spec, const SyntheticFamily& fam, int n,
                                                         std::uint64_t seed) {
  SemanticSource src(spec, seed);
  std::map<std::string, std::vector<std::string>> out;
  for (int i = 0; i < n; ++i) {
    const auto sem = src.next();
    for (const auto& l : spec.languages) out[l.name].push_back(detokenize(fam.realize(l.name, sem)));
  }
  return out;
}

}  // namespace

GeneratedData generate_family(std::uint64_t seed, const FamilySpec& spec) {
  GeneratedData g{spec, seed, SyntheticFamily::build(spec, seed), {}, {}, {}};
  for (std::size_t li = 0; li < spec.languages.size(); ++li) {
    const auto& l = spec.languages[li];
    if (l.name == spec.bridge || !l.paired) continue;
    const int n = l.train_size > 0 ? l.train_size : spec.train_sentences;
    SemanticSource src(spec, derive_seed(seed, 1000 + li));
    ParallelText pt{spec.bridge, l.name, {}, {}};
    for (int i = 0; i < n; ++i) {
      const auto sem = src.next();
      pt.src.push_back(detokenize(g.family.realize(spec.bridge, sem)));
      pt.tgt.push_back(detokenize(g.family.realize(l.name, sem)));
    }
    g.train.push_back(std::move(pt));
  }
  g.test = multiway(spec, g.family, spec.test_sentences, derive_seed(seed, 2));
  if (spec.probe_sentences > 0) g.probe = multiway(spec, g.family, spec.probe_sentences, derive_seed(seed, 3));
  return g;
}

void write_generated(const GeneratedData& data, const std::string& dir) {
  fs::create_directories(dir);
  CorpusManifest cm;
  for (const auto& l : data.spec.languages) cm.languages.push_back(l.name);
  for (const auto& pt : data.train) {
    const std::string prefix = "train." + pt.src_lang + "-" + pt.tgt_lang;
    write_lines((fs::path(dir) / (prefix + "." + pt.src_lang)).string(), pt.src);
    write_lines((fs::path(dir) / (prefix + "." + pt.tgt_lang)).string(), pt.tgt);
    cm.pairs.push_back({pt.src_lang, pt.tgt_lang, prefix});
  }
  cm.test_prefix = "test";
  for (const auto& [lang, lines] : data.test) write_lines((fs::path(dir) / ("test." + lang)).string(), lines);
  if (!data.probe.empty()) {
    cm.probe_prefix = "probe";
    for (const auto& [lang, lines] : data.probe) write_lines((fs::path(dir) / ("probe." + lang)).string(), lines);
  }
  cm.save((fs::path(dir) / "corpus.manifest").string());

  std::ofstream out(fs::path(dir) / "family.manifest");
  out << "# synthetic language family\n";
  out << "name " << data.spec.name << '\n';
  out << "seed " << data.seed << '\n';
  out << "bridge " << data.spec.bridge << '\n';
  out << "symbols " << data.spec.n_semantic_symbols << '\n';
  out << std::fixed << std::setprecision(6);
  for (const auto& l : data.spec.languages) {
    out << "language " << l.name << " parent " << (l.parent.empty() ? "-" : l.parent) << " relatedness "
        << l.relatedness << " swap " << (l.swap ? 1 : 0) << " paired " << (l.paired ? 1 : 0) << '\n';
  }
  for (const auto& a : data.spec.languages)
    for (const auto& b : data.spec.languages)
      out << "relatedness " << a.name << ' ' << b.name << ' ' << data.family.relatedness(a.name, b.name) << '\n';
  for (const auto& l : data.family.languages()) {
    out << "vocab " << l.name;
    for (const auto& tok : data.family.surface_vocab(l.name)) out << ' ' << tok;
    out << '\n';
  }
}

FamilyManifest FamilyManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open family manifest '" + path + "'");
  FamilyManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "name") {
      is >> m.name;
    } else if (kind == "seed") {
      is >> m.seed;
    } else if (kind == "bridge") {
      is >> m.bridge;
    } else if (kind == "language") {
      std::string name;
      is >> name;
      m.languages.push_back(name);
    } else if (kind == "relatedness") {
      std::string a, b;
      double v = 0.0;
      is >> a >> b >> v;
      m.relatedness[{a, b}] = v;
    } else if (kind == "vocab") {
      std::string lang, tok;
      is >> lang;
      auto& set = m.vocab[lang];
      while (is >> tok) set.insert(tok);
    } else if (kind != "symbols") {
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown record '" + kind + "'");
    }
    if (is.fail() && !is.eof()) throw DataError(path + ":" + std::to_string(lineno) + ": malformed record");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Corpora

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
}

LanguagePair ingest_parallel(const std::string& file_src, const std::string& file_tgt, const std::string& src_lang,
                             const std::string& tgt_lang, Vocab& vocab, int max_len, IngestStats* stats, bool grow) {
  const auto a = read_lines(file_src);
  const auto b = read_lines(file_tgt);
  if (a.size() != b.size()) {
    throw DataError("line count mismatch: '" + file_src + "' has " + std::to_string(a.size()) + " lines, '" + file_tgt +
                    "' has " + std::to_string(b.size()) + "; first unpaired line is " +
                    std::to_string(std::min(a.size(), b.size()) + 1));
  }
  LanguagePair pair{src_lang, tgt_lang, {}, {}};
  IngestStats local;
  auto map = [&](const std::string& line) {
    std::vector<int> ids;
    for (const auto& tok : tokenize(line)) ids.push_back(grow ? vocab.add(tok) : vocab.id(tok));
    return ids;
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++local.read;
    const auto ta = tokenize(a[i]);
    const auto tb = tokenize(b[i]);
    if (ta.empty() || tb.empty()) {
      ++local.dropped_empty;
      continue;
    }
    if (static_cast<int>(ta.size()) > max_len || static_cast<int>(tb.size()) > max_len) {
      ++local.dropped_too_long;
      continue;
    }
    pair.src.push_back(map(a[i]));
    pair.tgt.push_back(map(b[i]));
    ++local.kept;
  }
  if (stats) {
    stats->read += local.read;
    stats->kept += local.kept;
    stats->dropped_too_long += local.dropped_too_long;
    stats->dropped_empty += local.dropped_empty;
  }
  return pair;
}

CorpusManifest CorpusManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus manifest '" + path + "'");
  CorpusManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "languages") {
      std::string l;
      while (is >> l) m.languages.push_back(l);
    } else if (kind == "pair") {
      Pair p;
      if (!(is >> p.a >> p.b >> p.prefix)) throw DataError(path + ":" + std::to_string(lineno) + ": malformed pair");
      m.pairs.push_back(p);
    } else if (kind == "test") {
      is >> m.test_prefix;
    } else if (kind == "probe") {
      is >> m.probe_prefix;
    } else {
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown record '" + kind + "'");
    }
  }
  if (m.languages.empty()) throw DataError(path + ": no languages record");
  return m;
}

void CorpusManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "languages";
  for (const auto& l : languages) out << ' ' << l;
  out << '\n';
  for (const auto& p : pairs) out << "pair " << p.a << ' ' << p.b << ' ' << p.prefix << '\n';
  if (!test_prefix.empty()) out << "test " << test_prefix << '\n';
  if (!probe_prefix.empty()) out << "probe " << probe_prefix << '\n';
}

Dataset Dataset::load(const std::string& dir, int max_len) {
  const auto cm = CorpusManifest::load((fs::path(dir) / "corpus.manifest").string());
  Dataset ds;
  ds.dir = dir;
  ds.languages = cm.languages;
  auto file = [&](const std::string& prefix, const std::string& lang) { return (fs::path(dir) / (prefix + "." + lang)).string(); };

  // Closed vocabulary: specials, tags, then every surface token in sorted order.
  std::set<std::string> tokens;
  auto collect = [&](const std::string& path) {
    for (const auto& line : read_lines(path))
      for (auto& t : tokenize(line)) tokens.insert(t);
  };
  for (const auto& p : cm.pairs) {
    collect(file(p.prefix, p.a));
    collect(file(p.prefix, p.b));
  }
  for (const auto& l : cm.languages) {
    if (!cm.test_prefix.empty() && fs::exists(file(cm.test_prefix, l))) collect(file(cm.test_prefix, l));
    if (!cm.probe_prefix.empty() && fs::exists(file(cm.probe_prefix, l))) collect(file(cm.probe_prefix, l));
  }
  for (const auto& l : cm.languages) ds.vocab.add(Vocab::lang_tag(l));
  for (const auto& t : tokens) ds.vocab.add(t);

  for (const auto& p : cm.pairs) {
    auto fwd = ingest_parallel(file(p.prefix, p.a), file(p.prefix, p.b), p.a, p.b, ds.vocab, max_len, &ds.stats, false);
    LanguagePair bwd{p.b, p.a, fwd.tgt, fwd.src};
    ds.directions.push_back(std::move(fwd));
    ds.directions.push_back(std::move(bwd));
  }
  auto load_multiway = [&](const std::string& prefix, auto& target) {
    if (prefix.empty()) return;
    for (const auto& l : cm.languages) {
      if (!fs::exists(file(prefix, l))) continue;
      auto& sents = target[l];
      for (const auto& line : read_lines(file(prefix, l))) {
        std::vector<int> ids;
        for (const auto& t : tokenize(line)) ids.push_back(ds.vocab.id(t));
        sents.push_back(std::move(ids));
      }
    }
  };
  load_multiway(cm.test_prefix, ds.test);
  load_multiway(cm.probe_prefix, ds.probe);
  return ds;
}

int Dataset::language_index(const std::string& lang) const {
  for (std::size_t i = 0; i < languages.size(); ++i)
    if (languages[i] == lang) return static_cast<int>(i);
  throw ContractViolation("dataset: unknown language '" + lang + "'");
}

// ---------------------------------------------------------------------------
// Sampling and batching

TemperatureSampler::TemperatureSampler(std::vector<std::size_t> sizes, double temperature, std::uint64_t seed)
    : rng_(seed) {
  if (sizes.empty()) throw ContractViolation("sampler: no training pairs");
  if (!(temperature > 0.0)) throw ContractViolation("sampler: temperature must be positive");
  const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  if (total <= 0.0) throw ContractViolation("sampler: all pairs are empty");
  double z = 0.0;
  for (auto n : sizes) {
    probs_.push_back(std::pow(static_cast<double>(n) / total, 1.0 / temperature));
    z += probs_.back();
  }
  double acc = 0.0;
  for (auto& p : probs_) {
    p /= z;
    acc += p;
    cumulative_.push_back(acc);
  }
}

std::size_t TemperatureSampler::sample() {
  const double u = uniform01(rng_) * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), probs_.size() - 1);
}

std::vector<int> make_source(std::span<const int> tokens, int target_tag) {
  std::vector<int> out;
  out.reserve(tokens.size() + 1);
  out.push_back(target_tag);
  out.insert(out.end(), tokens.begin(), tokens.end());
  return out;
}

Batch make_batch(const LanguagePair& pair, std::span<const std::size_t> indices, const Vocab& vocab, int src_lang_id) {
  if (indices.empty()) throw ContractViolation("make_batch: empty index list");
  Batch b;
  b.src_lang = pair.src_lang;
  b.tgt_lang = pair.tgt_lang;
  b.size = static_cast<int>(indices.size());
  const int tag = vocab.lang_tag_id(pair.tgt_lang);
  for (auto i : indices) {
    if (i >= pair.size()) throw ContractViolation("make_batch: sentence index " + std::to_string(i) + " out of range");
    b.src_len = std::max(b.src_len, static_cast<int>(pair.src[i].size()) + 1);
    b.tgt_len = std::max(b.tgt_len, static_cast<int>(pair.tgt[i].size()) + 1);
  }
  b.tgt_src_len = b.tgt_len;
  b.src.assign(static_cast<std::size_t>(b.size) * b.src_len, kPad);
  b.tgt_in.assign(static_cast<std::size_t>(b.size) * b.tgt_len, kPad);
  b.tgt_out.assign(static_cast<std::size_t>(b.size) * b.tgt_len, -1);
  b.tgt_as_src.assign(static_cast<std::size_t>(b.size) * b.tgt_src_len, kPad);
  b.src_lang_id.assign(static_cast<std::size_t>(b.size), src_lang_id);
  for (int r = 0; r < b.size; ++r) {
    const auto& s = pair.src[indices[static_cast<std::size_t>(r)]];
    const auto& t = pair.tgt[indices[static_cast<std::size_t>(r)]];
    const auto src = make_source(s, tag);
    std::copy(src.begin(), src.end(), b.src.begin() + static_cast<std::ptrdiff_t>(r) * b.src_len);
    const auto tsrc = make_source(t, tag);
    std::copy(tsrc.begin(), tsrc.end(), b.tgt_as_src.begin() + static_cast<std::ptrdiff_t>(r) * b.tgt_src_len);
    const std::size_t o = static_cast<std::size_t>(r) * b.tgt_len;
    b.tgt_in[o] = kBos;
    for (std::size_t j = 0; j < t.size(); ++j) {
      b.tgt_in[o + j + 1] = t[j];
      b.tgt_out[o + j] = t[j];
    }
    b.tgt_out[o + t.size()] = kEos;
    b.target_tokens += static_cast<int>(t.size()) + 1;
  }
  return b;
}

}  // namespace vqbridge
