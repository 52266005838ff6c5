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
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vqbridge/config.hpp"
#include "vqbridge/vocab.hpp"

namespace vqbridge {

// ---------------------------------------------------------------------------
// Synthetic language family

struct LanguageSpec {
  std::string name;
  std::string parent;        // empty for the root
  double relatedness = 0.0;  // fraction of the parent's vocab map shared
  bool swap = false;         // swap adjacent symbol pairs
  int train_size = 0;        // sentences paired with the bridge; 0 = default
  bool paired = true;        // false: appears in test/probe sets only
};

struct FamilySpec {
  std::string name = "family";
  std::string bridge;
  std::vector<LanguageSpec> languages;  // parents precede children
  int n_semantic_symbols = 64;
  int train_sentences = 2000;
  int test_sentences = 200;
  int probe_sentences = 1000;
  int min_len = 3;
  int max_len = 10;
  double zipf_exponent = 1.0;

  // Reads the flat spec format; errors name the offending key.
  static FamilySpec from_config(const KeyValueConfig& cfg);
  void validate() const;
};

struct SyntheticLanguage {
  std::string name;
  std::string parent;
  double relatedness = 0.0;
  bool swap = false;
  std::vector<std::string> surface;  // semantic symbol -> surface token
};

/// Languages derived from shared semantic sequences: a surface token per
/// symbol (a fraction inherited from the parent) plus an optional
/// deterministic adjacent-swap reordering.
class SyntheticFamily {
 public:
  static SyntheticFamily build(const FamilySpec& spec, std::uint64_t seed);

  const std::string& bridge() const { return bridge_; }
  int n_semantic_symbols() const { return n_symbols_; }
  const std::vector<SyntheticLanguage>& languages() const { return languages_; }
  const SyntheticLanguage& language(const std::string& name) const;

  std::vector<std::string> realize(const std::string& lang, std::span<const int> semantic) const;
  // |shared vocab map entries| / n_semantic_symbols
  double relatedness(const std::string& a, const std::string& b) const;
  std::set<std::string> surface_vocab(const std::string& lang) const;

 private:
  std::string bridge_;
  int n_symbols_ = 0;
  std::vector<SyntheticLanguage> languages_;
};

struct ParallelText {
  std::string src_lang, tgt_lang;
  std::vector<std::string> src, tgt;  // one sentence per line
};

struct GeneratedData {
  FamilySpec spec;
  std::uint64_t seed = 0;
  SyntheticFamily family;
  std::vector<ParallelText> train;                         // bridge <-> each other language
  std::map<std::string, std::vector<std::string>> test;    // multiway, aligned by line
  std::map<std::string, std::vector<std::string>> probe;   // multiway, aligned by line
};

// Zero-shot pairs are never emitted as training data; the multiway test and
// probe sets provide oracle references for every direction.
GeneratedData generate_family(std::uint64_t seed, const FamilySpec& spec);

// Writes family.manifest, corpus.manifest and the corpus files into `dir`.
void write_generated(const GeneratedData& data, const std::string& dir);

/// Parsed family.manifest: per-language surface vocabularies.
struct FamilyManifest {
  std::string name;
  std::string bridge;
  std::uint64_t seed = 0;
  std::vector<std::string> languages;
  std::map<std::string, std::set<std::string>> vocab;
  std::map<std::pair<std::string, std::string>, double> relatedness;

  static FamilyManifest load(const std::string& path);
};

// ---------------------------------------------------------------------------
// Corpora

std::vector<std::string> tokenize(const std::string& line);
std::string detokenize(const std::vector<std::string>& tokens);

struct LanguagePair {
  std::string src_lang, tgt_lang;
  std::vector<std::vector<int>> src, tgt;

  std::size_t size() const { return src.size(); }
};

struct IngestStats {
  std::size_t read = 0;
  std::size_t kept = 0;
  std::size_t dropped_too_long = 0;
  std::size_t dropped_empty = 0;
};

// Whitespace-tokenizes two line-aligned files and maps tokens through
// `vocab` (adding unseen tokens when `grow`). Pairs with a side longer than
// max_len are dropped and counted. Mismatched line counts raise DataError.
LanguagePair ingest_parallel(const std::string& file_src, const std::string& file_tgt, const std::string& src_lang,
                             const std::string& tgt_lang, Vocab& vocab, int max_len, IngestStats* stats = nullptr,
                             bool grow = true);

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

/// corpus.manifest: trained pairs plus multiway evaluation sets.
struct CorpusManifest {
  std::vector<std::string> languages;
  struct Pair {
    std::string a, b, prefix;  // files <prefix>.<a>, <prefix>.<b>
  };
  std::vector<Pair> pairs;
  std::string test_prefix;   // files <prefix>.<lang>
  std::string probe_prefix;  // optional

  static CorpusManifest load(const std::string& path);
  void save(const std::string& path) const;
};

/// A loaded corpus directory. Every pair yields both translation directions.
struct Dataset {
  std::string dir;
  Vocab vocab;
  std::vector<std::string> languages;
  std::vector<LanguagePair> directions;
  std::map<std::string, std::vector<std::vector<int>>> test;
  std::map<std::string, std::vector<std::vector<int>>> probe;
  IngestStats stats;

  static Dataset load(const std::string& dir, int max_len);
  int language_index(const std::string& lang) const;
};

// ---------------------------------------------------------------------------
// Sampling and batching

/// Draws a training direction with probability proportional to
/// (n_l / sum n)^(1/T).
class TemperatureSampler {
 public:
  TemperatureSampler(std::vector<std::size_t> sizes, double temperature, std::uint64_t seed);

  const std::vector<double>& probabilities() const { return probs_; }
  std::size_t sample();

  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<double> probs_;
  std::vector<double> cumulative_;
  std::mt19937_64 rng_;
};

/// Padded batch of one translation direction. The source starts with the
/// target-language tag; tgt_in starts with <s>, tgt_out ends with </s> and
/// is -1 on padding.
struct Batch {
  std::string src_lang, tgt_lang;
  int size = 0;
  int src_len = 0;
  int tgt_len = 0;
  int tgt_src_len = 0;
  std::vector<int> src;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;
  std::vector<int> tgt_as_src;  // target sentence encoded like a source
  std::vector<int> src_lang_id;  // per sentence
  int target_tokens = 0;
};

std::vector<int> make_source(std::span<const int> tokens, int target_tag);

Batch make_batch(const LanguagePair& pair, std::span<const std::size_t> indices, const Vocab& vocab,
                 int src_lang_id);

}  // namespace vqbridge
