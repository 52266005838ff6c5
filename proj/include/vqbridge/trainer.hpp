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
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vqbridge/config.hpp"
#include "vqbridge/data.hpp"
#include "vqbridge/objectives.hpp"
#include "vqbridge/quantizer.hpp"
#include "vqbridge/transformer.hpp"
#include "vqbridge/vocab.hpp"

namespace vqbridge {

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  int warmup_steps = 200;
  int tokens_per_step = 2048;
  int total_steps = 1000;

  void validate() const;
};

// Linear warmup to `lr` at warmup_steps, then lr * sqrt(warmup / step).
double lr_at(const OptimConfig& cfg, int step);

/// Adam with bias correction; no weight decay.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double beta1, double beta2, double eps);

  void step(double lr);
  void zero_grad();
  int steps() const { return t_; }

  std::vector<Parameter*>& params() { return params_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(int t) { t_ = t; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Everything a training run is parameterized by. Keys mirror the field
/// names; see configs/ for annotated examples.
struct RunConfig {
  ModelConfig model;
  ObjectiveConfig objective;
  OptimConfig optim;
  double temperature = 5.0;
  int max_len = 64;
  int micro_batch_sentences = 64;
  int checkpoint_every = 0;
  std::uint64_t seed = 1;

  // vocab_size is taken from the data, not from the file.
  static RunConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
  void validate() const;
};

/// Serialized training state: text header followed by a little-endian
/// float blob (f64 by default so resumed runs stay bit-exact; f32 for
/// compact export).
struct Checkpoint {
  RunConfig config;
  int step = 0;
  std::vector<std::string> vocab;
  std::vector<std::string> languages;
  std::map<std::string, std::string> rng;
  std::map<std::string, int> adam_steps;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

enum class StorageType { kF64, kF32 };

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, StorageType dtype = StorageType::kF64);
Checkpoint load_checkpoint(const std::string& path);

/// Model + codebook + vocabulary restored from a checkpoint.
struct TrainedSystem {
  RunConfig config;
  Vocab vocab;
  std::vector<std::string> languages;
  std::unique_ptr<Transformer> model;
  std::unique_ptr<Codebook> codebook;  // null when trained without quantizer

  static TrainedSystem from_checkpoint(const Checkpoint& ckpt);
  static TrainedSystem load(const std::string& path);
};

struct StepRecord {
  int step = 0;
  Phase phase = Phase::kJoint;
  std::string direction;
  int gate = -1;  // 1 quantized, 0 continuous, -1 no quantizer
  double lr = 0.0;
  int tokens = 0;
  LossBreakdown loss;
  std::vector<double> slice_entropy;
};

void write_metrics_header(std::ostream& os, int n_slices);
void write_metrics_row(std::ostream& os, const StepRecord& rec);

/// Single-threaded reference trainer. All randomness comes from streams
/// derived from the run seed, so a run is a pure function of (config, data).
class Trainer {
 public:
  Trainer(RunConfig cfg, const Dataset& data);

  // Restores parameters, optimizer moments, step counter and RNG streams.
  void restore(const Checkpoint& ckpt);
  Checkpoint checkpoint() const;

  StepRecord step();

  // Runs until `total_steps`, writing a metrics row per step and saving
  // checkpoints every `checkpoint_every` steps into `ckpt_dir` (if set).
  void train(int total_steps, std::ostream* metrics = nullptr, const std::string& ckpt_dir = {});

  int current_step() const { return step_; }
  const RunConfig& config() const { return cfg_; }
  Transformer& model() { return *model_; }
  Codebook* codebook() { return codebook_.get(); }
  LanguageClassifier* classifier() { return classifier_.get(); }
  const Dataset& data() const { return data_; }
  const std::string& last_checkpoint() const { return last_checkpoint_; }

 private:
  void init_codebook();
  Phase phase_for(int step) const;

  RunConfig cfg_;
  const Dataset& data_;
  std::unique_ptr<Transformer> model_;
  std::unique_ptr<Codebook> codebook_;
  std::unique_ptr<LanguageClassifier> classifier_;
  std::unique_ptr<Adam> model_opt_;
  std::unique_ptr<Adam> clf_opt_;
  std::unique_ptr<TemperatureSampler> sampler_;
  std::unique_ptr<DropoutSource> dropout_;
  std::mt19937_64 gate_rng_;
  std::mt19937_64 batch_rng_;
  int step_ = 0;
  std::string last_checkpoint_;
};

}  // namespace vqbridge
