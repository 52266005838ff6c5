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
#include <random>
#include <string>

#include "vqbridge/tensor.hpp"

namespace vqbridge {

// splitmix64 mix of (seed, stream) so independent consumers never share draws.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

std::string rng_state(const std::mt19937_64& rng);
void set_rng_state(std::mt19937_64& rng, const std::string& state);

// Uniform draw in [0, 1) using the top 53 bits; independent of the
// standard library's distribution implementations.
double uniform01(std::mt19937_64& rng);
// Standard normal via Box-Muller on uniform01.
double normal01(std::mt19937_64& rng);

/// Produces inverted-dropout masks from a seeded generator.
class DropoutSource {
 public:
  explicit DropoutSource(std::uint64_t seed) : rng_(seed) {}

  // Entries are 0 with probability p, else 1/(1-p).
  Tensor mask(const Shape& shape, double p);

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace vqbridge
