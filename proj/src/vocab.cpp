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

#include "vqbridge/vocab.hpp"

#include "vqbridge/error.hpp"

namespace vqbridge {

Vocab::Vocab() {
  for (const char* s : {"<pad>", "<s>", "</s>", "<unk>"}) add(s);
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw ContractViolation("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::lang_tag(std::string_view lang) { return "<2" + std::string(lang) + ">"; }

int Vocab::lang_tag_id(std::string_view lang) const {
  auto it = index_.find(lang_tag(lang));
  if (it == index_.end()) throw ContractViolation("vocab: no language tag for '" + std::string(lang) + "'");
  return it->second;
}

}  // namespace vqbridge
