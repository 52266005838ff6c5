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

#include "vqbridge/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "vqbridge/error.hpp"

namespace vqbridge {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ContractViolation("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ContractViolation("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                            shape_str(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  grad.fill(0.0);
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Shape& Var::shape() const { return tape_->value(id_).shape(); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Var v = push(std::move(value), requires_grad && record_, nullptr);
  nodes_.back().is_leaf = true;
  return v;
}

Var Tape::param(Parameter& p, bool trainable) {
  Var v = leaf(p.value, trainable);
  nodes_.back().param = &p;
  return v;
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad && record_;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& loss) {
  if (!record_) throw ContractViolation("backward: tape was created without recording");
  if (&loss.tape() != this) throw ContractViolation("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ContractViolation("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  for (auto& n : nodes_) {
    if (!n.is_leaf || n.param != nullptr) n.grad.clear();
  }
  Node& root = nodes_[static_cast<std::size_t>(loss.id())];
  if (!root.requires_grad) return;
  if (root.grad.empty()) root.grad.assign(1, 0.0);
  root.grad[0] += 1.0;

  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    Parameter& p = *n.param;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    double* g = p.grad.data();
    for (std::size_t k = 0; k < n.grad.size(); ++k) g[k] += n.grad[k];
    n.grad.clear();
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

std::span<double> Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::span<const double> Tape::out_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

}  // namespace vqbridge
