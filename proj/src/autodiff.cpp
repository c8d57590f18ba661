// SPDX-License-Identifier: Apache-2.0
#include "avsync/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "avsync/error.hpp"
#include "avsync/param_store.hpp"

namespace avsync {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  return push(std::move(n));
}

Var Tape::param(const ParamStore& store, std::size_t slot) {
  if (store_ == nullptr) {
    store_ = &store;
    param_nodes_.assign(store.size(), std::nullopt);
  } else if (store_ != &store) {
    throw ContractError("a tape can only bind parameters of one store");
  }
  if (slot >= param_nodes_.size()) throw RangeError("parameter slot out of range");
  if (param_nodes_[slot]) return Var(this, *param_nodes_[slot]);
  Node n;
  n.value = store.value(slot);
  n.requires_grad = record_;
  n.slot = slot;
  Var v = push(std::move(n));
  param_nodes_[slot] = v.id_;
  return v;
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (Var p : parents) {
      if (p.tape_ != this) throw ContractError("op mixes values from different tapes");
      n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
    }
    if (n.requires_grad) n.fn = std::move(fn);
  }
  return push(std::move(n));
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id_];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss, double seed) {
  if (loss.tape_ != this) throw ContractError("backward: loss belongs to another tape");
  if (nodes_[loss.id_].value.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(nodes_[loss.id_].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss)[0] = seed;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.fn || n.grad.empty()) continue;
    n.fn(*this, n.grad);
  }
}

void Tape::backward(Var loss, ParamStore& store, double seed) {
  if (store_ != nullptr && store_ != &store) {
    throw ContractError("backward: store differs from the one bound on this tape");
  }
  backward(loss, seed);
  for (std::size_t slot = 0; slot < param_nodes_.size(); ++slot) {
    if (!param_nodes_[slot]) continue;
    const Tensor& g = nodes_[*param_nodes_[slot]].grad;
    if (g.empty()) continue;
    Tensor& dst = store.grad(slot);
    for (std::size_t k = 0; k < g.numel(); ++k) dst[k] += g[k];
  }
}

void Tape::note_kinks(std::span<const double> relu_inputs) noexcept {
  std::uint64_t h = kink_signature_;
  for (double x : relu_inputs) {
    h = (h ^ (x > 0.0 ? 1u : 0u)) * 0x100000001b3ULL;
    kink_margin_ = std::min(kink_margin_, std::abs(x));
  }
  kink_signature_ = h;
}

}  // namespace avsync
