// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "avsync/tensor.hpp"

namespace avsync {

class ParamStore;
class Tape;

enum class Mode { train, eval };

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning Tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) noexcept : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode autodiff tape. Every op appends one node holding its forward
/// value and, when any input needs a gradient, a closure that scatters the
/// output gradient into its inputs. backward() replays the closures in
/// reverse recording order, which is a valid topological order.
class Tape {
 public:
  /// Receives the gradient of the node's output and accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  /// With `record` false no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Free leaf that receives a gradient (tests, probes).
  Var variable(Tensor value);
  /// Leaf bound to slot `slot` of `store`; repeated calls return the same node.
  Var param(const ParamStore& store, std::size_t slot);

  /// Appends an op node. `fn` is dropped when no parent requires a gradient.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }

  const Tensor& value(Var v) const { return nodes_[v.id_].value; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulated by the last backward(); empty when unreachable.
  const Tensor& grad(Var v) const { return nodes_[v.id_].grad; }
  /// Gradient buffer of `v`, zero-initialised on first use (for BackwardFn).
  Tensor& grad_buffer(Var v);

  /// Reverse sweep from a scalar `loss` seeded with `seed`. Gradients of
  /// store-bound leaves are added into `store`'s gradient tensors.
  void backward(Var loss, double seed = 1.0);
  void backward(Var loss, ParamStore& store, double seed = 1.0);

  /// Folds the sign pattern of a relu input into the tape's kink signature
  /// and tracks the smallest |input| seen. Two forwards with equal
  /// signatures took the same linear piece of every relu.
  void note_kinks(std::span<const double> relu_inputs) noexcept;
  std::uint64_t kink_signature() const noexcept { return kink_signature_; }
  double kink_margin() const noexcept { return kink_margin_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn fn;
    bool requires_grad = false;
    std::optional<std::size_t> slot;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  const ParamStore* store_ = nullptr;
  std::vector<std::optional<std::size_t>> param_nodes_;
  bool record_;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace avsync
