// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "avsync/autodiff.hpp"
#include "avsync/param_store.hpp"

namespace avsync {

/// Builds a scalar loss on `tape` from the parameters in `store`. Must be
/// deterministic (no train-mode dropout).
using LossBuilder = std::function<Var(Tape& tape, const ParamStore& store)>;

struct GradCheckOptions {
  double step = 1e-3;
  /// Coordinates sampled per parameter tensor; tensors with fewer elements
  /// are checked exhaustively. 0 means every coordinate.
  std::size_t samples_per_tensor = 8;
  std::uint64_t seed = 0;
  /// Skip coordinates whose +-step stencil changes the sign of any relu
  /// input (the loss is not differentiable across the stencil there) and
  /// draw another coordinate of the same tensor instead.
  bool skip_kink_crossings = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  std::size_t skipped_kinks = 0;
};

/// |a - b| / max(1e-8, |a| + |b|)
double relative_error(double analytic, double numeric) noexcept;

/// Compares central differences (L(θ+h) - L(θ-h)) / 2h against `analytic`
/// (one tensor per store slot) on sampled coordinates. `store` is restored.
GradCheckResult grad_check_against(const LossBuilder& loss, ParamStore& store,
                                   const std::vector<Tensor>& analytic, const GradCheckOptions& opts = {});

/// Reverse-mode gradients of `loss` at the current parameters, without
/// touching the store's gradient buffers.
std::vector<Tensor> reverse_gradients(const LossBuilder& loss, const ParamStore& store);

/// reverse_gradients() checked against finite differences.
GradCheckResult grad_check(const LossBuilder& loss, ParamStore& store, const GradCheckOptions& opts = {});

}  // namespace avsync
