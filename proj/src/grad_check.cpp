// SPDX-License-Identifier: Apache-2.0
#include "avsync/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "avsync/error.hpp"
#include "avsync/rng.hpp"

namespace avsync {
namespace {

struct Eval {
  double loss;
  std::uint64_t signature;
};

Eval eval_loss(const LossBuilder& loss, const ParamStore& store) {
  Tape tape(false);
  const double v = loss(tape, store).value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
  return Eval{v, tape.kink_signature()};
}

// Candidate coordinates in checking order: all of them, or a random
// permutation of which the first k usable ones are taken.
std::vector<std::size_t> candidate_order(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k == 0 || k >= n) return idx;
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  return idx;
}

// Bound on replacement draws per tensor so a kink-dense tensor cannot make
// the check quadratic.
constexpr std::size_t kMaxDrawsPerSample = 16;

}  // namespace

double relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

std::vector<Tensor> reverse_gradients(const LossBuilder& loss, const ParamStore& store) {
  Tape tape(true);
  Var l = loss(tape, store);
  if (!std::isfinite(l.value()[0])) throw NumericError("grad_check: loss is not finite");
  tape.backward(l, 1.0);
  std::vector<Tensor> grads;
  grads.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    // Slots the loss never touched get a fresh leaf with no gradient.
    Var p = tape.param(store, i);
    const Tensor& g = tape.grad(p);
    grads.push_back(g.empty() ? Tensor::zeros(store.value(i).shape()) : g);
  }
  return grads;
}

GradCheckResult grad_check_against(const LossBuilder& loss, ParamStore& store,
                                   const std::vector<Tensor>& analytic, const GradCheckOptions& opts) {
  if (analytic.size() != store.size()) throw DimensionError("grad_check: analytic gradient count mismatch");
  if (!(opts.step > 0.0)) throw ConfigError("grad_check: step must be positive");
  Rng rng(opts.seed);
  GradCheckResult result;
  const std::uint64_t base = eval_loss(loss, store).signature;
  for (std::size_t slot = 0; slot < store.size(); ++slot) {
    Tensor& theta = store.value(slot);
    if (analytic[slot].shape() != theta.shape()) {
      throw DimensionError("grad_check: analytic gradient shape mismatch for '" + store.name(slot) + "'");
    }
    const std::vector<std::size_t> order = candidate_order(theta.numel(), opts.samples_per_tensor, rng);
    const std::size_t k = opts.samples_per_tensor;
    const std::size_t wanted = k == 0 || k >= order.size() ? order.size() : k;
    const std::size_t max_draws = wanted * kMaxDrawsPerSample;
    std::size_t checked = 0;
    for (std::size_t d = 0; d < order.size() && d < max_draws && checked < wanted; ++d) {
      const std::size_t i = order[d];
      const double saved = theta[i];
      theta[i] = saved + opts.step;
      const Eval up = eval_loss(loss, store);
      theta[i] = saved - opts.step;
      const Eval down = eval_loss(loss, store);
      theta[i] = saved;
      if (opts.skip_kink_crossings && (up.signature != base || down.signature != base)) {
        ++result.skipped_kinks;
        continue;
      }
      ++checked;
      const double numeric = (up.loss - down.loss) / (2.0 * opts.step);
      const double a = analytic[slot][i];
      const double err = relative_error(a, numeric);
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = err;
        result.worst_param = store.name(slot);
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const LossBuilder& loss, ParamStore& store, const GradCheckOptions& opts) {
  return grad_check_against(loss, store, reverse_gradients(loss, store), opts);
}

}  // namespace avsync
