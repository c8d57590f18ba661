// SPDX-License-Identifier: Apache-2.0
#include "avsync/param_store.hpp"

#include <algorithm>
#include <cmath>

#include "avsync/error.hpp"

namespace avsync {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

std::size_t ParamStore::add(std::string name, Tensor init) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  if (init.empty()) throw DimensionError("parameter '" + name + "' is empty");
  if (!init.all_finite()) throw NumericError("parameter '" + name + "' is not finite");
  grads_.push_back(Tensor::zeros(init.shape()));
  first_.push_back(Tensor::zeros(init.shape()));
  second_.push_back(Tensor::zeros(init.shape()));
  values_.push_back(std::move(init));
  names_.push_back(std::move(name));
  return values_.size() - 1;
}

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t ParamStore::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

void ParamStore::restore_optimizer_state(std::uint64_t step, std::vector<Tensor> first,
                                         std::vector<Tensor> second) {
  if (first.size() != size() || second.size() != size()) {
    throw DimensionError("optimizer state has the wrong number of entries");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (first[i].shape() != values_[i].shape() || second[i].shape() != values_[i].shape()) {
      throw DimensionError("optimizer state shape mismatch for '" + names_[i] + "'");
    }
  }
  step_ = step;
  first_ = std::move(first);
  second_ = std::move(second);
}

void ParamStore::zero_grad() {
  for (auto& g : grads_) std::fill(g.data().begin(), g.data().end(), 0.0);
}

void ParamStore::round_to_binary32() {
  for (auto& v : values_) v.round_to_binary32();
}

void adam_step(ParamStore& store, const AdamConfig& config) {
  config.validate();
  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double correct1 = 1.0 - std::pow(config.beta1, t);
  const double correct2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < store.size(); ++i) {
    double* theta = store.values_[i].raw();
    const double* g = store.grads_[i].raw();
    double* m = store.first_[i].raw();
    double* v = store.second_[i].raw();
    const std::size_t n = store.values_[i].numel();
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correct1;
      const double v_hat = v[k] / correct2;
      theta[k] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
  store.zero_grad();
}

}  // namespace avsync
