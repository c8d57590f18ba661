// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avsync/tensor.hpp"

namespace avsync {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Throws ConfigError unless lr > 0, betas in [0,1) and eps > 0.
  void validate() const;
};

/// Ordered named parameters with a same-shaped gradient each and the Adam
/// moment estimates. One step counter is shared by all entries.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor init);

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t scalar_count() const noexcept;
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const Tensor& value(std::size_t i) const { return values_.at(i); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& grad(std::size_t i) const { return grads_.at(i); }
  Tensor& grad(std::size_t i) { return grads_.at(i); }
  std::span<Tensor> grads() noexcept { return grads_; }
  std::span<const Tensor> values() const noexcept { return values_; }

  const Tensor& first_moment(std::size_t i) const { return first_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return second_.at(i); }
  std::uint64_t step() const noexcept { return step_; }
  void restore_optimizer_state(std::uint64_t step, std::vector<Tensor> first, std::vector<Tensor> second);

  void zero_grad();
  /// Snaps every parameter to the nearest binary32 value (storage precision).
  void round_to_binary32();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::uint64_t step_ = 0;

  friend void adam_step(ParamStore& store, const AdamConfig& config);
};

/// One bias-corrected Adam update over every parameter, then clears the
/// gradients. The step counter is incremented before use.
void adam_step(ParamStore& store, const AdamConfig& config);

}  // namespace avsync
