// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "avsync/autodiff.hpp"
#include "avsync/rng.hpp"
#include "avsync/tensor.hpp"

namespace avsync {

/// Stride and symmetric zero padding per (time, height, width) axis.
struct Conv3dOptions {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
};

/// Forward-only kernels on plain tensors. The Var ops below wrap them and add
/// the backward pass.
namespace kernels {

/// input [T,H,W,Cin], kernel [kt,kh,kw,Cin,Cout], bias [Cout] -> [T',H',W',Cout]
/// with T' = (T + 2*pt - kt)/st + 1 (and likewise H', W'). Accumulation runs
/// bias first, then taps in (dt,dh,dw,ci) row-major order.
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, const Conv3dOptions& opts);

/// Affine map of the trailing channel axis: [...,Cin] x [Cin,Cout] + [Cout].
Tensor pointwise_conv(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Softmax along the last axis, each row max-shifted before exponentiation.
Tensor softmax(const Tensor& scores);

}  // namespace kernels

Var conv3d(Var input, Var kernel, Var bias, const Conv3dOptions& opts = {});
Var pointwise_conv(Var input, Var weight, Var bias);
/// pointwise_conv restricted to a rank-1 input.
Var dense(Var input, Var weight, Var bias);
Var relu(Var x);
/// Inverted dropout: in train mode each element is kept with probability
/// 1-p and scaled by 1/(1-p). Eval mode (or p == 0) returns `x` unchanged
/// and draws nothing from `rng`.
Var dropout(Var x, double p, Mode mode, Rng* rng);
/// Mean over every axis but the last: [..., C] -> [C].
Var global_avg_pool(Var x);
/// Softmax along the last axis; rows are independent.
Var softmax(Var scores);
/// features [K,C], weights [K] -> sum_k weights[k] * features[k].
Var weighted_sum(Var features, Var weights);
Var weighted_sum(std::span<const Var> features, Var weights);
/// -log softmax(logits)[label] for two logits and label in {0,1}; shape [1].
Var cross_entropy(Var logits, int label);

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// Sum of all elements; shape [1].
Var sum(Var x);
Var reshape(Var x, Shape shape);
/// Axis permutation: output axis i is input axis axes[i].
Var permute(Var x, std::span<const std::size_t> axes);
/// K equally shaped tensors -> [K, ...].
Var stack(std::span<const Var> xs);
/// visual [H,W,T,Cv] and audio [T,Ca] -> [H,W,T,Cv+Ca]; the audio vector of
/// step t is replicated into every spatial cell of step t.
Var concat_replicated(Var visual, Var audio);

}  // namespace avsync
