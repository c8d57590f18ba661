// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "avsync/autodiff.hpp"
#include "avsync/clip.hpp"
#include "avsync/param_store.hpp"
#include "avsync/rng.hpp"

namespace avsync {

enum class Variant : std::uint8_t { uniform = 0, temporal = 1, spatiotemporal = 2 };

std::string_view variant_name(Variant v) noexcept;
/// Throws ConfigError for anything but uniform|temporal|spatiotemporal.
Variant parse_variant(std::string_view name);

/// Support of the spatio-temporal softmax: all N*H*W*T cells jointly, or
/// each block's H*W*T cells separately (then scaled by 1/N).
enum class StSoftmax : std::uint8_t { joint = 0, per_block = 1 };

/// Block geometry and layer widths. Defaults are the desk profile.
struct FusionConfig {
  std::size_t blocks = 5;             ///< N
  std::size_t frames_per_block = 8;   ///< T_in
  std::size_t frame_height = 32;      ///< H_in
  std::size_t frame_width = 32;       ///< W_in
  std::size_t frame_channels = 1;
  std::size_t audio_per_block = 256;  ///< L_a
  std::size_t feat_height = 4;        ///< H
  std::size_t feat_width = 4;         ///< W
  std::size_t feat_time = 2;          ///< T
  std::size_t visual_channels = 12;   ///< C_v
  std::size_t audio_channels = 4;     ///< C_a
  std::size_t joint_layers = 5;
  std::size_t attn_hidden_temporal = 128;
  std::size_t attn_hidden_spatiotemporal = 16;
  std::size_t decision_hidden = 512;
  double dropout_t = 0.5;
  double dropout_st = 0.4;
  StSoftmax st_softmax = StSoftmax::joint;

  std::size_t channels() const noexcept { return visual_channels + audio_channels; }
  std::size_t cells_per_block() const noexcept { return feat_height * feat_width * feat_time; }

  /// Range checks plus the backbone geometry: the fixed visual and audio
  /// conv stacks must map (T_in, H_in, W_in) and L_a onto exactly (T, H, W).
  void validate() const;

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

/// Visual backbone: 3x3x3 kernels, padding 1, these strides, widths
/// frame_channels -> 8 -> C_v -> C_v.
inline constexpr std::size_t kVisualHiddenChannels = 8;
/// Audio backbone: kernel 8 along time with (stride, pad) per layer,
/// widths 1 -> C_a -> C_a -> C_a.
struct AudioLayerGeometry {
  std::size_t stride;
  std::size_t pad;
};
inline constexpr std::size_t kAudioKernel = 8;

enum class AttentionKind : std::uint8_t { temporal, spatiotemporal };

/// Normalised attention weights of one clip.
///
/// Temporal maps have shape {N}; spatio-temporal maps {N, T, H, W}. Raw
/// confidences (pre-softmax scores) share the weight layout.
struct AttentionMap {
  AttentionKind kind = AttentionKind::temporal;
  Shape shape;
  std::vector<double> weights;
  std::vector<double> confidences;

  std::size_t blocks() const { return shape.empty() ? 0 : shape[0]; }
  /// Total weight per block (identity for temporal maps).
  std::vector<double> block_mass() const;
};

/// A sync classifier: its variant, geometry and parameters.
class SyncModel {
 public:
  /// Builds and initialises every parameter from `init_seed` (He-uniform
  /// weights in a fixed name order, zero biases, snapped to binary32).
  SyncModel(Variant variant, FusionConfig config, std::uint64_t init_seed);

  Variant variant() const noexcept { return variant_; }
  const FusionConfig& config() const noexcept { return config_; }
  std::uint64_t init_seed() const noexcept { return init_seed_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  /// Store slots of the attention scoring head (empty for uniform).
  std::vector<std::size_t> attention_slots() const;

 private:
  Variant variant_;
  FusionConfig config_;
  std::uint64_t init_seed_;
  ParamStore params_;
};

struct GraphOptions {
  /// Test hook: drop the relu after each backbone conv.
  bool backbone_relu = true;
};

struct Attended {
  Var weights;      ///< [N] or [N*H*W*T] (block-major, cells in h,w,t order)
  Var confidences;  ///< same layout as weights
  Var pooled;       ///< [C]
};

struct ClipForward {
  Var logits;  ///< [2]
  std::optional<AttentionMap> attention;
};

/// Records the sync network's forward pass on a tape.
class SyncGraph {
 public:
  SyncGraph(Tape& tape, const SyncModel& model, Mode mode, Rng* rng, GraphOptions options = {});

  /// [T_in, H_in, W_in, channels] -> [H, W, T, C_v]
  Var extract_visual(Var frames);
  /// [L_a, 1] -> [T, C_a]
  Var extract_audio(Var samples);
  /// Replicates audio over H*W, concatenates channels, applies the joint
  /// pointwise conv + relu layers: -> [H, W, T, C].
  Var fuse(Var visual, Var audio);
  Var encode_block(const Tensor& frames, const Tensor& samples);

  Attended attend_temporal(std::span<const Var> blocks);
  Attended attend_spatiotemporal(std::span<const Var> blocks);
  Var pool_uniform(std::span<const Var> blocks);
  /// dense(C -> hidden) + relu, dense(hidden -> 2); raw logits.
  Var decide(Var pooled);

  ClipForward forward(const AvClip& clip);

  Tape& tape() noexcept { return tape_; }

 private:
  Var p(std::size_t slot) { return tape_.param(model_.params(), slot); }
  Var p(const char* name) { return p(model_.params().index_of(name)); }

  Tape& tape_;
  const SyncModel& model_;
  Mode mode_;
  Rng* rng_;
  GraphOptions options_;
};

/// Converts an Attended result into an exported map.
AttentionMap to_attention_map(const Attended& attended, const FusionConfig& config, AttentionKind kind);

/// forward_clip: blockify, encode every block, pool per variant, decide.
ClipForward forward_clip(Tape& tape, const SyncModel& model, const AvClip& clip, Mode mode, Rng* rng);

/// Eval-mode logits and attention without recording gradients.
struct Inference {
  Tensor logits;
  std::optional<AttentionMap> attention;
};
Inference infer(const SyncModel& model, const AvClip& clip);

}  // namespace avsync
