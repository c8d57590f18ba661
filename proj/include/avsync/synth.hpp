// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "avsync/clip.hpp"
#include "avsync/model.hpp"
#include "avsync/rng.hpp"
#include "avsync/tensor.hpp"

namespace avsync {

enum class Ambient : std::uint8_t { none = 0, correlated = 1 };

enum class EventKind : std::uint8_t { av = 0, visual_only = 1, audio_only = 2 };

/// One planted event. Audio-only events carry no spatial cell (row/col 0).
struct StreamEvent {
  std::size_t block = 0;
  EventKind kind = EventKind::av;
  std::size_t frame_offset = 0;  ///< first frame within the block
  std::size_t row = 0;           ///< top-left pixel of the square
  std::size_t col = 0;

  friend bool operator==(const StreamEvent&, const StreamEvent&) = default;
};

/// Parameters of the synthetic event world and of negative sampling.
struct SyntheticConfig {
  std::size_t stream_blocks = 16;  ///< S
  double p_event = 0.3;
  double p_visual_distractor = 0.2;
  double p_audio_distractor = 0.2;
  Ambient ambient = Ambient::correlated;
  double noise_amplitude = 0.05;
  double event_intensity = 1.0;
  double distractor_intensity = 0.6;
  std::size_t square_side = 6;
  std::size_t event_frames = 2;
  std::size_t click_decay = 16;
  double ambient_amplitude = 0.1;
  std::size_t ambient_period_frames = 64;
  std::size_t min_shift = 3;
  std::size_t max_shift = 7;
  bool bidirectional_shift = true;

  /// Throws ConfigError on out-of-range values or when the geometry cannot
  /// host events or shifted windows (needs 0 < min <= max < S - N).
  void validate(const FusionConfig& geometry) const;

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

/// A long synthetic recording from which clips are cut.
struct AvStream {
  Tensor visual;  ///< [S*T_in, H_in, W_in, channels]
  Tensor audio;   ///< [S*L_a, 1]
  /// Unrounded audio split into events plus noise and the ambient sinusoid
  /// (empty without ambient); audio is their binary32-rounded sum.
  Tensor audio_content;
  Tensor audio_ambient;
  std::size_t blocks = 0;
  std::vector<StreamEvent> events;
  std::uint64_t seed = 0;
};

std::size_t samples_per_frame(const FusionConfig& geometry);

/// Generates a stream. Per block, independently: an audio-visual event
/// (square flash plus a click whose onset sample is 32x its onset frame for
/// the desk profile), a visual-only flash, an audio-only click; then uniform
/// noise in [0, amplitude] on both modalities and, in correlated mode, one
/// low-frequency sinusoid shared by both. Values are binary32-representable.
AvStream gen_stream(const SyntheticConfig& config, const FusionConfig& geometry, std::uint64_t seed);

/// Aligned window of N blocks starting at block t0; label 1.
AvClip cut_positive(const AvStream& stream, std::size_t t0, std::size_t n, const FusionConfig& geometry);

/// Visual window at t0 with the audio window moved by a random whole number
/// of blocks, |shift| uniform in [min_shift, max_shift], sign uniform when
/// bidirectional; shifts leaving the stream are redrawn. Label 0.
/// Only the audio content moves: the ambient component stays the one of the
/// aligned window, so it is identical in both clips cut at t0.
AvClip make_negative(const AvStream& stream, std::size_t t0, std::size_t n, const SyntheticConfig& config,
                     const FusionConfig& geometry, Rng& rng);

struct DatasetSplit {
  std::vector<AvClip> clips;
  std::vector<std::uint64_t> stream_seeds;
};

struct Dataset {
  DatasetSplit train;
  DatasetSplit test;
};

/// Train split derives its stream seeds from `seed`, test from `seed + 1`.
/// Each stream yields one positive and one negative cut at the same t0;
/// clip order is then shuffled from the split's generator.
Dataset build_dataset(const SyntheticConfig& config, const FusionConfig& geometry, std::size_t n_train,
                      std::size_t n_test, std::uint64_t seed);

DatasetSplit build_split(const SyntheticConfig& config, const FusionConfig& geometry, std::size_t count,
                         std::uint64_t split_seed);

/// Clip of N blocks filled with uniform [0,1) values on both modalities and
/// no discriminative blocks. Used for gradient checks and invariance probes.
AvClip noise_clip(const FusionConfig& geometry, Rng& rng, int label = 1);

}  // namespace avsync
