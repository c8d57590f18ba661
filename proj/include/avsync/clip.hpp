// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "avsync/tensor.hpp"

namespace avsync {

/// Paired visual and audio windows with their sync label.
struct AvClip {
  Tensor visual;  ///< [frames, H_in, W_in, channels]
  Tensor audio;   ///< [samples, 1]
  int label = 1;  ///< 1 = sync, 0 = un-sync
  /// Audio offset in blocks relative to the visual window; 0 for positives.
  int shift_blocks = 0;
  /// Per block: an audio-visual event is present in the visual window.
  std::vector<bool> block_discriminative;

  friend bool operator==(const AvClip&, const AvClip&) = default;
};

struct ClipBlocks {
  std::vector<Tensor> visual;  ///< each [T_in, H_in, W_in, channels]
  std::vector<Tensor> audio;   ///< each [L_a, 1]
  std::size_t dropped_frames = 0;
  std::size_t dropped_samples = 0;
};

/// Splits a clip into index-aligned non-overlapping blocks. A trailing
/// remainder that does not fill a whole block is dropped with a warning.
/// Throws RangeError when not even one full block fits.
ClipBlocks blockify(const AvClip& clip, std::size_t frames_per_block, std::size_t audio_per_block);

}  // namespace avsync
