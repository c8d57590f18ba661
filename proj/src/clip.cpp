// SPDX-License-Identifier: Apache-2.0
#include "avsync/clip.hpp"

#include <algorithm>
#include <string>

#include "avsync/error.hpp"
#include "avsync/log.hpp"

namespace avsync {

ClipBlocks blockify(const AvClip& clip, std::size_t frames_per_block, std::size_t audio_per_block) {
  if (frames_per_block == 0 || audio_per_block == 0) throw ConfigError("blockify: block lengths must be positive");
  if (clip.visual.rank() != 4) throw DimensionError("blockify: visual must be [frames,H,W,C]");
  if (clip.audio.rank() != 2) throw DimensionError("blockify: audio must be [samples,1]");
  const std::size_t frames = clip.visual.extent(0);
  const std::size_t samples = clip.audio.extent(0);
  const std::size_t n = std::min(frames / frames_per_block, samples / audio_per_block);
  if (n == 0) {
    throw RangeError("blockify: clip with " + std::to_string(frames) + " frames and " + std::to_string(samples) +
                     " samples holds no full block");
  }
  ClipBlocks out;
  out.dropped_frames = frames - n * frames_per_block;
  out.dropped_samples = samples - n * audio_per_block;
  if (out.dropped_frames || out.dropped_samples) {
    warn("blockify: dropping " + std::to_string(out.dropped_frames) + " trailing frames and " +
         std::to_string(out.dropped_samples) + " trailing samples");
  }
  const Shape& vs = clip.visual.shape();
  const std::size_t frame_size = vs[1] * vs[2] * vs[3];
  const std::size_t audio_width = clip.audio.extent(1);
  for (std::size_t k = 0; k < n; ++k) {
    Tensor v = Tensor::zeros({frames_per_block, vs[1], vs[2], vs[3]});
    const double* src = clip.visual.raw() + k * frames_per_block * frame_size;
    std::copy(src, src + v.numel(), v.raw());
    out.visual.push_back(std::move(v));
    Tensor a = Tensor::zeros({audio_per_block, audio_width});
    const double* asrc = clip.audio.raw() + k * audio_per_block * audio_width;
    std::copy(asrc, asrc + a.numel(), a.raw());
    out.audio.push_back(std::move(a));
  }
  return out;
}

}  // namespace avsync
