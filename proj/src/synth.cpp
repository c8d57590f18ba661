// SPDX-License-Identifier: Apache-2.0
#include "avsync/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "avsync/error.hpp"

namespace avsync {
namespace {

void require_probability(double p, const char* key) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(key) + " must be in [0,1]");
}

void require_nonnegative(double v, const char* key) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(key) + " must be finite and >= 0");
}

struct Painter {
  const FusionConfig& geo;
  std::size_t spf;
  std::vector<double>& visual;
  std::vector<double>& audio;

  void square(std::size_t first_frame, std::size_t frames, std::size_t row, std::size_t col, std::size_t side,
              double intensity) {
    const std::size_t H = geo.frame_height, W = geo.frame_width, C = geo.frame_channels;
    for (std::size_t f = first_frame; f < first_frame + frames; ++f) {
      for (std::size_t y = row; y < row + side; ++y) {
        for (std::size_t x = col; x < col + side; ++x) {
          for (std::size_t c = 0; c < C; ++c) visual[((f * H + y) * W + x) * C + c] += intensity;
        }
      }
    }
  }

  void click(std::size_t onset_frame, std::size_t decay, double intensity) {
    const std::size_t onset = onset_frame * spf;
    for (std::size_t j = 0; j < decay && onset + j < audio.size(); ++j) {
      audio[onset + j] += intensity * std::exp(-static_cast<double>(j) / static_cast<double>(decay));
    }
  }
};

AvClip window(const AvStream& stream, std::size_t visual_block, std::size_t audio_block, std::size_t n,
              const FusionConfig& geo) {
  const Shape& vs = stream.visual.shape();
  const std::size_t frame_size = vs[1] * vs[2] * vs[3];
  AvClip clip;
  clip.visual = Tensor::zeros({n * geo.frames_per_block, vs[1], vs[2], vs[3]});
  const double* vsrc = stream.visual.raw() + visual_block * geo.frames_per_block * frame_size;
  std::copy(vsrc, vsrc + clip.visual.numel(), clip.visual.raw());
  clip.audio = Tensor::zeros({n * geo.audio_per_block, 1});
  const std::size_t a0 = audio_block * geo.audio_per_block;
  if (audio_block == visual_block || stream.audio_ambient.empty()) {
    const double* asrc = stream.audio.raw() + a0;
    std::copy(asrc, asrc + clip.audio.numel(), clip.audio.raw());
  } else {
    // shifted content under the ambient of the aligned window
    const double* content = stream.audio_content.raw() + a0;
    const double* ambient = stream.audio_ambient.raw() + visual_block * geo.audio_per_block;
    for (std::size_t i = 0; i < clip.audio.numel(); ++i) clip.audio[i] = content[i] + ambient[i];
    clip.audio.round_to_binary32();
  }
  clip.block_discriminative.assign(n, false);
  for (const StreamEvent& e : stream.events) {
    if (e.kind == EventKind::av && e.block >= visual_block && e.block < visual_block + n) {
      clip.block_discriminative[e.block - visual_block] = true;
    }
  }
  return clip;
}

bool shift_fits(std::size_t t0, long long delta, std::size_t n, std::size_t stream_blocks) {
  const long long start = static_cast<long long>(t0) + delta;
  return start >= 0 && start + static_cast<long long>(n) <= static_cast<long long>(stream_blocks);
}

bool any_shift_fits(std::size_t t0, std::size_t n, const SyntheticConfig& config) {
  for (std::size_t mag = config.min_shift; mag <= config.max_shift; ++mag) {
    const long long d = static_cast<long long>(mag);
    if (shift_fits(t0, d, n, config.stream_blocks)) return true;
    if (config.bidirectional_shift && shift_fits(t0, -d, n, config.stream_blocks)) return true;
  }
  return false;
}

}  // namespace

void SyntheticConfig::validate(const FusionConfig& geometry) const {
  require_probability(p_event, "p_event");
  require_probability(p_visual_distractor, "p_visual_distractor");
  require_probability(p_audio_distractor, "p_audio_distractor");
  require_nonnegative(noise_amplitude, "noise_amplitude");
  require_nonnegative(event_intensity, "event_intensity");
  require_nonnegative(distractor_intensity, "distractor_intensity");
  require_nonnegative(ambient_amplitude, "ambient_amplitude");
  if (ambient_period_frames == 0) throw ConfigError("ambient_period_frames must be at least 1");
  if (square_side == 0 || square_side > geometry.frame_height || square_side > geometry.frame_width) {
    throw ConfigError("square_side must be in [1, frame extent]");
  }
  if (event_frames == 0 || event_frames > geometry.frames_per_block) {
    throw ConfigError("event_frames must be in [1, frames_per_block]");
  }
  if (click_decay == 0) throw ConfigError("click_decay must be at least 1");
  if (stream_blocks <= geometry.blocks) throw ConfigError("stream_blocks must exceed blocks");
  if (min_shift == 0 || min_shift > max_shift || max_shift >= stream_blocks - geometry.blocks) {
    throw ConfigError("shift range needs 0 < min_shift <= max_shift < stream_blocks - blocks (" +
                      std::to_string(min_shift) + ".." + std::to_string(max_shift) + " with S=" +
                      std::to_string(stream_blocks) + ", N=" + std::to_string(geometry.blocks) + ")");
  }
}

std::size_t samples_per_frame(const FusionConfig& geometry) {
  return geometry.audio_per_block / geometry.frames_per_block;
}

AvStream gen_stream(const SyntheticConfig& config, const FusionConfig& geometry, std::uint64_t seed) {
  geometry.validate();
  config.validate(geometry);
  const std::size_t S = config.stream_blocks;
  const std::size_t T_in = geometry.frames_per_block;
  const std::size_t spf = samples_per_frame(geometry);
  const std::size_t frames = S * T_in;
  const std::size_t frame_size = geometry.frame_height * geometry.frame_width * geometry.frame_channels;
  std::vector<double> visual(frames * frame_size, 0.0);
  std::vector<double> audio(S * geometry.audio_per_block, 0.0);
  Painter paint{geometry, spf, visual, audio};

  Rng rng(seed);
  AvStream stream;
  stream.blocks = S;
  stream.seed = seed;
  const std::size_t offsets = T_in - config.event_frames + 1;
  const std::size_t rows = geometry.frame_height - config.square_side + 1;
  const std::size_t cols = geometry.frame_width - config.square_side + 1;
  for (std::size_t k = 0; k < S; ++k) {
    if (rng.bernoulli(config.p_event)) {
      StreamEvent e{k, EventKind::av, rng.below(offsets), rng.below(rows), rng.below(cols)};
      paint.square(k * T_in + e.frame_offset, config.event_frames, e.row, e.col, config.square_side,
                   config.event_intensity);
      paint.click(k * T_in + e.frame_offset, config.click_decay, config.event_intensity);
      stream.events.push_back(e);
    }
    if (rng.bernoulli(config.p_visual_distractor)) {
      StreamEvent e{k, EventKind::visual_only, rng.below(offsets), rng.below(rows), rng.below(cols)};
      paint.square(k * T_in + e.frame_offset, config.event_frames, e.row, e.col, config.square_side,
                   config.distractor_intensity);
      stream.events.push_back(e);
    }
    if (rng.bernoulli(config.p_audio_distractor)) {
      StreamEvent e{k, EventKind::audio_only, rng.below(offsets), 0, 0};
      paint.click(k * T_in + e.frame_offset, config.click_decay, config.distractor_intensity);
      stream.events.push_back(e);
    }
  }
  if (config.noise_amplitude > 0.0) {
    for (double& v : visual) v += rng.uniform(0.0, config.noise_amplitude);
    for (double& v : audio) v += rng.uniform(0.0, config.noise_amplitude);
  }
  Tensor audio_shape = Tensor::zeros({S * geometry.audio_per_block, 1});
  stream.audio_content = Tensor(audio_shape.shape(), audio);
  if (config.ambient == Ambient::correlated && config.ambient_amplitude > 0.0) {
    stream.audio_ambient = std::move(audio_shape);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double omega = 2.0 * std::numbers::pi / static_cast<double>(config.ambient_period_frames);
    for (std::size_t f = 0; f < frames; ++f) {
      const double level = config.ambient_amplitude * std::sin(omega * static_cast<double>(f) + phase);
      for (std::size_t i = 0; i < frame_size; ++i) visual[f * frame_size + i] += level;
    }
    const double omega_audio = omega / static_cast<double>(spf);
    for (std::size_t s = 0; s < audio.size(); ++s) {
      const double level = config.ambient_amplitude * std::sin(omega_audio * static_cast<double>(s) + phase);
      stream.audio_ambient[s] = level;
      audio[s] += level;
    }
  }
  stream.visual = Tensor({frames, geometry.frame_height, geometry.frame_width, geometry.frame_channels},
                         std::move(visual));
  stream.audio = Tensor({S * geometry.audio_per_block, 1}, std::move(audio));
  stream.visual.round_to_binary32();
  stream.audio.round_to_binary32();
  return stream;
}

AvClip cut_positive(const AvStream& stream, std::size_t t0, std::size_t n, const FusionConfig& geometry) {
  if (n == 0 || t0 + n > stream.blocks) {
    throw RangeError("cut_positive: window [" + std::to_string(t0) + ", " + std::to_string(t0 + n) +
                     ") outside a stream of " + std::to_string(stream.blocks) + " blocks");
  }
  AvClip clip = window(stream, t0, t0, n, geometry);
  clip.label = 1;
  clip.shift_blocks = 0;
  return clip;
}

AvClip make_negative(const AvStream& stream, std::size_t t0, std::size_t n, const SyntheticConfig& config,
                     const FusionConfig& geometry, Rng& rng) {
  if (n == 0 || t0 + n > stream.blocks) {
    throw RangeError("make_negative: window [" + std::to_string(t0) + ", " + std::to_string(t0 + n) +
                     ") outside a stream of " + std::to_string(stream.blocks) + " blocks");
  }
  if (config.min_shift == 0 || config.min_shift > config.max_shift) {
    throw ConfigError("make_negative: need 0 < min_shift <= max_shift");
  }
  SyntheticConfig bounds = config;
  bounds.stream_blocks = stream.blocks;
  if (!any_shift_fits(t0, n, bounds)) {
    throw RangeError("make_negative: no shift in [" + std::to_string(config.min_shift) + ", " +
                     std::to_string(config.max_shift) + "] keeps the audio window inside the stream");
  }
  const std::uint64_t span = config.max_shift - config.min_shift + 1;
  long long delta = 0;
  do {
    delta = static_cast<long long>(config.min_shift + rng.below(span));
    if (config.bidirectional_shift && rng.below(2) == 1) delta = -delta;
  } while (!shift_fits(t0, delta, n, stream.blocks));
  AvClip clip = window(stream, t0, static_cast<std::size_t>(static_cast<long long>(t0) + delta), n, geometry);
  clip.label = 0;
  clip.shift_blocks = static_cast<int>(delta);
  return clip;
}

DatasetSplit build_split(const SyntheticConfig& config, const FusionConfig& geometry, std::size_t count,
                         std::uint64_t split_seed) {
  if (count < 2 || count % 2 != 0) {
    throw ConfigError("dataset split size must be even and at least 2, got " + std::to_string(count));
  }
  geometry.validate();
  config.validate(geometry);
  std::vector<std::size_t> starts;
  for (std::size_t t0 = 0; t0 + geometry.blocks <= config.stream_blocks; ++t0) {
    if (any_shift_fits(t0, geometry.blocks, config)) starts.push_back(t0);
  }
  if (starts.empty()) throw ConfigError("no clip start admits a negative shift");
  Rng rng(split_seed);
  DatasetSplit split;
  split.clips.reserve(count);
  for (std::size_t i = 0; i < count / 2; ++i) {
    const std::uint64_t stream_seed = rng.next();
    const AvStream stream = gen_stream(config, geometry, stream_seed);
    const std::size_t t0 = starts[rng.below(starts.size())];
    split.clips.push_back(cut_positive(stream, t0, geometry.blocks, geometry));
    split.clips.push_back(make_negative(stream, t0, geometry.blocks, config, geometry, rng));
    split.stream_seeds.push_back(stream_seed);
  }
  for (std::size_t i = split.clips.size() - 1; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(split.clips[i], split.clips[j]);
  }
  return split;
}

Dataset build_dataset(const SyntheticConfig& config, const FusionConfig& geometry, std::size_t n_train,
                      std::size_t n_test, std::uint64_t seed) {
  Dataset ds;
  ds.train = build_split(config, geometry, n_train, seed);
  ds.test = build_split(config, geometry, n_test, seed + 1);
  return ds;
}

AvClip noise_clip(const FusionConfig& geometry, Rng& rng, int label) {
  AvClip clip;
  clip.visual = Tensor::zeros(
      {geometry.blocks * geometry.frames_per_block, geometry.frame_height, geometry.frame_width, geometry.frame_channels});
  for (double& v : clip.visual.data()) v = rng.uniform();
  clip.audio = Tensor::zeros({geometry.blocks * geometry.audio_per_block, 1});
  for (double& v : clip.audio.data()) v = rng.uniform();
  clip.label = label;
  clip.shift_blocks = label == 1 ? 0 : static_cast<int>(geometry.blocks);
  clip.block_discriminative.assign(geometry.blocks, false);
  return clip;
}

}  // namespace avsync
