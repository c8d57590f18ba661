// SPDX-License-Identifier: Apache-2.0
#include "avsync/model.hpp"

#include <array>
#include <cmath>
#include <string>

#include "avsync/error.hpp"
#include "avsync/ops.hpp"

namespace avsync {
namespace {

constexpr std::array<std::array<std::size_t, 3>, 3> kVisualStrides{{{1, 2, 2}, {2, 2, 2}, {2, 2, 2}}};
constexpr std::array<AudioLayerGeometry, 3> kAudioLayers{{{4, 2}, {4, 2}, {8, 0}}};

std::size_t conv_out(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad, const char* what) {
  if (n + 2 * pad < k) throw ConfigError(std::string("backbone: ") + what + " too short for the kernel");
  return (n + 2 * pad - k) / stride + 1;
}

void require_positive(std::size_t v, const char* key) {
  if (v == 0) throw ConfigError(std::string(key) + " must be at least 1");
}

void require_probability(double p, const char* key) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string(key) + " must be in [0,1)");
}

// He-uniform. With Glorot bounds the block features start near 1e-3, the
// scale of a single Adam step, and the first updates switch every joint
// relu off.
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

std::string_view variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::uniform:
      return "uniform";
    case Variant::temporal:
      return "temporal";
    case Variant::spatiotemporal:
      return "spatiotemporal";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "uniform") return Variant::uniform;
  if (name == "temporal") return Variant::temporal;
  if (name == "spatiotemporal") return Variant::spatiotemporal;
  throw ConfigError("unknown model variant '" + std::string(name) + "' (expected uniform|temporal|spatiotemporal)");
}

void FusionConfig::validate() const {
  require_positive(blocks, "blocks");
  require_positive(frames_per_block, "frames_per_block");
  require_positive(frame_height, "frame_height");
  require_positive(frame_width, "frame_width");
  require_positive(frame_channels, "frame_channels");
  require_positive(audio_per_block, "audio_per_block");
  require_positive(feat_height, "feat_height");
  require_positive(feat_width, "feat_width");
  require_positive(feat_time, "feat_time");
  require_positive(visual_channels, "visual_channels");
  require_positive(audio_channels, "audio_channels");
  require_positive(attn_hidden_temporal, "attn_hidden_temporal");
  require_positive(attn_hidden_spatiotemporal, "attn_hidden_spatiotemporal");
  require_positive(decision_hidden, "decision_hidden");
  require_probability(dropout_t, "dropout_t");
  require_probability(dropout_st, "dropout_st");
  if (audio_per_block % frames_per_block != 0) {
    throw ConfigError("audio_per_block must be a whole multiple of frames_per_block");
  }
  std::size_t t = frames_per_block, h = frame_height, w = frame_width;
  for (const auto& s : kVisualStrides) {
    t = conv_out(t, 3, s[0], 1, "frames_per_block");
    h = conv_out(h, 3, s[1], 1, "frame_height");
    w = conv_out(w, 3, s[2], 1, "frame_width");
  }
  if (t != feat_time || h != feat_height || w != feat_width) {
    throw ConfigError("visual backbone maps " + std::to_string(frames_per_block) + "x" + std::to_string(frame_height) +
                      "x" + std::to_string(frame_width) + " frames to T,H,W = " + std::to_string(t) + "," +
                      std::to_string(h) + "," + std::to_string(w) + ", configured feature extents are " +
                      std::to_string(feat_time) + "," + std::to_string(feat_height) + "," +
                      std::to_string(feat_width));
  }
  std::size_t a = audio_per_block;
  for (const auto& layer : kAudioLayers) a = conv_out(a, kAudioKernel, layer.stride, layer.pad, "audio_per_block");
  if (a != feat_time) {
    throw ConfigError("audio backbone maps " + std::to_string(audio_per_block) + " samples to T = " +
                      std::to_string(a) + ", configured feat_time is " + std::to_string(feat_time));
  }
}

std::vector<double> AttentionMap::block_mass() const {
  const std::size_t n = blocks();
  std::vector<double> mass(n, 0.0);
  if (n == 0) return mass;
  const std::size_t per = weights.size() / n;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < per; ++i) mass[b] += weights[b * per + i];
  }
  return mass;
}

SyncModel::SyncModel(Variant variant, FusionConfig config, std::uint64_t init_seed)
    : variant_(variant), config_(std::move(config)), init_seed_(init_seed) {
  config_.validate();
  Rng rng(init_seed);
  const FusionConfig& c = config_;
  auto conv = [&](const std::string& name, std::size_t kt, std::size_t kh, std::size_t kw, std::size_t cin,
                  std::size_t cout) {
    const std::size_t taps = kt * kh * kw;
    params_.add(name + ".weight", he_uniform({kt, kh, kw, cin, cout}, taps * cin, rng));
    params_.add(name + ".bias", Tensor::zeros({cout}));
  };
  auto linear = [&](const std::string& name, std::size_t cin, std::size_t cout) {
    params_.add(name + ".weight", he_uniform({cin, cout}, cin, rng));
    params_.add(name + ".bias", Tensor::zeros({cout}));
  };
  conv("visual.conv1", 3, 3, 3, c.frame_channels, kVisualHiddenChannels);
  conv("visual.conv2", 3, 3, 3, kVisualHiddenChannels, c.visual_channels);
  conv("visual.conv3", 3, 3, 3, c.visual_channels, c.visual_channels);
  conv("audio.conv1", kAudioKernel, 1, 1, 1, c.audio_channels);
  conv("audio.conv2", kAudioKernel, 1, 1, c.audio_channels, c.audio_channels);
  conv("audio.conv3", kAudioKernel, 1, 1, c.audio_channels, c.audio_channels);
  for (std::size_t i = 0; i < c.joint_layers; ++i) linear("joint." + std::to_string(i), c.channels(), c.channels());
  if (variant_ == Variant::temporal) {
    linear("attn.hidden", c.channels(), c.attn_hidden_temporal);
    linear("attn.score", c.attn_hidden_temporal, 1);
  } else if (variant_ == Variant::spatiotemporal) {
    linear("attn.hidden", c.channels(), c.attn_hidden_spatiotemporal);
    linear("attn.score", c.attn_hidden_spatiotemporal, 1);
  }
  linear("decision.hidden", c.channels(), c.decision_hidden);
  linear("decision.out", c.decision_hidden, 2);
  params_.round_to_binary32();
}

std::vector<std::size_t> SyncModel::attention_slots() const {
  std::vector<std::size_t> slots;
  for (const char* name : {"attn.hidden.weight", "attn.hidden.bias", "attn.score.weight", "attn.score.bias"}) {
    if (auto s = params_.find(name)) slots.push_back(*s);
  }
  return slots;
}

SyncGraph::SyncGraph(Tape& tape, const SyncModel& model, Mode mode, Rng* rng, GraphOptions options)
    : tape_(tape), model_(model), mode_(mode), rng_(rng), options_(options) {
  if (mode_ == Mode::train && rng_ == nullptr) throw ContractError("train-mode forward needs an rng");
}

Var SyncGraph::extract_visual(Var frames) {
  const FusionConfig& c = model_.config();
  const Shape expected{c.frames_per_block, c.frame_height, c.frame_width, c.frame_channels};
  if (frames.shape() != expected) {
    throw DimensionError("extract_visual: expected block " + shape_str(expected) + ", got " +
                         shape_str(frames.shape()));
  }
  Var x = frames;
  static constexpr const char* kNames[] = {"visual.conv1", "visual.conv2", "visual.conv3"};
  for (std::size_t i = 0; i < 3; ++i) {
    Conv3dOptions opts;
    opts.stride = kVisualStrides[i];
    opts.pad = {1, 1, 1};
    const std::string base = kNames[i];
    x = conv3d(x, p((base + ".weight").c_str()), p((base + ".bias").c_str()), opts);
    if (options_.backbone_relu) x = relu(x);
  }
  static constexpr std::array<std::size_t, 4> kToHwtc{1, 2, 0, 3};
  return permute(x, kToHwtc);
}

Var SyncGraph::extract_audio(Var samples) {
  const FusionConfig& c = model_.config();
  const Shape expected{c.audio_per_block, 1};
  if (samples.shape() != expected) {
    throw DimensionError("extract_audio: expected block " + shape_str(expected) + ", got " +
                         shape_str(samples.shape()));
  }
  Var x = reshape(samples, {c.audio_per_block, 1, 1, 1});
  static constexpr const char* kNames[] = {"audio.conv1", "audio.conv2", "audio.conv3"};
  for (std::size_t i = 0; i < 3; ++i) {
    Conv3dOptions opts;
    opts.stride = {kAudioLayers[i].stride, 1, 1};
    opts.pad = {kAudioLayers[i].pad, 0, 0};
    const std::string base = kNames[i];
    x = conv3d(x, p((base + ".weight").c_str()), p((base + ".bias").c_str()), opts);
    if (options_.backbone_relu) x = relu(x);
  }
  return reshape(x, {c.feat_time, c.audio_channels});
}

Var SyncGraph::fuse(Var visual, Var audio) {
  Var x = concat_replicated(visual, audio);
  for (std::size_t i = 0; i < model_.config().joint_layers; ++i) {
    const std::string base = "joint." + std::to_string(i);
    x = relu(pointwise_conv(x, p((base + ".weight").c_str()), p((base + ".bias").c_str())));
  }
  return x;
}

Var SyncGraph::encode_block(const Tensor& frames, const Tensor& samples) {
  Var v = extract_visual(tape_.constant(frames));
  Var a = extract_audio(tape_.constant(samples));
  return fuse(v, a);
}

Attended SyncGraph::attend_temporal(std::span<const Var> blocks) {
  if (blocks.empty()) throw RangeError("attend_temporal: clip has no blocks");
  if (model_.variant() != Variant::temporal) throw ContractError("attend_temporal: model has no temporal head");
  std::vector<Var> gaps;
  gaps.reserve(blocks.size());
  for (Var b : blocks) gaps.push_back(global_avg_pool(b));
  Var g = stack(gaps);
  Var h = relu(pointwise_conv(g, p("attn.hidden.weight"), p("attn.hidden.bias")));
  h = dropout(h, model_.config().dropout_t, mode_, rng_);
  Var c = reshape(pointwise_conv(h, p("attn.score.weight"), p("attn.score.bias")), {blocks.size()});
  Var w = softmax(c);
  return Attended{w, c, weighted_sum(g, w)};
}

Attended SyncGraph::attend_spatiotemporal(std::span<const Var> blocks) {
  if (blocks.empty()) throw RangeError("attend_spatiotemporal: clip has no blocks");
  if (model_.variant() != Variant::spatiotemporal) {
    throw ContractError("attend_spatiotemporal: model has no spatio-temporal head");
  }
  const FusionConfig& cfg = model_.config();
  const std::size_t n = blocks.size();
  const std::size_t cells = blocks[0].value().numel() / cfg.channels();
  Var f = reshape(stack(blocks), {n * cells, cfg.channels()});
  Var h = relu(pointwise_conv(f, p("attn.hidden.weight"), p("attn.hidden.bias")));
  h = dropout(h, cfg.dropout_st, mode_, rng_);
  Var c = reshape(pointwise_conv(h, p("attn.score.weight"), p("attn.score.bias")), {n * cells});
  Var w;
  if (cfg.st_softmax == StSoftmax::joint) {
    w = softmax(c);
  } else {
    w = reshape(scale(softmax(reshape(c, {n, cells})), 1.0 / static_cast<double>(n)), {n * cells});
  }
  return Attended{w, c, weighted_sum(f, w)};
}

Var SyncGraph::pool_uniform(std::span<const Var> blocks) {
  if (blocks.empty()) throw RangeError("pool_uniform: clip has no blocks");
  std::vector<Var> gaps;
  gaps.reserve(blocks.size());
  for (Var b : blocks) gaps.push_back(global_avg_pool(b));
  return global_avg_pool(stack(gaps));
}

Var SyncGraph::decide(Var pooled) {
  const std::size_t c = model_.config().channels();
  if (pooled.shape() != Shape{c}) {
    throw DimensionError("decide: expected pooled feature [" + std::to_string(c) + "], got " +
                         shape_str(pooled.shape()));
  }
  Var h = relu(dense(pooled, p("decision.hidden.weight"), p("decision.hidden.bias")));
  return dense(h, p("decision.out.weight"), p("decision.out.bias"));
}

ClipForward SyncGraph::forward(const AvClip& clip) {
  const FusionConfig& cfg = model_.config();
  const ClipBlocks parts = blockify(clip, cfg.frames_per_block, cfg.audio_per_block);
  if (parts.visual.size() != cfg.blocks) {
    throw DimensionError("forward_clip: clip has " + std::to_string(parts.visual.size()) +
                         " blocks, model expects " + std::to_string(cfg.blocks));
  }
  std::vector<Var> features;
  features.reserve(cfg.blocks);
  for (std::size_t i = 0; i < cfg.blocks; ++i) features.push_back(encode_block(parts.visual[i], parts.audio[i]));
  ClipForward out;
  switch (model_.variant()) {
    case Variant::uniform:
      out.logits = decide(pool_uniform(features));
      break;
    case Variant::temporal: {
      const Attended a = attend_temporal(features);
      out.logits = decide(a.pooled);
      out.attention = to_attention_map(a, cfg, AttentionKind::temporal);
      break;
    }
    case Variant::spatiotemporal: {
      const Attended a = attend_spatiotemporal(features);
      out.logits = decide(a.pooled);
      out.attention = to_attention_map(a, cfg, AttentionKind::spatiotemporal);
      break;
    }
  }
  return out;
}

AttentionMap to_attention_map(const Attended& attended, const FusionConfig& config, AttentionKind kind) {
  AttentionMap map;
  map.kind = kind;
  const Tensor& w = attended.weights.value();
  const Tensor& c = attended.confidences.value();
  if (kind == AttentionKind::temporal) {
    map.shape = {w.numel()};
    map.weights.assign(w.data().begin(), w.data().end());
    map.confidences.assign(c.data().begin(), c.data().end());
    return map;
  }
  const std::size_t H = config.feat_height, W = config.feat_width, T = config.feat_time;
  const std::size_t cells = H * W * T;
  const std::size_t n = w.numel() / cells;
  map.shape = {n, T, H, W};
  map.weights.resize(w.numel());
  map.confidences.resize(c.numel());
  // internal cell order is (h, w, t); exported order is (t, h, w)
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t src = b * cells + (h * W + x) * T + t;
          const std::size_t dst = b * cells + (t * H + h) * W + x;
          map.weights[dst] = w[src];
          map.confidences[dst] = c[src];
        }
      }
    }
  }
  return map;
}

ClipForward forward_clip(Tape& tape, const SyncModel& model, const AvClip& clip, Mode mode, Rng* rng) {
  SyncGraph graph(tape, model, mode, rng);
  return graph.forward(clip);
}

Inference infer(const SyncModel& model, const AvClip& clip) {
  Tape tape(false);
  ClipForward f = forward_clip(tape, model, clip, Mode::eval, nullptr);
  return Inference{f.logits.value(), std::move(f.attention)};
}

}  // namespace avsync
