// SPDX-License-Identifier: Apache-2.0
#include "avsync/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "avsync/error.hpp"
#include "avsync/ops.hpp"
#include "avsync/param_store.hpp"
#include "avsync/rng.hpp"
#include "avsync/synth.hpp"

namespace avsync {
namespace {

// -log softmax(logits)[label] and P(sync) for a two-logit output.
struct TwoWay {
  double loss;
  double sync_score;
  int predicted;
};

TwoWay two_way(const Tensor& logits, int label) {
  const double a = logits[0], b = logits[1];
  const double m = std::max(a, b);
  const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
  const double chosen = label == 1 ? b : a;
  return TwoWay{lse - chosen, std::exp(b - lse), b > a ? 1 : 0};
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (eval_every == 0) throw ConfigError("eval_every must be at least 1");
}

EvalResult evaluate(const SyncModel& model, const std::vector<AvClip>& clips) {
  if (clips.empty()) throw ConfigError("evaluate: empty dataset");
  EvalResult r;
  r.scores.reserve(clips.size());
  r.predictions.reserve(clips.size());
  std::size_t correct = 0;
  double loss = 0.0;
  for (const AvClip& clip : clips) {
    Inference inf = infer(model, clip);
    const TwoWay t = two_way(inf.logits, clip.label);
    loss += t.loss;
    r.scores.push_back(t.sync_score);
    r.predictions.push_back(t.predicted);
    if (t.predicted == clip.label) ++correct;
    if (inf.attention) r.attention.push_back(std::move(*inf.attention));
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(clips.size());
  r.mean_loss = loss / static_cast<double>(clips.size());
  return r;
}

std::string metrics_row(const EpochRecord& r) {
  std::ostringstream s;
  s << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.train_acc) << ',' << fmt(r.test_acc) << ',';
  if (r.attn_mass) s << fmt(*r.attn_mass);
  s << ',' << fmt(r.seconds);
  return s.str();
}

std::vector<EpochRecord> train(SyncModel& model, const std::vector<AvClip>& train_set,
                               const std::vector<AvClip>& test_set, const TrainConfig& config,
                               const EpochCallback& on_eval) {
  config.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  if (test_set.empty()) throw ConfigError("train: empty test set");
  if (config.batch_size > train_set.size()) {
    throw ConfigError("train: batch_size " + std::to_string(config.batch_size) + " exceeds the " +
                      std::to_string(train_set.size()) + " training clips");
  }
  if (config.variant != model.variant()) throw ConfigError("train: config variant differs from the model");

  std::ofstream metrics;
  if (!config.output_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(config.output_dir, ec);
    const auto path = config.output_dir / "metrics.csv";
    metrics.open(path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + path.string());
    metrics << kMetricsHeader << '\n' << std::flush;
  }

  AdamConfig adam;
  adam.lr = config.lr > 0.0 ? config.lr : 1.0;
  ParamStore& store = model.params();
  store.zero_grad();
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochRecord> history;
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const AvClip& clip = train_set[order[k]];
        Tape tape;
        ClipForward f = forward_clip(tape, model, clip, Mode::train, &rng);
        Var loss = cross_entropy(f.logits, clip.label);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
        }
        loss_sum += value;
        if (two_way(f.logits.value(), clip.label).predicted == clip.label) ++correct;
        tape.backward(loss, store, weight);
      }
      if (config.lr > 0.0) {
        adam_step(store, adam);
        store.round_to_binary32();
      } else {
        store.zero_grad();
      }
    }

    const bool last = epoch == config.epochs;
    if (epoch % config.eval_every != 0 && !last) continue;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    EvalResult ev = evaluate(model, test_set);
    rec.test_acc = ev.accuracy;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      (test_set[i].label == 1 ? rec.sync_scores : rec.unsync_scores).push_back(ev.scores[i]);
    }
    if (!ev.attention.empty()) {
      if (auto a = positive_alignment(ev.attention, test_set)) rec.attn_mass = a->mass;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (metrics.is_open()) metrics << metrics_row(rec) << '\n' << std::flush;
    history.push_back(std::move(rec));
    if (on_eval && !on_eval(history.back())) break;
  }
  return history;
}

ScoreHistogram score_histogram(const std::vector<double>& sync_scores, const std::vector<double>& unsync_scores,
                               std::size_t bins) {
  if (bins < 2) throw ConfigError("score_histogram: bins must be at least 2");
  ScoreHistogram h;
  h.count_sync.assign(bins, 0);
  h.count_unsync.assign(bins, 0);
  for (std::size_t b = 0; b < bins; ++b) {
    h.bin_low.push_back(static_cast<double>(b) / static_cast<double>(bins));
    h.bin_high.push_back(static_cast<double>(b + 1) / static_cast<double>(bins));
  }
  auto place = [&](double s, std::vector<std::size_t>& counts) {
    if (!(s >= 0.0 && s <= 1.0)) throw ContractError("score_histogram: score " + fmt(s) + " outside [0,1]");
    std::size_t b = static_cast<std::size_t>(s * static_cast<double>(bins));
    // guard against s*bins rounding across an edge
    while (b > 0 && s < h.bin_low[b]) --b;
    while (b + 1 < bins && s >= h.bin_high[b]) ++b;
    ++counts[std::min(b, bins - 1)];
  };
  for (double s : sync_scores) place(s, h.count_sync);
  for (double s : unsync_scores) place(s, h.count_unsync);
  return h;
}

std::string histogram_csv(const ScoreHistogram& h) {
  std::ostringstream s;
  s << "bin_low,bin_high,count_sync,count_unsync\n";
  for (std::size_t b = 0; b < h.bin_low.size(); ++b) {
    s << fmt(h.bin_low[b]) << ',' << fmt(h.bin_high[b]) << ',' << h.count_sync[b] << ',' << h.count_unsync[b]
      << '\n';
  }
  return s.str();
}

Alignment attention_alignment(const std::vector<AttentionMap>& maps,
                              const std::vector<std::vector<bool>>& block_discriminative) {
  if (maps.size() != block_discriminative.size()) {
    throw DimensionError("attention_alignment: " + std::to_string(maps.size()) + " maps for " +
                         std::to_string(block_discriminative.size()) + " clips");
  }
  Alignment a;
  bool any = false;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const std::vector<double> mass = maps[i].block_mass();
    const std::vector<bool>& flags = block_discriminative[i];
    if (mass.size() != flags.size()) {
      throw DimensionError("attention_alignment: clip " + std::to_string(i) + " has " +
                           std::to_string(mass.size()) + " blocks but " + std::to_string(flags.size()) + " flags");
    }
    std::size_t flagged = 0;
    for (std::size_t b = 0; b < flags.size(); ++b) {
      if (flags[b]) {
        a.mass += mass[b];
        ++flagged;
      }
    }
    any = any || flagged > 0;
    a.uniform_reference += static_cast<double>(flagged) / static_cast<double>(flags.size());
    ++a.clips;
  }
  if (!any) throw ContractError("attention_alignment: no discriminative blocks, metric undefined");
  a.mass /= static_cast<double>(a.clips);
  a.uniform_reference /= static_cast<double>(a.clips);
  return a;
}

std::optional<Alignment> positive_alignment(const std::vector<AttentionMap>& maps,
                                            const std::vector<AvClip>& clips) {
  if (maps.size() != clips.size()) throw DimensionError("positive_alignment: one map per clip required");
  std::vector<AttentionMap> sel;
  std::vector<std::vector<bool>> flags;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& f = clips[i].block_discriminative;
    if (clips[i].label != 1 || std::find(f.begin(), f.end(), true) == f.end()) continue;
    sel.push_back(maps[i]);
    flags.push_back(f);
  }
  if (sel.empty()) return std::nullopt;
  return attention_alignment(sel, flags);
}

GradCheckResult check_model_gradients(Variant variant, const FusionConfig& config, std::uint64_t seed,
                                      const GradCheckOptions& options) {
  SyncModel model(variant, config, seed);
  ParamStore& store = model.params();
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(i);
    if (name.size() < 5 || name.compare(name.size() - 5, 5, ".bias") != 0) continue;
    for (double& v : store.value(i).data()) v = rng.uniform(-0.1, 0.1);
  }
  const AvClip clip = noise_clip(config, rng, static_cast<int>(seed % 2));
  const LossBuilder loss = [&](Tape& tape, const ParamStore&) {
    ClipForward f = forward_clip(tape, model, clip, Mode::eval, nullptr);
    return cross_entropy(f.logits, clip.label);
  };
  GradCheckOptions opts = options;
  opts.seed = options.seed ^ seed;
  return grad_check(loss, store, opts);
}

}  // namespace avsync
