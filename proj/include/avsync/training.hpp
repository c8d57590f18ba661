// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "avsync/clip.hpp"
#include "avsync/grad_check.hpp"
#include "avsync/model.hpp"

namespace avsync {

struct TrainConfig {
  std::size_t batch_size = 80;
  std::size_t epochs = 300;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  Variant variant = Variant::temporal;
  std::size_t eval_every = 1;
  /// Where metrics.csv is written; empty disables file output.
  std::filesystem::path output_dir;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// One evaluation record. Scores are the softmax probability of the sync
/// class on each test clip, split by ground truth.
struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  ///< mean train-mode loss over the epoch
  double train_acc = 0.0;   ///< running train-mode accuracy over the epoch
  double test_acc = 0.0;
  std::optional<double> attn_mass;
  double seconds = 0.0;  ///< wall clock since training started
  std::vector<double> sync_scores;
  std::vector<double> unsync_scores;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<double> scores;  ///< P(sync) per clip, dataset order
  std::vector<int> predictions;
  std::vector<AttentionMap> attention;  ///< empty for the uniform variant
};

/// Eval-mode pass over `clips`. Prediction is the argmax of the logits
/// with ties going to class 0. Throws ConfigError on an empty set.
EvalResult evaluate(const SyncModel& model, const std::vector<AvClip>& clips);

/// Called after each evaluation; returning false stops training early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Mini-batch Adam on the mean cross-entropy of each batch; lr = 0 runs the
/// loop with frozen parameters. The clip order
/// is reshuffled every epoch and dropout is drawn from one generator seeded
/// with config.seed. A trailing partial batch keeps its true size.
/// Evaluation runs every eval_every epochs and after the last one; with an
/// output directory each record is appended to metrics.csv and flushed.
/// Throws NumericError naming epoch and batch on a non-finite loss.
std::vector<EpochRecord> train(SyncModel& model, const std::vector<AvClip>& train_set,
                               const std::vector<AvClip>& test_set, const TrainConfig& config,
                               const EpochCallback& on_eval = {});

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,test_acc,attn_mass,seconds";
std::string metrics_row(const EpochRecord& r);

struct ScoreHistogram {
  std::vector<double> bin_low;
  std::vector<double> bin_high;
  std::vector<std::size_t> count_sync;
  std::vector<std::size_t> count_unsync;
};

/// Equal-width bins over [0,1]; every bin is half-open except the last,
/// which also holds 1.0. Throws ConfigError for bins < 2 and ContractError
/// for scores outside [0,1].
ScoreHistogram score_histogram(const std::vector<double>& sync_scores, const std::vector<double>& unsync_scores,
                               std::size_t bins);
/// CSV with header bin_low,bin_high,count_sync,count_unsync.
std::string histogram_csv(const ScoreHistogram& h);

struct Alignment {
  double mass = 0.0;               ///< mean attention mass on discriminative blocks
  double uniform_reference = 0.0;  ///< mean fraction of discriminative blocks
  std::size_t clips = 0;
};

/// Spatio-temporal maps are first reduced to per-block mass. Throws
/// ContractError when no clip has a discriminative block.
Alignment attention_alignment(const std::vector<AttentionMap>& maps,
                              const std::vector<std::vector<bool>>& block_discriminative);

/// Alignment over the positive clips of `clips`, using `maps` aligned with
/// `clips`. Empty when no positive clip has a discriminative block.
std::optional<Alignment> positive_alignment(const std::vector<AttentionMap>& maps,
                                            const std::vector<AvClip>& clips);

/// Finite-difference check of a whole model: parameters from `seed`, biases
/// jittered in [-0.1, 0.1] so no bias sits exactly at a relu kink, one
/// noise clip, eval-mode cross-entropy.
GradCheckResult check_model_gradients(Variant variant, const FusionConfig& config, std::uint64_t seed,
                                      const GradCheckOptions& options = {});

}  // namespace avsync
