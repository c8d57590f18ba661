// SPDX-License-Identifier: Apache-2.0
#include "avsync/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>

#include "avsync/binary_io.hpp"
#include "avsync/checkpoint.hpp"
#include "avsync/clip_io.hpp"
#include "avsync/error.hpp"
#include "avsync/run_config.hpp"
#include "avsync/synth.hpp"
#include "avsync/training.hpp"

namespace avsync {
namespace {

namespace fs = std::filesystem;

constexpr double kGradTolerance = 1e-3;

std::string num(double v, int precision = 10) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

RunConfig load_run_config(const std::string& path) {
  return path.empty() ? RunConfig{} : parse_config(path);
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void check_geometry(const std::vector<AvClip>& clips, const FusionConfig& g, const std::string& split) {
  if (clips.empty()) throw RangeError("dataset split '" + split + "' has no clips");
  const Shape visual{g.blocks * g.frames_per_block, g.frame_height, g.frame_width, g.frame_channels};
  const Shape audio{g.blocks * g.audio_per_block, 1};
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].visual.shape() != visual || clips[i].audio.shape() != audio) {
      throw DimensionError(split + " clip " + std::to_string(i) + " has visual " +
                           shape_str(clips[i].visual.shape()) + " and audio " + shape_str(clips[i].audio.shape()) +
                           ", the configuration expects " + shape_str(visual) + " and " + shape_str(audio));
    }
  }
}

int cmd_gen_data(const std::string& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed,
                 std::ostream& out) {
  RunConfig config = load_run_config(config_path);
  if (seed) config.train.seed = *seed;
  const Dataset ds = build_dataset(config.data, config.model, config.n_train, config.n_test, config.train.seed);
  make_dir(out_dir);
  save_dataset_dir(out_dir, ds.train.clips, ds.test.clips);
  write_text_file(out_dir / "resolved.cfg", format_config(config));
  out << "wrote " << ds.train.clips.size() << " train and " << ds.test.clips.size() << " test clips to "
      << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config_path, const fs::path& data_dir, const std::string& variant,
              const fs::path& out_dir, std::ostream& out) {
  RunConfig config = load_run_config(config_path);
  if (!variant.empty()) config.train.variant = parse_variant(variant);
  const std::vector<AvClip> train_set = load_split(data_dir, "train");
  const std::vector<AvClip> test_set = load_split(data_dir, "test");
  check_geometry(train_set, config.model, "train");
  check_geometry(test_set, config.model, "test");
  if (config.train.batch_size > train_set.size()) {
    throw ConfigError("batch_size " + std::to_string(config.train.batch_size) + " exceeds the " +
                      std::to_string(train_set.size()) + " training clips");
  }
  make_dir(out_dir);
  write_text_file(out_dir / "resolved.cfg", format_config(config));
  SyncModel model(config.train.variant, config.model, config.train.seed);
  TrainConfig tc = config.train;
  tc.output_dir = out_dir;
  const std::vector<EpochRecord> history = train(model, train_set, test_set, tc);
  save_checkpoint(model, out_dir / "model.avck");
  const EpochRecord& last = history.back();
  out << variant_name(model.variant()) << ": epoch " << last.epoch << " train_loss " << num(last.train_loss)
      << " test_acc " << num(last.test_acc);
  if (last.attn_mass) out << " attn_mass " << num(*last.attn_mass);
  out << '\n';
  return kExitOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const std::string& split, std::size_t bins,
             const fs::path& out_dir, std::ostream& out) {
  if (bins < 2) throw ConfigError("--bins must be at least 2");
  const SyncModel model = load_checkpoint(checkpoint);
  const std::vector<AvClip> clips = load_split(data_dir, split);
  check_geometry(clips, model.config(), split);
  const EvalResult ev = evaluate(model, clips);
  std::vector<double> sync, unsync;
  std::ostringstream scores;
  scores << "index,label,score,predicted\n";
  for (std::size_t i = 0; i < clips.size(); ++i) {
    (clips[i].label == 1 ? sync : unsync).push_back(ev.scores[i]);
    scores << i << ',' << clips[i].label << ',' << num(ev.scores[i], 17) << ',' << ev.predictions[i] << '\n';
  }
  const ScoreHistogram hist = score_histogram(sync, unsync, bins);
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  std::ostringstream summary;
  summary << "variant = " << variant_name(model.variant()) << '\n'
          << "split = " << split << '\n'
          << "clips = " << clips.size() << '\n'
          << "accuracy = " << num(ev.accuracy) << '\n'
          << "mean_loss = " << num(ev.mean_loss) << '\n'
          << "mean_score_sync = " << num(mean(sync)) << '\n'
          << "mean_score_unsync = " << num(mean(unsync)) << '\n';
  if (!ev.attention.empty()) {
    if (auto a = positive_alignment(ev.attention, clips)) {
      summary << "attn_mass = " << num(a->mass) << '\n' << "attn_uniform_reference = " << num(a->uniform_reference) << '\n';
    }
  }
  make_dir(out_dir);
  write_text_file(out_dir / "summary.txt", summary.str());
  write_text_file(out_dir / "histogram.csv", histogram_csv(hist));
  write_text_file(out_dir / "scores.csv", scores.str());
  out << summary.str();
  return kExitOk;
}

std::string pgm(const std::vector<double>& weights, std::size_t offset, std::size_t T, std::size_t H,
                std::size_t W, double lo, double hi) {
  // time steps side by side, each an H x W panel
  std::ostringstream s;
  s << "P2\n" << T * W << ' ' << H << "\n255\n";
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t w = 0; w < W; ++w) {
        const double v = weights[offset + (t * H + h) * W + w];
        const long level = hi > lo ? std::lround(255.0 * (v - lo) / (hi - lo)) : 0;
        s << level << (t + 1 == T && w + 1 == W ? '\n' : ' ');
      }
    }
  }
  return s.str();
}

int cmd_attend(const fs::path& checkpoint, const fs::path& clip_path, const fs::path& out_dir, std::ostream& out) {
  const SyncModel model = load_checkpoint(checkpoint);
  if (model.variant() == Variant::uniform) throw ConfigError("attend: the uniform model has no attention map");
  const AvClip clip = load_clip(clip_path);
  std::vector<AvClip> one{clip};
  FusionConfig g = model.config();
  check_geometry(one, g, "input");
  const Inference inf = infer(model, clip);
  const AttentionMap& map = *inf.attention;
  std::ostringstream csv;
  if (map.kind == AttentionKind::temporal) {
    csv << "block,weight\n";
    for (std::size_t b = 0; b < map.weights.size(); ++b) csv << b << ',' << num(map.weights[b], 17) << '\n';
  } else {
    const std::size_t N = map.shape[0], T = map.shape[1], H = map.shape[2], W = map.shape[3];
    csv << "block,t,h,w,weight\n";
    for (std::size_t b = 0; b < N; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t w = 0; w < W; ++w) {
            csv << b << ',' << t << ',' << h << ',' << w << ','
                << num(map.weights[((b * T + t) * H + h) * W + w], 17) << '\n';
          }
        }
      }
    }
  }
  make_dir(out_dir);
  write_text_file(out_dir / "attention.csv", csv.str());
  if (map.kind == AttentionKind::spatiotemporal) {
    const std::size_t N = map.shape[0], T = map.shape[1], H = map.shape[2], W = map.shape[3];
    const auto [lo, hi] = std::minmax_element(map.weights.begin(), map.weights.end());
    for (std::size_t b = 0; b < N; ++b) {
      write_text_file(out_dir / ("block_" + std::to_string(b) + ".pgm"),
                      pgm(map.weights, b * T * H * W, T, H, W, *lo, *hi));
    }
  }
  const std::vector<double> mass = map.block_mass();
  out << "P(sync) = " << num(std::exp(inf.logits[1]) / (std::exp(inf.logits[0]) + std::exp(inf.logits[1])))
      << "\nblock mass:";
  for (double m : mass) out << ' ' << num(m, 4);
  out << '\n';
  return kExitOk;
}

int cmd_grad_check(const std::string& config_path, const std::string& variant, std::uint64_t seed,
                   std::size_t samples, std::ostream& out) {
  const RunConfig config = load_run_config(config_path);
  GradCheckOptions opts;
  opts.samples_per_tensor = samples;
  const GradCheckResult r = check_model_gradients(parse_variant(variant), config.model, seed, opts);
  out << "max relative error " << num(r.max_rel_error, 6) << " over " << r.coordinates << " coordinates, "
      << r.skipped_kinks << " skipped at relu kinks (worst: "
      << r.worst_param << '[' << r.worst_index << "], analytic " << num(r.worst_analytic, 8) << ", numeric "
      << num(r.worst_numeric, 8) << ")\n";
  return r.max_rel_error <= kGradTolerance ? kExitOk : kExitNumeric;
}

}  // namespace

int exit_code_for(const std::exception& e) noexcept {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitData;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-visual synchronization classifier with attention pooling", "avsync"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, variant, checkpoint, clip_path, split = "test";
  std::optional<std::uint64_t> gen_seed;
  std::uint64_t seed = 0;
  std::size_t bins = 10, samples = 8;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  gen->add_option("--config", config_path, "Run configuration file");
  gen->add_option("--out", out_dir, "Output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "Dataset seed (default: the config's seed)");

  CLI::App* tr = app.add_subcommand("train", "Train a model on a dataset directory");
  tr->add_option("--config", config_path, "Run configuration file");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--model", variant, "uniform | temporal | spatiotemporal (default: the config's variant)");
  tr->add_option("--out", out_dir, "Output directory for metrics and checkpoint")->required();

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--split", split, "Split to evaluate (train | test)");
  ev->add_option("--bins", bins, "Score histogram bins");
  ev->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* at = app.add_subcommand("attend", "Export the attention map of one clip");
  at->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  at->add_option("--clip", clip_path, "AVC1 clip file")->required();
  at->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* gc = app.add_subcommand("grad-check", "Finite-difference check of a freshly initialised model");
  gc->add_option("--config", config_path, "Run configuration file");
  gc->add_option("--model", variant, "uniform | temporal | spatiotemporal")->required();
  gc->add_option("--seed", seed, "Initialisation seed");
  gc->add_option("--samples", samples, "Coordinates checked per parameter tensor (0 = all)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "avsync: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, gen_seed, out);
    if (tr->parsed()) return cmd_train(config_path, data_dir, variant, out_dir, out);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, split, bins, out_dir, out);
    if (at->parsed()) return cmd_attend(checkpoint, clip_path, out_dir, out);
    if (gc->parsed()) return cmd_grad_check(config_path, variant, seed, samples, out);
  } catch (const std::exception& e) {
    err << "avsync: " << e.what() << '\n';
    return exit_code_for(e);
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace avsync
