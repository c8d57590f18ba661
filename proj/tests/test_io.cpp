// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include "avsync/binary_io.hpp"
#include "avsync/checkpoint.hpp"
#include "avsync/clip_io.hpp"
#include "avsync/error.hpp"
#include "avsync/param_store.hpp"
#include "avsync/synth.hpp"

namespace avsync {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("avsync_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

AvClip sample_clip(int label) {
  const FusionConfig geo;
  const SyntheticConfig c;
  const AvStream s = gen_stream(c, geo, 31);
  if (label == 1) return cut_positive(s, 4, 5, geo);
  Rng rng(2);
  return make_negative(s, 4, 5, c, geo, rng);
}

TEST(ClipIo, RoundTripIsExact) {
  TempDir dir;
  for (int label : {0, 1}) {
    const AvClip clip = sample_clip(label);
    const fs::path p = dir.path() / ("c" + std::to_string(label) + ".avc");
    save_clip(clip, p);
    const AvClip back = load_clip(p);
    EXPECT_EQ(back, clip);
    EXPECT_EQ(back.visual, clip.visual);
    EXPECT_EQ(back.audio, clip.audio);
  }
}

TEST(ClipIo, HeaderLayout) {
  const AvClip clip = sample_clip(0);
  const std::vector<std::uint8_t> b = encode_clip(clip);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "AVC1");
  EXPECT_EQ(b[5], 0);  // label
  const auto shift = static_cast<std::int16_t>(b[6] | (b[7] << 8));
  EXPECT_EQ(shift, clip.shift_blocks);
  EXPECT_EQ(b[8] | (b[9] << 8) | (b[10] << 16) | (b[11] << 24), 5);
  std::uint8_t mask = 0;
  for (std::size_t i = 0; i < 5; ++i)
    if (clip.block_discriminative[i]) mask |= static_cast<std::uint8_t>(1u << i);
  EXPECT_EQ(b[12], mask);
  EXPECT_EQ(std::string(b.begin() + 13, b.begin() + 17), "AVT1");
}

TEST(ClipIo, TruncationIsAFormatError) {
  const std::vector<std::uint8_t> b = encode_clip(sample_clip(1));
  for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{20}, b.size() / 2, b.size() - 1}) {
    const std::span<const std::uint8_t> cut(b.data(), keep);
    EXPECT_THROW(decode_clip(cut), FormatError) << keep;
  }
}

TEST(ClipIo, BadMagicNamesTheExpectedOne) {
  std::vector<std::uint8_t> b = encode_clip(sample_clip(1));
  b[0] = 'X';
  try {
    decode_clip(b);
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("AVC1"), std::string::npos);
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(ClipIo, InconsistentOrTrailingBytes) {
  std::vector<std::uint8_t> b = encode_clip(sample_clip(0));
  std::vector<std::uint8_t> relabelled = b;
  relabelled[5] = 1;  // positive label with a nonzero shift
  EXPECT_THROW(decode_clip(relabelled), FormatError);
  std::vector<std::uint8_t> version = b;
  version[4] = 9;
  EXPECT_THROW(decode_clip(version), FormatError);
  b.push_back(0);
  EXPECT_THROW(decode_clip(b), FormatError);
}

TEST(ClipIo, MissingFileIsIoError) { EXPECT_THROW(load_clip("/nonexistent/clip.avc"), IoError); }

TEST(DatasetDir, ManifestAndSplits) {
  TempDir dir;
  const Dataset d = build_dataset(SyntheticConfig{}, FusionConfig{}, 4, 2, 5);
  save_dataset_dir(dir.path(), d.train.clips, d.test.clips);
  const auto manifest = read_manifest(dir.path());
  ASSERT_EQ(manifest.size(), 6u);
  EXPECT_EQ(manifest[0].path, "train/0.avc");
  EXPECT_EQ(manifest[4].path, "test/0.avc");
  EXPECT_TRUE(fs::exists(dir.path() / "train" / "3.avc"));
  EXPECT_EQ(load_split(dir.path(), "train"), d.train.clips);
  EXPECT_EQ(load_split(dir.path(), "test"), d.test.clips);

  std::ofstream(dir.path() / "manifest.txt", std::ios::app) << "train/0.avc,7\n";
  EXPECT_THROW(read_manifest(dir.path()), FormatError);
}

TEST(DatasetDir, ManifestLabelMustMatchClip) {
  TempDir dir;
  const Dataset d = build_dataset(SyntheticConfig{}, FusionConfig{}, 2, 2, 6);
  save_dataset_dir(dir.path(), d.train.clips, d.test.clips);
  const int label = d.train.clips[0].label;
  std::ofstream(dir.path() / "manifest.txt") << "train/0.avc," << (1 - label) << "\n";
  EXPECT_THROW(load_split(dir.path(), "train"), FormatError);
}

SyncModel trained_a_little(Variant v) {
  SyncModel m(v, FusionConfig{}, 8);
  Rng rng(8);
  ParamStore& ps = m.params();
  for (int step = 0; step < 2; ++step) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (double& g : ps.grad(i).data()) g = rng.uniform(-1, 1);
    adam_step(ps, {});
    ps.round_to_binary32();  // as train() does
  }
  return m;
}

TEST(Checkpoint, RoundTripReproducesForwardsBitExactly) {
  TempDir dir;
  for (Variant v : {Variant::uniform, Variant::temporal, Variant::spatiotemporal}) {
    const SyncModel m = trained_a_little(v);
    const fs::path p = dir.path() / "m.avck";
    save_checkpoint(m, p);
    const SyncModel back = load_checkpoint(p, {v, m.config()});
    EXPECT_EQ(back.variant(), v);
    EXPECT_EQ(back.params().step(), 2u);
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      EXPECT_EQ(back.params().value(i), m.params().value(i));
      EXPECT_EQ(back.params().first_moment(i), m.params().first_moment(i));
      EXPECT_EQ(back.params().second_moment(i), m.params().second_moment(i));
    }
    Rng rng(9);
    for (int c = 0; c < 10; ++c) {
      const AvClip clip = noise_clip(m.config(), rng);
      const Inference a = infer(m, clip), b = infer(back, clip);
      EXPECT_EQ(a.logits, b.logits);
      if (a.attention) {
        EXPECT_EQ(a.attention->weights, b.attention->weights);
      }
    }
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(m));
  }
}

TEST(Checkpoint, WithoutOptimizerState) {
  const SyncModel m = trained_a_little(Variant::uniform);
  const SyncModel back = decode_checkpoint(encode_checkpoint(m, false));
  EXPECT_EQ(back.params().step(), 0u);
  EXPECT_EQ(back.params().value(0), m.params().value(0));
  EXPECT_LT(encode_checkpoint(m, false).size(), encode_checkpoint(m).size());
}

TEST(Checkpoint, VariantMismatch) {
  const std::vector<std::uint8_t> b = encode_checkpoint(SyncModel(Variant::temporal, FusionConfig{}, 1));
  EXPECT_THROW(decode_checkpoint(b, {Variant::uniform, std::nullopt}), FormatError);
  std::vector<std::uint8_t> relabelled = b;
  relabelled[5] = static_cast<std::uint8_t>(Variant::uniform);
  try {
    decode_checkpoint(relabelled);
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("parameters"), std::string::npos) << e.what();
  }
  FusionConfig other;
  other.dropout_t = 0.25;
  EXPECT_THROW(decode_checkpoint(b, {std::nullopt, other}), FormatError);
}

TEST(Checkpoint, CorruptParameterLengthNamesTheParameter) {
  std::vector<std::uint8_t> b = encode_checkpoint(SyncModel(Variant::uniform, FusionConfig{}, 1));
  const std::string name = "audio.conv2.weight";
  const auto it = std::search(b.begin(), b.end(), name.begin(), name.end());
  ASSERT_NE(it, b.end());
  // AVT1 magic, dtype, rank, then the first u32 extent
  const std::size_t extent_at = static_cast<std::size_t>(it - b.begin()) + name.size() + 6;
  b[extent_at] += 1;
  try {
    decode_checkpoint(b);
    FAIL() << "no error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
    EXPECT_GT(e.offset(), 0u);
  }
  std::vector<std::uint8_t> truncated(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(b.size() / 3));
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
}

}  // namespace
}  // namespace avsync
