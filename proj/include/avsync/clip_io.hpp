// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "avsync/clip.hpp"

namespace avsync {

/// AVC1 container: "AVC1", version byte, label byte, i16 shift, u32 N,
/// ceil(N/8) bytes of discriminativity flags (LSB first), then the visual
/// and the audio tensor in AVT1 encoding.
std::vector<std::uint8_t> encode_clip(const AvClip& clip);
/// Throws FormatError (with byte offset) on bad magic, version, truncation,
/// trailing bytes or an inconsistent label/shift pair.
AvClip decode_clip(std::span<const std::uint8_t> bytes);

void save_clip(const AvClip& clip, const std::filesystem::path& path);
AvClip load_clip(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  ///< relative to the dataset root, e.g. "train/0.avc"
  int label = 0;
};

/// Writes `<split>/<i>.avc` per clip plus `manifest.txt` (one `path,label`
/// line per clip) under `root`.
void save_dataset_dir(const std::filesystem::path& root, const std::vector<AvClip>& train,
                      const std::vector<AvClip>& test);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root);

/// Loads every clip of one split listed in the manifest, in manifest order.
/// The manifest label must agree with the clip's own label.
std::vector<AvClip> load_split(const std::filesystem::path& root, const std::string& split);

}  // namespace avsync
