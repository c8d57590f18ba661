// SPDX-License-Identifier: Apache-2.0
#include "avsync/clip_io.hpp"

#include <limits>
#include <sstream>

#include "avsync/binary_io.hpp"
#include "avsync/error.hpp"

namespace avsync {
namespace {

constexpr std::uint8_t kClipVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_clip(const AvClip& clip) {
  if (clip.label != 0 && clip.label != 1) throw ContractError("encode_clip: label must be 0 or 1");
  if (clip.shift_blocks < std::numeric_limits<std::int16_t>::min() ||
      clip.shift_blocks > std::numeric_limits<std::int16_t>::max()) {
    throw RangeError("encode_clip: shift does not fit 16 bits");
  }
  ByteWriter out;
  out.raw(std::string_view("AVC1"));
  out.u8(kClipVersion);
  out.u8(static_cast<std::uint8_t>(clip.label));
  out.i16(static_cast<std::int16_t>(clip.shift_blocks));
  const std::size_t n = clip.block_discriminative.size();
  out.u32(static_cast<std::uint32_t>(n));
  std::vector<std::uint8_t> mask((n + 7) / 8, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (clip.block_discriminative[i]) mask[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  out.raw(std::span<const std::uint8_t>(mask));
  encode_tensor(out, clip.visual);
  encode_tensor(out, clip.audio);
  return out.take();
}

AvClip decode_clip(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic("AVC1", "clip");
  const std::size_t version_at = in.offset();
  const std::uint8_t version = in.u8();
  if (version != kClipVersion) {
    throw FormatError("clip: unsupported version " + std::to_string(version), version_at);
  }
  AvClip clip;
  const std::size_t label_at = in.offset();
  const std::uint8_t label = in.u8();
  if (label > 1) throw FormatError("clip: label must be 0 or 1, got " + std::to_string(label), label_at);
  clip.label = label;
  clip.shift_blocks = in.i16();
  if ((clip.label == 1) != (clip.shift_blocks == 0)) {
    throw FormatError("clip: label " + std::to_string(clip.label) + " inconsistent with shift " +
                          std::to_string(clip.shift_blocks),
                      label_at);
  }
  const std::uint32_t n = in.u32();
  const std::size_t mask_at = in.offset();
  const std::string mask = in.raw((static_cast<std::size_t>(n) + 7) / 8);
  clip.block_discriminative.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    clip.block_discriminative[i] = (static_cast<std::uint8_t>(mask[i / 8]) >> (i % 8)) & 1u;
  }
  if (n % 8 != 0 && (static_cast<std::uint8_t>(mask.back()) >> (n % 8)) != 0) {
    throw FormatError("clip: padding bits of the block mask are set", mask_at + mask.size() - 1);
  }
  const std::size_t visual_at = in.offset();
  clip.visual = decode_tensor(in);
  if (clip.visual.rank() != 4) throw FormatError("clip: visual tensor must have rank 4", visual_at);
  const std::size_t audio_at = in.offset();
  clip.audio = decode_tensor(in);
  if (clip.audio.rank() != 2 || clip.audio.extent(1) != 1) {
    throw FormatError("clip: audio tensor must have shape [samples, 1]", audio_at);
  }
  if (!in.at_end()) throw FormatError("clip: trailing bytes after audio tensor", in.offset());
  return clip;
}

void save_clip(const AvClip& clip, const std::filesystem::path& path) {
  write_file_bytes(path, encode_clip(clip));
}

AvClip load_clip(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  try {
    return decode_clip(bytes);
  } catch (const FormatError& e) {
    throw e.prefixed(path.string() + ": ");
  }
}

void save_dataset_dir(const std::filesystem::path& root, const std::vector<AvClip>& train,
                      const std::vector<AvClip>& test) {
  std::error_code ec;
  std::ostringstream manifest;
  for (const auto& [split, clips] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    std::filesystem::create_directories(root / split, ec);
    if (ec) throw IoError("cannot create " + (root / split).string() + ": " + ec.message());
    for (std::size_t i = 0; i < clips->size(); ++i) {
      const std::string rel = std::string(split) + "/" + std::to_string(i) + ".avc";
      save_clip((*clips)[i], root / rel);
      manifest << rel << ',' << (*clips)[i].label << '\n';
    }
  }
  write_text_file(root / "manifest.txt", manifest.str());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(root / "manifest.txt");
  std::vector<ManifestEntry> entries;
  std::size_t line_start = 0;
  std::size_t line_no = 0;
  while (line_start < bytes.size()) {
    std::size_t end = line_start;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    ++line_no;
    std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(line_start),
                     bytes.begin() + static_cast<std::ptrdiff_t>(end));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) {
      const std::size_t comma = line.rfind(',');
      const std::string label = comma == std::string::npos ? "" : line.substr(comma + 1);
      if (comma == std::string::npos || comma == 0 || (label != "0" && label != "1")) {
        throw FormatError("manifest line " + std::to_string(line_no) + ": expected 'path,label' with label 0 or 1",
                          line_start);
      }
      entries.push_back({line.substr(0, comma), label == "1" ? 1 : 0});
    }
    line_start = end + 1;
  }
  return entries;
}

std::vector<AvClip> load_split(const std::filesystem::path& root, const std::string& split) {
  std::vector<AvClip> clips;
  const std::string prefix = split + "/";
  for (const ManifestEntry& e : read_manifest(root)) {
    if (e.path.rfind(prefix, 0) != 0) continue;
    AvClip clip = load_clip(root / e.path);
    if (clip.label != e.label) {
      throw FormatError(e.path + ": manifest label " + std::to_string(e.label) + " disagrees with clip label " +
                            std::to_string(clip.label),
                        5);
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace avsync
