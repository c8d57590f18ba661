// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "avsync/model.hpp"

namespace avsync {

/// Optional expectations checked while loading a checkpoint.
struct CheckpointExpect {
  std::optional<Variant> variant;
  std::optional<FusionConfig> config;
};

/// AVCK layout: "AVCK", version byte, variant byte, FusionConfig echo, u64
/// init seed, u32 parameter count, then per parameter u16 name length,
/// UTF-8 name and the AVT1 tensor (binary32). A trailing flag byte marks the
/// optional optimizer state: u64 step, then first and second moments per
/// parameter as binary64 AVT1 tensors.
std::vector<std::uint8_t> encode_checkpoint(const SyncModel& model, bool with_optimizer = true);
/// Throws FormatError naming the offending parameter or field on any
/// mismatch against the stored variant, config echo or parameter layout.
SyncModel decode_checkpoint(std::span<const std::uint8_t> bytes, const CheckpointExpect& expect = {});

void save_checkpoint(const SyncModel& model, const std::filesystem::path& path, bool with_optimizer = true);
SyncModel load_checkpoint(const std::filesystem::path& path, const CheckpointExpect& expect = {});

}  // namespace avsync
