// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "avsync/model.hpp"
#include "avsync/synth.hpp"
#include "avsync/training.hpp"

namespace avsync {

/// Every tunable of a run. Defaults are the desk profile.
struct RunConfig {
  FusionConfig model;
  SyntheticConfig data;
  TrainConfig train;
  std::size_t n_train = 512;
  std::size_t n_test = 512;

  /// Cross-field checks (geometry, shift range, counts).
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// skipped. Unknown keys, malformed values, repeated keys and out-of-range
/// values throw ConfigError citing the key and the line number.
RunConfig parse_config_text(std::string_view text, std::string_view source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

/// Every key with its resolved value, one `key = value` line each, in a
/// fixed order. parse_config_text(format_config(c)) == c.
std::string format_config(const RunConfig& config);

/// Names of all accepted keys in output order.
std::vector<std::string> config_keys();

}  // namespace avsync
