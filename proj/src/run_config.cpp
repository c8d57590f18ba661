// SPDX-License-Identifier: Apache-2.0
#include "avsync/run_config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "avsync/binary_io.hpp"
#include "avsync/error.hpp"

namespace avsync {
namespace {

struct Field {
  std::string key;
  // Parses and range-checks `value`; returns an empty string on success or
  // the reason for rejection.
  std::function<std::string(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

template <typename Ref>
Field count(std::string key, std::size_t min_value, Ref ref) {
  return Field{
      key,
      [=](RunConfig& c, std::string_view v) -> std::string {
        std::size_t x = 0;
        if (!parse_number(v, x)) return "expected a non-negative integer";
        if (x < min_value) return "must be at least " + std::to_string(min_value);
        ref(c) = x;
        return {};
      },
      [=](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <typename Ref>
Field real(std::string key, double lo, double hi, bool hi_open, Ref ref) {
  return Field{
      key,
      [=](RunConfig& c, std::string_view v) -> std::string {
        double x = 0.0;
        if (!parse_number(v, x) || !std::isfinite(x)) return "expected a finite number";
        if (x < lo || x > hi || (hi_open && x == hi)) {
          return "must be in [" + fmt_double(lo) + ", " + fmt_double(hi) + (hi_open ? ")" : "]");
        }
        ref(c) = x;
        return {};
      },
      [=](const RunConfig& c) { return fmt_double(ref(c)); }};
}

template <typename Ref>
Field flag(std::string key, Ref ref) {
  return Field{key,
               [=](RunConfig& c, std::string_view v) -> std::string {
                 if (v == "true") {
                   ref(c) = true;
                 } else if (v == "false") {
                   ref(c) = false;
                 } else {
                   return "expected true or false";
                 }
                 return {};
               },
               [=](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  constexpr double kInf = 1e300;
  static const std::vector<Field> table = {
      count("blocks", 1, [](auto& c) -> auto& { return c.model.blocks; }),
      count("frames_per_block", 1, [](auto& c) -> auto& { return c.model.frames_per_block; }),
      count("frame_height", 1, [](auto& c) -> auto& { return c.model.frame_height; }),
      count("frame_width", 1, [](auto& c) -> auto& { return c.model.frame_width; }),
      count("frame_channels", 1, [](auto& c) -> auto& { return c.model.frame_channels; }),
      count("audio_per_block", 1, [](auto& c) -> auto& { return c.model.audio_per_block; }),
      count("feat_height", 1, [](auto& c) -> auto& { return c.model.feat_height; }),
      count("feat_width", 1, [](auto& c) -> auto& { return c.model.feat_width; }),
      count("feat_time", 1, [](auto& c) -> auto& { return c.model.feat_time; }),
      count("visual_channels", 1, [](auto& c) -> auto& { return c.model.visual_channels; }),
      count("audio_channels", 1, [](auto& c) -> auto& { return c.model.audio_channels; }),
      count("joint_layers", 0, [](auto& c) -> auto& { return c.model.joint_layers; }),
      count("attn_hidden_temporal", 1, [](auto& c) -> auto& { return c.model.attn_hidden_temporal; }),
      count("attn_hidden_spatiotemporal", 1,
            [](auto& c) -> auto& { return c.model.attn_hidden_spatiotemporal; }),
      count("decision_hidden", 1, [](auto& c) -> auto& { return c.model.decision_hidden; }),
      real("dropout_t", 0.0, 1.0, true, [](auto& c) -> auto& { return c.model.dropout_t; }),
      real("dropout_st", 0.0, 1.0, true, [](auto& c) -> auto& { return c.model.dropout_st; }),
      Field{"st_softmax",
            [](RunConfig& c, std::string_view v) -> std::string {
              if (v == "joint") {
                c.model.st_softmax = StSoftmax::joint;
              } else if (v == "per_block") {
                c.model.st_softmax = StSoftmax::per_block;
              } else {
                return "expected joint or per_block";
              }
              return {};
            },
            [](const RunConfig& c) {
              return std::string(c.model.st_softmax == StSoftmax::joint ? "joint" : "per_block");
            }},

      count("stream_blocks", 2, [](auto& c) -> auto& { return c.data.stream_blocks; }),
      real("p_event", 0.0, 1.0, false, [](auto& c) -> auto& { return c.data.p_event; }),
      real("p_visual_distractor", 0.0, 1.0, false, [](auto& c) -> auto& { return c.data.p_visual_distractor; }),
      real("p_audio_distractor", 0.0, 1.0, false, [](auto& c) -> auto& { return c.data.p_audio_distractor; }),
      Field{"ambient",
            [](RunConfig& c, std::string_view v) -> std::string {
              if (v == "none") {
                c.data.ambient = Ambient::none;
              } else if (v == "correlated") {
                c.data.ambient = Ambient::correlated;
              } else {
                return "expected none or correlated";
              }
              return {};
            },
            [](const RunConfig& c) {
              return std::string(c.data.ambient == Ambient::none ? "none" : "correlated");
            }},
      real("noise_amplitude", 0.0, kInf, false, [](auto& c) -> auto& { return c.data.noise_amplitude; }),
      real("event_intensity", 0.0, kInf, false, [](auto& c) -> auto& { return c.data.event_intensity; }),
      real("distractor_intensity", 0.0, kInf, false,
           [](auto& c) -> auto& { return c.data.distractor_intensity; }),
      count("square_side", 1, [](auto& c) -> auto& { return c.data.square_side; }),
      count("event_frames", 1, [](auto& c) -> auto& { return c.data.event_frames; }),
      count("click_decay", 1, [](auto& c) -> auto& { return c.data.click_decay; }),
      real("ambient_amplitude", 0.0, kInf, false, [](auto& c) -> auto& { return c.data.ambient_amplitude; }),
      count("ambient_period_frames", 1, [](auto& c) -> auto& { return c.data.ambient_period_frames; }),
      count("min_shift", 1, [](auto& c) -> auto& { return c.data.min_shift; }),
      count("max_shift", 1, [](auto& c) -> auto& { return c.data.max_shift; }),
      flag("bidirectional_shift", [](auto& c) -> auto& { return c.data.bidirectional_shift; }),
      count("n_train", 2, [](auto& c) -> auto& { return c.n_train; }),
      count("n_test", 2, [](auto& c) -> auto& { return c.n_test; }),

      Field{"variant",
            [](RunConfig& c, std::string_view v) -> std::string {
              try {
                c.train.variant = parse_variant(v);
              } catch (const ConfigError&) {
                return "expected uniform, temporal or spatiotemporal";
              }
              return {};
            },
            [](const RunConfig& c) { return std::string(variant_name(c.train.variant)); }},
      count("batch_size", 1, [](auto& c) -> auto& { return c.train.batch_size; }),
      count("epochs", 1, [](auto& c) -> auto& { return c.train.epochs; }),
      real("lr", 0.0, kInf, false, [](auto& c) -> auto& { return c.train.lr; }),
      Field{"seed",
            [](RunConfig& c, std::string_view v) -> std::string {
              std::uint64_t x = 0;
              if (!parse_number(v, x)) return "expected an unsigned 64-bit integer";
              c.train.seed = x;
              return {};
            },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      count("eval_every", 1, [](auto& c) -> auto& { return c.train.eval_every; }),
  };
  return table;
}

std::string_view trim(std::string_view s) {
  const auto ws = [](char ch) { return ch == ' ' || ch == '\t' || ch == '\r'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  data.validate(model);
  train.validate();
  if (n_train < 2 || n_train % 2 != 0) throw ConfigError("n_train must be even and at least 2");
  if (n_test < 2 || n_test % 2 != 0) throw ConfigError("n_test must be even and at least 2");
}

RunConfig parse_config_text(std::string_view text, std::string_view source) {
  RunConfig config;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  const std::string where(source);
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string at = where + ":" + std::to_string(line_no);
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(at + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const Field& f : fields()) {
      if (f.key == key) field = &f;
    }
    if (field == nullptr) throw ConfigError(at + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(at + ": key '" + key + "' given twice");
    if (value.empty()) throw ConfigError(at + ": key '" + key + "' has no value");
    if (const std::string why = field->set(config, value); !why.empty()) {
      throw ConfigError(at + ": key '" + key + "' = '" + std::string(value) + "': " + why);
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return config;
}

RunConfig parse_config(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return parse_config_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                           path.string());
}

std::string format_config(const RunConfig& config) {
  std::ostringstream s;
  for (const Field& f : fields()) s << f.key << " = " << f.get(config) << '\n';
  return s.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace avsync
