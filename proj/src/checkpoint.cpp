// SPDX-License-Identifier: Apache-2.0
#include "avsync/checkpoint.hpp"

#include <limits>

#include "avsync/binary_io.hpp"
#include "avsync/error.hpp"

namespace avsync {
namespace {

constexpr std::uint8_t kCheckpointVersion = 1;

void write_config(ByteWriter& out, const FusionConfig& c) {
  for (std::size_t v : {c.blocks, c.frames_per_block, c.frame_height, c.frame_width, c.frame_channels,
                        c.audio_per_block, c.feat_height, c.feat_width, c.feat_time, c.visual_channels,
                        c.audio_channels, c.joint_layers, c.attn_hidden_temporal, c.attn_hidden_spatiotemporal,
                        c.decision_hidden}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  out.f64(c.dropout_t);
  out.f64(c.dropout_st);
  out.u8(static_cast<std::uint8_t>(c.st_softmax));
}

FusionConfig read_config(ByteReader& in) {
  const std::size_t at = in.offset();
  FusionConfig c;
  for (std::size_t* field : {&c.blocks, &c.frames_per_block, &c.frame_height, &c.frame_width, &c.frame_channels,
                             &c.audio_per_block, &c.feat_height, &c.feat_width, &c.feat_time, &c.visual_channels,
                             &c.audio_channels, &c.joint_layers, &c.attn_hidden_temporal,
                             &c.attn_hidden_spatiotemporal, &c.decision_hidden}) {
    *field = in.u32();
  }
  c.dropout_t = in.f64();
  c.dropout_st = in.f64();
  const std::size_t mode_at = in.offset();
  const std::uint8_t mode = in.u8();
  if (mode > 1) throw FormatError("checkpoint: unknown st_softmax code " + std::to_string(mode), mode_at);
  c.st_softmax = static_cast<StSoftmax>(mode);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config echo: ") + e.what(), at);
  }
  return c;
}

Tensor read_shaped(ByteReader& in, const Shape& expected, const std::string& what) {
  const std::size_t at = in.offset();
  Tensor t;
  try {
    t = decode_tensor(in);
  } catch (const FormatError& e) {
    throw e.prefixed("checkpoint: " + what + ": ");
  }
  if (t.shape() != expected) {
    throw FormatError("checkpoint: " + what + " has shape " + shape_str(t.shape()) + ", expected " +
                          shape_str(expected),
                      at);
  }
  return t;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const SyncModel& model, bool with_optimizer) {
  const ParamStore& ps = model.params();
  ByteWriter out;
  out.raw(std::string_view("AVCK"));
  out.u8(kCheckpointVersion);
  out.u8(static_cast<std::uint8_t>(model.variant()));
  write_config(out, model.config());
  out.u64(model.init_seed());
  out.u32(static_cast<std::uint32_t>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.name(i);
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ContractError("parameter name too long");
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.raw(std::string_view(name));
    encode_tensor(out, ps.value(i));
  }
  out.u8(with_optimizer ? 1 : 0);
  if (with_optimizer) {
    out.u64(ps.step());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      encode_tensor(out, ps.first_moment(i), Dtype::binary64);
      encode_tensor(out, ps.second_moment(i), Dtype::binary64);
    }
  }
  return out.take();
}

SyncModel decode_checkpoint(std::span<const std::uint8_t> bytes, const CheckpointExpect& expect) {
  ByteReader in(bytes);
  in.expect_magic("AVCK", "checkpoint");
  const std::size_t version_at = in.offset();
  const std::uint8_t version = in.u8();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), version_at);
  }
  const std::size_t variant_at = in.offset();
  const std::uint8_t code = in.u8();
  if (code > 2) throw FormatError("checkpoint: unknown variant code " + std::to_string(code), variant_at);
  const Variant variant = static_cast<Variant>(code);
  if (expect.variant && *expect.variant != variant) {
    throw FormatError("checkpoint: holds a " + std::string(variant_name(variant)) + " model, expected " +
                          std::string(variant_name(*expect.variant)),
                      variant_at);
  }
  const std::size_t config_at = in.offset();
  const FusionConfig config = read_config(in);
  if (expect.config && *expect.config != config) {
    throw FormatError("checkpoint: config echo differs from the expected configuration", config_at);
  }
  const std::uint64_t seed = in.u64();
  SyncModel model(variant, config, seed);
  ParamStore& ps = model.params();
  const std::size_t count_at = in.offset();
  const std::uint32_t count = in.u32();
  if (count != ps.size()) {
    throw FormatError("checkpoint: " + std::to_string(count) + " parameters stored, the " +
                          std::string(variant_name(variant)) + " model has " + std::to_string(ps.size()),
                      count_at);
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::size_t name_at = in.offset();
    const std::uint16_t len = in.u16();
    const std::string name = in.raw(len);
    if (name != ps.name(i)) {
      throw FormatError("checkpoint: parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                            ps.name(i) + "'",
                        name_at);
    }
    ps.value(i) = read_shaped(in, ps.value(i).shape(), "parameter '" + name + "'");
  }
  const std::size_t flag_at = in.offset();
  const std::uint8_t flag = in.u8();
  if (flag > 1) throw FormatError("checkpoint: bad optimizer flag", flag_at);
  if (flag == 1) {
    const std::uint64_t step = in.u64();
    std::vector<Tensor> first, second;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      first.push_back(read_shaped(in, ps.value(i).shape(), "first moment of '" + ps.name(i) + "'"));
      second.push_back(read_shaped(in, ps.value(i).shape(), "second moment of '" + ps.name(i) + "'"));
    }
    ps.restore_optimizer_state(step, std::move(first), std::move(second));
  }
  if (!in.at_end()) throw FormatError("checkpoint: trailing bytes", in.offset());
  return model;
}

void save_checkpoint(const SyncModel& model, const std::filesystem::path& path, bool with_optimizer) {
  write_file_bytes(path, encode_checkpoint(model, with_optimizer));
}

SyncModel load_checkpoint(const std::filesystem::path& path, const CheckpointExpect& expect) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes, expect);
  } catch (const FormatError& e) {
    throw e.prefixed(path.string() + ": ");
  }
}

}  // namespace avsync
