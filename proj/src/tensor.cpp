// SPDX-License-Identifier: Apache-2.0
#include "avsync/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "avsync/binary_io.hpp"
#include "avsync/error.hpp"

namespace avsync {

std::size_t shape_numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor rank must be at least 1");
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
  if (!all_finite()) throw NumericError("tensor data contains NaN or Inf");
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  check_extents(shape);
  Tensor t;
  t.data_.assign(shape_numel(shape), value);
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::offset_of(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " does not match tensor " +
                         shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw RangeError("index out of range for axis " + std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset_of(index)]; }

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset_of(index)]; }

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  check_extents(shape);
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::round_to_binary32() noexcept {
  for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

void encode_tensor(ByteWriter& out, const Tensor& t, Dtype dtype) {
  if (t.empty()) throw DimensionError("cannot encode an empty tensor");
  if (t.rank() > 255) throw DimensionError("tensor rank exceeds 255");
  out.raw("AVT1");
  out.u8(static_cast<std::uint8_t>(dtype));
  out.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > 0xFFFFFFFFu) throw DimensionError("tensor extent exceeds 32 bits");
    out.u32(static_cast<std::uint32_t>(e));
  }
  if (dtype == Dtype::binary32) {
    for (double v : t.data()) out.f32(static_cast<float>(v));
  } else {
    for (double v : t.data()) out.f64(v);
  }
}

Tensor decode_tensor(ByteReader& in) {
  in.expect_magic("AVT1", "tensor");
  const std::size_t dtype_at = in.offset();
  const std::uint8_t code = in.u8();
  if (code != 0 && code != 1) {
    throw FormatError("tensor: unknown dtype code " + std::to_string(code), dtype_at);
  }
  const std::size_t rank_at = in.offset();
  const std::uint8_t rank = in.u8();
  if (rank == 0) throw FormatError("tensor: rank must be at least 1", rank_at);
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    const std::size_t at = in.offset();
    e = in.u32();
    if (e == 0) throw FormatError("tensor: zero extent", at);
    count *= e;
    if (count > (std::uint64_t{1} << 40)) throw FormatError("tensor: implausible element count", at);
  }
  const std::size_t width = code == 0 ? 4 : 8;
  if (in.remaining() < count * width) {
    throw FormatError("tensor: payload truncated, need " + std::to_string(count * width) + " bytes",
                      in.offset());
  }
  const std::size_t payload_at = in.offset();
  std::vector<double> data(count);
  for (auto& v : data) v = code == 0 ? static_cast<double>(in.f32()) : in.f64();
  try {
    return Tensor(std::move(shape), std::move(data));
  } catch (const NumericError&) {
    throw FormatError("tensor: payload contains NaN or Inf", payload_at);
  }
}

}  // namespace avsync
