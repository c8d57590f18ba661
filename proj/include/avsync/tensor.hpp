// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace avsync {

class ByteReader;
class ByteWriter;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with shape metadata.
///
/// A default-constructed Tensor is the empty placeholder (rank 0, no data);
/// every other tensor has positive extents and product(shape) == numel().
/// The checked constructor rejects NaN/Inf, so inputs and parameters are
/// always finite; kernels build their outputs through zeros()/full().
class Tensor {
 public:
  Tensor() = default;

  /// Checked construction: validates the size and that every value is finite.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Multi-index access with bounds checking.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Same data under a new shape of equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool all_finite() const noexcept;
  /// Rounds every element to the nearest binary32 value.
  void round_to_binary32() noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t offset_of(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

/// Element type codes of the AVT1 tensor encoding.
enum class Dtype : std::uint8_t { binary32 = 0, binary64 = 1 };

/// AVT1 encoding: "AVT1", dtype byte, rank byte, rank u32 extents, row-major
/// little-endian payload.
void encode_tensor(ByteWriter& out, const Tensor& t, Dtype dtype = Dtype::binary32);
Tensor decode_tensor(ByteReader& in);

}  // namespace avsync
