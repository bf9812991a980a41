#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ddrnet/errors.hpp"

namespace ddrnet {

using Shape = std::vector<std::size_t>;

// Storage tag. Values are always held as double in memory; the tag decides
// how a tensor is serialized and what values it may legally hold.
enum class DType : std::uint8_t { Float64 = 0, Float32 = 1, UInt8 = 2, Int32 = 3 };

const char* dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

std::string shape_to_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/// Dense row-major N-dimensional array.
///
/// Every operation in the engine produces a fresh tensor; nothing aliases.
/// There is no broadcasting: mismatched shapes are always a ShapeError.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, DType dtype = DType::Float64);
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::Float64);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  DType dtype() const { return dtype_; }
  void set_dtype(DType dtype) { dtype_ = dtype; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t offset) { return data_[offset]; }
  double operator[](std::size_t offset) const { return data_[offset]; }

  double& at(std::initializer_list<std::size_t> index) { return data_[offset_of(index)]; }
  double at(std::initializer_list<std::size_t> index) const { return data_[offset_of(index)]; }

  std::vector<std::size_t> strides() const;
  std::size_t offset_of(std::span<const std::size_t> index) const;
  std::size_t offset_of(std::initializer_list<std::size_t> index) const {
    return offset_of(std::span<const std::size_t>(index.begin(), index.size()));
  }
  std::vector<std::size_t> index_of(std::size_t offset) const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);

  // Exact equality of shape, dtype and every element bit pattern.
  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::Float64;
};

Tensor new_tensor(const Shape& shape, double fill);

Tensor elementwise_add(const Tensor& a, const Tensor& b);

// In-place accumulate; shapes must match exactly.
void accumulate(Tensor& into, const Tensor& from);

Tensor concat_channels(std::span<const Tensor> parts, std::size_t channel_axis);

// Extracts `count` consecutive entries along `axis` starting at `begin`.
Tensor slice_axis(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t count);

double sum(const Tensor& t);
double max_abs(const Tensor& t);
bool all_finite(const Tensor& t);

void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

// TNSR container: "TNSR", version 0x01, dtype byte, ndim byte, ndim u32 LE
// dims, row-major payload in the declared dtype, little-endian.
void write_tnsr(std::ostream& out, const Tensor& t);
Tensor read_tnsr(std::istream& in);
void save_tnsr(const std::string& path, const Tensor& t);
Tensor load_tnsr(const std::string& path);

}  // namespace ddrnet
