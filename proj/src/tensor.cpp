#include "ddrnet/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace ddrnet {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint8_t kVersion = 0x01;

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: empty dimension list");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("invalid shape: zero dimension in " + shape_to_string(shape));
  }
}

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                     std::uint8_t>>>;
  U bits = std::bit_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(T));
}

// Reader that remembers the stream offset so format errors can say where.
class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      std::ostringstream msg;
      msg << "TNSR format error at offset " << offset_ + static_cast<std::size_t>(in_.gcount())
          << ": truncated while reading " << what;
      throw FormatError(msg.str());
    }
    offset_ += n;
  }

  template <typename T>
  T le(const char* what) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                       std::uint8_t>>>;
    unsigned char buf[sizeof(T)];
    bytes(reinterpret_cast<char*>(buf), sizeof(T), what);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
    return std::bit_cast<T>(bits);
  }

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream msg;
    msg << "TNSR format error at offset " << offset_ << ": " << what;
    throw FormatError(msg.str());
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::Float64: return "float64";
    case DType::Float32: return "float32";
    case DType::UInt8: return "uint8";
    case DType::Int32: return "int32";
  }
  return "unknown";
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::Float64: return 8;
    case DType::Float32: return 4;
    case DType::UInt8: return 1;
    case DType::Int32: return 4;
  }
  return 0;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_volume(const Shape& shape) {
  std::size_t v = 1;
  for (std::size_t d : shape) v *= d;
  return v;
}

Tensor::Tensor(Shape shape, double fill, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  validate_shape(shape_);
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
  validate_shape(shape_);
  if (data_.size() != shape_volume(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

std::vector<std::size_t> Tensor::strides() const {
  std::vector<std::size_t> s(shape_.size(), 1);
  for (std::size_t k = shape_.size(); k-- > 1;) s[k - 1] = s[k] * shape_[k];
  return s;
}

std::size_t Tensor::offset_of(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank does not match tensor rank");
  std::size_t off = 0;
  for (std::size_t k = 0; k < shape_.size(); ++k) {
    if (index[k] >= shape_[k]) throw ShapeError("index out of range on axis " + std::to_string(k));
    off = off * shape_[k] + index[k];
  }
  return off;
}

std::vector<std::size_t> Tensor::index_of(std::size_t offset) const {
  if (offset >= data_.size()) throw ShapeError("offset out of range");
  std::vector<std::size_t> idx(shape_.size());
  for (std::size_t k = shape_.size(); k-- > 0;) {
    idx[k] = offset % shape_[k];
    offset /= shape_[k];
  }
  return idx;
}

Tensor Tensor::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_volume(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_, dtype_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::operator==(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  return data_.size() == other.data_.size() &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

Tensor new_tensor(const Shape& shape, double fill) { return Tensor(shape, fill); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

Tensor elementwise_add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "elementwise_add");
  Tensor out(a.shape());
  const double* pa = a.raw();
  const double* pb = b.raw();
  double* po = out.raw();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  return out;
}

void accumulate(Tensor& into, const Tensor& from) {
  check_same_shape(into, from, "accumulate");
  double* dst = into.raw();
  const double* src = from.raw();
  for (std::size_t i = 0; i < into.size(); ++i) dst[i] += src[i];
}

Tensor concat_channels(std::span<const Tensor> parts, std::size_t channel_axis) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  const Shape& first = parts[0].shape();
  if (channel_axis >= first.size()) throw ShapeError("concat_channels: axis out of range");
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k) {
      if (k != channel_axis && s[k] != first[k]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat_channels: incompatible shapes " + shape_to_string(first) + " and " +
                       shape_to_string(s));
    }
    channels += s[channel_axis];
  }
  Shape out_shape = first;
  out_shape[channel_axis] = channels;
  Tensor out(out_shape);

  std::size_t outer = 1;
  for (std::size_t k = 0; k < channel_axis; ++k) outer *= first[k];
  std::size_t inner = 1;
  for (std::size_t k = channel_axis + 1; k < first.size(); ++k) inner *= first[k];

  double* dst = out.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (const Tensor& p : parts) {
      std::size_t block = p.shape()[channel_axis] * inner;
      std::copy_n(p.raw() + o * block, block, dst);
      dst += block;
    }
  }
  return out;
}

Tensor slice_axis(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t count) {
  if (axis >= t.rank()) throw ShapeError("slice_axis: axis out of range");
  if (count == 0 || begin + count > t.dim(axis)) throw ShapeError("slice_axis: range out of bounds");
  Shape out_shape = t.shape();
  out_shape[axis] = count;
  Tensor out(out_shape);
  std::size_t outer = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= t.dim(k);
  std::size_t inner = 1;
  for (std::size_t k = axis + 1; k < t.rank(); ++k) inner *= t.dim(k);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(t.raw() + (o * t.dim(axis) + begin) * inner, count * inner,
                out.raw() + o * count * inner);
  }
  return out;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

void write_tnsr(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("TNSR supports at most 255 dimensions");
  out.write(kMagic, 4);
  put_le<std::uint8_t>(out, kVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("dimension exceeds u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  switch (t.dtype()) {
    case DType::Float64:
      for (double v : t.data()) put_le<double>(out, v);
      break;
    case DType::Float32:
      for (double v : t.data()) put_le<float>(out, static_cast<float>(v));
      break;
    case DType::UInt8:
      for (double v : t.data()) put_le<std::uint8_t>(out, static_cast<std::uint8_t>(v));
      break;
    case DType::Int32:
      for (double v : t.data()) put_le<std::int32_t>(out, static_cast<std::int32_t>(v));
      break;
  }
  if (!out) throw FormatError("TNSR write failed");
}

Tensor read_tnsr(std::istream& in) {
  LeReader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("TNSR format error at offset 0: bad magic");
  }
  auto version = r.le<std::uint8_t>("version");
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  auto dtype_byte = r.le<std::uint8_t>("dtype");
  if (dtype_byte > 3) r.fail("unknown dtype " + std::to_string(dtype_byte));
  auto dtype = static_cast<DType>(dtype_byte);
  auto ndim = r.le<std::uint8_t>("ndim");
  if (ndim == 0) r.fail("zero-dimensional tensor");
  Shape shape(ndim);
  for (auto& d : shape) {
    d = r.le<std::uint32_t>("dims");
    if (d == 0) r.fail("zero dimension");
  }
  std::vector<double> data(shape_volume(shape));
  switch (dtype) {
    case DType::Float64:
      for (auto& v : data) v = r.le<double>("payload");
      break;
    case DType::Float32:
      for (auto& v : data) v = r.le<float>("payload");
      break;
    case DType::UInt8:
      for (auto& v : data) v = r.le<std::uint8_t>("payload");
      break;
    case DType::Int32:
      for (auto& v : data) v = r.le<std::int32_t>("payload");
      break;
  }
  return Tensor(std::move(shape), std::move(data), dtype);
}

void save_tnsr(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_tnsr(out, t);
}

Tensor load_tnsr(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return read_tnsr(in);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace ddrnet
