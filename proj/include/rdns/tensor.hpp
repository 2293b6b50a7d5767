#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rdns {

/// Extents of a 4-axis (N, C, H, W) tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const;
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major (N, C, H, W) array of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  /// Pointer to the first element of the (n, c) plane.
  double* plane(std::size_t n, std::size_t c) { return data_.data() + offset(n, c, 0, 0); }
  const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  /// Same data, new extents with identical element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Concatenate along C. All parts must share N, H and W.
Tensor concat_channels(std::span<const Tensor> parts);

/// Stack along N. All parts must share C, H and W.
Tensor concat_batch(std::span<const Tensor> parts);

/// Split along C into contiguous bands of the given sizes.
std::vector<Tensor> split_channels(const Tensor& t, std::span<const std::size_t> band_sizes);

enum class ReduceKind { Sum, Mean, Max };

enum class Axis : std::uint8_t { N = 1, C = 2, H = 4, W = 8 };

/// Bit set of axes.
class Axes {
 public:
  constexpr Axes() = default;
  constexpr Axes(Axis a) : bits_(static_cast<std::uint8_t>(a)) {}  // NOLINT(implicit)
  static constexpr Axes all() { return Axes(0x0F); }
  constexpr bool has(Axis a) const { return (bits_ & static_cast<std::uint8_t>(a)) != 0; }
  constexpr bool none() const { return bits_ == 0; }
  friend constexpr Axes operator|(Axes a, Axes b) { return Axes(a.bits_ | b.bits_); }

 private:
  constexpr explicit Axes(int bits) : bits_(static_cast<std::uint8_t>(bits)) {}
  std::uint8_t bits_ = 0;
};

constexpr Axes operator|(Axis a, Axis b) { return Axes(a) | Axes(b); }

/// Reduce the given axes to extent 1.
Tensor reduce(const Tensor& t, ReduceKind kind, Axes axes);

}  // namespace rdns
