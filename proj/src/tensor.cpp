#include "rdns/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rdns/errors.hpp"

namespace rdns {

std::size_t Shape::numel() const { return n * c * h * w; }

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("cannot add " + other.shape_.str() + " to " + shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty part list");
  const Shape& ref = parts.front().shape();
  std::size_t total_c = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.n != ref.n || s.h != ref.h || s.w != ref.w) {
      throw ShapeError("concat_channels: part " + std::to_string(i) + " has shape " + s.str() +
                       ", expected N,H,W of " + ref.str());
    }
    total_c += s.c;
  }
  Tensor out({ref.n, total_c, ref.h, ref.w});
  const std::size_t plane = ref.h * ref.w;
  for (std::size_t n = 0; n < ref.n; ++n) {
    double* dst = out.plane(n, 0);
    for (const Tensor& p : parts) {
      const std::size_t band = p.shape().c * plane;
      if (band == 0) continue;
      const double* src = p.plane(n, 0);
      std::copy(src, src + band, dst);
      dst += band;
    }
  }
  return out;
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: empty part list");
  const Shape& ref = parts.front().shape();
  std::size_t total_n = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.c != ref.c || s.h != ref.h || s.w != ref.w) {
      throw ShapeError("concat_batch: part " + std::to_string(i) + " has shape " + s.str() +
                       ", expected C,H,W of " + ref.str());
    }
    total_n += s.n;
  }
  std::vector<double> values;
  values.reserve(total_n * ref.c * ref.h * ref.w);
  for (const Tensor& p : parts) values.insert(values.end(), p.values().begin(), p.values().end());
  return Tensor({total_n, ref.c, ref.h, ref.w}, std::move(values));
}

std::vector<Tensor> split_channels(const Tensor& t, std::span<const std::size_t> band_sizes) {
  const Shape& s = t.shape();
  std::size_t sum = 0;
  for (std::size_t b : band_sizes) {
    if (b == 0) throw ShapeError("split_channels: band sizes must be positive");
    sum += b;
  }
  if (sum != s.c) {
    throw ShapeError("split_channels: bands sum to " + std::to_string(sum) + " but tensor has " +
                     std::to_string(s.c) + " channels");
  }
  std::vector<Tensor> out;
  out.reserve(band_sizes.size());
  for (std::size_t b : band_sizes) out.emplace_back(Shape{s.n, b, s.h, s.w});
  const std::size_t plane = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* src = t.plane(n, 0);
    for (Tensor& part : out) {
      const std::size_t band = part.shape().c * plane;
      std::copy(src, src + band, part.plane(n, 0));
      src += band;
    }
  }
  return out;
}

Tensor reduce(const Tensor& t, ReduceKind kind, Axes axes) {
  if (axes.none()) throw ShapeError("reduce: no axes given");
  const Shape& s = t.shape();
  if (t.empty() && kind != ReduceKind::Sum) {
    throw DomainError("reduce: max/mean of an empty tensor");
  }
  const Shape os{axes.has(Axis::N) ? 1 : s.n, axes.has(Axis::C) ? 1 : s.c,
                 axes.has(Axis::H) ? 1 : s.h, axes.has(Axis::W) ? 1 : s.w};
  const double init = kind == ReduceKind::Max ? -std::numeric_limits<double>::infinity() : 0.0;
  Tensor out(os, init);
  for (std::size_t n = 0; n < s.n; ++n) {
    const std::size_t on = os.n == 1 ? 0 : n;
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t oc = os.c == 1 ? 0 : c;
      for (std::size_t h = 0; h < s.h; ++h) {
        const std::size_t oh = os.h == 1 ? 0 : h;
        for (std::size_t w = 0; w < s.w; ++w) {
          double& o = out.at(on, oc, oh, os.w == 1 ? 0 : w);
          const double v = t.at(n, c, h, w);
          if (kind == ReduceKind::Max) {
            o = std::max(o, v);
          } else {
            o += v;
          }
        }
      }
    }
  }
  if (kind == ReduceKind::Mean) {
    const double count = static_cast<double>(s.numel() / std::max<std::size_t>(os.numel(), 1));
    for (double& v : out.data()) v /= count;
  }
  return out;
}

}  // namespace rdns
