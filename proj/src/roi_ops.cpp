#include "rdns/roi_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rdns/errors.hpp"

namespace rdns {

namespace {

void validate(const Shape& fs, std::span<const RoIBox> rois, const RoiSpec& spec) {
  if (spec.out_h == 0 || spec.out_w == 0 || spec.sampling_ratio == 0) {
    throw ShapeError("roi spec extents and sampling ratio must be positive");
  }
  if (fs.h == 0 || fs.w == 0) throw ShapeError("roi op on an empty feature map");
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const RoIBox& b = rois[r];
    if (b.batch_index >= fs.n) {
      throw IndexError("roi " + std::to_string(r) + " batch index " +
                       std::to_string(b.batch_index) + " >= batch size " + std::to_string(fs.n));
    }
    if (!(std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
          std::isfinite(b.y2))) {
      throw DomainError("roi " + std::to_string(r) + " has non-finite coordinates");
    }
    if (b.x2 < b.x1 || b.y2 < b.y1) {
      throw DomainError("roi " + std::to_string(r) + " has x2 < x1 or y2 < y1");
    }
  }
}

// Four neighbours of a bilinear read at (y, x) after clamping to the map, with the
// fractional offsets ly, lx toward the second neighbour.
struct Bilinear {
  std::size_t y0, y1, x0, x1;
  double ly, lx;

  // Lerp form: exact on constant maps because f01 - f00 and bottom - top vanish.
  double read(const double* f, std::size_t w) const {
    const double top = f[y0 * w + x0] + lx * (f[y0 * w + x1] - f[y0 * w + x0]);
    const double bottom = f[y1 * w + x0] + lx * (f[y1 * w + x1] - f[y1 * w + x0]);
    return top + ly * (bottom - top);
  }

  void scatter(double* g, std::size_t w, double v) const {
    const double hy = 1.0 - ly;
    const double hx = 1.0 - lx;
    g[y0 * w + x0] += hy * hx * v;
    g[y0 * w + x1] += hy * lx * v;
    g[y1 * w + x0] += ly * hx * v;
    g[y1 * w + x1] += ly * lx * v;
  }
};

Bilinear bilinear_at(double y, double x, std::size_t h, std::size_t w) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  return {y0, std::min(y0 + 1, h - 1), x0, std::min(x0 + 1, w - 1), y - static_cast<double>(y0),
          x - static_cast<double>(x0)};
}

// Calls fn(bin_index, sample_index, bilinear) for every sample point of a roi, bins in
// row-major order and samples row-major within each bin.
template <typename Fn>
void for_each_sample(const RoIBox& b, const RoiSpec& spec, std::size_t h, std::size_t w, Fn&& fn) {
  const double bin_h = (b.y2 - b.y1) / static_cast<double>(spec.out_h);
  const double bin_w = (b.x2 - b.x1) / static_cast<double>(spec.out_w);
  const auto s = static_cast<double>(spec.sampling_ratio);
  for (std::size_t ph = 0; ph < spec.out_h; ++ph) {
    for (std::size_t pw = 0; pw < spec.out_w; ++pw) {
      std::size_t k = 0;
      for (std::size_t a = 0; a < spec.sampling_ratio; ++a) {
        const double y =
            b.y1 + bin_h * (static_cast<double>(ph) + (static_cast<double>(a) + 0.5) / s);
        for (std::size_t c = 0; c < spec.sampling_ratio; ++c) {
          const double x =
              b.x1 + bin_w * (static_cast<double>(pw) + (static_cast<double>(c) + 0.5) / s);
          fn(ph * spec.out_w + pw, k++, bilinear_at(y, x, h, w));
        }
      }
    }
  }
}

}  // namespace

Tensor roi_align(const Tensor& features, std::span<const RoIBox> rois, const RoiSpec& spec) {
  const Shape& fs = features.shape();
  validate(fs, rois, spec);
  Tensor out({rois.size(), fs.c, spec.out_h, spec.out_w});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const RoIBox& b = rois[r];
    for (std::size_t c = 0; c < fs.c; ++c) {
      const double* f = features.plane(b.batch_index, c);
      double* o = out.plane(r, c);
      // Running mean per bin; a constant map reproduces the constant bit-exactly.
      for_each_sample(b, spec, fs.h, fs.w, [&](std::size_t bin, std::size_t k, const Bilinear& s) {
        o[bin] += (s.read(f, fs.w) - o[bin]) / static_cast<double>(k + 1);
      });
    }
  }
  return out;
}

Tensor roi_align_backward(const Shape& feature_shape, std::span<const RoIBox> rois,
                          const RoiSpec& spec, const Tensor& grad_out) {
  validate(feature_shape, rois, spec);
  const Shape expected{rois.size(), feature_shape.c, spec.out_h, spec.out_w};
  if (grad_out.shape() != expected) {
    throw ShapeError("roi_align_backward: grad_out " + grad_out.shape().str() + ", expected " +
                     expected.str());
  }
  Tensor g(feature_shape);
  const double inv_count = 1.0 / static_cast<double>(spec.sampling_ratio * spec.sampling_ratio);
  const std::size_t fw = feature_shape.w;
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const RoIBox& b = rois[r];
    for (std::size_t c = 0; c < feature_shape.c; ++c) {
      double* gf = g.plane(b.batch_index, c);
      const double* go = grad_out.plane(r, c);
      for_each_sample(b, spec, feature_shape.h, fw,
                      [&](std::size_t bin, std::size_t, const Bilinear& s) {
                        s.scatter(gf, fw, go[bin] * inv_count);
                      });
    }
  }
  return g;
}

RoiPoolResult roi_pool(const Tensor& features, std::span<const RoIBox> rois, const RoiSpec& spec) {
  const Shape& fs = features.shape();
  validate(fs, rois, spec);
  RoiPoolResult res{Tensor({rois.size(), fs.c, spec.out_h, spec.out_w}),
                    std::vector<std::size_t>(rois.size() * fs.c * spec.out_h * spec.out_w)};
  const auto max_col = static_cast<double>(fs.w - 1);
  const auto max_row = static_cast<double>(fs.h - 1);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const RoIBox& b = rois[r];
    // Outward rounding to whole cells, clipped to the map.
    const auto qx1 = static_cast<std::size_t>(std::clamp(std::floor(b.x1), 0.0, max_col));
    const auto qy1 = static_cast<std::size_t>(std::clamp(std::floor(b.y1), 0.0, max_row));
    const auto qx2 = static_cast<std::size_t>(std::clamp(std::ceil(b.x2), 0.0, max_col));
    const auto qy2 = static_cast<std::size_t>(std::clamp(std::ceil(b.y2), 0.0, max_row));
    const std::size_t hq = qy2 >= qy1 ? qy2 - qy1 + 1 : 1;
    const std::size_t wq = qx2 >= qx1 ? qx2 - qx1 + 1 : 1;
    for (std::size_t ph = 0; ph < spec.out_h; ++ph) {
      std::size_t h0 = qy1 + (ph * hq) / spec.out_h;
      std::size_t h1 = qy1 + ((ph + 1) * hq + spec.out_h - 1) / spec.out_h;
      h0 = std::min(h0, fs.h - 1);
      h1 = std::clamp(h1, h0 + 1, fs.h);
      for (std::size_t pw = 0; pw < spec.out_w; ++pw) {
        std::size_t w0 = qx1 + (pw * wq) / spec.out_w;
        std::size_t w1 = qx1 + ((pw + 1) * wq + spec.out_w - 1) / spec.out_w;
        w0 = std::min(w0, fs.w - 1);
        w1 = std::clamp(w1, w0 + 1, fs.w);
        for (std::size_t c = 0; c < fs.c; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = features.offset(b.batch_index, c, h0, w0);
          for (std::size_t y = h0; y < h1; ++y) {
            for (std::size_t x = w0; x < w1; ++x) {
              const std::size_t idx = features.offset(b.batch_index, c, y, x);
              if (features[idx] > best) {
                best = features[idx];
                arg = idx;
              }
            }
          }
          const std::size_t o = res.output.offset(r, c, ph, pw);
          res.output[o] = best;
          res.argmax[o] = arg;
        }
      }
    }
  }
  return res;
}

Tensor roi_pool_backward(const Shape& feature_shape, std::span<const std::size_t> argmax,
                         const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("roi_pool_backward: argmax/grad_out length mismatch");
  }
  Tensor g(feature_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= g.size()) throw IndexError("roi_pool_backward: argmax out of range");
    g[argmax[i]] += grad_out[i];
  }
  return g;
}

}  // namespace rdns
