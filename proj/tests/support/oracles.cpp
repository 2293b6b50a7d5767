#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace rdns::oracle {

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::span<const double> bias,
              std::size_t stride, std::size_t padding) {
  const Shape& in = input.shape();
  const Shape& ks = kernels.shape();
  const std::size_t oh = window_extent(in.h, ks.h, stride, padding);
  const std::size_t ow = window_extent(in.w, ks.w, stride, padding);
  Tensor out({in.n, ks.n, oh, ow});
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t k = 0; k < ks.n; ++k) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias[k];
          for (std::size_t d = 0; d < ks.c; ++d) {
            for (std::size_t u = 0; u < ks.h; ++u) {
              for (std::size_t v = 0; v < ks.w; ++v) {
                const long y = long(i * stride + u) - long(padding);
                const long x = long(j * stride + v) - long(padding);
                if (y < 0 || x < 0 || y >= long(in.h) || x >= long(in.w)) continue;
                acc += input.at(n, d, std::size_t(y), std::size_t(x)) * kernels.at(k, d, u, v);
              }
            }
          }
          out.at(n, k, i, j) = acc;
        }
      }
    }
  }
  return out;
}

Tensor max_pool2d(const Tensor& input, std::size_t kh, std::size_t kw, std::size_t stride,
                  std::size_t padding) {
  const Shape& in = input.shape();
  const std::size_t oh = window_extent(in.h, kh, stride, padding);
  const std::size_t ow = window_extent(in.w, kw, stride, padding);
  Tensor out({in.n, in.c, oh, ow});
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t u = 0; u < kh; ++u) {
            for (std::size_t v = 0; v < kw; ++v) {
              const long y = long(i * stride + u) - long(padding);
              const long x = long(j * stride + v) - long(padding);
              if (y < 0 || x < 0 || y >= long(in.h) || x >= long(in.w)) continue;
              best = std::max(best, input.at(n, c, std::size_t(y), std::size_t(x)));
            }
          }
          out.at(n, c, i, j) = best;
        }
      }
    }
  }
  return out;
}

Tensor avg_pool2d(const Tensor& input, std::size_t kh, std::size_t kw, std::size_t stride) {
  const Shape& in = input.shape();
  const std::size_t oh = window_extent(in.h, kh, stride, 0);
  const std::size_t ow = window_extent(in.w, kw, stride, 0);
  Tensor out({in.n, in.c, oh, ow});
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double sum = 0.0;
          for (std::size_t u = 0; u < kh; ++u) {
            for (std::size_t v = 0; v < kw; ++v) sum += input.at(n, c, i * stride + u, j * stride + v);
          }
          out.at(n, c, i, j) = sum / double(kh * kw);
        }
      }
    }
  }
  return out;
}

namespace {

/// Half-open cell range [lo, hi) of bin b out of `bins` over `len` cells starting at `start`,
/// widened to at least one cell and clipped to the map.
std::pair<long, long> bin_range(long start, long len, long b, long bins, long map) {
  long lo = start + long(std::floor(double(b * len) / double(bins)));
  long hi = start + long(std::ceil(double((b + 1) * len) / double(bins)));
  lo = std::min(lo, map - 1);
  hi = std::max(hi, lo + 1);
  hi = std::min(hi, map);
  return {lo, hi};
}

}  // namespace

Tensor roi_pool(const Tensor& features, std::span<const RoIBox> rois, std::size_t out_h,
                std::size_t out_w) {
  const Shape& fs = features.shape();
  Tensor out({rois.size(), fs.c, out_h, out_w});
  auto clampi = [](double v, long hi) { return std::max(0L, std::min(long(v), hi)); };
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const RoIBox& b = rois[r];
    const long x1 = clampi(std::floor(b.x1), long(fs.w) - 1);
    const long y1 = clampi(std::floor(b.y1), long(fs.h) - 1);
    const long x2 = clampi(std::ceil(b.x2), long(fs.w) - 1);
    const long y2 = clampi(std::ceil(b.y2), long(fs.h) - 1);
    const long hq = std::max(1L, y2 - y1 + 1);
    const long wq = std::max(1L, x2 - x1 + 1);
    for (std::size_t c = 0; c < fs.c; ++c) {
      for (std::size_t ph = 0; ph < out_h; ++ph) {
        const auto [r0, r1] = bin_range(y1, hq, long(ph), long(out_h), long(fs.h));
        for (std::size_t pw = 0; pw < out_w; ++pw) {
          const auto [c0, c1] = bin_range(x1, wq, long(pw), long(out_w), long(fs.w));
          double best = -std::numeric_limits<double>::infinity();
          for (long y = 0; y < long(fs.h); ++y) {
            for (long x = 0; x < long(fs.w); ++x) {
              if (y >= r0 && y < r1 && x >= c0 && x < c1) {
                best = std::max(best, features.at(b.batch_index, c, std::size_t(y), std::size_t(x)));
              }
            }
          }
          out.at(r, c, ph, pw) = best;
        }
      }
    }
  }
  return out;
}

double pair_count_auc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) ++pos; else ++neg;
  }
  if (pos == 0 || neg == 0) throw std::domain_error("pair_count_auc needs both classes");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (double(pos) * double(neg));
}

double pixel_count_map(std::span<const SegEvalCase> cases) {
  double sum = 0.0;
  for (const SegEvalCase& c : cases) {
    std::size_t both = 0;
    std::size_t truth = 0;
    for (std::size_t i = 0; i < c.truth.size(); ++i) {
      if (c.truth[i]) {
        ++truth;
        if (c.model[i]) ++both;
      }
    }
    sum += double(both) / double(truth);
  }
  return sum / double(cases.size());
}

double pixel_count_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  std::size_t both = 0;
  std::size_t either = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && b[i]) ++both;
    if (a[i] || b[i]) ++either;
  }
  return double(both) / double(either);
}

Rates confusion_rates(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
  const double TP = double(tp), FP = double(fp), TN = double(tn), FN = double(fn);
  const double p = TP / (TP + FP);
  const double s = TP / (TP + FN);
  return {(TP + TN) / (TP + TN + FP + FN), s, TN / (TN + FP), p, 2.0 * TP / (2.0 * TP + FP + FN)};
}

std::size_t window_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  return (in + 2 * p - k) / s + 1;
}

DenseNetShapes densenet_shapes(std::size_t input, std::size_t k, std::span<const std::size_t> blocks,
                               double theta) {
  DenseNetShapes out;
  std::size_t size = window_extent(input, 7, 2, 3);
  out.spatial.push_back(size);
  size = window_extent(size, 3, 2, 1);
  out.spatial.push_back(size);
  std::size_t channels = 2 * k;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    channels += blocks[b] * k;
    out.block_out.push_back(channels);
    if (b + 1 < blocks.size()) {
      channels = std::size_t(std::floor(theta * double(channels)));
      size /= 2;
      out.spatial.push_back(size);
    }
  }
  out.spatial.push_back(1);
  return out;
}

}  // namespace rdns::oracle
