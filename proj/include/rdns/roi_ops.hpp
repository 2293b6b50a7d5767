#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rdns/tensor.hpp"

namespace rdns {

/// Region of interest in continuous feature-map coordinates. Feature cell (i, j) is the
/// point sample at (x = j, y = i); the edges x1..x2 and y1..y2 are inclusive.
struct RoIBox {
  std::size_t batch_index = 0;
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
};

/// Pooled output size and, for RoIAlign, the number of sample points per bin axis.
struct RoiSpec {
  std::size_t out_h = 7;
  std::size_t out_w = 7;
  std::size_t sampling_ratio = 2;
};

/// Bilinearly sampled average pooling. Output is (R, C, out_h, out_w). Sample coordinates
/// are clamped to the map before interpolation; nothing is quantized.
Tensor roi_align(const Tensor& features, std::span<const RoIBox> rois, const RoiSpec& spec);
Tensor roi_align_backward(const Shape& feature_shape, std::span<const RoIBox> rois,
                          const RoiSpec& spec, const Tensor& grad_out);

struct RoiPoolResult {
  Tensor output;
  /// Flat feature offset of each output's maximum.
  std::vector<std::size_t> argmax;
};

/// Quantized max pooling: roi edges are rounded outwards to whole cells, the region is cut
/// into out_h x out_w bins with floor/ceil edges, and each bin keeps its maximum.
RoiPoolResult roi_pool(const Tensor& features, std::span<const RoIBox> rois, const RoiSpec& spec);
Tensor roi_pool_backward(const Shape& feature_shape, std::span<const std::size_t> argmax,
                         const Tensor& grad_out);

}  // namespace rdns
