#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "rdns/geometry.hpp"
#include "rdns/layers.hpp"
#include "rdns/losses.hpp"
#include "rdns/metrics.hpp"
#include "rdns/roi_ops.hpp"
#include "rdns/tensor.hpp"

namespace rdns {

/// Fixed anchors: one square box per (feature cell, scale), centered on the cell center.
/// Anchor index is (i * feat_w + j) * scales.size() + s.
struct AnchorGrid {
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t stride = 0;
  std::size_t feat_h = 0;
  std::size_t feat_w = 0;
  std::vector<double> scales;
  std::vector<Box> anchors;

  std::size_t size() const { return anchors.size(); }
  std::size_t index(std::size_t i, std::size_t j, std::size_t s) const {
    return (i * feat_w + j) * scales.size() + s;
  }
};

/// Throws ConfigError unless stride divides both extents and every scale is positive.
AnchorGrid build_anchor_grid(std::size_t image_h, std::size_t image_w, std::size_t stride,
                             std::vector<double> scales);

struct AssignConfig {
  double iou_pos_threshold = 0.5;
  double iou_neg_threshold = 0.3;
};

/// Positive when IoU with some ground truth reaches the positive threshold or the anchor is
/// that ground truth's best match (lowest index on ties, IoU > 0); negative when the best
/// IoU is at most the negative threshold; ignored otherwise. Positives encode the ground
/// truth they overlap most (the forcing box for best-match positives below threshold).
std::vector<AnchorTarget> assign_targets(const AnchorGrid& grid, std::span<const Box> gt,
                                         const AssignConfig& cfg = {});

/// Greedy non-maximum suppression over `boxes` ranked by `scores` (descending, lower index
/// first on ties). Returns min(k, boxes.size()) indices: the survivors in rank order, then
/// suppressed boxes in rank order if fewer than k survive.
std::vector<std::size_t> select_proposals(std::span<const Box> boxes, std::span<const double> scores,
                                          std::size_t k, double nms_iou);

/// Clips a box to the image and widens it to at least one pixel on each axis.
Box clip_box(const Box& b, std::size_t h, std::size_t w);

/// Image pixel edges to RoIAlign point coordinates on a map of the given stride.
RoIBox to_roi(const Box& b, std::size_t batch_index, double stride);

/// Binary m x m target: the ground-truth mask sampled at the centers of an m x m grid laid
/// over `box` (nearest pixel; outside the image counts as background).
Tensor mask_target(const Mask& gt, std::size_t h, std::size_t w, const Box& box, std::size_t m);

/// Nearest-neighbour paste of an m x m probability mask into the image frame: every pixel
/// whose center lies inside `box` reads the roi cell under it and is set when that cell is
/// at least `threshold`. Set pixels are OR-ed into `canvas`.
void paste_mask(const Tensor& roi_mask, const Box& box, double threshold, Mask& canvas,
                std::size_t h, std::size_t w);

struct DetectorConfig {
  std::size_t image_size = 64;
  std::size_t stem_channels = 16;
  std::size_t growth_rate = 8;
  std::size_t block_layers = 2;
  double theta = 0.5;
  std::size_t bottleneck_width = 4;
  std::size_t head_channels = 32;
  std::size_t stride = 8;
  std::vector<double> anchor_scales{12.0, 20.0, 28.0};
  RoiSpec mask_roi{14, 14, 2};
  std::size_t mask_channels = 16;
  std::size_t mask_size = 28;
  std::size_t top_k = 4;
  double nms_iou = 0.5;
  AssignConfig assign;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

/// Ground truth of one training image.
struct DetectionSample {
  Tensor image;  // (1, 1, H, W)
  std::vector<Box> boxes;
  std::vector<Mask> masks;
};

struct DetectionPrediction {
  std::vector<AnchorPrediction> anchors;
  std::vector<Box> proposals;
  std::vector<double> proposal_scores;
  /// (top_k, 1, m, m) mask probabilities, one per proposal.
  Tensor masks;
};

/// Loss bundle plus whatever the forward pass derived for it.
struct DetectorStep {
  LossBundle loss;
  std::vector<DetectionPrediction> predictions;
};

/// Dense-block trunk (stem, one block, transition) on a stride-8 grid, a shared 3x3 conv
/// feeding objectness and box 1x1 heads, and a mask head over RoIAlign crops of the trunk
/// features concatenated with crops of the image itself.
class MiniDetector {
 public:
  explicit MiniDetector(DetectorConfig cfg);

  const DetectorConfig& config() const { return cfg_; }
  const AnchorGrid& grid() const { return grid_; }

  /// Inference on a batch (N, 1, H, W): anchors, NMS proposals and their masks.
  std::vector<DetectionPrediction> detect(const Tensor& images, Mode mode = Mode::Infer);

  /// Forward plus the three-part loss over a batch, averaged over images. With
  /// `accumulate_grads` the backward pass adds d loss / d parameter into the gradients.
  DetectorStep loss(std::span<const DetectionSample> batch, Mode mode, bool accumulate_grads);

  /// The only part of the detector with batch normalization.
  Sequential& trunk() { return trunk_; }

  std::vector<StateRef> trunk_state();
  std::vector<StateRef> head_state();
  std::vector<StateRef> parameters();

 private:
  struct Forward;
  Forward run(const Tensor& images, Mode mode);
  Tensor mask_forward(const Tensor& features, const Tensor& images, std::span<const Box> boxes,
                      std::span<const std::size_t> batch_index, std::vector<RoIBox>& feat_rois,
                      Mode mode);

  DetectorConfig cfg_;
  AnchorGrid grid_;
  Sequential trunk_;
  Sequential rpn_;
  Sequential cls_head_;
  Sequential box_head_;
  Sequential mask_head_;
};

}  // namespace rdns
