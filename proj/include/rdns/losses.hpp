#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "rdns/geometry.hpp"
#include "rdns/tensor.hpp"

namespace rdns {

using BoxDeltas = std::array<double, 4>;

/// Ground truth for one anchor: object/background label and encoded box (meaningful only
/// for objects). Ignored anchors contribute to neither loss sum.
struct AnchorTarget {
  int p_star = 0;
  BoxDeltas t_star{};
  bool ignore = false;

  bool operator==(const AnchorTarget&) const = default;
};

/// Predicted objectness probability and encoded box for one anchor.
struct AnchorPrediction {
  double p = 0.5;
  BoxDeltas t{};
};

struct LossConfig {
  /// Classification normalizer (mini-batch size).
  std::size_t n_cls = 256;
  /// Box-regression normalizer (number of anchor locations).
  std::size_t n_box = 2400;
  std::size_t mask_size = 28;
  double prob_epsilon = 1e-7;

  void validate() const;
};

/// The three loss terms and their sum. Build it with total_loss() so that
/// total == class_loss + box_loss + mask_loss holds exactly.
struct LossBundle {
  double total = 0.0;
  double class_loss = 0.0;
  double box_loss = 0.0;
  double mask_loss = 0.0;
};

LossBundle total_loss(double class_loss, double box_loss, double mask_loss);

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);
/// Derivative of smooth_l1; lies in [-1, 1].
double smooth_l1_grad(double x);

/// Binary cross-entropy between prediction p and label p_star, with p clamped into
/// [eps, 1 - eps] before the logs.
double bce(double p, int p_star, double eps = 1e-7);
/// d bce / d p; zero where the clamp is active.
double bce_grad(double p, int p_star, double eps = 1e-7);

struct DetectionLoss {
  double class_loss = 0.0;
  double box_loss = 0.0;
};

/// class = (1/N_cls) sum_i bce(p_i, p*_i);
/// box   = (1/N_box) sum_i p*_i sum_{j<4} smooth_l1(t_ij - t*_ij).
DetectionLoss detection_loss(std::span<const AnchorPrediction> preds,
                             std::span<const AnchorTarget> targets, const LossConfig& cfg);

struct DetectionLossGrads {
  std::vector<double> p;
  std::vector<BoxDeltas> t;
};

/// Gradients of (class_loss + box_loss) w.r.t. every p_i and t_i.
DetectionLossGrads detection_loss_backward(std::span<const AnchorPrediction> preds,
                                           std::span<const AnchorTarget> targets,
                                           const LossConfig& cfg);

/// Average per-cell binary cross-entropy between an m x m predicted mask (probabilities of
/// the ground-truth class) and an m x m binary target. Both tensors are (1, 1, m, m) with
/// m == cfg.mask_size.
double mask_loss(const Tensor& pred_mask, const Tensor& target_mask, const LossConfig& cfg);
Tensor mask_loss_backward(const Tensor& pred_mask, const Tensor& target_mask,
                          const LossConfig& cfg);

/// Extracts channel k of an (R, K, m, m) mask stack for roi r as a (1, 1, m, m) tensor.
Tensor select_class_mask(const Tensor& masks, std::size_t roi, std::size_t k);

/// Standard box parameterization relative to an anchor:
/// ((cx - cx_a) / w_a, (cy - cy_a) / h_a, log(w / w_a), log(h / h_a)).
BoxDeltas encode_box(const Box& gt, const Box& anchor);
Box decode_box(const BoxDeltas& t, const Box& anchor);

struct SoftmaxCrossEntropy {
  double loss = 0.0;
  /// d loss / d logits, same shape as the logits.
  Tensor grad;
};

/// Mean over the batch of -log softmax(logits)[label]; logits are (N, C, 1, 1).
SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace rdns
