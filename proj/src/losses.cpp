#include "rdns/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rdns/errors.hpp"
#include "rdns/nn_ops.hpp"

namespace rdns {

void LossConfig::validate() const {
  if (n_cls == 0 || n_box == 0 || mask_size == 0) {
    throw ConfigError("loss normalizers and mask size must be positive");
  }
  if (!(prob_epsilon > 0.0 && prob_epsilon < 0.5)) {
    throw ConfigError("prob_epsilon must lie in (0, 0.5)");
  }
}

LossBundle total_loss(double class_loss, double box_loss, double mask_loss) {
  for (double v : {class_loss, box_loss, mask_loss}) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite loss component (class=" + std::to_string(class_loss) +
                         ", box=" + std::to_string(box_loss) +
                         ", mask=" + std::to_string(mask_loss) + ")");
    }
    if (v < 0.0) throw DomainError("total_loss: negative loss component");
  }
  LossBundle b;
  b.class_loss = class_loss;
  b.box_loss = box_loss;
  b.mask_loss = mask_loss;
  b.total = class_loss + box_loss + mask_loss;
  return b;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

namespace {

void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError("probability " + std::to_string(p) + " outside [0, 1]");
  }
}

void check_label(int y) {
  if (y != 0 && y != 1) throw DomainError("binary label must be 0 or 1");
}

}  // namespace

double bce(double p, int p_star, double eps) {
  check_probability(p);
  check_label(p_star);
  const double q = std::clamp(p, eps, 1.0 - eps);
  return p_star == 1 ? -std::log(q) : -std::log(1.0 - q);
}

double bce_grad(double p, int p_star, double eps) {
  check_probability(p);
  check_label(p_star);
  if (p < eps || p > 1.0 - eps) return 0.0;
  return p_star == 1 ? -1.0 / p : 1.0 / (1.0 - p);
}

DetectionLoss detection_loss(std::span<const AnchorPrediction> preds,
                             std::span<const AnchorTarget> targets, const LossConfig& cfg) {
  cfg.validate();
  if (preds.size() != targets.size()) {
    throw ShapeError("detection_loss: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(targets.size()) + " targets");
  }
  double cls = 0.0;
  double box = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (targets[i].ignore) continue;
    cls += bce(preds[i].p, targets[i].p_star, cfg.prob_epsilon);
    if (targets[i].p_star == 1) {
      for (std::size_t j = 0; j < 4; ++j) box += smooth_l1(preds[i].t[j] - targets[i].t_star[j]);
    }
  }
  return {cls / static_cast<double>(cfg.n_cls), box / static_cast<double>(cfg.n_box)};
}

DetectionLossGrads detection_loss_backward(std::span<const AnchorPrediction> preds,
                                           std::span<const AnchorTarget> targets,
                                           const LossConfig& cfg) {
  cfg.validate();
  if (preds.size() != targets.size()) throw ShapeError("detection_loss_backward: length mismatch");
  DetectionLossGrads g{std::vector<double>(preds.size(), 0.0),
                       std::vector<BoxDeltas>(preds.size(), BoxDeltas{})};
  const double inv_cls = 1.0 / static_cast<double>(cfg.n_cls);
  const double inv_box = 1.0 / static_cast<double>(cfg.n_box);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (targets[i].ignore) continue;
    g.p[i] = bce_grad(preds[i].p, targets[i].p_star, cfg.prob_epsilon) * inv_cls;
    if (targets[i].p_star == 1) {
      for (std::size_t j = 0; j < 4; ++j) {
        g.t[i][j] = smooth_l1_grad(preds[i].t[j] - targets[i].t_star[j]) * inv_box;
      }
    }
  }
  return g;
}

namespace {

void check_masks(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  cfg.validate();
  const Shape expected{1, 1, cfg.mask_size, cfg.mask_size};
  if (pred.shape() != expected || target.shape() != expected) {
    throw ShapeError("mask_loss: expected " + expected.str() + " masks, got " +
                     pred.shape().str() + " and " + target.shape().str());
  }
}

}  // namespace

double mask_loss(const Tensor& pred_mask, const Tensor& target_mask, const LossConfig& cfg) {
  check_masks(pred_mask, target_mask, cfg);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    acc += bce(pred_mask[i], target_mask[i] > 0.5 ? 1 : 0, cfg.prob_epsilon);
  }
  return acc / static_cast<double>(pred_mask.size());
}

Tensor mask_loss_backward(const Tensor& pred_mask, const Tensor& target_mask,
                          const LossConfig& cfg) {
  check_masks(pred_mask, target_mask, cfg);
  Tensor g(pred_mask.shape());
  const double inv = 1.0 / static_cast<double>(pred_mask.size());
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    g[i] = bce_grad(pred_mask[i], target_mask[i] > 0.5 ? 1 : 0, cfg.prob_epsilon) * inv;
  }
  return g;
}

Tensor select_class_mask(const Tensor& masks, std::size_t roi, std::size_t k) {
  const Shape& s = masks.shape();
  if (roi >= s.n || k >= s.c) throw IndexError("select_class_mask: roi or class out of range");
  Tensor out({1, 1, s.h, s.w});
  const double* src = masks.plane(roi, k);
  std::copy(src, src + s.h * s.w, out.plane(0, 0));
  return out;
}

BoxDeltas encode_box(const Box& gt, const Box& anchor) {
  if (!(anchor.width() > 0.0 && anchor.height() > 0.0)) {
    throw DomainError("encode_box: anchor must have positive extent, got " + anchor.str());
  }
  if (!(gt.width() > 0.0 && gt.height() > 0.0)) {
    throw DomainError("encode_box: box must have positive extent, got " + gt.str());
  }
  return {(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

Box decode_box(const BoxDeltas& t, const Box& anchor) {
  if (!(anchor.width() > 0.0 && anchor.height() > 0.0)) {
    throw DomainError("decode_box: anchor must have positive extent, got " + anchor.str());
  }
  const double cx = anchor.cx() + t[0] * anchor.width();
  const double cy = anchor.cy() + t[1] * anchor.height();
  const double w = anchor.width() * std::exp(t[2]);
  const double h = anchor.height() * std::exp(t[3]);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.h != 1 || s.w != 1 || s.n != labels.size() || s.n == 0) {
    throw ShapeError("softmax_cross_entropy: logits " + s.str() + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  SoftmaxCrossEntropy r{0.0, softmax(logits)};
  const double inv_n = 1.0 / static_cast<double>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= s.c) throw IndexError("label out of range");
    // log-softmax through the max-shifted logits for stability.
    const double* z = logits.plane(n, 0);
    double mx = z[0];
    for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, z[c]);
    double lse = 0.0;
    for (std::size_t c = 0; c < s.c; ++c) lse += std::exp(z[c] - mx);
    r.loss += (std::log(lse) + mx - z[y]) * inv_n;
    double* g = r.grad.plane(n, 0);
    g[y] -= 1.0;
    for (std::size_t c = 0; c < s.c; ++c) g[c] *= inv_n;
  }
  return r;
}

}  // namespace rdns
