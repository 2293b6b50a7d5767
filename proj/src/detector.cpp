#include "rdns/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "rdns/densenet.hpp"
#include "rdns/errors.hpp"
#include "rdns/nn_ops.hpp"

namespace rdns {

AnchorGrid build_anchor_grid(std::size_t image_h, std::size_t image_w, std::size_t stride,
                             std::vector<double> scales) {
  if (stride == 0 || image_h == 0 || image_w == 0 || image_h % stride != 0 ||
      image_w % stride != 0) {
    throw ConfigError("anchor stride " + std::to_string(stride) + " must divide the image " +
                      std::to_string(image_h) + "x" + std::to_string(image_w));
  }
  if (scales.empty()) throw ConfigError("anchor grid needs at least one scale");
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("anchor scales must be positive");
  }
  AnchorGrid g;
  g.image_h = image_h;
  g.image_w = image_w;
  g.stride = stride;
  g.feat_h = image_h / stride;
  g.feat_w = image_w / stride;
  g.scales = std::move(scales);
  g.anchors.reserve(g.feat_h * g.feat_w * g.scales.size());
  const double st = static_cast<double>(stride);
  for (std::size_t i = 0; i < g.feat_h; ++i) {
    for (std::size_t j = 0; j < g.feat_w; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) * st;
      const double cy = (static_cast<double>(i) + 0.5) * st;
      for (double s : g.scales) {
        g.anchors.push_back({cx - 0.5 * s, cy - 0.5 * s, cx + 0.5 * s, cy + 0.5 * s});
      }
    }
  }
  return g;
}

std::vector<AnchorTarget> assign_targets(const AnchorGrid& grid, std::span<const Box> gt,
                                         const AssignConfig& cfg) {
  if (!(cfg.iou_neg_threshold < cfg.iou_pos_threshold)) {
    throw ConfigError("negative IoU threshold must be below the positive threshold");
  }
  const std::size_t na = grid.size();
  std::vector<AnchorTarget> out(na);
  if (gt.empty()) return out;

  std::vector<double> iou(na * gt.size());
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t g = 0; g < gt.size(); ++g) iou[a * gt.size() + g] = box_iou(grid.anchors[a], gt[g]);
  }
  // forced[a] = first ground truth whose best anchor is a.
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> forced(na, kNone);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < na; ++a) {
      if (iou[a * gt.size() + g] > iou[best * gt.size() + g]) best = a;
    }
    if (iou[best * gt.size() + g] > 0.0 && forced[best] == kNone) forced[best] = g;
  }
  for (std::size_t a = 0; a < na; ++a) {
    std::size_t arg = 0;
    for (std::size_t g = 1; g < gt.size(); ++g) {
      if (iou[a * gt.size() + g] > iou[a * gt.size() + arg]) arg = g;
    }
    const double best = iou[a * gt.size() + arg];
    AnchorTarget& t = out[a];
    if (best >= cfg.iou_pos_threshold) {
      t.p_star = 1;
      t.t_star = encode_box(gt[arg], grid.anchors[a]);
    } else if (forced[a] != kNone) {
      t.p_star = 1;
      t.t_star = encode_box(gt[forced[a]], grid.anchors[a]);
    } else if (best > cfg.iou_neg_threshold) {
      t.ignore = true;
    }
  }
  return out;
}

std::vector<std::size_t> select_proposals(std::span<const Box> boxes, std::span<const double> scores,
                                          std::size_t k, double nms_iou) {
  if (boxes.size() != scores.size()) throw ShapeError("select_proposals: length mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    return std::isnan(scores[i]) ? -std::numeric_limits<double>::infinity() : scores[i];
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  const std::size_t want = std::min(k, boxes.size());
  std::vector<std::size_t> kept;
  std::vector<std::size_t> suppressed;
  for (std::size_t idx : order) {
    if (kept.size() == want) break;
    bool keep = true;
    for (std::size_t q : kept) {
      if (box_iou(boxes[idx], boxes[q]) > nms_iou) {
        keep = false;
        break;
      }
    }
    (keep ? kept : suppressed).push_back(idx);
  }
  for (std::size_t i = 0; kept.size() < want && i < suppressed.size(); ++i) kept.push_back(suppressed[i]);
  return kept;
}

Box clip_box(const Box& b, std::size_t h, std::size_t w) {
  const double W = static_cast<double>(w);
  const double H = static_cast<double>(h);
  auto fix = [](double lo, double hi, double extent) {
    if (std::isnan(lo) || std::isnan(hi)) return std::pair{0.0, extent};
    lo = std::clamp(lo, 0.0, extent);
    hi = std::clamp(hi, 0.0, extent);
    if (hi - lo < 1.0) {
      const double c = std::clamp(0.5 * (lo + hi), 0.5, extent - 0.5);
      lo = c - 0.5;
      hi = c + 0.5;
    }
    return std::pair{lo, hi};
  };
  const auto [x1, x2] = fix(b.x1, b.x2, W);
  const auto [y1, y2] = fix(b.y1, b.y2, H);
  return {x1, y1, x2, y2};
}

RoIBox to_roi(const Box& b, std::size_t batch_index, double stride) {
  return {batch_index, b.x1 / stride - 0.5, b.y1 / stride - 0.5, b.x2 / stride - 0.5,
          b.y2 / stride - 0.5};
}

Tensor mask_target(const Mask& gt, std::size_t h, std::size_t w, const Box& box, std::size_t m) {
  if (gt.size() != h * w) throw ShapeError("mask_target: mask size mismatch");
  Tensor t({1, 1, m, m});
  const double cw = box.width() / static_cast<double>(m);
  const double ch = box.height() / static_cast<double>(m);
  for (std::size_t u = 0; u < m; ++u) {
    const double y = box.y1 + (static_cast<double>(u) + 0.5) * ch;
    if (y < 0.0 || y >= static_cast<double>(h)) continue;
    const auto i = static_cast<std::size_t>(y);
    for (std::size_t v = 0; v < m; ++v) {
      const double x = box.x1 + (static_cast<double>(v) + 0.5) * cw;
      if (x < 0.0 || x >= static_cast<double>(w)) continue;
      t[u * m + v] = gt[i * w + static_cast<std::size_t>(x)] != 0 ? 1.0 : 0.0;
    }
  }
  return t;
}

void paste_mask(const Tensor& roi_mask, const Box& box, double threshold, Mask& canvas,
                std::size_t h, std::size_t w) {
  const Shape& s = roi_mask.shape();
  if (s.n * s.c != 1 || s.h == 0 || s.w == 0) throw ShapeError("paste_mask: expects one mask");
  if (canvas.size() != h * w) throw ShapeError("paste_mask: canvas size mismatch");
  if (!(box.width() > 0.0 && box.height() > 0.0)) return;
  for (std::size_t i = 0; i < h; ++i) {
    const double yc = static_cast<double>(i) + 0.5;
    if (yc < box.y1 || yc >= box.y2) continue;
    const auto u = std::min(s.h - 1, static_cast<std::size_t>((yc - box.y1) / box.height() *
                                                              static_cast<double>(s.h)));
    for (std::size_t j = 0; j < w; ++j) {
      const double xc = static_cast<double>(j) + 0.5;
      if (xc < box.x1 || xc >= box.x2) continue;
      const auto v = std::min(s.w - 1, static_cast<std::size_t>((xc - box.x1) / box.width() *
                                                                static_cast<double>(s.w)));
      if (roi_mask[u * s.w + v] >= threshold) canvas[i * w + j] = 1;
    }
  }
}

void DetectorConfig::validate() const {
  if (stride != 8) throw ConfigError("the detector trunk has a fixed stride of 8");
  if (image_size == 0 || image_size % stride != 0) {
    throw ConfigError("image_size must be a positive multiple of the stride");
  }
  if (stem_channels == 0 || growth_rate == 0 || block_layers == 0 || bottleneck_width == 0 ||
      head_channels == 0 || mask_channels == 0) {
    throw ConfigError("detector widths must be positive");
  }
  if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("theta must lie in (0, 1]");
  if (anchor_scales.empty()) throw ConfigError("detector needs anchor scales");
  if (mask_roi.out_h * 2 != mask_size || mask_roi.out_w * 2 != mask_size ||
      mask_roi.sampling_ratio == 0) {
    throw ConfigError("mask head upsamples its RoIAlign crop by 2 to mask_size");
  }
  if (top_k == 0) throw ConfigError("top_k must be positive");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must lie in (0, 1]");
  if (!(assign.iou_neg_threshold < assign.iou_pos_threshold)) {
    throw ConfigError("negative IoU threshold must be below the positive threshold");
  }
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"image_size", image_size},
          {"stem_channels", stem_channels},
          {"growth_rate", growth_rate},
          {"block_layers", block_layers},
          {"theta", theta},
          {"bottleneck_width", bottleneck_width},
          {"head_channels", head_channels},
          {"stride", stride},
          {"anchor_scales", anchor_scales},
          {"mask_roi", {mask_roi.out_h, mask_roi.out_w, mask_roi.sampling_ratio}},
          {"mask_channels", mask_channels},
          {"mask_size", mask_size},
          {"top_k", top_k},
          {"nms_iou", nms_iou},
          {"iou_pos_threshold", assign.iou_pos_threshold},
          {"iou_neg_threshold", assign.iou_neg_threshold},
          {"seed", seed}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  try {
    DetectorConfig c;
    c.image_size = j.at("image_size").get<std::size_t>();
    c.stem_channels = j.at("stem_channels").get<std::size_t>();
    c.growth_rate = j.at("growth_rate").get<std::size_t>();
    c.block_layers = j.at("block_layers").get<std::size_t>();
    c.theta = j.at("theta").get<double>();
    c.bottleneck_width = j.at("bottleneck_width").get<std::size_t>();
    c.head_channels = j.at("head_channels").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.anchor_scales = j.at("anchor_scales").get<std::vector<double>>();
    const auto roi = j.at("mask_roi").get<std::vector<std::size_t>>();
    if (roi.size() != 3) throw ConfigError("mask_roi needs three entries");
    c.mask_roi = {roi[0], roi[1], roi[2]};
    c.mask_channels = j.at("mask_channels").get<std::size_t>();
    c.mask_size = j.at("mask_size").get<std::size_t>();
    c.top_k = j.at("top_k").get<std::size_t>();
    c.nms_iou = j.at("nms_iou").get<double>();
    c.assign.iou_pos_threshold = j.at("iou_pos_threshold").get<double>();
    c.assign.iou_neg_threshold = j.at("iou_neg_threshold").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("detector config: ") + e.what());
  }
}

namespace {

// Objectness prior: the classifier bias starts at logit(kPrior) so that the background
// majority does not dominate the first updates.
constexpr double kObjectnessPrior = 0.05;
// Decoded log-scale deltas are capped so that an untrained box head cannot overflow exp().
constexpr double kMaxLogScale = 4.0;

std::unique_ptr<Conv2dLayer> he_conv(std::size_t out, std::size_t in, std::size_t kernel,
                                     std::size_t pad, Rng& rng) {
  auto c = std::make_unique<Conv2dLayer>(ConvParams::zeros(out, in, kernel, kernel, 1, pad));
  c->init_he(rng);
  return c;
}

void collect(Sequential& s, const std::string& prefix, std::vector<StateRef>& out) {
  s.collect_state(prefix, out);
}

}  // namespace

MiniDetector::MiniDetector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  grid_ = build_anchor_grid(cfg_.image_size, cfg_.image_size, cfg_.stride, cfg_.anchor_scales);
  Rng rng(cfg_.seed);

  append_stem(trunk_, 1, cfg_.stem_channels, rng);
  auto block = std::make_unique<DenseBlock>(DenseBlock::make(
      cfg_.stem_channels, cfg_.block_layers, cfg_.growth_rate, cfg_.bottleneck_width, rng));
  const std::size_t block_out = block->out_channels();
  trunk_.add("block1", std::move(block));
  auto transition = std::make_unique<Transition>(block_out, cfg_.theta);
  transition->init(rng);
  const std::size_t feat_c = transition->out_channels();
  trunk_.add("transition1", std::move(transition));

  const Shape fs = trunk_.output_shape({1, 1, cfg_.image_size, cfg_.image_size});
  if (fs.h != grid_.feat_h || fs.w != grid_.feat_w) {
    throw ConfigError("trunk output " + fs.str() + " does not match the anchor grid");
  }

  const std::size_t ns = cfg_.anchor_scales.size();
  rpn_.add("conv", he_conv(cfg_.head_channels, feat_c, 3, 1, rng));
  rpn_.add("relu", std::make_unique<ReluLayer>());

  auto cls = he_conv(ns, cfg_.head_channels, 1, 0, rng);
  const double prior = std::log(kObjectnessPrior / (1.0 - kObjectnessPrior));
  std::fill(cls->params().bias.begin(), cls->params().bias.end(), prior);
  cls_head_.add("conv", std::move(cls));

  auto box = std::make_unique<Conv2dLayer>(ConvParams::zeros(4 * ns, cfg_.head_channels, 1, 1));
  for (double& v : box->params().kernels.data()) v = rng.normal(0.0, 0.01);
  box_head_.add("conv", std::move(box));

  mask_head_.add("conv1", he_conv(cfg_.mask_channels, feat_c + 1, 3, 1, rng));
  mask_head_.add("relu1", std::make_unique<ReluLayer>());
  mask_head_.add("conv2", he_conv(cfg_.mask_channels, cfg_.mask_channels, 3, 1, rng));
  mask_head_.add("relu2", std::make_unique<ReluLayer>());
  mask_head_.add("upsample", std::make_unique<UpsampleNearestLayer>(2));
  mask_head_.add("logits", he_conv(1, cfg_.mask_channels, 1, 0, rng));
}

struct MiniDetector::Forward {
  Tensor features;
  Tensor probs;   // (N, S, fh, fw)
  Tensor deltas;  // (N, 4S, fh, fw)
};

MiniDetector::Forward MiniDetector::run(const Tensor& images, Mode mode) {
  const Shape& s = images.shape();
  if (s.n == 0 || s.c != 1 || s.h != cfg_.image_size || s.w != cfg_.image_size) {
    throw ShapeError("detector expects (N, 1, " + std::to_string(cfg_.image_size) + ", " +
                     std::to_string(cfg_.image_size) + ") images, got " + s.str());
  }
  Forward f;
  f.features = trunk_.forward(images, mode);
  const Tensor hidden = rpn_.forward(f.features, mode);
  f.probs = sigmoid(cls_head_.forward(hidden, mode));
  f.deltas = box_head_.forward(hidden, mode);
  return f;
}

namespace {

std::vector<AnchorPrediction> anchor_predictions(const AnchorGrid& g, const Tensor& probs,
                                                 const Tensor& deltas, std::size_t n) {
  const std::size_t ns = g.scales.size();
  std::vector<AnchorPrediction> out(g.size());
  for (std::size_t i = 0; i < g.feat_h; ++i) {
    for (std::size_t j = 0; j < g.feat_w; ++j) {
      for (std::size_t s = 0; s < ns; ++s) {
        AnchorPrediction& p = out[g.index(i, j, s)];
        p.p = probs.at(n, s, i, j);
        for (std::size_t q = 0; q < 4; ++q) p.t[q] = deltas.at(n, 4 * s + q, i, j);
      }
    }
  }
  return out;
}

struct Proposals {
  std::vector<Box> boxes;
  std::vector<double> scores;
};

Proposals propose(const AnchorGrid& g, std::span<const AnchorPrediction> preds,
                  const DetectorConfig& cfg) {
  std::vector<Box> decoded(preds.size());
  std::vector<double> scores(preds.size());
  for (std::size_t a = 0; a < preds.size(); ++a) {
    BoxDeltas t = preds[a].t;
    t[2] = std::min(t[2], kMaxLogScale);
    t[3] = std::min(t[3], kMaxLogScale);
    decoded[a] = clip_box(decode_box(t, g.anchors[a]), g.image_h, g.image_w);
    scores[a] = preds[a].p;
  }
  Proposals out;
  for (std::size_t idx : select_proposals(decoded, scores, cfg.top_k, cfg.nms_iou)) {
    out.boxes.push_back(decoded[idx]);
    out.scores.push_back(scores[idx]);
  }
  return out;
}

}  // namespace

Tensor MiniDetector::mask_forward(const Tensor& features, const Tensor& images,
                                  std::span<const Box> boxes,
                                  std::span<const std::size_t> batch_index,
                                  std::vector<RoIBox>& feat_rois, Mode mode) {
  feat_rois.clear();
  std::vector<RoIBox> image_rois;
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    feat_rois.push_back(to_roi(boxes[r], batch_index[r], static_cast<double>(cfg_.stride)));
    image_rois.push_back(to_roi(boxes[r], batch_index[r], 1.0));
  }
  const Tensor parts[2] = {roi_align(features, feat_rois, cfg_.mask_roi),
                           roi_align(images, image_rois, cfg_.mask_roi)};
  return sigmoid(mask_head_.forward(concat_channels(parts), mode));
}

std::vector<DetectionPrediction> MiniDetector::detect(const Tensor& images, Mode mode) {
  Forward f = run(images, mode);
  const std::size_t n_img = images.shape().n;
  std::vector<DetectionPrediction> out(n_img);
  std::vector<Box> boxes;
  std::vector<std::size_t> owner;
  for (std::size_t n = 0; n < n_img; ++n) {
    out[n].anchors = anchor_predictions(grid_, f.probs, f.deltas, n);
    Proposals p = propose(grid_, out[n].anchors, cfg_);
    out[n].proposals = p.boxes;
    out[n].proposal_scores = p.scores;
    boxes.insert(boxes.end(), p.boxes.begin(), p.boxes.end());
    owner.insert(owner.end(), p.boxes.size(), n);
  }
  std::vector<RoIBox> rois;
  const Tensor masks = mask_forward(f.features, images, boxes, owner, rois, mode);
  const std::size_t m = cfg_.mask_size;
  std::size_t r = 0;
  for (std::size_t n = 0; n < n_img; ++n) {
    const std::size_t k = out[n].proposals.size();
    out[n].masks = Tensor({k, 1, m, m});
    std::copy(masks.plane(r, 0), masks.plane(r, 0) + k * m * m, out[n].masks.plane(0, 0));
    r += k;
  }
  return out;
}

DetectorStep MiniDetector::loss(std::span<const DetectionSample> batch, Mode mode,
                                bool accumulate_grads) {
  if (batch.empty()) throw ShapeError("detector loss on an empty batch");
  const std::size_t n_img = batch.size();
  const std::size_t hw = cfg_.image_size;
  std::vector<Tensor> image_list;
  for (const DetectionSample& s : batch) {
    if (s.boxes.size() != s.masks.size()) throw ShapeError("sample boxes and masks differ");
    image_list.push_back(s.image);
  }
  const Tensor images = concat_batch(image_list);
  Forward f = run(images, mode);

  LossConfig lc;
  lc.n_cls = grid_.size();
  lc.n_box = grid_.feat_h * grid_.feat_w;
  lc.mask_size = cfg_.mask_size;
  const double inv_n = 1.0 / static_cast<double>(n_img);

  Tensor d_probs(f.probs.shape());
  Tensor d_deltas(f.deltas.shape());
  double class_sum = 0.0;
  double box_sum = 0.0;
  DetectorStep step;
  step.predictions.resize(n_img);

  std::vector<Box> mask_boxes;
  std::vector<std::size_t> mask_owner;
  std::vector<Tensor> mask_targets;
  std::vector<std::size_t> rois_per_image(n_img, 0);

  const std::size_t ns = grid_.scales.size();
  for (std::size_t n = 0; n < n_img; ++n) {
    const DetectionSample& s = batch[n];
    DetectionPrediction& pred = step.predictions[n];
    pred.anchors = anchor_predictions(grid_, f.probs, f.deltas, n);
    const std::vector<AnchorTarget> targets = assign_targets(grid_, s.boxes, cfg_.assign);
    const DetectionLoss dl = detection_loss(pred.anchors, targets, lc);
    class_sum += dl.class_loss;
    box_sum += dl.box_loss;
    if (accumulate_grads) {
      const DetectionLossGrads g = detection_loss_backward(pred.anchors, targets, lc);
      for (std::size_t i = 0; i < grid_.feat_h; ++i) {
        for (std::size_t j = 0; j < grid_.feat_w; ++j) {
          for (std::size_t sc = 0; sc < ns; ++sc) {
            const std::size_t a = grid_.index(i, j, sc);
            d_probs.at(n, sc, i, j) = g.p[a] * inv_n;
            for (std::size_t q = 0; q < 4; ++q) d_deltas.at(n, 4 * sc + q, i, j) = g.t[a][q] * inv_n;
          }
        }
      }
    }

    // Mask RoIs: every ground-truth box plus each proposal that matches one.
    Proposals p = propose(grid_, pred.anchors, cfg_);
    pred.proposals = p.boxes;
    pred.proposal_scores = p.scores;
    for (std::size_t g = 0; g < s.boxes.size(); ++g) {
      mask_boxes.push_back(s.boxes[g]);
      mask_owner.push_back(n);
      mask_targets.push_back(mask_target(s.masks[g], hw, hw, s.boxes[g], cfg_.mask_size));
      ++rois_per_image[n];
    }
    for (const Box& b : p.boxes) {
      std::size_t arg = 0;
      double best = -1.0;
      for (std::size_t g = 0; g < s.boxes.size(); ++g) {
        const double v = box_iou(b, s.boxes[g]);
        if (v > best) {
          best = v;
          arg = g;
        }
      }
      if (s.boxes.empty() || best < cfg_.assign.iou_pos_threshold) continue;
      mask_boxes.push_back(b);
      mask_owner.push_back(n);
      mask_targets.push_back(mask_target(s.masks[arg], hw, hw, b, cfg_.mask_size));
      ++rois_per_image[n];
    }
  }

  double mask_sum = 0.0;
  Tensor d_features(f.features.shape());
  if (!mask_boxes.empty()) {
    std::vector<RoIBox> feat_rois;
    const Tensor masks = mask_forward(f.features, images, mask_boxes, mask_owner, feat_rois, mode);
    const std::size_t m = cfg_.mask_size;
    Tensor d_logits(masks.shape());
    std::vector<double> per_image(n_img, 0.0);
    for (std::size_t r = 0; r < mask_boxes.size(); ++r) {
      const std::size_t n = mask_owner[r];
      const Tensor pm = select_class_mask(masks, r, 0);
      per_image[n] += mask_loss(pm, mask_targets[r], lc) / static_cast<double>(rois_per_image[n]);
      if (accumulate_grads) {
        const Tensor g = mask_loss_backward(pm, mask_targets[r], lc);
        const double scale = inv_n / static_cast<double>(rois_per_image[n]);
        double* dst = d_logits.plane(r, 0);
        for (std::size_t i = 0; i < m * m; ++i) dst[i] = g[i] * scale * pm[i] * (1.0 - pm[i]);
      }
    }
    for (double v : per_image) mask_sum += v;
    if (accumulate_grads) {
      const Tensor d_crops = mask_head_.backward(d_logits);
      const std::size_t bands[2] = {f.features.shape().c, 1};
      const std::vector<Tensor> split = split_channels(d_crops, bands);
      d_features += roi_align_backward(f.features.shape(), feat_rois, cfg_.mask_roi, split[0]);
    }
  }

  step.loss = total_loss(class_sum * inv_n, box_sum * inv_n, mask_sum * inv_n);

  if (accumulate_grads) {
    for (std::size_t i = 0; i < d_probs.size(); ++i) {
      d_probs[i] *= f.probs[i] * (1.0 - f.probs[i]);
    }
    Tensor d_hidden = cls_head_.backward(d_probs);
    d_hidden += box_head_.backward(d_deltas);
    d_features += rpn_.backward(d_hidden);
    trunk_.backward(d_features);
  }
  return step;
}

std::vector<StateRef> MiniDetector::trunk_state() {
  std::vector<StateRef> out;
  collect(trunk_, "trunk", out);
  return out;
}

std::vector<StateRef> MiniDetector::head_state() {
  std::vector<StateRef> out;
  collect(rpn_, "rpn", out);
  collect(cls_head_, "objectness", out);
  collect(box_head_, "box", out);
  collect(mask_head_, "mask", out);
  return out;
}

std::vector<StateRef> MiniDetector::parameters() {
  std::vector<StateRef> all = trunk_state();
  for (StateRef& s : head_state()) all.push_back(std::move(s));
  std::vector<StateRef> out;
  for (StateRef& s : all) {
    if (s.trainable()) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rdns
