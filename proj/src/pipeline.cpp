#include "rdns/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

#include "rdns/binary_io.hpp"
#include "rdns/errors.hpp"
#include "rdns/nn_ops.hpp"
#include "rdns/roi_ops.hpp"

namespace rdns {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(iou_neg_threshold < iou_pos_threshold)) {
    throw ConfigError("negative IoU threshold must be below the positive threshold");
  }
  if (top_k == 0) throw ConfigError("top_k must be positive");
}

double TrainConfig::rate_for_epoch(std::size_t e) const {
  if (!cosine_decay || epochs == 0) return learning_rate;
  const double phase = static_cast<double>(e - 1) / static_cast<double>(epochs);
  return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * phase));
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"cosine_decay", cosine_decay},
          {"momentum", momentum},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"iou_pos_threshold", iou_pos_threshold},
          {"iou_neg_threshold", iou_neg_threshold},
          {"top_k", top_k}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.cosine_decay = j.at("cosine_decay").get<bool>();
    c.momentum = j.at("momentum").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.iou_pos_threshold = j.at("iou_pos_threshold").get<double>();
    c.iou_neg_threshold = j.at("iou_neg_threshold").get<double>();
    c.top_k = j.at("top_k").get<std::size_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

void SgdMomentum::step(std::span<const StateRef> params, double learning_rate, double momentum) {
  if (velocity_.empty()) {
    for (const StateRef& p : params) velocity_.emplace_back(p.value.size(), 0.0);
  }
  if (velocity_.size() != params.size()) throw ShapeError("optimizer bound to other parameters");
  for (std::size_t b = 0; b < params.size(); ++b) {
    const StateRef& p = params[b];
    std::vector<double>& v = velocity_[b];
    if (v.size() != p.value.size()) throw ShapeError("optimizer block size changed: " + p.name);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum * v[i] + p.grad[i];
      p.value[i] -= learning_rate * v[i];
    }
  }
}

std::size_t primary_lesion(const Phantom& p) {
  if (p.lesions.empty()) throw DomainError("phantom " + std::to_string(p.seed_id) + " has no lesion");
  std::size_t best = 0;
  std::size_t best_area = mask_area(p.lesions[0].mask);
  for (std::size_t l = 1; l < p.lesions.size(); ++l) {
    const std::size_t a = mask_area(p.lesions[l].mask);
    if (a > best_area) {
      best = l;
      best_area = a;
    }
  }
  return best;
}

Tensor classifier_crop(const Phantom& p, std::size_t size) {
  const Box& b = p.lesions[primary_lesion(p)].box;
  const double half = 0.5 * (1.3 * std::max(b.width(), b.height()) + 8.0);
  const Box crop{b.cx() - half, b.cy() - half, b.cx() + half, b.cy() + half};
  const RoIBox roi = to_roi(crop, 0, 1.0);
  return roi_align(p.image, std::span<const RoIBox>(&roi, 1), RoiSpec{size, size, 2});
}

ClassifierBatch prepare_classifier_data(std::span<const Phantom> cases, std::size_t size) {
  ClassifierBatch b;
  std::vector<Tensor> crops;
  crops.reserve(cases.size());
  for (const Phantom& p : cases) {
    crops.push_back(classifier_crop(p, size));
    b.labels.push_back(static_cast<int>(p.label));
    b.ids.push_back(p.seed_id);
  }
  b.inputs = cases.empty() ? Tensor({0, 1, size, size}) : concat_batch(crops);
  return b;
}

DetectionSample to_detection_sample(const Phantom& p) {
  DetectionSample s;
  s.image = p.image;
  for (const Lesion& l : p.lesions) {
    s.boxes.push_back(l.box);
    s.masks.push_back(l.mask);
  }
  return s;
}

LossBundle classifier_train_step(DenseNet& net, SgdMomentum& opt, const Tensor& inputs,
                                 std::span<const int> labels, const TrainConfig& cfg,
                                 double learning_rate) {
  if (inputs.shape().n == 0) throw ShapeError("empty training batch");
  std::vector<StateRef> params = net.parameters();
  zero_grad(params);
  const Tensor logits = net.forward(inputs, Mode::Train);
  const SoftmaxCrossEntropy ce = softmax_cross_entropy(logits, labels);
  const LossBundle bundle = total_loss(ce.loss, 0.0, 0.0);
  net.backward(ce.grad);
  opt.step(params, learning_rate, cfg.momentum);
  return bundle;
}

LossBundle detector_train_step(MiniDetector& det, SgdMomentum& opt,
                               std::span<const DetectionSample> batch, const TrainConfig& cfg,
                               double learning_rate) {
  std::vector<StateRef> params = det.parameters();
  zero_grad(params);
  const DetectorStep step = det.loss(batch, Mode::Train, true);
  opt.step(params, learning_rate, cfg.momentum);
  return step.loss;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

template <typename F>
double or_nan(F f) {
  try {
    return f();
  } catch (const UndefinedMetricError&) {
    return nan();
  }
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch,
                                                    std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch));
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  // A short remainder joins the previous batch so that no batch-norm step sees a
  // handful of samples.
  std::vector<std::vector<std::size_t>> out;
  const std::size_t full = std::max<std::size_t>(1, count / batch);
  for (std::size_t b = 0; b < full && count > 0; ++b) {
    const std::size_t end = b + 1 == full ? count : (b + 1) * batch;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b * batch),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Tensor gather(const Tensor& t, std::span<const std::size_t> idx) {
  const Shape& s = t.shape();
  const std::size_t per = s.c * s.h * s.w;
  Tensor out({idx.size(), s.c, s.h, s.w});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double* src = t.data().data() + idx[k] * per;
    std::copy(src, src + per, out.data().data() + k * per);
  }
  return out;
}

// Mean of the per-batch components, summed exactly by total_loss.
LossBundle mean_bundle(std::span<const LossBundle> steps) {
  double c = 0.0, b = 0.0, m = 0.0;
  for (const LossBundle& s : steps) {
    c += s.class_loss;
    b += s.box_loss;
    m += s.mask_loss;
  }
  const double inv = steps.empty() ? 0.0 : 1.0 / static_cast<double>(steps.size());
  return total_loss(c * inv, b * inv, m * inv);
}

[[noreturn]] void training_failure(std::size_t epoch, std::size_t batch, const std::exception& e) {
  throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                      std::to_string(batch) + ": " + e.what());
}

void log_epoch(std::ostream* out, const EpochLog& e) {
  if (out == nullptr) return;
  *out << "epoch " << e.epoch << " loss " << fmt(e.train.total);
  for (const auto& [k, v] : e.validation) *out << ' ' << k << ' ' << fmt(v);
  *out << '\n';
  out->flush();
}

void split_classifier_state(DenseNet& net, std::vector<StateRef>& trunk,
                            std::vector<StateRef>& heads) {
  Sequential& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers.at(i).collect_state(layers.name_at(i), layers.name_at(i) == "classifier" ? heads : trunk);
  }
}

}  // namespace

std::string TrainResult::log_csv() const {
  std::string out = "epoch,train_loss,class_loss,box_loss,mask_loss";
  for (const std::string& name : validation_columns) out += "," + name;
  out += "\n";
  for (const EpochLog& e : epochs) {
    out += std::to_string(e.epoch) + "," + fmt(e.train.total) + "," + fmt(e.train.class_loss) + "," +
           fmt(e.train.box_loss) + "," + fmt(e.train.mask_loss);
    for (const auto& kv : e.validation) out += "," + fmt(kv.second);
    out += "\n";
  }
  return out;
}

std::string TrainResult::steps_csv() const {
  std::string out = "step,total,class_loss,box_loss,mask_loss\n";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const LossBundle& b = steps[i];
    out += std::to_string(i) + "," + fmt(b.total) + "," + fmt(b.class_loss) + "," + fmt(b.box_loss) +
           "," + fmt(b.mask_loss) + "\n";
  }
  return out;
}

ClassifierReport classifier_report(std::vector<std::uint64_t> ids, std::vector<int> labels,
                                   std::vector<double> scores) {
  if (scores.empty()) throw ShapeError("evaluation on an empty split");
  if (scores.size() != labels.size() || ids.size() != labels.size()) {
    throw ShapeError("classifier_report: length mismatch");
  }
  ClassifierReport r;
  r.counts = confusion_at(scores, labels, 0.5);
  r.metrics = {or_nan([&] { return accuracy(r.counts); }),
               or_nan([&] { return sensitivity(r.counts); }),
               or_nan([&] { return specificity(r.counts); }),
               or_nan([&] { return precision(r.counts); }),
               or_nan([&] { return f1_score(r.counts); })};
  std::vector<ScoredSample> samples;
  for (std::size_t i = 0; i < scores.size(); ++i) samples.push_back({scores[i], labels[i]});
  r.auc = or_nan([&] { return auc_roc(samples); });
  r.ids = std::move(ids);
  r.labels = std::move(labels);
  r.scores = std::move(scores);
  return r;
}

std::string ClassifierReport::metrics_csv() const {
  return rdns::metrics_csv(metrics, auc);
}

std::string ClassifierReport::predictions_csv() const {
  std::string out = "seed_id,label,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out += std::to_string(ids[i]) + "," + std::to_string(labels[i]) + "," + fmt(scores[i]) + "\n";
  }
  return out;
}

ClassifierReport evaluate_classifier(DenseNet& net, std::span<const Phantom> cases) {
  if (cases.empty()) throw ShapeError("evaluation on an empty split");
  const ClassifierBatch data = prepare_classifier_data(cases, net.config().input_h);
  constexpr std::size_t kChunk = 32;
  std::vector<double> scores;
  double loss = 0.0;
  for (std::size_t i = 0; i < cases.size(); i += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, cases.size() - i));
    std::iota(idx.begin(), idx.end(), i);
    const Tensor logits = net.forward(gather(data.inputs, idx), Mode::Infer);
    const std::span<const int> labels(data.labels.data() + i, idx.size());
    loss += softmax_cross_entropy(logits, labels).loss * static_cast<double>(idx.size());
    const Tensor prob = softmax(logits);
    for (std::size_t k = 0; k < idx.size(); ++k) scores.push_back(prob.at(k, 1, 0, 0));
  }
  ClassifierReport r = classifier_report(data.ids, data.labels, std::move(scores));
  r.loss = loss / static_cast<double>(cases.size());
  return r;
}

std::string DetectorReport::metrics_csv() const {
  return "map,mean_iou\n" + fmt(map) + "," + fmt(mean_iou) + "\n";
}

std::string DetectorReport::dump() const {
  ByteWriter w;
  std::vector<Tensor> masks;
  for (const SegEvalCase& c : cases) {
    const std::size_t n = c.truth.size();
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    Tensor a({1, 1, side, side});
    Tensor b({1, 1, side, side});
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = c.model[i];
      b[i] = c.truth[i];
    }
    masks.push_back(std::move(a));
    masks.push_back(std::move(b));
  }
  w.tensor_list(masks);
  return w.take();
}

namespace {

DetectorReport score_cases(std::vector<std::uint64_t> ids, std::vector<SegEvalCase> cases) {
  if (cases.empty()) throw ShapeError("evaluation on an empty split");
  DetectorReport r;
  r.map = map_segmentation(cases);
  double iou_sum = 0.0;
  for (const SegEvalCase& c : cases) iou_sum += iou(c.model, c.truth);
  r.mean_iou = iou_sum / static_cast<double>(cases.size());
  r.ids = std::move(ids);
  r.cases = std::move(cases);
  return r;
}

}  // namespace

DetectorReport DetectorReport::from_dump(std::string_view bytes, std::vector<std::uint64_t> ids) {
  ByteReader r(bytes);
  const std::vector<Tensor> masks = r.tensor_list();
  if (!r.at_end()) throw ParseError("trailing bytes after detector dump", r.offset());
  if (masks.size() % 2 != 0) throw ParseError("detector dump holds an odd mask count", 0);
  std::vector<SegEvalCase> cases;
  for (std::size_t i = 0; i < masks.size(); i += 2) {
    SegEvalCase c;
    for (double v : masks[i].values()) c.model.push_back(v != 0.0 ? 1 : 0);
    for (double v : masks[i + 1].values()) c.truth.push_back(v != 0.0 ? 1 : 0);
    cases.push_back(std::move(c));
  }
  return score_cases(std::move(ids), std::move(cases));
}

DetectorReport evaluate_detector(MiniDetector& det, std::span<const Phantom> cases) {
  if (cases.empty()) throw ShapeError("evaluation on an empty split");
  const std::size_t hw = det.config().image_size;
  constexpr std::size_t kChunk = 16;
  std::vector<SegEvalCase> evals;
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < cases.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, cases.size() - i);
    std::vector<Tensor> images;
    for (std::size_t k = 0; k < n; ++k) images.push_back(cases[i + k].image);
    const std::vector<DetectionPrediction> preds = det.detect(concat_batch(images), Mode::Infer);
    for (std::size_t k = 0; k < n; ++k) {
      SegEvalCase c;
      c.model.assign(hw * hw, 0);
      c.truth = union_mask(cases[i + k]);
      for (std::size_t p = 0; p < preds[k].proposals.size(); ++p) {
        paste_mask(select_class_mask(preds[k].masks, p, 0), preds[k].proposals[p], 0.5, c.model,
                   hw, hw);
      }
      evals.push_back(std::move(c));
      ids.push_back(cases[i + k].seed_id);
    }
  }
  return score_cases(std::move(ids), std::move(evals));
}

Checkpoint classifier_checkpoint(DenseNet& net, const TrainConfig& cfg, std::size_t epoch) {
  std::vector<StateRef> trunk;
  std::vector<StateRef> heads;
  split_classifier_state(net, trunk, heads);
  Checkpoint c;
  c.config = {{"kind", "classifier"},
              {"network", net.config().to_json()},
              {"train", cfg.to_json()},
              {"epoch", epoch}};
  c.trunk = export_state(trunk);
  c.heads = export_state(heads);
  return c;
}

DenseNet classifier_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.config.value("kind", "") != "classifier") {
    throw ConfigError("checkpoint is not a classifier");
  }
  DenseNet net = build_densenet(DenseNetConfig::from_json(ckpt.config.at("network")));
  std::vector<StateRef> trunk;
  std::vector<StateRef> heads;
  split_classifier_state(net, trunk, heads);
  import_state(trunk, ckpt.trunk);
  import_state(heads, ckpt.heads);
  return net;
}

Checkpoint detector_checkpoint(MiniDetector& det, const TrainConfig& cfg, std::size_t epoch) {
  Checkpoint c;
  c.config = {{"kind", "detector"},
              {"detector", det.config().to_json()},
              {"train", cfg.to_json()},
              {"epoch", epoch}};
  c.trunk = export_state(det.trunk_state());
  c.heads = export_state(det.head_state());
  return c;
}

MiniDetector detector_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.config.value("kind", "") != "detector") throw ConfigError("checkpoint is not a detector");
  MiniDetector det(DetectorConfig::from_json(ckpt.config.at("detector")));
  import_state(det.trunk_state(), ckpt.trunk);
  import_state(det.head_state(), ckpt.heads);
  return det;
}

Checkpoint oracle_checkpoint() {
  Checkpoint c;
  c.config = {{"kind", "oracle"}};
  return c;
}

TrainResult train_classifier(const Dataset& data, const TrainConfig& cfg, DenseNetConfig net_cfg,
                             std::ostream* progress) {
  cfg.validate();
  if (data.train.empty() || data.validation.empty()) {
    throw ConfigError("classifier training needs both a training and a validation split");
  }
  net_cfg.seed = cfg.seed;
  net_cfg.in_channels = 1;
  DenseNet net = build_densenet(net_cfg);
  const ClassifierBatch train = prepare_classifier_data(data.train, net_cfg.input_h);
  SgdMomentum opt;

  TrainResult result;
  result.validation_columns = {"val_loss", "val_acc", "val_auc"};
  result.best = classifier_checkpoint(net, cfg, 0);
  double best_acc = -1.0, best_auc = -1.0, best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<LossBundle> steps;
    const auto batches = epoch_batches(data.train.size(), cfg.batch_size, cfg.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<int> labels;
      for (std::size_t i : batches[b]) labels.push_back(train.labels[i]);
      try {
        steps.push_back(classifier_train_step(net, opt, gather(train.inputs, batches[b]), labels,
                                              cfg, cfg.rate_for_epoch(epoch)));
      } catch (const NumericError& e) {
        training_failure(epoch, b, e);
      }
    }
    recalibrate_batch_norm(net.layers(), batches.size(), [&](std::size_t b) {
      (void)net.forward(gather(train.inputs, batches[b]), Mode::Train);
    });
    const ClassifierReport val = evaluate_classifier(net, data.validation);
    EpochLog log{epoch, mean_bundle(steps),
                 {{"val_loss", val.loss}, {"val_acc", val.metrics.acc}, {"val_auc", val.auc}}};
    result.steps.insert(result.steps.end(), steps.begin(), steps.end());
    log_epoch(progress, log);
    result.epochs.push_back(std::move(log));

    const double acc = val.metrics.acc;
    const double auc = std::isnan(val.auc) ? -1.0 : val.auc;
    const bool better = acc > best_acc || (acc == best_acc && auc > best_auc) ||
                        (acc == best_acc && auc == best_auc && val.loss < best_loss);
    if (better) {
      best_acc = acc;
      best_auc = auc;
      best_loss = val.loss;
      result.best = classifier_checkpoint(net, cfg, epoch);
      result.best_epoch = epoch;
    }
  }
  return result;
}

TrainResult train_detector(const Dataset& data, const TrainConfig& cfg, DetectorConfig det_cfg,
                           std::ostream* progress) {
  cfg.validate();
  if (data.train.empty() || data.validation.empty()) {
    throw ConfigError("detector training needs both a training and a validation split");
  }
  det_cfg.seed = cfg.seed;
  det_cfg.top_k = cfg.top_k;
  det_cfg.assign = {cfg.iou_pos_threshold, cfg.iou_neg_threshold};
  det_cfg.image_size = data.spec.image_size;
  MiniDetector det(det_cfg);
  std::vector<DetectionSample> train;
  for (const Phantom& p : data.train) train.push_back(to_detection_sample(p));
  SgdMomentum opt;

  TrainResult result;
  result.validation_columns = {"val_map", "val_iou"};
  result.best = detector_checkpoint(det, cfg, 0);
  double best_map = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<LossBundle> steps;
    const auto batches = epoch_batches(train.size(), cfg.batch_size, cfg.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<DetectionSample> batch;
      for (std::size_t i : batches[b]) batch.push_back(train[i]);
      try {
        steps.push_back(detector_train_step(det, opt, batch, cfg, cfg.rate_for_epoch(epoch)));
      } catch (const NumericError& e) {
        training_failure(epoch, b, e);
      }
    }
    recalibrate_batch_norm(det.trunk(), batches.size(), [&](std::size_t b) {
      std::vector<Tensor> images;
      for (std::size_t i : batches[b]) images.push_back(train[i].image);
      (void)det.trunk().forward(concat_batch(images), Mode::Train);
    });
    const DetectorReport val = evaluate_detector(det, data.validation);
    EpochLog log{epoch, mean_bundle(steps), {{"val_map", val.map}, {"val_iou", val.mean_iou}}};
    result.steps.insert(result.steps.end(), steps.begin(), steps.end());
    log_epoch(progress, log);
    result.epochs.push_back(std::move(log));
    if (val.map > best_map) {
      best_map = val.map;
      result.best = detector_checkpoint(det, cfg, epoch);
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace rdns
