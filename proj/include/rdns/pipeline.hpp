#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdns/checkpoint.hpp"
#include "rdns/densenet.hpp"
#include "rdns/detector.hpp"
#include "rdns/losses.hpp"
#include "rdns/metrics.hpp"
#include "rdns/synth_data.hpp"

namespace rdns {

struct TrainConfig {
  /// Peak rate; epoch e of E uses learning_rate * (1 + cos(pi (e - 1) / E)) / 2 when
  /// cosine_decay is set.
  double learning_rate = 0.01;
  bool cosine_decay = true;
  double momentum = 0.9;
  std::size_t batch_size = 8;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double iou_pos_threshold = 0.5;
  double iou_neg_threshold = 0.3;
  std::size_t top_k = 4;

  void validate() const;
  /// Learning rate used during epoch e (1-based).
  double rate_for_epoch(std::size_t e) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Heavy-ball SGD: v = momentum * v + g; w -= learning_rate * v. One velocity buffer per
/// parameter block, created on first use.
class SgdMomentum {
 public:
  void step(std::span<const StateRef> params, double learning_rate, double momentum);
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  std::vector<std::vector<double>> velocity_;
};

/// Index of the lesion with the largest mask (lowest index on ties).
std::size_t primary_lesion(const Phantom& p);

/// Square crop centered on the primary lesion's box, side 1.3 * max(w, h) + 8 pixels,
/// resampled to size x size with RoIAlign.
Tensor classifier_crop(const Phantom& p, std::size_t size);

struct ClassifierBatch {
  Tensor inputs;  // (N, 1, size, size)
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;
};

ClassifierBatch prepare_classifier_data(std::span<const Phantom> cases, std::size_t size);

DetectionSample to_detection_sample(const Phantom& p);

/// One SGD step of softmax cross-entropy on the classifier. The bundle carries the
/// cross-entropy as its class term.
LossBundle classifier_train_step(DenseNet& net, SgdMomentum& opt, const Tensor& inputs,
                                 std::span<const int> labels, const TrainConfig& cfg,
                                 double learning_rate);

/// One SGD step of the detector on the three-part loss.
LossBundle detector_train_step(MiniDetector& det, SgdMomentum& opt,
                               std::span<const DetectionSample> batch, const TrainConfig& cfg,
                               double learning_rate);

struct EpochLog {
  std::size_t epoch = 0;
  LossBundle train;
  /// (name, value) pairs in CSV column order.
  std::vector<std::pair<std::string, double>> validation;
};

struct TrainResult {
  /// Checkpoint of the epoch with the best validation score (the initial state when no
  /// epoch ran).
  Checkpoint best;
  std::size_t best_epoch = 0;
  /// Names of the per-epoch validation columns, fixed by the kind of model trained.
  std::vector<std::string> validation_columns;
  std::vector<EpochLog> epochs;
  /// Every per-batch bundle, in training order.
  std::vector<LossBundle> steps;

  /// Header plus one row per epoch; values printed with 17 significant digits.
  std::string log_csv() const;
  /// Header plus one row per training batch, in training order.
  std::string steps_csv() const;
};

struct ClassifierReport {
  ConfusionCounts counts;
  /// NaN where a rate is undefined for these counts.
  ConfusionMetrics metrics;
  double auc = 0.0;
  double loss = 0.0;
  std::vector<std::uint64_t> ids;
  std::vector<int> labels;
  /// Predicted probability of the malignant class.
  std::vector<double> scores;

  std::string metrics_csv() const;
  std::string predictions_csv() const;
};

/// Metrics at threshold 0.5 on the malignant probability, plus AUC over the scores.
ClassifierReport evaluate_classifier(DenseNet& net, std::span<const Phantom> cases);
/// Report from raw scores (used by the label-leaking oracle and by recomputation checks).
ClassifierReport classifier_report(std::vector<std::uint64_t> ids, std::vector<int> labels,
                                   std::vector<double> scores);

struct DetectorReport {
  /// Mean over images of overlap / truth area.
  double map = 0.0;
  /// Mean over images of IoU between the pasted prediction and the truth union.
  double mean_iou = 0.0;
  std::vector<std::uint64_t> ids;
  std::vector<SegEvalCase> cases;

  std::string metrics_csv() const;
  /// Tensor list [prediction_0, truth_0, prediction_1, truth_1, ...] of (1, 1, H, W) masks.
  std::string dump() const;
  static DetectorReport from_dump(std::string_view bytes, std::vector<std::uint64_t> ids);
};

/// Pastes every proposal mask (threshold 0.5) into the image frame and scores the union
/// against the union of the ground-truth lesion masks.
DetectorReport evaluate_detector(MiniDetector& det, std::span<const Phantom> cases);

Checkpoint classifier_checkpoint(DenseNet& net, const TrainConfig& cfg, std::size_t epoch);
DenseNet classifier_from_checkpoint(const Checkpoint& ckpt);
Checkpoint detector_checkpoint(MiniDetector& det, const TrainConfig& cfg, std::size_t epoch);
MiniDetector detector_from_checkpoint(const Checkpoint& ckpt);
/// Stand-in model whose scores are the true labels.
Checkpoint oracle_checkpoint();

/// Runs cfg.epochs epochs over seeded-shuffled batches of the training split and keeps
/// the checkpoint with the best validation accuracy (then AUC, then loss). After each
/// epoch the batch-norm running statistics are re-estimated over that epoch's batches.
TrainResult train_classifier(const Dataset& data, const TrainConfig& cfg,
                             DenseNetConfig net_cfg = DenseNetConfig::micro(),
                             std::ostream* progress = nullptr);

/// As train_classifier for the detector; the best epoch maximizes validation MAP.
TrainResult train_detector(const Dataset& data, const TrainConfig& cfg,
                           DetectorConfig det_cfg = {}, std::ostream* progress = nullptr);

}  // namespace rdns
