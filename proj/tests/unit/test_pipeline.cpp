#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "rdns/errors.hpp"
#include "rdns/gradcheck.hpp"
#include "rdns/pipeline.hpp"

using namespace rdns;

namespace {

const Dataset& small_dataset() {
  static const Dataset d = [] {
    DatasetSpec s;
    s.count = 20;
    s.benign_count = 10;
    s.malignant_count = 10;
    s.master_seed = 11;
    return generate_dataset(s);
  }();
  return d;
}

DenseNetConfig small_net() {
  DenseNetConfig c = DenseNetConfig::micro();
  c.input_h = c.input_w = 32;
  return c;
}

std::vector<std::vector<double>> snapshot(std::span<const StateRef> state) {
  std::vector<std::vector<double>> out;
  for (const StateRef& s : state) out.emplace_back(s.value.begin(), s.value.end());
  return out;
}

std::vector<double> overfit_losses(std::size_t steps) {
  DenseNet net = build_densenet(small_net());
  const ClassifierBatch data =
      prepare_classifier_data(std::span(small_dataset().train).first(8), net.config().input_h);
  TrainConfig cfg;
  SgdMomentum opt;
  std::vector<double> losses;
  for (std::size_t i = 0; i < steps; ++i) {
    losses.push_back(classifier_train_step(net, opt, data.inputs, data.labels, cfg, 0.01).total);
  }
  return losses;
}

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(TrainConfig, ValidationScheduleAndJson) {
  TrainConfig cfg;
  cfg.validate();
  EXPECT_EQ(cfg.rate_for_epoch(1), cfg.learning_rate);
  cfg.epochs = 4;
  EXPECT_NEAR(cfg.rate_for_epoch(3), 0.01 * (1 + std::cos(std::numbers::pi / 2)) / 2, 1e-15);
  for (std::size_t e = 2; e <= 4; ++e) EXPECT_LT(cfg.rate_for_epoch(e), cfg.rate_for_epoch(e - 1));
  cfg.cosine_decay = false;
  EXPECT_EQ(cfg.rate_for_epoch(4), cfg.learning_rate);

  const TrainConfig back = TrainConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());

  TrainConfig bad;
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.iou_neg_threshold = 0.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(SgdMomentum, HeavyBallUpdate) {
  std::vector<double> w{1.0, -2.0}, g{0.5, 1.0};
  const std::vector<StateRef> p{{"w", Shape{1, 1, 1, 2}, w, g}};
  SgdMomentum opt;
  opt.step(p, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(w[0], 1.0 - 0.1 * 0.5);
  opt.step(p, 0.1, 0.9);
  // v = 0.9 * 0.5 + 0.5 = 0.95.
  EXPECT_DOUBLE_EQ(w[0], 1.0 - 0.05 - 0.095);
  EXPECT_DOUBLE_EQ(opt.velocity()[0][1], 1.9);
}

TEST(ClassifierTrainStep, ZeroRateLeavesParametersUnchanged) {
  DenseNet net = build_densenet(small_net());
  const auto before = snapshot(net.parameters());
  const ClassifierBatch data =
      prepare_classifier_data(std::span(small_dataset().train).first(4), net.config().input_h);
  SgdMomentum opt;
  for (int i = 0; i < 3; ++i) (void)classifier_train_step(net, opt, data.inputs, data.labels, {}, 0.0);
  EXPECT_EQ(snapshot(net.parameters()), before);
}

TEST(ClassifierTrainStep, OverfitsAFixedBatch) {
  const std::vector<double> losses = overfit_losses(200);
  EXPECT_LT(losses.back(), 0.5 * losses.front());
  for (double l : losses) EXPECT_TRUE(std::isfinite(l));
  // 20-step moving average is non-increasing from step 40 on.
  auto average = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - 20; i < end; ++i) s += losses[i];
    return s / 20.0;
  };
  for (std::size_t end = 41; end <= losses.size(); ++end) {
    EXPECT_LE(average(end), average(end - 1)) << "window ending at step " << end;
  }
}

TEST(ClassifierTrainStep, DeterministicLossSequence) {
  EXPECT_EQ(overfit_losses(5), overfit_losses(5));
}

TEST(DetectorTrainStep, ZeroRateAndDeterminism) {
  std::vector<DetectionSample> batch;
  for (std::size_t i = 0; i < 2; ++i) batch.push_back(to_detection_sample(small_dataset().train[i]));
  auto run = [&](double rate) {
    MiniDetector det(DetectorConfig{});
    SgdMomentum opt;
    const auto before = snapshot(det.parameters());
    std::vector<double> totals;
    for (int i = 0; i < 3; ++i) {
      const LossBundle l = detector_train_step(det, opt, batch, {}, rate);
      EXPECT_EQ(l.total, l.class_loss + l.box_loss + l.mask_loss);
      totals.push_back(l.total);
    }
    if (rate == 0.0) EXPECT_EQ(snapshot(det.parameters()), before);
    return totals;
  };
  (void)run(0.0);
  EXPECT_EQ(run(0.01), run(0.01));
}

TEST(ClassifierData, CropShapeAndPrimaryLesion) {
  const Phantom& p = small_dataset().train[0];
  EXPECT_EQ(classifier_crop(p, 32).shape(), (Shape{1, 1, 32, 32}));
  const std::size_t primary = primary_lesion(p);
  for (const Lesion& l : p.lesions) EXPECT_LE(mask_area(l.mask), mask_area(p.lesions[primary].mask));
  const ClassifierBatch b = prepare_classifier_data(small_dataset().validation, 32);
  EXPECT_EQ(b.inputs.shape().n, small_dataset().validation.size());
  EXPECT_EQ(b.labels.size(), b.ids.size());
}

TEST(TrainClassifier, ZeroEpochsReturnsInitialCheckpoint) {
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train_classifier(small_dataset(), cfg, small_net());
  EXPECT_EQ(r.best_epoch, 0u);
  DenseNetConfig net_cfg = small_net();
  net_cfg.seed = cfg.seed;
  DenseNet fresh = build_densenet(net_cfg);
  EXPECT_EQ(encode_checkpoint(r.best), encode_checkpoint(classifier_checkpoint(fresh, cfg, 0)));
  EXPECT_EQ(count_lines(r.log_csv()), 1u);
  EXPECT_EQ(r.log_csv(), "epoch,train_loss,class_loss,box_loss,mask_loss,val_loss,val_acc,val_auc\n");
}

TEST(TrainClassifier, LogsEveryEpochAndIsDeterministic) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  const TrainResult a = train_classifier(small_dataset(), cfg, small_net());
  const TrainResult b = train_classifier(small_dataset(), cfg, small_net());
  EXPECT_EQ(count_lines(a.log_csv()), cfg.epochs + 1);
  EXPECT_EQ(a.log_csv(), b.log_csv());
  EXPECT_EQ(a.steps_csv(), b.steps_csv());
  EXPECT_EQ(encode_checkpoint(a.best), encode_checkpoint(b.best));
  EXPECT_EQ(a.steps.size(), 2u * (small_dataset().train.size() / 4));
  for (const LossBundle& l : a.steps) EXPECT_EQ(l.total, l.class_loss + l.box_loss + l.mask_loss);
  EXPECT_GE(a.best_epoch, 1u);

  // The best checkpoint reloads into a network that reproduces the logged accuracy.
  DenseNet net = classifier_from_checkpoint(a.best);
  const ClassifierReport rep = evaluate_classifier(net, small_dataset().validation);
  EXPECT_EQ(rep.metrics.acc, a.epochs[a.best_epoch - 1].validation[1].second);
}

TEST(TrainClassifier, DivergenceIsATrainingError) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  Dataset poisoned = small_dataset();
  for (double& v : poisoned.train[5].image.data()) v = std::nan("");
  try {
    (void)train_classifier(poisoned, cfg, small_net());
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(TrainDetector, ShortRunLogsMapAndIou) {
  TrainConfig cfg;
  cfg.epochs = 1;
  const TrainResult r = train_detector(small_dataset(), cfg);
  EXPECT_EQ(r.validation_columns, (std::vector<std::string>{"val_map", "val_iou"}));
  EXPECT_EQ(count_lines(r.log_csv()), 2u);
  MiniDetector det = detector_from_checkpoint(r.best);
  const DetectorReport rep = evaluate_detector(det, small_dataset().validation);
  EXPECT_EQ(rep.map, r.epochs[0].validation[0].second);
}

TEST(EvaluateClassifier, OracleAndConstantScores) {
  const std::vector<int> labels{0, 1, 1, 0, 1};
  std::vector<double> leaked(labels.begin(), labels.end());
  const ClassifierReport oracle = classifier_report({1, 2, 3, 4, 5}, labels, leaked);
  EXPECT_EQ(oracle.metrics.acc, 1.0);
  EXPECT_EQ(oracle.auc, 1.0);
  const ClassifierReport flat = classifier_report({1, 2, 3, 4, 5}, labels, std::vector<double>(5, 0.3));
  EXPECT_EQ(flat.auc, 0.5);
  EXPECT_TRUE(std::isnan(flat.metrics.precision));
  DenseNet net = build_densenet(small_net());
  EXPECT_THROW((void)evaluate_classifier(net, std::span<const Phantom>{}), ShapeError);
}

TEST(EvaluateClassifier, ReportMatchesRecomputationFromPredictions) {
  DenseNet net = build_densenet(small_net());
  const ClassifierReport rep = evaluate_classifier(net, small_dataset().validation);
  std::istringstream in(rep.predictions_csv());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "seed_id,label,score");
  std::vector<double> scores;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.rfind(',');
    labels.push_back(std::stoi(line.substr(a + 1, b - a - 1)));
    scores.push_back(std::stod(line.substr(b + 1)));
  }
  ASSERT_EQ(scores, rep.scores);
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pos = scores[i] >= 0.5;
    if (labels[i] == 1) ++(pos ? tp : fn);
    else ++(pos ? fp : tn);
  }
  EXPECT_DOUBLE_EQ(rep.metrics.acc, oracle::confusion_rates(tp, fp, tn, fn).acc);
  EXPECT_NEAR(rep.auc, oracle::pair_count_auc(scores, labels), 1e-12);
}

TEST(DetectorReport, DumpRoundTripRecomputesMap) {
  MiniDetector det(DetectorConfig{});
  const DetectorReport rep = evaluate_detector(det, small_dataset().validation);
  const DetectorReport back = DetectorReport::from_dump(rep.dump(), rep.ids);
  ASSERT_EQ(back.cases.size(), rep.cases.size());
  for (std::size_t i = 0; i < rep.cases.size(); ++i) {
    EXPECT_EQ(back.cases[i].model, rep.cases[i].model);
    EXPECT_EQ(back.cases[i].truth, rep.cases[i].truth);
  }
  EXPECT_DOUBLE_EQ(back.map, rep.map);
  EXPECT_DOUBLE_EQ(oracle::pixel_count_map(rep.cases), rep.map);
  EXPECT_THROW((void)DetectorReport::from_dump(rep.dump().substr(0, 20), rep.ids), ParseError);
}

TEST(Checkpoint, RoundTripAndTruncation) {
  DenseNet net = build_densenet(small_net());
  const Checkpoint c = classifier_checkpoint(net, {}, 3);
  const std::string bytes = encode_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 5), "RDNS1");
  EXPECT_EQ(decode_checkpoint(bytes), c);
  DenseNet back = classifier_from_checkpoint(c);
  Rng rng(1);
  const Tensor x = uniform_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
  EXPECT_EQ(back.forward(x, Mode::Infer), net.forward(x, Mode::Infer));
  try {
    (void)decode_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 9));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  EXPECT_THROW((void)decode_checkpoint("RDNS2"), ParseError);
}
