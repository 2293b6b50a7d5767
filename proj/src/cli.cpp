#include "rdns/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>

#include "CLI11.hpp"
#include "rdns/binary_io.hpp"
#include "rdns/checkpoint.hpp"
#include "rdns/errors.hpp"
#include "rdns/gradient_suite.hpp"
#include "rdns/parallel.hpp"
#include "rdns/pipeline.hpp"
#include "rdns/roi_ops.hpp"

namespace rdns {
namespace {

namespace fs = std::filesystem;

constexpr const char* kCheckpointFile = "checkpoint.rdns";
constexpr const char* kLogFile = "train_log.csv";
constexpr const char* kStepsFile = "train_steps.csv";

/// Bad flags, paths or input files; maps to kExitUsage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// An output directory may be new (its parent must exist) or existing; an existing
/// non-empty one needs --force.
void check_out_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw UsageError("--out must not be empty");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw UsageError(dir.string() + " is not empty (pass --force to overwrite)");
    }
    return;
  }
  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) {
    throw UsageError("parent directory of " + dir.string() + " does not exist");
  }
}

void check_dataset_dir(const fs::path& dir) {
  if (!fs::is_regular_file(dir / "manifest.json")) {
    throw UsageError("no dataset at " + dir.string() + " (manifest.json missing)");
  }
}

void check_input_file(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw UsageError("no such file: " + file.string());
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string token = text.substr(pos, comma - pos);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (token.empty() || ec != std::errc() || end != token.data() + token.size() ||
        !std::isfinite(v)) {
      throw UsageError(what + ": cannot parse '" + token + "' as a number");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

RoIBox parse_roi(const std::string& text) {
  const std::vector<double> v = parse_numbers(text, "--roi");
  if (v.size() != 4) throw UsageError("--roi expects x1,y1,x2,y2");
  if (v[2] < v[0] || v[3] < v[1]) throw UsageError("--roi needs x1 <= x2 and y1 <= y2");
  return {0, v[0], v[1], v[2], v[3]};
}

/// "constant:V", "ramp" (value x + 2 y at cell (y, x)) or "random:SEED" (uniform in [0, 1)).
Tensor parse_map(const std::string& spec, std::size_t size) {
  const std::size_t colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  Tensor map({1, 1, size, size});
  if (kind == "constant") {
    const std::vector<double> v = parse_numbers(arg, "--map constant");
    if (v.size() != 1) throw UsageError("--map constant:V takes one value");
    map.fill(v[0]);
  } else if (kind == "ramp" && arg.empty()) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) map.at(0, 0, y, x) = double(x) + 2.0 * double(y);
    }
  } else if (kind == "random") {
    std::uint64_t seed = 0;
    const auto [end, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), seed);
    if (arg.empty() || ec != std::errc() || end != arg.data() + arg.size()) {
      throw UsageError("--map random:SEED needs an unsigned integer seed");
    }
    Rng rng(seed);
    for (double& v : map.data()) v = rng.uniform();
  } else {
    throw UsageError("--map must be constant:V, ramp or random:SEED");
  }
  return map;
}

void write_output(const fs::path& path, const std::string& contents) { write_file(path, contents); }

struct GenArgs {
  std::string out;
  std::size_t count = DatasetSpec{}.count;
  std::size_t benign = DatasetSpec{}.benign_count;
  std::size_t malignant = DatasetSpec{}.malignant_count;
  std::size_t image_size = DatasetSpec{}.image_size;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  check_out_dir(a.out, a.force);
  DatasetSpec spec;
  spec.count = a.count;
  spec.benign_count = a.benign;
  spec.malignant_count = a.malignant;
  spec.image_size = a.image_size;
  spec.master_seed = a.seed;
  spec.validate();
  const Dataset d = generate_dataset(spec);
  export_dataset(d, a.out);
  out << "cases " << spec.count << " train " << d.train.size() << " validation "
      << d.validation.size() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string kind = "classifier";
  std::string dataset;
  std::string out;
  TrainConfig train;
  std::optional<std::size_t> k;
  std::vector<std::size_t> blocks;
  std::optional<double> theta;
  bool force = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  check_dataset_dir(a.dataset);
  check_out_dir(a.out, a.force);
  a.train.validate();

  TrainResult result;
  if (a.kind == "oracle") {
    result.best = oracle_checkpoint();
  } else if (a.kind == "classifier") {
    DenseNetConfig net = DenseNetConfig::micro();
    if (a.k) net.growth_rate = *a.k;
    if (!a.blocks.empty()) net.block_layers = a.blocks;
    if (a.theta) net.theta = *a.theta;
    net.validate();
    const Dataset data = import_dataset(a.dataset);
    result = train_classifier(data, a.train, net, &out);
  } else {
    DetectorConfig det;
    if (a.k) det.growth_rate = *a.k;
    if (!a.blocks.empty()) {
      if (a.blocks.size() != 1) throw UsageError("the detector trunk has one dense block");
      det.block_layers = a.blocks.front();
    }
    if (a.theta) det.theta = *a.theta;
    const Dataset data = import_dataset(a.dataset);
    result = train_detector(data, a.train, det, &out);
  }

  fs::create_directories(a.out);
  save_checkpoint(fs::path(a.out) / kCheckpointFile, result.best);
  write_output(fs::path(a.out) / kLogFile, result.log_csv());
  write_output(fs::path(a.out) / kStepsFile, result.steps_csv());
  out << "best epoch " << result.best_epoch << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  bool force = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  check_input_file(a.checkpoint);
  check_dataset_dir(a.dataset);
  check_out_dir(a.out, a.force);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (!ckpt.config.is_object() || !ckpt.config.contains("kind")) {
    throw UsageError("checkpoint config has no kind");
  }
  const std::string kind = ckpt.config.at("kind").get<std::string>();
  const Dataset data = import_dataset(a.dataset);
  const fs::path dir(a.out);

  if (kind == "detector") {
    MiniDetector det = detector_from_checkpoint(ckpt);
    const DetectorReport report = evaluate_detector(det, data.validation);
    fs::create_directories(dir);
    write_output(dir / "metrics.csv", report.metrics_csv());
    write_output(dir / "masks.bin", report.dump());
    out << report.metrics_csv();
    return kExitOk;
  }

  ClassifierReport report;
  if (kind == "oracle") {
    std::vector<std::uint64_t> ids;
    std::vector<int> labels;
    std::vector<double> scores;
    for (const Phantom& p : data.validation) {
      ids.push_back(p.seed_id);
      labels.push_back(static_cast<int>(p.label));
      scores.push_back(static_cast<double>(p.label));
    }
    report = classifier_report(std::move(ids), std::move(labels), std::move(scores));
  } else if (kind == "classifier") {
    DenseNet net = classifier_from_checkpoint(ckpt);
    report = evaluate_classifier(net, data.validation);
  } else {
    throw UsageError("unknown checkpoint kind: " + kind);
  }
  std::vector<ScoredSample> samples;
  for (std::size_t i = 0; i < report.scores.size(); ++i) {
    samples.push_back({report.scores[i], report.labels[i]});
  }
  fs::create_directories(dir);
  write_output(dir / "metrics.csv", report.metrics_csv());
  write_output(dir / "roc.csv", roc_csv(roc_points(samples)));
  write_output(dir / "predictions.csv", report.predictions_csv());
  out << report.metrics_csv();
  return kExitOk;
}

int cmd_gradcheck(const GradientSuiteOptions& opts, std::ostream& out, std::ostream& err) {
  const std::vector<GradientCheckRow> rows = run_gradient_suite(opts);
  out << "op,cases,max_rel_error,tolerance,kink_skips,status\n";
  std::vector<std::string> failed;
  for (const GradientCheckRow& r : rows) {
    out << r.op << "," << r.cases << "," << fmt(r.max_rel_error) << "," << fmt(r.tolerance) << ","
        << r.kink_skips << "," << (r.passed() ? "pass" : "FAIL") << "\n";
    if (!r.passed()) failed.push_back(r.op);
  }
  if (failed.empty()) return kExitOk;
  err << "gradient check failed:";
  for (const std::string& op : failed) err << " " << op;
  err << "\n";
  return kExitVerificationFailed;
}

struct RoiDemoArgs {
  std::string roi;
  std::string map = "ramp";
  std::size_t size = 8;
  std::size_t bins = 2;
  std::size_t sampling = 2;
  std::string out;
};

int cmd_roi_demo(const RoiDemoArgs& a, std::ostream& out) {
  if (a.size == 0 || a.bins == 0 || a.sampling == 0) {
    throw UsageError("--size, --bins and --sampling must be positive");
  }
  const RoIBox roi = parse_roi(a.roi);
  const Tensor map = parse_map(a.map, a.size);
  const std::vector<RoIBox> rois{roi};
  const RoiSpec spec{a.bins, a.bins, a.sampling};
  const Tensor align = roi_align(map, rois, spec);
  const Tensor pool = roi_pool(map, rois, spec).output;

  std::string csv = "bin_y,bin_x,align,pool\n";
  for (std::size_t y = 0; y < a.bins; ++y) {
    for (std::size_t x = 0; x < a.bins; ++x) {
      csv += std::to_string(y) + "," + std::to_string(x) + "," + fmt(align.at(0, 0, y, x)) + "," +
             fmt(pool.at(0, 0, y, x)) + "\n";
    }
  }
  if (a.out.empty()) {
    out << csv;
  } else {
    const fs::path path(a.out);
    const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (!fs::is_directory(parent)) throw UsageError("parent directory of " + a.out + " does not exist");
    write_output(path, csv);
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DenseNet classifier and mini detector on synthetic lesion phantoms", "rdns"};
  app.require_subcommand(1, 1);

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of cases");
  gen_cmd->add_option("--benign", gen.benign, "Benign cases");
  gen_cmd->add_option("--malignant", gen.malignant, "Malignant cases");
  gen_cmd->add_option("--image-size", gen.image_size, "Canvas side in pixels");
  gen_cmd->add_option("--seed", gen.seed, "Master seed");
  gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a classifier or detector");
  train_cmd->add_option("--kind", train.kind, "classifier, detector or oracle")
      ->check(CLI::IsMember({"classifier", "detector", "oracle"}));
  train_cmd->add_option("--dataset", train.dataset, "Dataset directory")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--epochs", train.train.epochs, "Training epochs");
  train_cmd->add_option("--lr", train.train.learning_rate, "Peak learning rate");
  train_cmd->add_option("--batch", train.train.batch_size, "Mini-batch size");
  train_cmd->add_option("--seed", train.train.seed, "Training seed");
  train_cmd->add_option("--k", train.k, "Growth rate");
  train_cmd->add_option("--blocks", train.blocks, "Layers per dense block, comma separated")
      ->delimiter(',');
  train_cmd->add_option("--theta", train.theta, "Transition compression");
  train_cmd->add_flag("--force", train.force, "Overwrite a non-empty output directory");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--dataset", eval.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--out", eval.out, "Report directory")->required();
  eval_cmd->add_flag("--force", eval.force, "Overwrite a non-empty output directory");

  GradientSuiteOptions grad;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Check every backward pass numerically");
  grad_cmd->add_option("--eps", grad.eps, "Finite-difference step");
  grad_cmd->add_option("--seed", grad.seed, "Seed of the random instances");
  grad_cmd->add_option("--cases", grad.cases, "Instances per operation");
  grad_cmd->add_option("--break", grad.broken_op, "Corrupt one operation's gradient (test hook)");

  RoiDemoArgs demo;
  CLI::App* demo_cmd = app.add_subcommand("roi-demo", "Compare RoIAlign and RoIPool bin values");
  demo_cmd->add_option("--roi", demo.roi, "x1,y1,x2,y2 in feature-cell coordinates")->required();
  demo_cmd->add_option("--map", demo.map, "constant:V, ramp or random:SEED");
  demo_cmd->add_option("--size", demo.size, "Map side");
  demo_cmd->add_option("--bins", demo.bins, "Output bins per axis");
  demo_cmd->add_option("--sampling", demo.sampling, "RoIAlign samples per bin axis");
  demo_cmd->add_option("--out", demo.out, "CSV file (stdout when omitted)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    configure_threads_from_env();
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(train, out);
    if (*eval_cmd) return cmd_eval(eval, out);
    if (*grad_cmd) return cmd_gradcheck(grad, out, err);
    return cmd_roi_demo(demo, out);
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace rdns
