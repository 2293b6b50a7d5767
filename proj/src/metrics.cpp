#include "rdns/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "rdns/errors.hpp"

namespace rdns {

ConfusionCounts confusion_at(std::span<const double> scores, std::span<const int> labels,
                             double threshold) {
  if (scores.size() != labels.size()) throw ShapeError("confusion_at: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("confusion_at: label must be 0 or 1");
    if (labels[i] == 1) {
      ++(pred ? c.tp : c.fn);
    } else {
      ++(pred ? c.fp : c.tn);
    }
  }
  return c;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, const char* metric, const char* why) {
  if (den == 0) throw UndefinedMetricError(metric, why);
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double accuracy(const ConfusionCounts& c) {
  return ratio(c.tp + c.tn, c.total(), "accuracy", "no samples");
}

double sensitivity(const ConfusionCounts& c) {
  return ratio(c.tp, c.tp + c.fn, "sensitivity", "tp + fn == 0");
}

double specificity(const ConfusionCounts& c) {
  return ratio(c.tn, c.tn + c.fp, "specificity", "tn + fp == 0");
}

double precision(const ConfusionCounts& c) {
  return ratio(c.tp, c.tp + c.fp, "precision", "tp + fp == 0");
}

double f1_score(const ConfusionCounts& c) {
  const double p = precision(c);
  const double s = sensitivity(c);
  if (p + s == 0.0) throw UndefinedMetricError("f1", "precision + sensitivity == 0");
  return 2.0 * p * s / (p + s);
}

ConfusionMetrics confusion_metrics(const ConfusionCounts& c) {
  return {accuracy(c), sensitivity(c), specificity(c), precision(c), f1_score(c)};
}

double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeError("iou: mask extents differ");
  std::uint64_t inter = 0;
  std::uint64_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  if (uni == 0) throw UndefinedMetricError("iou", "both masks are empty");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double map_segmentation(std::span<const SegEvalCase> cases) {
  if (cases.empty()) throw UndefinedMetricError("map", "no cases");
  double acc = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const SegEvalCase& c = cases[i];
    if (c.model.size() != c.truth.size()) {
      throw ShapeError("map case " + std::to_string(i) + ": mask extents differ");
    }
    std::uint64_t overlap = 0;
    std::uint64_t truth = 0;
    for (std::size_t j = 0; j < c.truth.size(); ++j) {
      if (c.truth[j] != 0) {
        ++truth;
        if (c.model[j] != 0) ++overlap;
      }
    }
    if (truth == 0) {
      throw UndefinedMetricError("map", "case " + std::to_string(i) + " has an empty truth mask");
    }
    acc += static_cast<double>(overlap) / static_cast<double>(truth);
  }
  return acc / static_cast<double>(cases.size());
}

namespace {

struct RocSweep {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> vertices;  // (fp, tp) cumulative
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
};

RocSweep sweep(std::span<const ScoredSample> samples) {
  std::vector<ScoredSample> sorted(samples.begin(), samples.end());
  RocSweep r;
  for (const ScoredSample& s : sorted) {
    if (s.label != 0 && s.label != 1) throw DomainError("roc: label must be 0 or 1");
    if (s.score != s.score) throw DomainError("roc: NaN score");
    ++(s.label == 1 ? r.pos : r.neg);
  }
  if (r.pos == 0 || r.neg == 0) throw UndefinedMetricError("auc", "needs both classes");
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredSample& a, const ScoredSample& b) { return a.score > b.score; });
  std::uint64_t fp = 0;
  std::uint64_t tp = 0;
  r.vertices.emplace_back(0, 0);
  // Samples sharing a score enter together, giving a diagonal segment; the trapezoid over
  // that segment is exactly the half-credit tie rule.
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      ++(sorted[j].label == 1 ? tp : fp);
      ++j;
    }
    r.vertices.emplace_back(fp, tp);
    i = j;
  }
  return r;
}

}  // namespace

double auc_roc(std::span<const ScoredSample> samples) {
  const RocSweep r = sweep(samples);
  // Twice the area in integer units (fp * tp), so the sum is exact before the final division.
  std::uint64_t twice = 0;
  for (std::size_t i = 1; i < r.vertices.size(); ++i) {
    const auto [fp0, tp0] = r.vertices[i - 1];
    const auto [fp1, tp1] = r.vertices[i];
    twice += (fp1 - fp0) * (tp0 + tp1);
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(r.pos) * static_cast<double>(r.neg));
}

std::vector<std::pair<double, double>> roc_points(std::span<const ScoredSample> samples) {
  const RocSweep r = sweep(samples);
  std::vector<std::pair<double, double>> out;
  out.reserve(r.vertices.size());
  for (const auto& [fp, tp] : r.vertices) {
    out.emplace_back(static_cast<double>(fp) / static_cast<double>(r.neg),
                     static_cast<double>(tp) / static_cast<double>(r.pos));
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const ConfusionMetrics& m, double auc) {
  return "acc,sen,spe,precision,f1,auc\n" + fmt(m.acc) + "," + fmt(m.sen) + "," + fmt(m.spe) +
         "," + fmt(m.precision) + "," + fmt(m.f1) + "," + fmt(auc) + "\n";
}

std::string roc_csv(std::span<const std::pair<double, double>> points) {
  std::string out = "fpr,tpr\n";
  for (const auto& [fpr, tpr] : points) out += fmt(fpr) + "," + fmt(tpr) + "\n";
  return out;
}

}  // namespace rdns
