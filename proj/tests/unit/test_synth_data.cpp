#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "oracles.hpp"
#include "rdns/binary_io.hpp"
#include "rdns/errors.hpp"
#include "rdns/synth_data.hpp"

using namespace rdns;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rdns_synth_" + name);
  fs::remove_all(p);
  return p;
}

DatasetSpec small_spec(std::uint64_t seed) {
  DatasetSpec s;
  s.count = 20;
  s.benign_count = 11;
  s.malignant_count = 9;
  s.master_seed = seed;
  return s;
}

/// Mean compactness of the lesions of a phantom.
double phantom_compactness(const Phantom& p, std::size_t size) {
  double sum = 0.0;
  for (const Lesion& l : p.lesions) sum += compactness(l.mask, size, size);
  return sum / double(p.lesions.size());
}

}  // namespace

TEST(RenderLesion, CircleAreaMatchesFormula) {
  LesionParams p;
  p.a = p.b = 10.0;
  const RenderedLesion r = render_lesion(p, 64, 64);
  const double area = std::numbers::pi * 100.0;
  EXPECT_NEAR(double(mask_area(r.mask)), area, 0.05 * area);
  for (double v : r.intensity.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(RenderLesion, MaskIsHalfSuperlevelSetAndBoxIsTight) {
  LesionParams p;
  p.cx = 30.3;
  p.cy = 27.9;
  p.a = 9.0;
  p.b = 5.0;
  p.rotation = 0.6;
  p.label = LesionClass::Malignant;
  p.spike_angles = {0.3, 2.0, 4.1};
  p.spike_lengths = {6.0, 4.0, 5.0};
  const RenderedLesion r = render_lesion(p, 64, 64);
  for (std::size_t i = 0; i < r.mask.size(); ++i) EXPECT_EQ(r.mask[i] != 0, r.intensity[i] >= 0.5);
  EXPECT_EQ(r.box, mask_bounds(r.mask, 64, 64));
}

TEST(RenderLesion, InvariantsAndPlacement) {
  LesionParams p;
  p.label = LesionClass::Malignant;
  EXPECT_THROW(p.validate(), DomainError);
  EXPECT_THROW((void)render_lesion(p, 64, 64), DomainError);
  LesionParams b;
  b.spike_angles = {1.0};
  b.spike_lengths = {3.0};
  EXPECT_THROW(b.validate(), DomainError);
  LesionParams edge;
  edge.cx = 2.0;
  EXPECT_THROW((void)render_lesion(edge, 64, 64), PlacementError);
}

TEST(RenderLesion, FixedParametersAreBitIdentical) {
  Rng rng(3);
  const LesionParams p = sample_lesion(rng, LesionClass::Malignant, 64, 1);
  const RenderedLesion a = render_lesion(p, 64, 64);
  const RenderedLesion b = render_lesion(p, 64, 64);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(serialize_tensor(a.intensity), serialize_tensor(b.intensity));
}

TEST(MaskGeometry, PerimeterAreaAndBounds) {
  Mask m(16, 0);
  m[5] = m[6] = 1;  // row 1, columns 1..2
  EXPECT_EQ(mask_area(m), 2u);
  EXPECT_EQ(mask_perimeter(m, 4, 4), 6u);
  EXPECT_EQ(mask_bounds(m, 4, 4), (Box{1, 1, 3, 2}));
  EXPECT_DOUBLE_EQ(compactness(m, 4, 4), 18.0);
  EXPECT_THROW((void)mask_bounds(Mask(16, 0), 4, 4), DomainError);
}

TEST(GeneratePhantom, LesionInvariants) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const LesionClass label = seed % 2 ? LesionClass::Malignant : LesionClass::Benign;
    const Phantom p = generate_phantom(seed, seed, label, 64);
    EXPECT_EQ(p.image.shape(), (Shape{1, 1, 64, 64}));
    for (double v : p.image.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    ASSERT_GE(p.lesions.size(), 1u);
    ASSERT_LE(p.lesions.size(), 3u);
    for (std::size_t i = 0; i < p.lesions.size(); ++i) {
      const Lesion& l = p.lesions[i];
      EXPECT_EQ(l.params.label, label);
      EXPECT_EQ(l.params.spicule_count() == 0, label == LesionClass::Benign);
      EXPECT_GT(mask_area(l.mask), 0u);
      EXPECT_EQ(l.box, mask_bounds(l.mask, 64, 64));
      for (std::size_t j = i + 1; j < p.lesions.size(); ++j) {
        for (std::size_t c = 0; c < l.mask.size(); ++c) ASSERT_FALSE(l.mask[c] && p.lesions[j].mask[c]);
      }
    }
  }
}

TEST(DatasetSpec, DefaultsAndValidation) {
  const DatasetSpec s;
  EXPECT_EQ(s.count, 344u);
  EXPECT_EQ(s.benign_count, 178u);
  EXPECT_EQ(s.malignant_count, 166u);
  EXPECT_EQ(s.train_size(), 275u);
  DatasetSpec bad = s;
  bad.split_fraction = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = s;
  bad.benign_count = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(DatasetSpec::from_json(small_spec(5).to_json()), small_spec(5));
}

TEST(GenerateDataset, DefaultSpecSplitAndSeparability) {
  const Dataset d = generate_dataset(DatasetSpec{});
  EXPECT_EQ(d.train.size(), 275u);
  EXPECT_EQ(d.validation.size(), 69u);

  std::size_t benign = 0;
  std::set<std::uint64_t> train_ids;
  for (const Phantom& p : d.train) {
    benign += p.label == LesionClass::Benign;
    train_ids.insert(p.seed_id);
  }
  std::size_t val_benign = 0;
  for (const Phantom& p : d.validation) {
    val_benign += p.label == LesionClass::Benign;
    EXPECT_EQ(train_ids.count(p.seed_id), 0u);
  }
  EXPECT_EQ(benign + val_benign, 178u);
  EXPECT_LE(std::abs(double(benign) - 275.0 * 178.0 / 344.0), 2.0);
  EXPECT_LE(std::abs(double(val_benign) - 69.0 * 178.0 / 344.0), 2.0);

  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto* split : {&d.train, &d.validation}) {
    for (const Phantom& p : *split) {
      scores.push_back(phantom_compactness(p, 64));
      labels.push_back(p.label == LesionClass::Malignant);
    }
  }
  EXPECT_GE(oracle::pair_count_auc(scores, labels), 0.9);
}

TEST(GenerateDataset, DeterministicInSpec) {
  const Dataset a = generate_dataset(small_spec(7));
  EXPECT_EQ(a, generate_dataset(small_spec(7)));
  EXPECT_NE(a, generate_dataset(small_spec(8)));
  EXPECT_EQ(a.train.size(), 16u);
}

TEST(ExportImport, RoundTripsBitExact) {
  const Dataset d = generate_dataset(small_spec(9));
  const fs::path dir = fresh_dir("roundtrip");
  export_dataset(d, dir);
  EXPECT_EQ(import_dataset(dir), d);

  // A second export of the same dataset writes identical bytes.
  const fs::path again = fresh_dir("roundtrip_again");
  export_dataset(d, again);
  EXPECT_EQ(read_file(dir / "manifest.json"), read_file(again / "manifest.json"));
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST(ExportImport, EmptyDataset) {
  DatasetSpec s;
  s.count = s.benign_count = s.malignant_count = 0;
  const Dataset d = generate_dataset(s);
  const fs::path dir = fresh_dir("empty");
  export_dataset(d, dir);
  EXPECT_EQ(import_dataset(dir), d);
  fs::remove_all(dir);
}

TEST(ExportImport, TruncatedCaseFileIsParseError) {
  const Dataset d = generate_dataset(small_spec(10));
  const fs::path dir = fresh_dir("truncated");
  export_dataset(d, dir);
  fs::path victim;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".bin") victim = e.path();
  }
  ASSERT_FALSE(victim.empty());
  fs::resize_file(victim, fs::file_size(victim) - 5);
  try {
    (void)import_dataset(dir);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  fs::remove_all(dir);
}
