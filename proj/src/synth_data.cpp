#include "rdns/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "rdns/binary_io.hpp"
#include "rdns/errors.hpp"
#include "rdns/parallel.hpp"

namespace rdns {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Largest lesion count per phantom; sizes shrink as the count grows so that they fit.
constexpr std::size_t kMaxLesions = 3;
constexpr int kPlacementRetries = 100;
// Cells of clear background required between lesions.
constexpr std::size_t kLesionGap = 2;

// Boundary radius of the lesion along image direction theta.
double boundary_radius(const LesionParams& p, double theta) {
  const double phi = theta - p.rotation;
  const double c = std::cos(phi) / p.a;
  const double s = std::sin(phi) / p.b;
  double r = 1.0 / std::sqrt(c * c + s * s);
  if (p.lobes > 0) r *= 1.0 + p.lobe_amp * std::cos(p.lobes * phi + p.lobe_phase);
  double spike = 0.0;
  for (std::size_t j = 0; j < p.spike_angles.size(); ++j) {
    const double delta = std::abs(std::remainder(theta - p.spike_angles[j], kTwoPi));
    spike = std::max(spike, p.spike_lengths[j] * std::max(0.0, 1.0 - delta / p.spike_half_width));
  }
  return r + spike;
}

}  // namespace

void LesionParams::validate() const {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("lesion radii must be positive");
  if (!(feather > 0.0)) throw DomainError("lesion feather must be positive");
  if (lobes < 0 || !(lobe_amp >= 0.0 && lobe_amp < 1.0)) throw DomainError("bad lobe modulation");
  if (spike_angles.size() != spike_lengths.size()) {
    throw DomainError("spike angle and length lists differ in length");
  }
  if (label == LesionClass::Benign && !spike_angles.empty()) {
    throw DomainError("benign lesion must have no spicules");
  }
  if (label == LesionClass::Malignant && spike_angles.empty()) {
    throw DomainError("malignant lesion needs at least one spicule");
  }
  if (!spike_angles.empty() && !(spike_half_width > 0.0 && spike_half_width <= kPi)) {
    throw DomainError("spike half width must lie in (0, pi]");
  }
  for (double l : spike_lengths) {
    if (!(l > 0.0)) throw DomainError("spike lengths must be positive");
  }
}

double LesionParams::support_radius() const {
  double spike = 0.0;
  for (double l : spike_lengths) spike = std::max(spike, l);
  return std::max(a, b) * (1.0 + lobe_amp) + spike + 4.0 * feather;
}

Box mask_bounds(const Mask& mask, std::size_t h, std::size_t w) {
  if (mask.size() != h * w) throw ShapeError("mask_bounds: mask size mismatch");
  std::size_t i0 = h, i1 = 0, j0 = w, j1 = 0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (mask[i * w + j] == 0) continue;
      i0 = std::min(i0, i);
      i1 = std::max(i1, i);
      j0 = std::min(j0, j);
      j1 = std::max(j1, j);
    }
  }
  if (i0 == h) throw DomainError("mask_bounds: empty mask");
  return {static_cast<double>(j0), static_cast<double>(i0), static_cast<double>(j1 + 1),
          static_cast<double>(i1 + 1)};
}

RenderedLesion render_lesion(const LesionParams& p, std::size_t h, std::size_t w) {
  p.validate();
  const double reach = p.support_radius();
  if (p.cx - reach < 0.0 || p.cy - reach < 0.0 || p.cx + reach > static_cast<double>(w) ||
      p.cy + reach > static_cast<double>(h)) {
    throw PlacementError("lesion at (" + std::to_string(p.cx) + ", " + std::to_string(p.cy) +
                         ") with reach " + std::to_string(reach) + " leaves the canvas");
  }
  RenderedLesion out{Tensor({1, 1, h, w}), Mask(h * w, 0), Box{}};
  const double inv = 1.0 / (p.feather * std::numbers::sqrt2);
  bool any = false;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double dx = static_cast<double>(j) + 0.5 - p.cx;
      const double dy = static_cast<double>(i) + 0.5 - p.cy;
      const double r = std::sqrt(dx * dx + dy * dy);
      const double d = r - boundary_radius(p, std::atan2(dy, dx));
      const double alpha = 0.5 * std::erfc(d * inv);
      out.intensity[i * w + j] = alpha;
      if (alpha >= 0.5) {
        out.mask[i * w + j] = 1;
        any = true;
      }
    }
  }
  if (!any) throw PlacementError("lesion covers no pixel centre");
  out.box = mask_bounds(out.mask, h, w);
  return out;
}

LesionParams sample_lesion(Rng& rng, LesionClass label, std::size_t size,
                           std::size_t lesion_count) {
  static constexpr double kScale[kMaxLesions] = {1.0, 0.85, 0.7};
  const double scale = kScale[std::min(lesion_count, kMaxLesions) - 1];
  LesionParams p;
  p.label = label;
  p.rotation = rng.uniform(0.0, kPi);
  p.feather = rng.uniform(0.6, 1.1);
  p.contrast = rng.uniform(0.35, 0.6);
  if (label == LesionClass::Benign) {
    p.a = scale * rng.uniform(6.0, 11.0);
    p.b = p.a * rng.uniform(0.6, 1.0);
    if (rng.uniform() < 0.6) {
      p.lobes = 3 + static_cast<int>(rng.below(4));
      p.lobe_amp = rng.uniform(0.0, 0.2);
      p.lobe_phase = rng.uniform(0.0, kTwoPi);
    }
  } else {
    p.a = scale * rng.uniform(5.0, 9.0);
    p.b = p.a * rng.uniform(0.7, 1.0);
    const std::size_t n = 3 + rng.below(7);
    const double spacing = kTwoPi / static_cast<double>(n);
    const double start = rng.uniform(0.0, kTwoPi);
    p.spike_half_width = rng.uniform(0.12, 0.22);
    for (std::size_t j = 0; j < n; ++j) {
      p.spike_angles.push_back(start + spacing * (static_cast<double>(j) + rng.uniform(-0.2, 0.2)));
      p.spike_lengths.push_back(scale * rng.uniform(1.2, 5.5));
    }
  }
  const double reach = p.support_radius();
  const double hi = static_cast<double>(size) - reach;
  if (hi <= reach) throw PlacementError("lesion larger than canvas");
  p.cx = rng.uniform(reach, hi);
  p.cy = rng.uniform(reach, hi);
  return p;
}

namespace {

// True if `m` has a set cell within kLesionGap (Chebyshev) of a set cell of `occupied`.
bool collides(const Mask& m, const Mask& occupied, std::size_t h, std::size_t w) {
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      if (m[i * w + j] == 0) continue;
      const std::size_t i0 = i >= kLesionGap ? i - kLesionGap : 0;
      const std::size_t j0 = j >= kLesionGap ? j - kLesionGap : 0;
      const std::size_t i1 = std::min(h - 1, i + kLesionGap);
      const std::size_t j1 = std::min(w - 1, j + kLesionGap);
      for (std::size_t y = i0; y <= i1; ++y) {
        for (std::size_t x = j0; x <= j1; ++x) {
          if (occupied[y * w + x] != 0) return true;
        }
      }
    }
  }
  return false;
}

}  // namespace

Phantom generate_phantom(std::uint64_t seed, std::uint64_t seed_id, LesionClass label,
                         std::size_t size) {
  Rng rng(seed);
  const double u = rng.uniform();
  const std::size_t count = u < 0.6 ? 1 : (u < 0.9 ? 2 : 3);

  Phantom ph;
  ph.seed_id = seed_id;
  ph.label = label;
  Mask occupied(size * size, 0);
  std::vector<Tensor> intensities;
  for (std::size_t l = 0; l < count; ++l) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      try {
        LesionParams params = sample_lesion(rng, label, size, count);
        RenderedLesion r = render_lesion(params, size, size);
        if (collides(r.mask, occupied, size, size)) continue;
        for (std::size_t i = 0; i < occupied.size(); ++i) occupied[i] |= r.mask[i];
        intensities.push_back(std::move(r.intensity));
        ph.lesions.push_back({std::move(params), std::move(r.mask), r.box});
        placed = true;
      } catch (const PlacementError&) {
      }
    }
    if (!placed) {
      throw GenerationError("cannot place lesion " + std::to_string(l) + " of case " +
                            std::to_string(seed_id) + " (seed " + std::to_string(seed) +
                            ") after " + std::to_string(kPlacementRetries) + " attempts");
    }
  }

  // Smooth background: a base level, three low-frequency waves and fine pixel noise.
  const double base = rng.uniform(0.15, 0.3);
  double wave[3][4];
  for (auto& wv : wave) {
    wv[0] = rng.uniform(0.0, 0.04);
    wv[1] = rng.uniform(-kTwoPi / 32.0, kTwoPi / 32.0);
    wv[2] = rng.uniform(-kTwoPi / 32.0, kTwoPi / 32.0);
    wv[3] = rng.uniform(0.0, kTwoPi);
  }
  ph.image = Tensor({1, 1, size, size});
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      double v = base + rng.normal(0.0, 0.02);
      for (const auto& wv : wave) {
        v += wv[0] * std::cos(wv[1] * static_cast<double>(j) + wv[2] * static_cast<double>(i) + wv[3]);
      }
      for (std::size_t l = 0; l < ph.lesions.size(); ++l) {
        v += ph.lesions[l].params.contrast * intensities[l][i * size + j];
      }
      ph.image[i * size + j] = std::clamp(v, 0.0, 1.0);
    }
  }
  return ph;
}

void DatasetSpec::validate() const {
  if (benign_count + malignant_count != count) {
    throw ConfigError("benign_count + malignant_count must equal count");
  }
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError("split_fraction must lie strictly between 0 and 1");
  }
  if (image_size < 32) throw ConfigError("image_size must be at least 32");
}

std::size_t DatasetSpec::train_size() const {
  return static_cast<std::size_t>(std::llround(split_fraction * static_cast<double>(count)));
}

nlohmann::json DatasetSpec::to_json() const {
  return {{"count", count},
          {"benign_count", benign_count},
          {"malignant_count", malignant_count},
          {"split_fraction", split_fraction},
          {"image_size", image_size},
          {"master_seed", master_seed}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  try {
    DatasetSpec s;
    s.count = j.at("count").get<std::size_t>();
    s.benign_count = j.at("benign_count").get<std::size_t>();
    s.malignant_count = j.at("malignant_count").get<std::size_t>();
    s.split_fraction = j.at("split_fraction").get<double>();
    s.image_size = j.at("image_size").get<std::size_t>();
    s.master_seed = j.at("master_seed").get<std::uint64_t>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

namespace {

// Stream indices at the top of the u64 range are reserved for dataset-level draws so
// they never coincide with a case index.
constexpr std::uint64_t kLabelStream = ~std::uint64_t{0};
constexpr std::uint64_t kSplitStream = ~std::uint64_t{0} - 1;

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<LesionClass> labels(spec.count, LesionClass::Benign);
  std::fill(labels.begin() + static_cast<std::ptrdiff_t>(spec.benign_count), labels.end(),
            LesionClass::Malignant);
  Rng label_rng(derive_seed(spec.master_seed, kLabelStream));
  shuffle(labels, label_rng);

  std::vector<Phantom> cases(spec.count);
  parallel_for(spec.count, [&](std::size_t i) {
    cases[i] = generate_phantom(derive_seed(spec.master_seed, i), i, labels[i], spec.image_size);
  });

  // Stratified split: each class contributes its proportional share of the training set.
  const std::size_t n_train = spec.train_size();
  std::size_t train_b = spec.count == 0
                            ? 0
                            : static_cast<std::size_t>(std::llround(
                                  static_cast<double>(spec.benign_count * n_train) /
                                  static_cast<double>(spec.count)));
  train_b = std::min(train_b, spec.benign_count);
  std::size_t train_m = n_train - train_b;
  if (train_m > spec.malignant_count) {
    train_b += train_m - spec.malignant_count;
    train_m = spec.malignant_count;
  }

  std::vector<std::size_t> benign;
  std::vector<std::size_t> malignant;
  for (std::size_t i = 0; i < spec.count; ++i) {
    (labels[i] == LesionClass::Benign ? benign : malignant).push_back(i);
  }
  Rng split_rng(derive_seed(spec.master_seed, kSplitStream));
  shuffle(benign, split_rng);
  shuffle(malignant, split_rng);

  std::vector<std::size_t> train_ids(benign.begin(), benign.begin() + static_cast<std::ptrdiff_t>(train_b));
  train_ids.insert(train_ids.end(), malignant.begin(),
                   malignant.begin() + static_cast<std::ptrdiff_t>(train_m));
  std::vector<std::size_t> val_ids(benign.begin() + static_cast<std::ptrdiff_t>(train_b), benign.end());
  val_ids.insert(val_ids.end(), malignant.begin() + static_cast<std::ptrdiff_t>(train_m),
                 malignant.end());
  shuffle(train_ids, split_rng);
  shuffle(val_ids, split_rng);

  Dataset d;
  d.spec = spec;
  for (std::size_t id : train_ids) d.train.push_back(std::move(cases[id]));
  for (std::size_t id : val_ids) d.validation.push_back(std::move(cases[id]));
  return d;
}

namespace {

nlohmann::json lesion_to_json(const Lesion& l) {
  const LesionParams& p = l.params;
  return {{"cx", p.cx},
          {"cy", p.cy},
          {"a", p.a},
          {"b", p.b},
          {"rotation", p.rotation},
          {"label", static_cast<int>(p.label)},
          {"lobes", p.lobes},
          {"lobe_amp", p.lobe_amp},
          {"lobe_phase", p.lobe_phase},
          {"spike_angles", p.spike_angles},
          {"spike_lengths", p.spike_lengths},
          {"spike_half_width", p.spike_half_width},
          {"feather", p.feather},
          {"contrast", p.contrast},
          {"box", {l.box.x1, l.box.y1, l.box.x2, l.box.y2}}};
}

LesionParams lesion_params_from_json(const nlohmann::json& j) {
  LesionParams p;
  p.cx = j.at("cx").get<double>();
  p.cy = j.at("cy").get<double>();
  p.a = j.at("a").get<double>();
  p.b = j.at("b").get<double>();
  p.rotation = j.at("rotation").get<double>();
  p.label = static_cast<LesionClass>(j.at("label").get<int>());
  p.lobes = j.at("lobes").get<int>();
  p.lobe_amp = j.at("lobe_amp").get<double>();
  p.lobe_phase = j.at("lobe_phase").get<double>();
  p.spike_angles = j.at("spike_angles").get<std::vector<double>>();
  p.spike_lengths = j.at("spike_lengths").get<std::vector<double>>();
  p.spike_half_width = j.at("spike_half_width").get<double>();
  p.feather = j.at("feather").get<double>();
  p.contrast = j.at("contrast").get<double>();
  return p;
}

std::string case_file(std::uint64_t seed_id) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "case_%05llu.bin", static_cast<unsigned long long>(seed_id));
  return buf;
}

Tensor mask_tensor(const Mask& m, std::size_t size) {
  Tensor t({1, 1, size, size});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m[i] != 0 ? 1.0 : 0.0;
  return t;
}

}  // namespace

void export_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t size = d.spec.image_size;
  nlohmann::json cases = nlohmann::json::array();
  auto emit = [&](const Phantom& p, const char* split) {
    nlohmann::json lesions = nlohmann::json::array();
    std::vector<Tensor> record{p.image};
    for (const Lesion& l : p.lesions) {
      lesions.push_back(lesion_to_json(l));
      record.push_back(mask_tensor(l.mask, size));
    }
    const std::string file = case_file(p.seed_id);
    cases.push_back({{"seed_id", p.seed_id},
                     {"label", static_cast<int>(p.label)},
                     {"split", split},
                     {"file", file},
                     {"lesions", std::move(lesions)}});
    ByteWriter w;
    w.tensor_list(record);
    write_file(dir / file, w.buffer());
  };
  for (const Phantom& p : d.train) emit(p, "train");
  for (const Phantom& p : d.validation) emit(p, "validation");
  const nlohmann::json manifest{{"spec", d.spec.to_json()}, {"cases", std::move(cases)}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset import_dataset(const std::filesystem::path& dir) {
  const std::string text = read_file(dir / "manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest.json: ") + e.what(), e.byte);
  }
  Dataset d;
  try {
    d.spec = DatasetSpec::from_json(manifest.at("spec"));
    const std::size_t size = d.spec.image_size;
    for (const nlohmann::json& c : manifest.at("cases")) {
      Phantom p;
      p.seed_id = c.at("seed_id").get<std::uint64_t>();
      p.label = static_cast<LesionClass>(c.at("label").get<int>());
      const std::string file = c.at("file").get<std::string>();
      if (file.find('/') != std::string::npos || file.find("..") != std::string::npos) {
        throw ConfigError("manifest case file escapes the dataset directory: " + file);
      }
      const std::string bytes = read_file(dir / file);
      ByteReader r(bytes);
      std::vector<Tensor> record = r.tensor_list();
      if (!r.at_end()) throw ParseError(file + ": trailing bytes", r.offset());
      const auto& lesions = c.at("lesions");
      if (record.size() != lesions.size() + 1) {
        throw ConfigError(file + ": record count does not match manifest lesions");
      }
      const Shape expected{1, 1, size, size};
      for (const Tensor& t : record) {
        if (t.shape() != expected) throw ShapeError(file + ": unexpected tensor " + t.shape().str());
      }
      p.image = std::move(record[0]);
      for (std::size_t l = 0; l < lesions.size(); ++l) {
        Lesion lesion;
        lesion.params = lesion_params_from_json(lesions[l]);
        lesion.mask.resize(size * size);
        for (std::size_t i = 0; i < lesion.mask.size(); ++i) {
          lesion.mask[i] = record[l + 1][i] != 0.0 ? 1 : 0;
        }
        const auto box = lesions[l].at("box").get<std::vector<double>>();
        if (box.size() != 4) throw ConfigError(file + ": box needs four coordinates");
        lesion.box = {box[0], box[1], box[2], box[3]};
        p.lesions.push_back(std::move(lesion));
      }
      const std::string split = c.at("split").get<std::string>();
      if (split == "train") {
        d.train.push_back(std::move(p));
      } else if (split == "validation") {
        d.validation.push_back(std::move(p));
      } else {
        throw ConfigError("unknown split '" + split + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest.json: ") + e.what());
  }
  return d;
}

std::size_t mask_perimeter(const Mask& mask, std::size_t h, std::size_t w) {
  if (mask.size() != h * w) throw ShapeError("mask_perimeter: mask size mismatch");
  auto set = [&](std::ptrdiff_t i, std::ptrdiff_t j) {
    if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(h) || j >= static_cast<std::ptrdiff_t>(w)) {
      return false;
    }
    return mask[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)] != 0;
  };
  std::size_t edges = 0;
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(h); ++i) {
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(w); ++j) {
      if (!set(i, j)) continue;
      edges += !set(i - 1, j) + !set(i + 1, j) + !set(i, j - 1) + !set(i, j + 1);
    }
  }
  return edges;
}

std::size_t mask_area(const Mask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; }));
}

double compactness(const Mask& mask, std::size_t h, std::size_t w) {
  const std::size_t area = mask_area(mask);
  if (area == 0) throw DomainError("compactness of an empty mask");
  const double p = static_cast<double>(mask_perimeter(mask, h, w));
  return p * p / static_cast<double>(area);
}

Mask union_mask(const Phantom& p) {
  Mask m(p.image.size(), 0);
  for (const Lesion& l : p.lesions) {
    for (std::size_t i = 0; i < m.size(); ++i) m[i] |= l.mask[i];
  }
  return m;
}

}  // namespace rdns
