#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "rdns/geometry.hpp"
#include "rdns/metrics.hpp"
#include "rdns/rng.hpp"
#include "rdns/tensor.hpp"

namespace rdns {

enum class LesionClass : int { Benign = 0, Malignant = 1 };

/// Geometry of one lesion in pixel-edge image coordinates (pixel (i, j) covers
/// [j, j+1) x [i, i+1) and is sampled at its center).
///
/// The lesion is star-shaped around its center: along direction theta its boundary lies at
/// ellipse_radius(theta) * (1 + lobe_amp * cos(lobes * (theta - rotation) + lobe_phase))
/// plus the tallest spike covering theta. Spike j is a triangle in angle space centered on
/// spike_angles[j], of height spike_lengths[j] and half-width spike_half_width radians.
struct LesionParams {
  double cx = 32.0;
  double cy = 32.0;
  double a = 8.0;
  double b = 8.0;
  double rotation = 0.0;
  LesionClass label = LesionClass::Benign;
  int lobes = 0;
  double lobe_amp = 0.0;
  double lobe_phase = 0.0;
  std::vector<double> spike_angles;
  std::vector<double> spike_lengths;
  double spike_half_width = 0.2;
  /// Standard deviation of the Gaussian edge blur, pixels.
  double feather = 0.8;
  double contrast = 0.5;

  std::size_t spicule_count() const { return spike_angles.size(); }
  /// Benign lesions carry no spikes and malignant ones at least one; radii positive.
  void validate() const;
  /// Largest distance from the center at which the lesion intensity can exceed 1e-3.
  double support_radius() const;

  bool operator==(const LesionParams&) const = default;
};

struct Lesion {
  LesionParams params;
  Mask mask;
  Box box;

  bool operator==(const Lesion&) const = default;
};

struct RenderedLesion {
  /// Lesion opacity in [0, 1] at every pixel of an h x w canvas, (1, 1, h, w).
  Tensor intensity;
  /// Superlevel set intensity >= 0.5.
  Mask mask;
  /// Tight pixel-edge bounds of the mask.
  Box box;
};

/// Throws PlacementError when the lesion support leaves the canvas.
RenderedLesion render_lesion(const LesionParams& params, std::size_t h, std::size_t w);

/// Tight half-open pixel bounds of the set cells. Throws DomainError on an empty mask.
Box mask_bounds(const Mask& mask, std::size_t h, std::size_t w);

struct Phantom {
  Tensor image;
  std::vector<Lesion> lesions;
  std::uint64_t seed_id = 0;
  LesionClass label = LesionClass::Benign;

  bool operator==(const Phantom&) const = default;
};

/// Random lesion of the given class centered somewhere on a size x size canvas.
LesionParams sample_lesion(Rng& rng, LesionClass label, std::size_t size, std::size_t lesion_count);

/// One phantom with 1 to 3 non-overlapping lesions sharing `label`.
Phantom generate_phantom(std::uint64_t seed, std::uint64_t seed_id, LesionClass label,
                         std::size_t size);

struct DatasetSpec {
  std::size_t count = 344;
  std::size_t benign_count = 178;
  std::size_t malignant_count = 166;
  double split_fraction = 0.8;
  std::size_t image_size = 64;
  std::uint64_t master_seed = 0;

  void validate() const;
  std::size_t train_size() const;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Phantom> train;
  std::vector<Phantom> validation;

  bool operator==(const Dataset&) const = default;
};

/// Deterministic in spec: phantom i is drawn from derive_seed(master_seed, i) and the
/// stratified split comes from a separate derived stream.
Dataset generate_dataset(const DatasetSpec& spec);

/// Writes manifest.json (key-sorted) plus one binary record per case. The directory must
/// exist or be creatable.
void export_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

/// Number of 4-neighbour cell edges between set and unset cells (the canvas border counts
/// as unset).
std::size_t mask_perimeter(const Mask& mask, std::size_t h, std::size_t w);
std::size_t mask_area(const Mask& mask);
/// perimeter^2 / area, a compactness score that grows with spiculation.
double compactness(const Mask& mask, std::size_t h, std::size_t w);

/// Union of the lesion masks of a phantom.
Mask union_mask(const Phantom& p);

}  // namespace rdns
