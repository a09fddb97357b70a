#pragma once

#include <array>
#include <cstdint>

#include "mfp/volume.hpp"

namespace mfp {

// Ellipsoid (or, with a large z radius, a tube) in normalised coordinates:
// every axis spans [-1, 1] across the volume, order (z, y, x).
struct OrganShape {
  std::array<double, 3> center{};
  std::array<double, 3> radius{};
  double intensity = 0.5;
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  Dims3 dims{16, 64, 64};
  Spacing3 spacing{3.0f, 1.0f, 1.0f};
  double noise_sigma = 0.03;
  // Relative amplitude of the smooth multiplicative bias field.
  double bias_field = 0.1;
  // Uniform jitter applied to organ centres (normalised units), radii
  // (relative) and intensities (absolute).
  double center_jitter = 0.05;
  double radius_jitter = 0.1;
  double intensity_jitter = 0.04;
};

// Nominal organ layout, index = label - 1 (report order).
std::array<OrganShape, kOrganCount> nominal_organs();

// Organs after seeded jitter.
std::array<OrganShape, kOrganCount> jittered_organs(const PhantomSpec& spec);

struct Phantom {
  ImageVolume image;
  LabelVolume labels;
};

// Rasterises the body and the five organs. Organs are drawn in a fixed
// priority order (femoral heads, bladder, rectum, anal canal) and never
// overwrite a voxel already claimed by an earlier organ. Intensities are
// clamped to [0, 1].
Phantom generate_phantom(const PhantomSpec& spec);

}  // namespace mfp
