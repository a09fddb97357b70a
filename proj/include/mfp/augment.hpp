#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mfp/random.hpp"

namespace mfp {

struct AugmentConfig {
  double rotation_prob = 1.0;
  double rotation_deg = 5.0;  // uniform in [-deg, deg]
  double contrast_prob = 1.0;
  double contrast_lo = 0.9, contrast_hi = 1.1;
  double elastic_prob = 0.5;
  int elastic_grid = 4;          // control points per axis
  double elastic_sigma_px = 1.5;  // displacement SD in pixels
  double flip_prob = 0.0;

  static AugmentConfig identity() {
    AugmentConfig c;
    c.rotation_prob = c.contrast_prob = c.elastic_prob = c.flip_prob = 0.0;
    return c;
  }
};

// One square slice, row-major.
struct Slice {
  std::int64_t size = 0;
  std::vector<float> image;
  std::vector<std::uint8_t> labels;
};

// Dense backward map: output pixel i reads source position (sy[i], sx[i]).
struct GeometricTransform {
  std::int64_t size = 0;
  std::vector<double> sy, sx;

  static GeometricTransform identity(std::int64_t size);
};

// Draws the transform and contrast factor for one slice. The number of
// values consumed from `rng` does not depend on the probabilities.
struct AugmentDraw {
  bool flip = false;
  double angle_deg = 0.0;
  bool elastic = false;
  std::vector<double> grid_dy, grid_dx;  // elastic_grid^2 control displacements
  double contrast = 1.0;
};

AugmentDraw draw_augmentation(Rng& rng, const AugmentConfig& cfg);

GeometricTransform make_transform(std::int64_t size, const AugmentDraw& d, int elastic_grid);

// Horizontal mirror of a transform's sampling positions.
GeometricTransform flip_horizontal(const GeometricTransform& t);

// Source index of the nearest pixel (edge clamped) per output pixel.
std::vector<std::int64_t> nearest_sources(const GeometricTransform& t);

// Bilinear for images, nearest for labels, both edge clamped.
std::vector<float> warp_image(std::span<const float> image, const GeometricTransform& t);
std::vector<std::uint8_t> warp_labels(std::span<const std::uint8_t> labels, const GeometricTransform& t);

// Multiplies deviations from the slice mean by `factor`.
void adjust_contrast(std::span<float> image, double factor);

Slice augment(const Slice& in, Rng& rng, const AugmentConfig& cfg);

// Zero mean, unit variance; constant slices become zeros.
void normalize(std::span<float> image);

}  // namespace mfp
