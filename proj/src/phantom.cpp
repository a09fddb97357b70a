#include "mfp/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "mfp/random.hpp"

namespace mfp {
namespace {

double axis_coord(std::int64_t i, std::int64_t n) { return -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n); }

bool inside(const OrganShape& o, const std::array<double, 3>& p) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (p[a] - o.center[a]) / o.radius[a];
    s += d * d;
  }
  return s <= 1.0;
}

// Voxel-centre grid positions nearest to a normalised coordinate.
std::int64_t nearest_index(double c, std::int64_t n) {
  const auto i = static_cast<std::int64_t>(std::floor((c + 1.0) * 0.5 * static_cast<double>(n)));
  return std::clamp<std::int64_t>(i, 0, n - 1);
}

}  // namespace

std::array<OrganShape, kOrganCount> nominal_organs() {
  return {{
      // anal canal: narrow tube continuing the rectum caudally, close to it in
      // intensity.
      {{-0.62, 0.40, 0.0}, {0.45, 0.13, 0.13}, 0.47},
      // bladder: bright, anterior.
      {{0.25, -0.28, 0.0}, {0.70, 0.24, 0.30}, 0.90},
      // rectum: posterior tube.
      {{0.30, 0.36, 0.0}, {0.75, 0.13, 0.13}, 0.58},
      // femoral head L (image right) and R (image left).
      {{-0.05, 0.02, 0.58}, {0.55, 0.17, 0.16}, 0.76},
      {{-0.05, 0.02, -0.58}, {0.55, 0.17, 0.16}, 0.76},
  }};
}

std::array<OrganShape, kOrganCount> jittered_organs(const PhantomSpec& spec) {
  Rng rng(derive_seed(spec.seed, 1));
  auto organs = nominal_organs();
  for (auto& o : organs) {
    for (auto& c : o.center) c += rng.uniform(-spec.center_jitter, spec.center_jitter);
    for (auto& r : o.radius) r *= 1.0 + rng.uniform(-spec.radius_jitter, spec.radius_jitter);
    o.intensity += rng.uniform(-spec.intensity_jitter, spec.intensity_jitter);
  }
  return organs;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  for (auto d : spec.dims) {
    if (d < 16) throw ConfigError("phantom extents must be >= 16 per axis, got " + std::to_string(d));
  }
  const auto [D, H, W] = spec.dims;
  const auto organs = jittered_organs(spec);
  Rng rng(derive_seed(spec.seed, 2));
  const double bias_y = rng.uniform(-1.0, 1.0) * spec.bias_field;
  const double bias_x = rng.uniform(-1.0, 1.0) * spec.bias_field;
  const double body_ry = 0.78 + rng.uniform(-0.04, 0.04);
  const double body_rx = 0.95 + rng.uniform(-0.03, 0.03);

  Phantom p{ImageVolume(spec.dims, spec.spacing, 0.0f), LabelVolume(spec.dims, spec.spacing, 0)};
  static constexpr int kPriority[] = {4, 5, 2, 3, 1};
  for (std::int64_t z = 0; z < D; ++z) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const std::array<double, 3> c{axis_coord(z, D), axis_coord(y, H), axis_coord(x, W)};
        double value = 0.05;
        const double body = (c[1] / body_ry) * (c[1] / body_ry) + (c[2] / body_rx) * (c[2] / body_rx);
        if (body <= 1.0) value = 0.30 + 0.05 * std::cos(4.0 * c[1] + 3.0 * c[2]);
        std::uint8_t label = 0;
        for (int id : kPriority) {
          const auto& o = organs[static_cast<std::size_t>(id - 1)];
          if (inside(o, c)) {
            label = static_cast<std::uint8_t>(id);
            value = o.intensity;
            break;
          }
        }
        value *= 1.0 + bias_y * c[1] + bias_x * c[2];
        value += rng.normal(0.0, spec.noise_sigma);
        p.image.at(z, y, x) = static_cast<float>(std::clamp(value, 0.0, 1.0));
        p.labels.at(z, y, x) = label;
      }
    }
  }
  // A jittered organ may fall between voxel centres on a coarse grid; stamp
  // its centre voxel so every label is present.
  for (int id : kPriority) {
    const auto& o = organs[static_cast<std::size_t>(id - 1)];
    const auto z = nearest_index(o.center[0], D), y = nearest_index(o.center[1], H), x = nearest_index(o.center[2], W);
    bool present = false;
    for (auto l : p.labels.voxels) present = present || l == id;
    if (!present && p.labels.at(z, y, x) == 0) {
      p.labels.at(z, y, x) = static_cast<std::uint8_t>(id);
      p.image.at(z, y, x) = static_cast<float>(std::clamp(o.intensity, 0.0, 1.0));
    }
  }
  return p;
}

}  // namespace mfp
