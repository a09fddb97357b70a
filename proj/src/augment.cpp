#include "mfp/augment.hpp"

#include <algorithm>
#include <cmath>

#include "mfp/error.hpp"

namespace mfp {

GeometricTransform GeometricTransform::identity(std::int64_t size) {
  GeometricTransform t;
  t.size = size;
  t.sy.resize(static_cast<std::size_t>(size * size));
  t.sx.resize(t.sy.size());
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      t.sy[static_cast<std::size_t>(y * size + x)] = static_cast<double>(y);
      t.sx[static_cast<std::size_t>(y * size + x)] = static_cast<double>(x);
    }
  }
  return t;
}

AugmentDraw draw_augmentation(Rng& rng, const AugmentConfig& cfg) {
  AugmentDraw d;
  const double u_flip = rng.uniform();
  const double u_rot = rng.uniform();
  const double angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
  const double u_el = rng.uniform();
  const std::size_t n = static_cast<std::size_t>(cfg.elastic_grid * cfg.elastic_grid);
  d.grid_dy.resize(n);
  d.grid_dx.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.grid_dy[i] = rng.normal(0.0, cfg.elastic_sigma_px);
    d.grid_dx[i] = rng.normal(0.0, cfg.elastic_sigma_px);
  }
  const double u_con = rng.uniform();
  const double factor = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);

  d.flip = u_flip < cfg.flip_prob;
  d.angle_deg = u_rot < cfg.rotation_prob ? angle : 0.0;
  d.elastic = u_el < cfg.elastic_prob;
  d.contrast = u_con < cfg.contrast_prob ? factor : 1.0;
  return d;
}

GeometricTransform make_transform(std::int64_t size, const AugmentDraw& d, int elastic_grid) {
  auto t = GeometricTransform::identity(size);
  const double c = 0.5 * static_cast<double>(size - 1);
  const double a = d.angle_deg * 3.14159265358979323846 / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const bool elastic = d.elastic && elastic_grid >= 2;
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const auto k = static_cast<std::size_t>(y * size + x);
      double py = static_cast<double>(y), px = static_cast<double>(x);
      if (elastic) {
        // Bilinear upsampling of the control-point displacements.
        const double gy = py / static_cast<double>(size - 1) * (elastic_grid - 1);
        const double gx = px / static_cast<double>(size - 1) * (elastic_grid - 1);
        const int y0 = std::min(static_cast<int>(gy), elastic_grid - 2);
        const int x0 = std::min(static_cast<int>(gx), elastic_grid - 2);
        const double wy = gy - y0, wx = gx - x0;
        auto at = [&](const std::vector<double>& g, int yy, int xx) {
          return g[static_cast<std::size_t>(yy * elastic_grid + xx)];
        };
        auto interp = [&](const std::vector<double>& g) {
          return (1 - wy) * ((1 - wx) * at(g, y0, x0) + wx * at(g, y0, x0 + 1)) +
                 wy * ((1 - wx) * at(g, y0 + 1, x0) + wx * at(g, y0 + 1, x0 + 1));
        };
        py += interp(d.grid_dy);
        px += interp(d.grid_dx);
      }
      const double ry = py - c, rx = px - c;
      double sy = c + ca * ry - sa * rx;
      double sx = c + sa * ry + ca * rx;
      if (d.flip) sx = static_cast<double>(size - 1) - sx;
      t.sy[k] = sy;
      t.sx[k] = sx;
    }
  }
  return t;
}

GeometricTransform flip_horizontal(const GeometricTransform& t) {
  GeometricTransform out = t;
  const std::int64_t n = t.size;
  for (std::int64_t y = 0; y < n; ++y) {
    for (std::int64_t x = 0; x < n; ++x) {
      const auto dst = static_cast<std::size_t>(y * n + x);
      const auto src = static_cast<std::size_t>(y * n + (n - 1 - x));
      out.sy[dst] = t.sy[src];
      out.sx[dst] = static_cast<double>(n - 1) - t.sx[src];
    }
  }
  return out;
}

std::vector<std::int64_t> nearest_sources(const GeometricTransform& t) {
  std::vector<std::int64_t> out(t.sy.size());
  const double hi = static_cast<double>(t.size - 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto y = static_cast<std::int64_t>(std::lround(std::clamp(t.sy[i], 0.0, hi)));
    const auto x = static_cast<std::int64_t>(std::lround(std::clamp(t.sx[i], 0.0, hi)));
    out[i] = y * t.size + x;
  }
  return out;
}

std::vector<float> warp_image(std::span<const float> image, const GeometricTransform& t) {
  if (image.size() != t.sy.size()) throw ShapeError("warp_image: slice size does not match transform");
  std::vector<float> out(image.size());
  const std::int64_t n = t.size;
  const double hi = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = std::clamp(t.sy[i], 0.0, hi), x = std::clamp(t.sx[i], 0.0, hi);
    const auto y0 = std::min(static_cast<std::int64_t>(y), n - 1), x0 = std::min(static_cast<std::int64_t>(x), n - 1);
    const auto y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
    const double wy = y - static_cast<double>(y0), wx = x - static_cast<double>(x0);
    auto px = [&](std::int64_t yy, std::int64_t xx) { return static_cast<double>(image[static_cast<std::size_t>(yy * n + xx)]); };
    out[i] = static_cast<float>((1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                                wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1)));
  }
  return out;
}

std::vector<std::uint8_t> warp_labels(std::span<const std::uint8_t> labels, const GeometricTransform& t) {
  if (labels.size() != t.sy.size()) throw ShapeError("warp_labels: slice size does not match transform");
  const auto src = nearest_sources(t);
  std::vector<std::uint8_t> out(labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = labels[static_cast<std::size_t>(src[i])];
  return out;
}

void adjust_contrast(std::span<float> image, double factor) {
  if (image.empty()) return;
  double m = 0.0;
  for (float v : image) m += v;
  m /= static_cast<double>(image.size());
  for (auto& v : image) v = static_cast<float>(m + factor * (v - m));
}

Slice augment(const Slice& in, Rng& rng, const AugmentConfig& cfg) {
  const auto d = draw_augmentation(rng, cfg);
  Slice out;
  out.size = in.size;
  if (!d.flip && d.angle_deg == 0.0 && !d.elastic) {
    out.image = in.image;
    out.labels = in.labels;
  } else {
    const auto t = make_transform(in.size, d, cfg.elastic_grid);
    out.image = warp_image(in.image, t);
    out.labels = warp_labels(in.labels, t);
  }
  if (d.contrast != 1.0) adjust_contrast(out.image, d.contrast);
  return out;
}

void normalize(std::span<float> image) {
  if (image.empty()) return;
  double m = 0.0;
  for (float v : image) m += v;
  m /= static_cast<double>(image.size());
  double var = 0.0;
  for (float v : image) var += (v - m) * (v - m);
  var /= static_cast<double>(image.size());
  if (var < 1e-12) {
    std::fill(image.begin(), image.end(), 0.0f);
    return;
  }
  const double inv = 1.0 / std::sqrt(var);
  for (auto& v : image) v = static_cast<float>((v - m) * inv);
}

}  // namespace mfp
