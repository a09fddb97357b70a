#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "mfp/metrics.hpp"
#include "mfp/random.hpp"

// Independent reference implementations shared by the unit and acceptance tests.
namespace mfp::oracle {

inline LabelVolume random_volume(Rng& rng, Dims3 dims, Spacing3 spacing = {1, 1, 1}) {
  // A few random boxes over sparse salt noise, so surfaces range from tiny to
  // large and both the brute-force and tree search paths get used.
  LabelVolume v(dims, spacing);
  const int boxes = static_cast<int>(rng.below(4));
  for (int b = 0; b < boxes; ++b) {
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(dims[a])));
      hi[a] = std::min<std::int64_t>(dims[a], lo[a] + 1 + static_cast<std::int64_t>(rng.below(10)));
    }
    const auto label = static_cast<std::uint8_t>(1 + rng.below(2));
    for (std::int64_t z = lo[0]; z < hi[0]; ++z)
      for (std::int64_t y = lo[1]; y < hi[1]; ++y)
        for (std::int64_t x = lo[2]; x < hi[2]; ++x) v.at(z, y, x) = label;
  }
  const double salt = rng.uniform(0.0, 0.05);
  for (auto& e : v.voxels)
    if (rng.uniform() < salt) e = static_cast<std::uint8_t>(1 + rng.below(2));
  return v;
}

struct Pt {
  double z, y, x;
};

// Surface by explicit neighbour enumeration; outside the volume is background.
inline std::vector<Pt> oracle_surface(const LabelVolume& v, int organ) {
  std::vector<Pt> out;
  const int offs[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (std::int64_t z = 0; z < v.dims[0]; ++z)
    for (std::int64_t y = 0; y < v.dims[1]; ++y)
      for (std::int64_t x = 0; x < v.dims[2]; ++x) {
        if (v.at(z, y, x) != organ) continue;
        bool edge = false;
        for (const auto& o : offs) {
          const std::int64_t zz = z + o[0], yy = y + o[1], xx = x + o[2];
          const bool inside = zz >= 0 && zz < v.dims[0] && yy >= 0 && yy < v.dims[1] && xx >= 0 && xx < v.dims[2];
          if (!inside || v.at(zz, yy, xx) != organ) edge = true;
        }
        if (edge) out.push_back({z * static_cast<double>(v.spacing[0]), y * static_cast<double>(v.spacing[1]), x * static_cast<double>(v.spacing[2])});
      }
  return out;
}

inline std::optional<double> oracle_msd(const LabelVolume& a, const LabelVolume& b, int organ) {
  const auto sa = oracle_surface(a, organ), sb = oracle_surface(b, organ);
  if (sa.empty() || sb.empty()) return std::nullopt;
  auto one_way = [](const std::vector<Pt>& from, const std::vector<Pt>& to) {
    double total = 0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, std::hypot(p.z - q.z, p.y - q.y, p.x - q.x));
      total += best;
    }
    return total;
  };
  return (one_way(sa, sb) + one_way(sb, sa)) / static_cast<double>(sa.size() + sb.size());
}

// Two-sided p of Student's t by Simpson integration of the density.
inline double oracle_t_p(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::acos(-1.0));
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int n = 200000;
  const double h = std::abs(t) / n;
  double s = pdf(0) + pdf(std::abs(t));
  for (int i = 1; i < n; ++i) s += pdf(i * h) * (i % 2 ? 4 : 2);
  return 1.0 - 2.0 * (s * h / 3);
}

// Dice by integer counting of the two masks.
inline double counted_dice(const LabelVolume& a, const LabelVolume& b, int organ) {
  long inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    na += a.voxels[i] == organ;
    nb += b.voxels[i] == organ;
    inter += a.voxels[i] == organ && b.voxels[i] == organ;
  }
  return na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace mfp::oracle
