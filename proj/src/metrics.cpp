#include "mfp/metrics.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace mfp {
namespace {

void require_same_dims(const LabelVolume& a, const LabelVolume& b, const char* op) {
  if (a.dims != b.dims) throw ShapeError(std::string(op) + ": volume dimensions differ");
}

double dist2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dz = a[0] - b[0], dy = a[1] - b[1], dx = a[2] - b[2];
  return dz * dz + dy * dy + dx * dx;
}

// Static 3-d tree over a point array; nodes are implicit in the permuted index
// range [lo, hi) with the median at the middle.
class KdTree {
 public:
  explicit KdTree(const std::vector<std::array<double, 3>>& pts) : pts_(pts), idx_(pts.size()) {
    std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    build(0, idx_.size(), 0);
  }

  double nearest2(const std::array<double, 3>& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(q, 0, idx_.size(), 0, best);
    return best;
  }

 private:
  void build(std::size_t lo, std::size_t hi, int axis) {
    if (hi - lo <= 1) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(lo), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(const std::array<double, 3>& q, std::size_t lo, std::size_t hi, int axis, double& best) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const auto& p = pts_[idx_[mid]];
    best = std::min(best, dist2(q, p));
    const double diff = q[axis] - p[axis];
    const int next = (axis + 1) % 3;
    if (diff < 0) {
      search(q, lo, mid, next, best);
      if (diff * diff < best) search(q, mid + 1, hi, next, best);
    } else {
      search(q, mid + 1, hi, next, best);
      if (diff * diff < best) search(q, lo, mid, next, best);
    }
  }

  const std::vector<std::array<double, 3>>& pts_;
  std::vector<std::size_t> idx_;
};

constexpr std::size_t kBruteForcePairs = 1u << 20;

}  // namespace

double dice_volumetric(const LabelVolume& pred, const LabelVolume& truth, int organ) {
  require_same_dims(pred, truth, "dice");
  std::int64_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pa = pred.voxels[i] == organ, tb = truth.voxels[i] == organ;
    a += pa;
    b += tb;
    both += pa && tb;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

SurfacePointSet extract_surface(const LabelVolume& v, int organ) {
  SurfacePointSet s;
  const auto [D, H, W] = v.dims;
  auto fg = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return z >= 0 && z < D && y >= 0 && y < H && x >= 0 && x < W && v.at(z, y, x) == organ;
  };
  for (std::int64_t z = 0; z < D; ++z) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        if (!fg(z, y, x)) continue;
        if (fg(z - 1, y, x) && fg(z + 1, y, x) && fg(z, y - 1, x) && fg(z, y + 1, x) && fg(z, y, x - 1) &&
            fg(z, y, x + 1)) {
          continue;
        }
        s.voxels.push_back({z, y, x});
        s.points_mm.push_back({static_cast<double>(z) * v.spacing[0], static_cast<double>(y) * v.spacing[1],
                               static_cast<double>(x) * v.spacing[2]});
      }
    }
  }
  return s;
}

std::vector<double> nearest_distances(const std::vector<std::array<double, 3>>& from,
                                      const std::vector<std::array<double, 3>>& to) {
  std::vector<double> out(from.size(), std::numeric_limits<double>::infinity());
  if (to.empty()) return out;
  if (from.size() * to.size() <= kBruteForcePairs) {
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& p : to) best = std::min(best, dist2(from[i], p));
      out[i] = std::sqrt(best);
    }
    return out;
  }
  KdTree tree(to);
  for (std::size_t i = 0; i < from.size(); ++i) out[i] = std::sqrt(tree.nearest2(from[i]));
  return out;
}

std::optional<double> msd(const LabelVolume& pred, const LabelVolume& truth, int organ) {
  require_same_dims(pred, truth, "msd");
  if (pred.spacing != truth.spacing) throw ShapeError("msd: volume spacings differ");
  const auto sa = extract_surface(pred, organ);
  const auto sb = extract_surface(truth, organ);
  if (sa.points_mm.empty() || sb.points_mm.empty()) return std::nullopt;
  double total = 0.0;
  for (double d : nearest_distances(sa.points_mm, sb.points_mm)) total += d;
  for (double d : nearest_distances(sb.points_mm, sa.points_mm)) total += d;
  return total / static_cast<double>(sa.points_mm.size() + sb.points_mm.size());
}

TTestResult paired_t_test(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ContractError("paired_t_test: samples have different lengths");
  if (xs.size() < 2) throw ContractError("paired_t_test: need at least 2 pairs");
  const auto n = static_cast<double>(xs.size());
  std::vector<double> d(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) d[i] = xs[i] - ys[i];
  const double m = mean_of(d);
  double ss = 0.0;
  for (double v : d) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / (n - 1.0));
  TTestResult r;
  if (sd == 0.0) {
    if (m == 0.0) return r;
    r.degenerate = true;
    r.t = m > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = m / (sd / std::sqrt(n));
  const double df = n - 1.0;
  r.p = boost::math::ibeta(df / 2.0, 0.5, df / (df + r.t * r.t));
  return r;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double population_sd(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

CaseMetrics evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& truth) {
  CaseMetrics c;
  c.case_id = case_id;
  for (int o = 0; o < kOrganCount; ++o) {
    c.dice[static_cast<std::size_t>(o)] = dice_volumetric(pred, truth, o + 1);
    c.msd[static_cast<std::size_t>(o)] = msd(pred, truth, o + 1);
  }
  return c;
}

namespace {

// Per-case series for one organ (0..4) or the organ average (kOrganCount).
std::vector<double> dice_series(const std::vector<CaseMetrics>& cases, int organ) {
  std::vector<double> out;
  for (const auto& c : cases) {
    if (organ < kOrganCount) {
      out.push_back(c.dice[static_cast<std::size_t>(organ)]);
    } else {
      out.push_back(mean_of(c.dice));
    }
  }
  return out;
}

std::optional<double> case_msd(const CaseMetrics& c, int organ) {
  if (organ < kOrganCount) return c.msd[static_cast<std::size_t>(organ)];
  std::vector<double> v;
  for (const auto& m : c.msd) {
    if (m) v.push_back(*m);
  }
  if (v.empty()) return std::nullopt;
  return mean_of(v);
}

}  // namespace

MetricReport aggregate_report(const std::vector<CaseMetrics>& cases) {
  if (cases.empty()) throw ContractError("aggregate_report: no cases");
  MetricReport r;
  for (int o = 0; o <= kOrganCount; ++o) {
    OrganRow row;
    row.organ = o < kOrganCount ? kOrganNames[static_cast<std::size_t>(o)] : "average";
    const auto d = dice_series(cases, o);
    row.dice_mean = mean_of(d);
    row.dice_sd = population_sd(d);
    std::vector<double> m;
    for (const auto& c : cases) {
      if (auto v = case_msd(c, o)) {
        m.push_back(*v);
      } else {
        ++row.msd_excluded;
      }
    }
    row.msd_cases = static_cast<int>(m.size());
    row.msd_mean = mean_of(m);
    row.msd_sd = population_sd(m);
    r.rows.push_back(row);
  }
  return r;
}

void attach_t_tests(MetricReport& report, const std::vector<CaseMetrics>& cases,
                    const std::vector<CaseMetrics>& baseline) {
  std::map<std::string, const CaseMetrics*> base;
  for (const auto& c : baseline) base[c.case_id] = &c;
  std::vector<CaseMetrics> a, b;
  for (const auto& c : cases) {
    auto it = base.find(c.case_id);
    if (it == base.end()) throw ContractError("baseline has no case '" + c.case_id + "'");
    a.push_back(c);
    b.push_back(*it->second);
  }
  report.compared = true;
  for (int o = 0; o <= kOrganCount; ++o) {
    auto& row = report.rows.at(static_cast<std::size_t>(o));
    if (a.size() < 2) continue;
    row.dice_test = paired_t_test(dice_series(a, o), dice_series(b, o));
    std::vector<double> ma, mb;
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto x = case_msd(a[i], o), y = case_msd(b[i], o);
      if (x && y) {
        ma.push_back(*x);
        mb.push_back(*y);
      }
    }
    if (ma.size() >= 2) row.msd_test = paired_t_test(ma, mb);
  }
}

std::string MetricReport::to_csv() const {
  const bool tests = compared || std::any_of(rows.begin(), rows.end(), [](const OrganRow& r) { return r.dice_test.has_value(); });
  std::ostringstream os;
  os << "organ,dice_mean,dice_sd,msd_mean_mm,msd_sd_mm,msd_cases,msd_excluded";
  if (tests) os << ",dice_t,dice_p,msd_t,msd_p";
  os << "\n";
  char buf[64];
  auto num = [&](double v) {
    if (std::isnan(v)) return std::string("undefined");
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    os << r.organ << "," << num(r.dice_mean) << "," << num(r.dice_sd) << "," << num(r.msd_mean) << ","
       << num(r.msd_sd) << "," << r.msd_cases << "," << r.msd_excluded;
    if (tests) {
      auto col = [&](const std::optional<TTestResult>& t) {
        if (!t) return std::string(",undefined,undefined");
        return "," + num(t->t) + "," + num(t->p);
      };
      os << col(r.dice_test) << col(r.msd_test);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace mfp
