#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfp/volume.hpp"

namespace mfp {

// 2|A n B| / (|A| + |B|) for the masks label == organ. Both empty -> 1.
double dice_volumetric(const LabelVolume& pred, const LabelVolume& truth, int organ);

struct SurfacePointSet {
  std::vector<std::array<std::int64_t, 3>> voxels;  // (z, y, x)
  std::vector<std::array<double, 3>> points_mm;     // voxels scaled by spacing
};

// Voxels of label == organ with at least one 6-neighbour that is either
// another label or outside the volume.
SurfacePointSet extract_surface(const LabelVolume& volume, int organ);

// Symmetric mean surface distance in mm:
// (sum_a d(a, S(B)) + sum_b d(b, S(A))) / (|S(A)| + |S(B)|).
// Empty when either surface is empty.
std::optional<double> msd(const LabelVolume& pred, const LabelVolume& truth, int organ);

// Nearest-point distance from every point of `from` to the set `to`.
// Brute force for small inputs, a k-d tree otherwise.
std::vector<double> nearest_distances(const std::vector<std::array<double, 3>>& from,
                                      const std::vector<std::array<double, 3>>& to);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  // Differences constant and nonzero: t is infinite and p is reported as 0.
  bool degenerate = false;
};

// Two-sided paired t-test on xs - ys.
TTestResult paired_t_test(std::span<const double> xs, std::span<const double> ys);

struct CaseMetrics {
  std::string case_id;
  std::array<double, kOrganCount> dice{};
  std::array<std::optional<double>, kOrganCount> msd{};
};

struct OrganRow {
  std::string organ;
  double dice_mean = 0.0, dice_sd = 0.0;
  // NaN when every case is undefined.
  double msd_mean = 0.0, msd_sd = 0.0;
  int msd_cases = 0;
  int msd_excluded = 0;
  std::optional<TTestResult> dice_test, msd_test;
};

// One row per organ in report order, then an "average" row over per-case
// organ averages. Standard deviations are population SDs.
struct MetricReport {
  std::vector<OrganRow> rows;
  std::string label;
  // Set by attach_t_tests; test columns then print even when fewer than two
  // paired cases leave them undefined.
  bool compared = false;
  std::string to_csv() const;
};

double mean_of(std::span<const double> v);
double population_sd(std::span<const double> v);

MetricReport aggregate_report(const std::vector<CaseMetrics>& cases);

// Adds paired t-test columns against a baseline evaluated on the same cases
// (matched by case id).
void attach_t_tests(MetricReport& report, const std::vector<CaseMetrics>& cases,
                    const std::vector<CaseMetrics>& baseline);

CaseMetrics evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& truth);

}  // namespace mfp
