#pragma once

#include <string>
#include <vector>

#include "mfp/gradcheck.hpp"

namespace mfp {

struct GradCheckCase {
  std::string name;
  ParameterSet<double> params;
  ScalarFn fn;
  // Smooth operators use a wide step; operators with kinks (relu, pooling,
  // bilinear cell boundaries) use a narrow one so probes rarely straddle a kink.
  double eps = 1e-4;
};

// Random instances (extents <= 8) of every differentiable operator, each
// reduced to a scalar by a randomly weighted sum.
std::vector<GradCheckCase> operator_gradcheck_cases(std::uint64_t seed);

struct GradCheckOutcome {
  std::string name;
  GradCheckReport report;
};

std::vector<GradCheckOutcome> run_gradcheck_suite(std::uint64_t seed, double tol = 1e-4);

}  // namespace mfp
