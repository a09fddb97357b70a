#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mfp/parameters.hpp"

namespace mfp {

using Bindings = std::map<std::string, Var<double>>;

// Builds a scalar from bound parameters. Must be deterministic.
using ScalarFn = std::function<Var<double>(Graph<double>&, const Bindings&)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double eps = 0.0;
  double tol = 0.0;
  bool passed = false;
  // Set when probing produced a non-finite value or threw.
  bool fault = false;
  std::string fault_message;
};

// Compares reverse-mode gradients with central differences
// (f(x + eps) - f(x - eps)) / (2 eps) for every scalar of every parameter.
// Relative error per scalar is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const ScalarFn& fn, const ParameterSet<double>& params, double eps = 1e-6,
                           double tol = 1e-4);

// One line per parameter plus a verdict.
std::string format_report(const GradCheckReport& report);

}  // namespace mfp
