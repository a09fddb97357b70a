#include "mfp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace mfp {
namespace {

double evaluate(const ScalarFn& fn, const ParameterSet<double>& params) {
  Graph<double> g;
  const auto vars = params.bind(g);
  const auto out = fn(g, vars);
  if (out.value().numel() != 1) throw ContractError("grad_check: function is not scalar-valued");
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, const ParameterSet<double>& params, double eps, double tol) {
  GradCheckReport report;
  report.eps = eps;
  report.tol = tol;
  try {
    Graph<double> g;
    const auto vars = params.bind(g);
    const auto loss = fn(g, vars);
    if (!loss.value().all_finite()) throw ContractError("non-finite function value at the base point");
    const auto grads = g.backward(loss);

    ParameterSet<double> probe = params;
    for (auto& [name, tensor] : probe) {
      const auto& analytic = grads.at(name);
      if (!analytic.all_finite()) throw ContractError("non-finite analytic gradient for '" + name + "'");
      GradCheckEntry entry;
      entry.name = name;
      for (std::size_t i = 0; i < tensor.numel(); ++i) {
        const double orig = tensor[i];
        tensor[i] = orig + eps;
        const double fp = evaluate(fn, probe);
        tensor[i] = orig - eps;
        const double fm = evaluate(fn, probe);
        tensor[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
          throw ContractError("non-finite value while probing '" + name + "'[" + std::to_string(i) + "]");
        }
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        if (rel > entry.max_rel_err || i == 0) {
          entry.max_rel_err = std::max(entry.max_rel_err, rel);
          entry.worst_index = i;
          entry.analytic = a;
          entry.numeric = numeric;
        }
      }
      report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
      report.entries.push_back(entry);
    }
    report.passed = report.max_rel_err < tol;
  } catch (const Error& e) {
    report.fault = true;
    report.fault_message = e.what();
    report.passed = false;
  }
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  char buf[256];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, "  %-28s max_rel_err=%.3e (index %zu: analytic %.6e numeric %.6e)\n",
                  e.name.c_str(), e.max_rel_err, e.worst_index, e.analytic, e.numeric);
    os << buf;
  }
  if (report.fault) os << "  fault: " << report.fault_message << "\n";
  std::snprintf(buf, sizeof buf, "  %s max_rel_err=%.3e eps=%.1e tol=%.1e\n", report.passed ? "PASS" : "FAIL",
                report.max_rel_err, report.eps, report.tol);
  os << buf;
  return os.str();
}

}  // namespace mfp
