#pragma once

#include <map>
#include <utility>
#include <vector>

#include "mfp/parameters.hpp"

namespace mfp {

template <typename T>
struct OptimState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.001;
  // One buffer per parameter, created as zeros on the first step.
  ParameterSet<T> velocity;
};

// Heavy-ball SGD with coupled L2:
//   g' = g + wd * w;  v = momentum * v + g';  w = w - lr * v
// Arithmetic runs in double and is rounded to T once per value.
template <typename T>
void sgd_step(ParameterSet<T>& params, const GradientSet<T>& grads, OptimState<T>& state);

// Piecewise-constant learning rate: the value of the last breakpoint whose
// epoch is <= the query.
struct LrSchedule {
  std::vector<std::pair<int, double>> breakpoints{{0, 0.01}, {200, 0.001}, {300, 0.0001}};

  // "epoch:lr" pairs separated by commas.
  std::string to_text() const;
  static LrSchedule parse(const std::string& text);
};

double lr_at(const LrSchedule& schedule, int epoch);

}  // namespace mfp
