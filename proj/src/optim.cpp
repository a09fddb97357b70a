#include "mfp/optim.hpp"

#include <algorithm>
#include <sstream>

namespace mfp {

template <typename T>
void sgd_step(ParameterSet<T>& params, const GradientSet<T>& grads, OptimState<T>& state) {
  for (auto& [name, w] : params) {
    const Tensor<T>& g = grads.at(name);
    if (g.shape() != w.shape()) {
      throw ContractError("sgd_step: gradient for '" + name + "' has shape " + shape_str(g.shape()) +
                          ", parameter has " + shape_str(w.shape()));
    }
    if (!state.velocity.contains(name)) state.velocity.add(name, Tensor<T>(w.shape(), T(0)));
    Tensor<T>& v = state.velocity.at(name);
    if (v.shape() != w.shape()) throw ContractError("sgd_step: momentum buffer shape mismatch for '" + name + "'");
    auto wd = w.data();
    auto gd = g.data();
    auto vd = v.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
      const double gi = static_cast<double>(gd[i]) + state.weight_decay * static_cast<double>(wd[i]);
      const double vi = state.momentum * static_cast<double>(vd[i]) + gi;
      vd[i] = static_cast<T>(vi);
      wd[i] = static_cast<T>(static_cast<double>(wd[i]) - state.lr * vi);
    }
  }
}

template void sgd_step(ParameterSet<float>&, const GradientSet<float>&, OptimState<float>&);
template void sgd_step(ParameterSet<double>&, const GradientSet<double>&, OptimState<double>&);

std::string LrSchedule::to_text() const {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < breakpoints.size(); ++i) {
    if (i) os << ',';
    os << breakpoints[i].first << ':' << breakpoints[i].second;
  }
  return os.str();
}

LrSchedule LrSchedule::parse(const std::string& text) {
  LrSchedule s;
  s.breakpoints.clear();
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("lr_schedule: expected epoch:lr, got '" + item + "'");
    try {
      s.breakpoints.emplace_back(std::stoi(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
    } catch (const std::logic_error&) {
      throw ConfigError("lr_schedule: cannot parse '" + item + "'");
    }
  }
  if (s.breakpoints.empty() || s.breakpoints.front().first != 0) {
    throw ConfigError("lr_schedule: first breakpoint must be at epoch 0");
  }
  for (std::size_t i = 1; i < s.breakpoints.size(); ++i) {
    if (s.breakpoints[i].first <= s.breakpoints[i - 1].first) {
      throw ConfigError("lr_schedule: breakpoint epochs must increase");
    }
    if (s.breakpoints[i].second > s.breakpoints[i - 1].second) {
      throw ConfigError("lr_schedule: rates must not increase");
    }
  }
  return s;
}

double lr_at(const LrSchedule& schedule, int epoch) {
  if (schedule.breakpoints.empty()) throw ContractError("lr_at: empty schedule");
  double lr = schedule.breakpoints.front().second;
  for (const auto& [start, rate] : schedule.breakpoints) {
    if (epoch >= start) lr = rate;
  }
  return lr;
}

}  // namespace mfp
