#include "mfp/init.hpp"

#include <cmath>

namespace mfp {

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(seed, h);
}

Tensor<float> fan_in_uniform(const Shape& shape, std::uint64_t seed) {
  Tensor<float> t(shape);
  const auto fan_in = static_cast<double>(checked_numel(shape) / shape.front());
  const double bound = std::sqrt(6.0 / fan_in);
  Rng rng(seed);
  for (auto& v : t.storage()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

void add_conv(ParameterSet<float>& params, const std::string& prefix, std::int64_t co, std::int64_t ci,
              std::int64_t k, bool bias, std::uint64_t seed) {
  const std::string w = prefix + ".w";
  params.add(w, fan_in_uniform({co, ci, k, k}, name_seed(seed, w)));
  if (bias) params.add(prefix + ".b", Tensor<float>({co}));
}

void add_zero_conv(ParameterSet<float>& params, const std::string& prefix, std::int64_t co, std::int64_t ci,
                   std::int64_t k) {
  params.add(prefix + ".w", Tensor<float>({co, ci, k, k}));
  params.add(prefix + ".b", Tensor<float>({co}));
}

void add_norm(ParameterSet<float>& params, const std::string& prefix, std::int64_t channels) {
  params.add(prefix + ".g", Tensor<float>({channels}, 1.0f));
  params.add(prefix + ".b", Tensor<float>({channels}));
}

}  // namespace mfp
