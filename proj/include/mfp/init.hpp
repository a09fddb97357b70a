#pragma once

#include <string>

#include "mfp/parameters.hpp"

namespace mfp {

// Per-parameter seed: identical names get identical streams regardless of
// what else is registered.
std::uint64_t name_seed(std::uint64_t seed, const std::string& name);

// Uniform in +-sqrt(6 / fan_in), fan_in = product of all extents but the first.
Tensor<float> fan_in_uniform(const Shape& shape, std::uint64_t seed);

// "<prefix>.w" (co x ci x k x k) and, when `bias`, "<prefix>.b" (zeros).
void add_conv(ParameterSet<float>& params, const std::string& prefix, std::int64_t co, std::int64_t ci,
              std::int64_t k, bool bias, std::uint64_t seed);

// Zero-initialised convolution, same naming as add_conv.
void add_zero_conv(ParameterSet<float>& params, const std::string& prefix, std::int64_t co, std::int64_t ci,
                   std::int64_t k);

// "<prefix>.g" (ones) and "<prefix>.b" (zeros).
void add_norm(ParameterSet<float>& params, const std::string& prefix, std::int64_t channels);

}  // namespace mfp
