#pragma once

#include <optional>

#include "mfp/graph.hpp"

namespace mfp {

// Geometry of a 2-D convolution. When `padding` is empty the input is
// zero-padded by (effective_extent - 1) / 2 on every side ("same-effective"),
// which keeps H x W at stride 1 for any dilation.
struct Conv2dOptions {
  int stride = 1;
  int dilation = 1;
  std::optional<int> padding;
};

inline std::int64_t effective_extent(std::int64_t kernel, int dilation) { return (kernel - 1) * dilation + 1; }

// Output extent of a convolution along one axis.
std::int64_t conv_output_extent(std::int64_t input, std::int64_t kernel, const Conv2dOptions& opt);

// input: B x Ci x H x W, weight: Co x Ci x kh x kw (odd kh, kw), bias: Co.
// An invalid (default-constructed) bias means no bias term.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, const Conv2dOptions& opt = {});
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Conv2dOptions& opt = {});

// Group normalisation over (channels-in-group x H x W) per sample, followed by
// a per-channel affine map. gamma/beta have one entry per channel.
template <typename T>
Var<T> group_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, int groups, double eps = 1e-5);

// Largest divisor of `channels` not exceeding `preferred`.
int group_count_for(std::int64_t channels, int preferred = 8);

enum class ActivationKind { Relu, Sigmoid, SoftmaxChannels };

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
// Softmax along axis 1 of a rank >= 2 tensor.
template <typename T>
Var<T> softmax_channels(const Var<T>& x);
template <typename T>
Var<T> activation(const Var<T>& x, ActivationKind kind);

// Bilinear upsampling by an integer factor (half-pixel centres, edge clamped).
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor);

// Mean over non-overlapping block_h x block_w tiles. H and W must be
// divisible by the block extents.
template <typename T>
Var<T> block_mean(const Var<T>& x, std::int64_t block_h, std::int64_t block_w);

// 2x2 max pooling with stride 2; H and W must be even.
template <typename T>
Var<T> max_pool2x2(const Var<T>& x);

// Samples a B x C x H x W input at normalised coordinates (B x Ho x Wo x 2,
// last axis = (vertical, horizontal)). -1 maps to the first pixel centre and
// +1 to the last. Coordinates outside [-1, 1] are a ContractError.
template <typename T>
Var<T> sample_bilinear_normalized(const Var<T>& input, const Var<T>& coords);

// Multiplies every H x W map of x (B x C x H x W) by mask[b, c] (B x C).
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& mask);

// Identity sampling grid for H x W, shape H x W x 2 in [-1, 1].
template <typename T>
Tensor<T> standard_grid(std::int64_t height, std::int64_t width);

}  // namespace mfp
