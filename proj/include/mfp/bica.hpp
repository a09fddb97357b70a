#pragma once

#include <string>

#include "mfp/gradcheck.hpp"
#include "mfp/nn.hpp"
#include "mfp/ops.hpp"

namespace mfp {

// How the raw channel weighting Ma is squashed before scaling Q.
enum class MaskActivation { Sigmoid, Identity };

struct BicaLevelConfig {
  std::int64_t block_h = 1;
  std::int64_t block_w = 1;
  MaskActivation mask = MaskActivation::Sigmoid;
};

// Block extent used at decoder junction `level` (1 = full resolution) of an
// n-level network: 1x1 at the deepest junction, doubling toward full
// resolution, capped at 8x8.
std::int64_t bica_block_extent(int level, int levels);

// Number of block-mean rows per source at a junction whose maps are
// extent x extent.
std::int64_t bica_rows(std::int64_t extent, std::int64_t block);

// Block means of a B x C x H x W map laid out as B x R x C with
// R = (H / block_h) * (W / block_w), rows in raster order of the blocks.
template <typename T>
Var<T> semantic_domain(const Var<T>& x, std::int64_t block_h, std::int64_t block_w);

// Rows of O then rows of Q: B x 2R x C.
template <typename T>
Var<T> stacked_domain(const Var<T>& o, const Var<T>& q, const BicaLevelConfig& cfg);

template <typename T>
struct ChannelAttentionParams {
  Var<T> weight;  // 1 x 2R x 1 x 1
  Var<T> bias;    // 1
};

// Raw per-channel weighting Ma (B x C) before the mask activation.
template <typename T>
Var<T> channel_weights(const Var<T>& o, const Var<T>& q, const ChannelAttentionParams<T>& p,
                       const BicaLevelConfig& cfg);

// Q' = act(Ma) * Q, broadcast over each channel's map.
template <typename T>
Var<T> channel_attention(const Var<T>& o, const Var<T>& q, const ChannelAttentionParams<T>& p,
                         const BicaLevelConfig& cfg);

template <typename T>
struct FlowBranchParams {
  Var<T> conv1_w;  // C/2 x C x k x k, no bias (followed by group norm)
  Var<T> norm_g, norm_b;
  Var<T> conv2_w;  // 2 x C/2 x k x k
  Var<T> conv2_b;
};

template <typename T>
struct FlowEstimatorParams {
  Var<T> reduce_o_w, reduce_o_b;  // C/2 x C x 1 x 1
  Var<T> reduce_q_w, reduce_q_b;
  FlowBranchParams<T> branch3, branch5;
};

// Offset field B x H x W x 2 in normalized units, last axis (vertical,
// horizontal), unclamped. The branches themselves work in pixels.
template <typename T>
Var<T> flow_estimate(const Var<T>& o, const Var<T>& q, const FlowEstimatorParams<T>& p);

// Samples O at clamp(flow + identity grid, -1, 1).
template <typename T>
Var<T> flow_warp(const Var<T>& o, const Var<T>& flow);

template <typename T>
struct BicaParams {
  ChannelAttentionParams<T> attention;
  FlowEstimatorParams<T> flow;
};

// flow_warp(O, flow_estimate(O, Q)) + channel_attention(O, Q).
template <typename T>
Var<T> bica_fuse(const Var<T>& o, const Var<T>& q, const BicaParams<T>& p, const BicaLevelConfig& cfg);

// Registers the parameters of one fusion unit under `prefix` for C channels
// and R block rows per source. The final flow convolutions start at zero.
void register_bica_params(ParameterSet<float>& params, const std::string& prefix, std::int64_t channels,
                          std::int64_t rows, std::uint64_t seed);

template <typename T>
BicaParams<T> bind_bica(const std::map<std::string, Var<T>>& vars, const std::string& prefix);

}  // namespace mfp
