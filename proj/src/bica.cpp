#include "mfp/bica.hpp"

#include <algorithm>

#include "mfp/init.hpp"

namespace mfp {
namespace {

template <typename T>
void require_same_shape(const Var<T>& o, const Var<T>& q, const char* op) {
  if (o.shape() != q.shape() || o.value().rank() != 4) {
    throw ShapeError(std::string(op) + ": O " + shape_str(o.shape()) + " and Q " + shape_str(q.shape()) +
                     " must be equal B x C x H x W shapes");
  }
}

template <typename T>
const Var<T>& lookup(const std::map<std::string, Var<T>>& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ContractError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
Var<T> flow_branch(const Var<T>& x, const FlowBranchParams<T>& p) {
  auto h = conv2d(x, p.conv1_w);
  h = relu(group_norm(h, p.norm_g, p.norm_b, group_count_for(h.dim(1))));
  return conv2d(h, p.conv2_w, p.conv2_b);
}

}  // namespace

std::int64_t bica_block_extent(int level, int levels) {
  const int depth_from_bottom = (levels - 1) - level;
  return std::min<std::int64_t>(std::int64_t{1} << std::max(depth_from_bottom, 0), 8);
}

std::int64_t bica_rows(std::int64_t extent, std::int64_t block) {
  if (block < 1 || extent % block != 0) {
    throw ShapeError("block " + std::to_string(block) + " does not divide extent " + std::to_string(extent));
  }
  return (extent / block) * (extent / block);
}

template <typename T>
Var<T> semantic_domain(const Var<T>& x, std::int64_t block_h, std::int64_t block_w) {
  auto m = block_mean(x, block_h, block_w);
  const std::int64_t B = m.dim(0), C = m.dim(1), R = m.dim(2) * m.dim(3);
  return permute(reshape(m, {B, C, R}), {0, 2, 1});
}

template <typename T>
Var<T> stacked_domain(const Var<T>& o, const Var<T>& q, const BicaLevelConfig& cfg) {
  require_same_shape(o, q, "channel_attention");
  return concat_channels<T>({semantic_domain(o, cfg.block_h, cfg.block_w), semantic_domain(q, cfg.block_h, cfg.block_w)});
}

template <typename T>
Var<T> channel_weights(const Var<T>& o, const Var<T>& q, const ChannelAttentionParams<T>& p,
                       const BicaLevelConfig& cfg) {
  auto rows = stacked_domain(o, q, cfg);
  const std::int64_t B = rows.dim(0), R2 = rows.dim(1), C = rows.dim(2);
  auto ma = conv2d(reshape(rows, {B, R2, C, 1}), p.weight, p.bias);
  return reshape(ma, {B, C});
}

template <typename T>
Var<T> channel_attention(const Var<T>& o, const Var<T>& q, const ChannelAttentionParams<T>& p,
                         const BicaLevelConfig& cfg) {
  auto ma = channel_weights(o, q, p, cfg);
  if (cfg.mask == MaskActivation::Sigmoid) ma = sigmoid(ma);
  return scale_channels(q, ma);
}

template <typename T>
Var<T> flow_estimate(const Var<T>& o, const Var<T>& q, const FlowEstimatorParams<T>& p) {
  require_same_shape(o, q, "flow_estimate");
  auto joined = concat_channels<T>({conv2d(o, p.reduce_o_w, p.reduce_o_b), conv2d(q, p.reduce_q_w, p.reduce_q_b)});
  auto f = add(flow_branch(joined, p.branch3), flow_branch(joined, p.branch5));
  if (f.dim(1) != 2) throw ShapeError("flow_estimate: projection must emit 2 channels");
  // The branches predict offsets in pixels. Dividing by the half extent
  // gives normalized offsets; predicting normalized offsets directly makes
  // every unit of the projection move samples by half the map.
  const std::int64_t h = f.dim(2), w = f.dim(3), plane = h * w;
  Tensor<T> to_normalized(f.shape());
  for (std::int64_t b = 0; b < f.dim(0); ++b) {
    std::fill_n(to_normalized.ptr() + (2 * b) * plane, plane, T(2.0 / static_cast<double>(std::max<std::int64_t>(h - 1, 1))));
    std::fill_n(to_normalized.ptr() + (2 * b + 1) * plane, plane,
                T(2.0 / static_cast<double>(std::max<std::int64_t>(w - 1, 1))));
  }
  f = mul(f, o.graph().constant(std::move(to_normalized)));
  return permute(f, {0, 2, 3, 1});
}

template <typename T>
Var<T> flow_warp(const Var<T>& o, const Var<T>& flow) {
  const auto& os = o.shape();
  const auto& fs = flow.shape();
  if (os.size() != 4 || fs.size() != 4 || fs[0] != os[0] || fs[1] != os[2] || fs[2] != os[3] || fs[3] != 2) {
    throw ShapeError("flow_warp: flow " + shape_str(fs) + " not aligned with feature " + shape_str(os));
  }
  const auto grid = standard_grid<T>(os[2], os[3]);
  Tensor<T> grids({os[0], os[2], os[3], 2});
  for (std::int64_t b = 0; b < os[0]; ++b) {
    std::copy(grid.storage().begin(), grid.storage().end(), grids.ptr() + b * static_cast<std::int64_t>(grid.numel()));
  }
  auto coords = clamp(add(flow, o.graph().constant(std::move(grids))), -1.0, 1.0);
  return sample_bilinear_normalized(o, coords);
}

template <typename T>
Var<T> bica_fuse(const Var<T>& o, const Var<T>& q, const BicaParams<T>& p, const BicaLevelConfig& cfg) {
  return add(flow_warp(o, flow_estimate(o, q, p.flow)), channel_attention(o, q, p.attention, cfg));
}

void register_bica_params(ParameterSet<float>& params, const std::string& prefix, std::int64_t channels,
                          std::int64_t rows, std::uint64_t seed) {
  const std::int64_t half = std::max<std::int64_t>(channels / 2, 1);
  add_conv(params, prefix + ".att", 1, 2 * rows, 1, true, seed);
  add_conv(params, prefix + ".red_o", half, channels, 1, true, seed);
  add_conv(params, prefix + ".red_q", half, channels, 1, true, seed);
  for (int k : {3, 5}) {
    const std::string b = prefix + ".f" + std::to_string(k);
    add_conv(params, b + ".c1", half, 2 * half, k, false, seed);
    add_norm(params, b + ".n", half);
    add_zero_conv(params, b + ".c2", 2, half, k);
  }
}

template <typename T>
BicaParams<T> bind_bica(const std::map<std::string, Var<T>>& vars, const std::string& prefix) {
  auto v = [&](const std::string& s) { return lookup(vars, prefix + s); };
  BicaParams<T> p;
  p.attention = {v(".att.w"), v(".att.b")};
  p.flow.reduce_o_w = v(".red_o.w");
  p.flow.reduce_o_b = v(".red_o.b");
  p.flow.reduce_q_w = v(".red_q.w");
  p.flow.reduce_q_b = v(".red_q.b");
  p.flow.branch3 = {v(".f3.c1.w"), v(".f3.n.g"), v(".f3.n.b"), v(".f3.c2.w"), v(".f3.c2.b")};
  p.flow.branch5 = {v(".f5.c1.w"), v(".f5.n.g"), v(".f5.n.b"), v(".f5.c2.w"), v(".f5.c2.b")};
  return p;
}

#define MFP_INSTANTIATE(T)                                                                                   \
  template Var<T> semantic_domain(const Var<T>&, std::int64_t, std::int64_t);                                \
  template Var<T> channel_weights(const Var<T>&, const Var<T>&, const ChannelAttentionParams<T>&,            \
                                  const BicaLevelConfig&);                                                   \
  template Var<T> channel_attention(const Var<T>&, const Var<T>&, const ChannelAttentionParams<T>&,          \
                                    const BicaLevelConfig&);                                                 \
  template Var<T> flow_estimate(const Var<T>&, const Var<T>&, const FlowEstimatorParams<T>&);                \
  template Var<T> flow_warp(const Var<T>&, const Var<T>&);                                                   \
  template Var<T> stacked_domain(const Var<T>&, const Var<T>&, const BicaLevelConfig&);                       \
  template Var<T> bica_fuse(const Var<T>&, const Var<T>&, const BicaParams<T>&, const BicaLevelConfig&);     \
  template BicaParams<T> bind_bica(const std::map<std::string, Var<T>>&, const std::string&);

MFP_INSTANTIATE(float)
MFP_INSTANTIATE(double)

#undef MFP_INSTANTIATE

}  // namespace mfp
