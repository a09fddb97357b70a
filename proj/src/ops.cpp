#include "mfp/ops.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace mfp {
namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.graph() != &b.graph()) throw ContractError(std::string(op) + ": operands belong to different graphs");
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record("add", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    for (auto id : {ia, ib}) {
      if (!g.requires_grad(id)) continue;
      auto& gi = g.grad_buffer(id);
      for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += go[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] - y[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record("sub", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    if (g.requires_grad(ia)) {
      auto& gi = g.grad_buffer(ia);
      for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += go[i];
    }
    if (g.requires_grad(ib)) {
      auto& gi = g.grad_buffer(ib);
      for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] -= go[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  const auto& x = a.value();
  const auto& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  const auto ia = a.id(), ib = b.id();
  return a.graph().record("mul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    const auto& x = g.value(ia);
    const auto& y = g.value(ib);
    if (g.requires_grad(ia)) {
      auto& gi = g.grad_buffer(ia);
      for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += go[i] * y[i];
    }
    if (g.requires_grad(ib)) {
      auto& gi = g.grad_buffer(ib);
      for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += go[i] * x[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  const T k = static_cast<T>(s);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * k;
  const auto ia = a.id();
  return a.graph().record("scale", std::move(out), {ia}, [ia, k](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    auto& gi = g.grad_buffer(ia);
    for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += go[i] * k;
  });
}

template <typename T>
Var<T> elementwise(ElementwiseKind kind, const Var<T>& a, const Var<T>& b) {
  switch (kind) {
    case ElementwiseKind::Add:
      return add(a, b);
    case ElementwiseKind::Sub:
      return sub(a, b);
    case ElementwiseKind::Mul:
      return mul(a, b);
  }
  throw ContractError("unknown elementwise kind");
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().data()) acc += v;
  const auto ia = a.id();
  return a.graph().record("sum", Tensor<T>({1}, static_cast<T>(acc)), {ia},
                          [ia](Graph<T>& g, std::size_t self) {
                            const T go = g.grad_output(self)[0];
                            auto& gi = g.grad_buffer(ia);
                            for (auto& v : gi.data()) v += go;
                          });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().numel()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (checked_numel(shape) != static_cast<std::int64_t>(a.value().numel())) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  const auto ia = a.id();
  return a.graph().record("reshape", a.value().reshaped(std::move(shape)), {ia},
                          [ia](Graph<T>& g, std::size_t self) {
                            const auto& go = g.grad_output(self);
                            auto& gi = g.grad_buffer(ia);
                            for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += go[i];
                          });
}

namespace {

// Shared index walk for permute and its inverse. `axes` maps output axis to
// input axis; ranks below 4 are padded with leading unit axes.
template <typename T, typename F>
void walk_permuted(const Shape& in_shape, const std::vector<int>& axes, F&& f) {
  const std::size_t r = in_shape.size();
  std::array<std::int64_t, 4> out_dims{1, 1, 1, 1};
  std::array<std::int64_t, 4> stride_for_out{0, 0, 0, 0};
  std::vector<std::int64_t> strides(r, 1);
  for (std::size_t i = r; i-- > 1;) strides[i - 1] = strides[i] * in_shape[i];
  const std::size_t pad = 4 - r;
  for (std::size_t i = 0; i < r; ++i) {
    out_dims[pad + i] = in_shape[static_cast<std::size_t>(axes[i])];
    stride_for_out[pad + i] = strides[static_cast<std::size_t>(axes[i])];
  }
  std::size_t o = 0;
  for (std::int64_t i0 = 0; i0 < out_dims[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < out_dims[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < out_dims[2]; ++i2)
        for (std::int64_t i3 = 0; i3 < out_dims[3]; ++i3, ++o) {
          const auto src = i0 * stride_for_out[0] + i1 * stride_for_out[1] + i2 * stride_for_out[2] +
                           i3 * stride_for_out[3];
          f(o, static_cast<std::size_t>(src));
        }
}

}  // namespace

template <typename T>
Var<T> permute(const Var<T>& a, std::vector<int> axes) {
  const auto& in = a.value();
  const std::size_t r = in.rank();
  if (r > 4 || axes.size() != r) throw ShapeError("permute: axes must list every axis of a rank<=4 tensor");
  std::vector<int> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < r; ++i) {
    if (sorted[i] != static_cast<int>(i)) throw ShapeError("permute: axes are not a permutation");
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in.dim(static_cast<std::size_t>(axes[i]));
  Tensor<T> out(out_shape);
  walk_permuted<T>(in.shape(), axes, [&](std::size_t o, std::size_t s) { out[o] = in[s]; });
  const auto ia = a.id();
  Shape in_shape = in.shape();
  return a.graph().record("permute", std::move(out), {ia},
                          [ia, axes, in_shape](Graph<T>& g, std::size_t self) {
                            const auto& go = g.grad_output(self);
                            auto& gi = g.grad_buffer(ia);
                            walk_permuted<T>(in_shape, axes,
                                             [&](std::size_t o, std::size_t s) { gi[s] += go[o]; });
                          });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (ref.size() < 2) throw ShapeError("concat: inputs need rank >= 2");
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < ref.size(); ++i) inner *= ref[i];
  std::int64_t channels = 0;
  std::vector<std::size_t> ids;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size() && s[0] == ref[0];
    for (std::size_t i = 2; ok && i < s.size(); ++i) ok = s[i] == ref[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(ref));
    channels += s[1];
    ids.push_back(p.id());
    widths.push_back(s[1] * inner);
  }
  Shape out_shape = ref;
  out_shape[1] = channels;
  Tensor<T> out(out_shape);
  const std::int64_t batch = ref[0];
  const std::int64_t row = channels * inner;
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::int64_t b = 0; b < batch; ++b) {
      std::copy_n(v.ptr() + b * widths[k], widths[k], out.ptr() + b * row + offset);
    }
    offset += widths[k];
  }
  return parts.front().graph().record(
      "concat", std::move(out), ids, [ids, widths, batch, row](Graph<T>& g, std::size_t self) {
        const auto& go = g.grad_output(self);
        std::int64_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (g.requires_grad(ids[k])) {
            auto& gi = g.grad_buffer(ids[k]);
            for (std::int64_t b = 0; b < batch; ++b) {
              const T* src = go.ptr() + b * row + off;
              T* dst = gi.ptr() + b * widths[k];
              for (std::int64_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
            }
          }
          off += widths[k];
        }
      });
}

template <typename T>
Var<T> clamp(const Var<T>& a, double lo, double hi) {
  const auto& x = a.value();
  Tensor<T> out(x.shape());
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::min(h, std::max(l, x[i]));
  const auto ia = a.id();
  return a.graph().record("clamp", std::move(out), {ia}, [ia, l, h](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    const auto& x = g.value(ia);
    auto& gi = g.grad_buffer(ia);
    for (std::size_t i = 0; i < gi.numel(); ++i) {
      if (x[i] >= l && x[i] <= h) gi[i] += go[i];
    }
  });
}

#define MFP_INSTANTIATE(T)                                                        \
  template Var<T> add(const Var<T>&, const Var<T>&);                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                              \
  template Var<T> scale(const Var<T>&, double);                                   \
  template Var<T> elementwise(ElementwiseKind, const Var<T>&, const Var<T>&);     \
  template Var<T> sum(const Var<T>&);                                             \
  template Var<T> mean(const Var<T>&);                                            \
  template Var<T> reshape(const Var<T>&, Shape);                                  \
  template Var<T> permute(const Var<T>&, std::vector<int>);                       \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                    \
  template Var<T> clamp(const Var<T>&, double, double);

MFP_INSTANTIATE(float)
MFP_INSTANTIATE(double)

#undef MFP_INSTANTIATE

}  // namespace mfp
