#include "mfp/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace mfp {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " + shape_str(s));
  }
}

struct ConvGeometry {
  std::int64_t batch, in_ch, in_h, in_w;
  std::int64_t out_ch, k_h, k_w;
  std::int64_t out_h, out_w;
  std::int64_t pad_h, pad_w;
  int stride, dilation;

  std::int64_t patch() const { return in_ch * k_h * k_w; }
  std::int64_t positions() const { return out_h * out_w; }
  bool pointwise() const { return k_h == 1 && k_w == 1 && stride == 1 && pad_h == 0 && pad_w == 0; }
};

// col: patch() rows x positions() columns.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::int64_t P = g.positions();
  for (std::int64_t ci = 0; ci < g.in_ch; ++ci) {
    const T* plane = x + ci * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.k_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.k_w; ++kx) {
        T* row = col + ((ci * g.k_h + ky) * g.k_w + kx) * P;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad_h + ky * g.dilation;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = plane + iy * g.in_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad_w + kx * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  const std::int64_t P = g.positions();
  for (std::int64_t ci = 0; ci < g.in_ch; ++ci) {
    T* plane = dx + ci * g.in_h * g.in_w;
    for (std::int64_t ky = 0; ky < g.k_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.k_w; ++kx) {
        const T* row = col + ((ci * g.k_h + ky) * g.k_w + kx) * P;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad_h + ky * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* src = row + oy * g.out_w;
          T* dst = plane + iy * g.in_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad_w + kx * g.dilation;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t input, std::int64_t kernel, const Conv2dOptions& opt) {
  const std::int64_t eff = effective_extent(kernel, opt.dilation);
  const std::int64_t pad = opt.padding ? *opt.padding : (eff - 1) / 2;
  return (input + 2 * pad - eff) / opt.stride + 1;
}

int group_count_for(std::int64_t channels, int preferred) {
  for (int g = preferred; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, const Conv2dOptions& opt) {
  const auto& x = input.value();
  const auto& w = weight.value();
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  if (opt.stride < 1 || opt.dilation < 1) throw ShapeError("conv2d: stride and dilation must be >= 1");
  if (opt.padding && *opt.padding < 0) throw ShapeError("conv2d: negative padding");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.in_ch = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.out_ch = w.dim(0);
  g.k_h = w.dim(2);
  g.k_w = w.dim(3);
  g.stride = opt.stride;
  g.dilation = opt.dilation;
  if (w.dim(1) != g.in_ch) {
    throw ShapeError("conv2d: input has " + std::to_string(g.in_ch) + " channels, weight expects " +
                     std::to_string(w.dim(1)));
  }
  if (g.k_h % 2 == 0 || g.k_w % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  const bool has_bias = bias.valid();
  if (has_bias && bias.value().numel() != static_cast<std::size_t>(g.out_ch)) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.value().numel()) + " entries for " +
                     std::to_string(g.out_ch) + " output channels");
  }
  const std::int64_t eff_h = effective_extent(g.k_h, g.dilation);
  const std::int64_t eff_w = effective_extent(g.k_w, g.dilation);
  g.pad_h = opt.padding ? *opt.padding : (eff_h - 1) / 2;
  g.pad_w = opt.padding ? *opt.padding : (eff_w - 1) / 2;
  if (g.in_h + 2 * g.pad_h < eff_h || g.in_w + 2 * g.pad_w < eff_w) {
    throw ShapeError("conv2d: effective kernel " + std::to_string(eff_h) + "x" + std::to_string(eff_w) +
                     " larger than padded input " + shape_str(x.shape()));
  }
  g.out_h = (g.in_h + 2 * g.pad_h - eff_h) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad_w - eff_w) / g.stride + 1;

  Tensor<T> out({g.batch, g.out_ch, g.out_h, g.out_w});
  const std::int64_t K = g.patch();
  const std::int64_t P = g.positions();
  const T* bptr = has_bias ? bias.value().ptr() : nullptr;
  MapConstMat<T> wm(w.ptr(), g.out_ch, K);
#pragma omp parallel
  {
    std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(K * P));
#pragma omp for schedule(static)
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const T* xb = x.ptr() + b * g.in_ch * g.in_h * g.in_w;
      const T* cptr = xb;
      if (!g.pointwise()) {
        im2col(xb, g, col.data());
        cptr = col.data();
      }
      MapMat<T> om(out.ptr() + b * g.out_ch * P, g.out_ch, P);
      om.noalias() = wm * MapConstMat<T>(cptr, K, P);
      if (bptr) {
        for (std::int64_t co = 0; co < g.out_ch; ++co) om.row(co).array() += bptr[co];
      }
    }
  }

  const auto ix = input.id(), iw = weight.id();
  const std::optional<std::size_t> ib = has_bias ? std::optional(bias.id()) : std::nullopt;
  std::vector<std::size_t> ids{ix, iw};
  if (ib) ids.push_back(*ib);
  return input.graph().record("conv2d", std::move(out), ids, [ix, iw, ib, g](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad_output(self);
    const auto& xv = gr.value(ix);
    const auto& wv = gr.value(iw);
    const std::int64_t K = g.patch();
    const std::int64_t P = g.positions();
    const bool need_x = gr.requires_grad(ix);
    const bool need_w = gr.requires_grad(iw);
    MapConstMat<T> wm(wv.ptr(), g.out_ch, K);
    std::vector<std::vector<T>> cols(need_w && !g.pointwise() ? static_cast<std::size_t>(g.batch) : 0);
    if (need_x || need_w) {
      T* dx = need_x ? gr.grad_buffer(ix).ptr() : nullptr;
#pragma omp parallel
      {
        std::vector<T> dcol(need_x && !g.pointwise() ? static_cast<std::size_t>(K * P) : 0);
#pragma omp for schedule(static)
        for (std::int64_t b = 0; b < g.batch; ++b) {
          MapConstMat<T> gm(go.ptr() + b * g.out_ch * P, g.out_ch, P);
          if (need_w && !g.pointwise()) {
            auto& c = cols[static_cast<std::size_t>(b)];
            c.resize(static_cast<std::size_t>(K * P));
            im2col(xv.ptr() + b * g.in_ch * g.in_h * g.in_w, g, c.data());
          }
          if (need_x) {
            T* dxb = dx + b * g.in_ch * g.in_h * g.in_w;
            if (g.pointwise()) {
              MapMat<T>(dxb, K, P).noalias() += wm.transpose() * gm;
            } else {
              MapMat<T>(dcol.data(), K, P).noalias() = wm.transpose() * gm;
              col2im(dcol.data(), g, dxb);
            }
          }
        }
      }
    }
    if (need_w) {
      MapMat<T> dw(gr.grad_buffer(iw).ptr(), g.out_ch, K);
      for (std::int64_t b = 0; b < g.batch; ++b) {
        MapConstMat<T> gm(go.ptr() + b * g.out_ch * P, g.out_ch, P);
        const T* cptr = g.pointwise() ? xv.ptr() + b * g.in_ch * P : cols[static_cast<std::size_t>(b)].data();
        dw.noalias() += gm * MapConstMat<T>(cptr, K, P).transpose();
      }
    }
    if (ib && gr.requires_grad(*ib)) {
      auto& db = gr.grad_buffer(*ib);
      for (std::int64_t co = 0; co < g.out_ch; ++co) {
        double acc = 0.0;
        for (std::int64_t b = 0; b < g.batch; ++b) {
          const T* row = go.ptr() + (b * g.out_ch + co) * P;
          for (std::int64_t p = 0; p < P; ++p) acc += row[p];
        }
        db[static_cast<std::size_t>(co)] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Conv2dOptions& opt) {
  return conv2d(input, weight, Var<T>(), opt);
}

template <typename T>
Var<T> group_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, int groups, double eps) {
  const auto& x = input.value();
  if (x.rank() < 2) throw ShapeError("group_norm: input needs rank >= 2");
  const std::int64_t B = x.dim(0), C = x.dim(1);
  if (groups < 1 || C % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(C) + " channels not divisible into " + std::to_string(groups) +
                      " groups");
  }
  if (gamma.value().numel() != static_cast<std::size_t>(C) || beta.value().numel() != static_cast<std::size_t>(C)) {
    throw ShapeError("group_norm: gamma/beta length must equal channel count " + std::to_string(C));
  }
  const std::int64_t inner = static_cast<std::int64_t>(x.numel()) / (B * C);
  const std::int64_t cg = C / groups;
  const std::int64_t n = cg * inner;
  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * B * groups));
  Tensor<T> out(x.shape());
  const T* gm = gamma.value().ptr();
  const T* bt = beta.value().ptr();
#pragma omp parallel for schedule(static)
  for (std::int64_t bg = 0; bg < B * groups; ++bg) {
    const std::int64_t b = bg / groups, grp = bg % groups;
    const std::int64_t base = (b * C + grp * cg) * inner;
    const T* src = x.ptr() + base;
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += src[i];
    const double mu = s / static_cast<double>(n);
    double v = 0.0;
    for (std::int64_t i = 0; i < n; ++i) v += (src[i] - mu) * (src[i] - mu);
    const double rstd = 1.0 / std::sqrt(v / static_cast<double>(n) + eps);
    (*stats)[static_cast<std::size_t>(2 * bg)] = mu;
    (*stats)[static_cast<std::size_t>(2 * bg + 1)] = rstd;
    T* dst = out.ptr() + base;
    for (std::int64_t c = 0; c < cg; ++c) {
      const std::int64_t ch = grp * cg + c;
      const T a = static_cast<T>(rstd) * gm[ch];
      const T k = bt[ch] - static_cast<T>(mu) * a;
      for (std::int64_t i = 0; i < inner; ++i) dst[c * inner + i] = src[c * inner + i] * a + k;
    }
  }
  const auto ix = input.id(), igm = gamma.id(), ibt = beta.id();
  return input.graph().record(
      "group_norm", std::move(out), {ix, igm, ibt},
      [ix, igm, ibt, stats, B, C, groups, cg, inner, n](Graph<T>& g, std::size_t self) {
        const auto& go = g.grad_output(self);
        const auto& xv = g.value(ix);
        const T* gmv = g.value(igm).ptr();
        // Per (b, c) partial sums of dy * xhat and dy; reduced over b in order.
        std::vector<double> dgam(static_cast<std::size_t>(B * C)), dbet(static_cast<std::size_t>(B * C));
        T* dx = g.requires_grad(ix) ? g.grad_buffer(ix).ptr() : nullptr;
#pragma omp parallel for schedule(static)
        for (std::int64_t bg = 0; bg < B * groups; ++bg) {
          const std::int64_t b = bg / groups, grp = bg % groups;
          const std::int64_t base = (b * C + grp * cg) * inner;
          const double mu = (*stats)[static_cast<std::size_t>(2 * bg)];
          const double rstd = (*stats)[static_cast<std::size_t>(2 * bg + 1)];
          const T* src = xv.ptr() + base;
          const T* dy = go.ptr() + base;
          double m1 = 0.0, m2 = 0.0;
          for (std::int64_t c = 0; c < cg; ++c) {
            const std::int64_t ch = grp * cg + c;
            double sg = 0.0, sb = 0.0;
            for (std::int64_t i = 0; i < inner; ++i) {
              const double xh = (src[c * inner + i] - mu) * rstd;
              const double d = dy[c * inner + i];
              sg += d * xh;
              sb += d;
            }
            dgam[static_cast<std::size_t>(b * C + ch)] = sg;
            dbet[static_cast<std::size_t>(b * C + ch)] = sb;
            m1 += sb * gmv[ch];
            m2 += sg * gmv[ch];
          }
          if (!dx) continue;
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          for (std::int64_t c = 0; c < cg; ++c) {
            const std::int64_t ch = grp * cg + c;
            for (std::int64_t i = 0; i < inner; ++i) {
              const double xh = (src[c * inner + i] - mu) * rstd;
              const double dxh = dy[c * inner + i] * gmv[ch];
              dx[base + c * inner + i] += static_cast<T>(rstd * (dxh - m1 - xh * m2));
            }
          }
        }
        for (auto [id, part] : {std::pair{igm, &dgam}, std::pair{ibt, &dbet}}) {
          if (!g.requires_grad(id)) continue;
          auto& gb = g.grad_buffer(id);
          for (std::int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::int64_t b = 0; b < B; ++b) acc += (*part)[static_cast<std::size_t>(b * C + c)];
            gb[static_cast<std::size_t>(c)] += static_cast<T>(acc);
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  const auto& v = x.value();
  Tensor<T> out(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
  const auto ix = x.id();
  return x.graph().record("relu", std::move(out), {ix}, [ix](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    const auto& v = g.value(ix);
    auto& gi = g.grad_buffer(ix);
    for (std::size_t i = 0; i < gi.numel(); ++i) {
      if (v[i] > T(0)) gi[i] += go[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  const auto& v = x.value();
  Tensor<T> out(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-v[i]));
  const auto ix = x.id();
  return x.graph().record("sigmoid", std::move(out), {ix}, [ix](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    const auto& y = g.value(self);
    auto& gi = g.grad_buffer(ix);
    for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += go[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  const auto& v = x.value();
  if (v.rank() < 2) throw ShapeError("softmax: input needs rank >= 2");
  const std::int64_t B = v.dim(0), C = v.dim(1);
  const std::int64_t inner = static_cast<std::int64_t>(v.numel()) / (B * C);
  Tensor<T> out(v.shape());
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const T* src = v.ptr() + b * C * inner + i;
      T* dst = out.ptr() + b * C * inner + i;
      T mx = src[0];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, src[c * inner]);
      double s = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        dst[c * inner] = std::exp(src[c * inner] - mx);
        s += dst[c * inner];
      }
      for (std::int64_t c = 0; c < C; ++c) dst[c * inner] = static_cast<T>(dst[c * inner] / s);
    }
  }
  const auto ix = x.id();
  return x.graph().record("softmax", std::move(out), {ix}, [ix, B, C, inner](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    const auto& y = g.value(self);
    auto& gi = g.grad_buffer(ix);
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = b * C * inner + i;
        double dot = 0.0;
        for (std::int64_t c = 0; c < C; ++c) dot += static_cast<double>(y[base + c * inner]) * go[base + c * inner];
        for (std::int64_t c = 0; c < C; ++c) {
          const auto k = static_cast<std::size_t>(base + c * inner);
          gi[k] += static_cast<T>(y[k] * (go[k] - dot));
        }
      }
    }
  });
}

template <typename T>
Var<T> activation(const Var<T>& x, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Relu:
      return relu(x);
    case ActivationKind::Sigmoid:
      return sigmoid(x);
    case ActivationKind::SoftmaxChannels:
      return softmax_channels(x);
  }
  throw ContractError("unknown activation kind");
}

namespace {

// Source taps for half-pixel-centre bilinear upsampling along one axis.
struct Taps {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;
};

Taps upsample_taps(std::int64_t in, int factor) {
  const std::int64_t out = in * factor;
  Taps t;
  t.i0.resize(static_cast<std::size_t>(out));
  t.i1.resize(static_cast<std::size_t>(out));
  t.w1.resize(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    const auto k = static_cast<std::size_t>(o);
    t.i0[k] = i0;
    t.i1[k] = i1;
    t.w1[k] = i1 == i0 ? 0.0 : src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int factor) {
  const auto& v = x.value();
  require_rank(v.shape(), 4, "upsample_bilinear");
  if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
  const std::int64_t B = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  const std::int64_t Ho = H * factor, Wo = W * factor;
  auto ty = std::make_shared<Taps>(upsample_taps(H, factor));
  auto tx = std::make_shared<Taps>(upsample_taps(W, factor));
  Tensor<T> out({B, C, Ho, Wo});
#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = v.ptr() + bc * H * W;
    T* dst = out.ptr() + bc * Ho * Wo;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      const auto ky = static_cast<std::size_t>(oy);
      const T wy1 = static_cast<T>(ty->w1[ky]), wy0 = T(1) - wy1;
      const T* r0 = src + ty->i0[ky] * W;
      const T* r1 = src + ty->i1[ky] * W;
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        const auto kx = static_cast<std::size_t>(ox);
        const T wx1 = static_cast<T>(tx->w1[kx]), wx0 = T(1) - wx1;
        const auto a = tx->i0[kx], b = tx->i1[kx];
        dst[oy * Wo + ox] = wy0 * (wx0 * r0[a] + wx1 * r0[b]) + wy1 * (wx0 * r1[a] + wx1 * r1[b]);
      }
    }
  }
  const auto ix = x.id();
  return x.graph().record("upsample_bilinear", std::move(out), {ix},
                          [ix, ty, tx, B, C, H, W, Ho, Wo](Graph<T>& g, std::size_t self) {
                            const auto& go = g.grad_output(self);
                            auto& gi = g.grad_buffer(ix);
#pragma omp parallel for schedule(static)
                            for (std::int64_t bc = 0; bc < B * C; ++bc) {
                              const T* src = go.ptr() + bc * Ho * Wo;
                              T* dst = gi.ptr() + bc * H * W;
                              for (std::int64_t oy = 0; oy < Ho; ++oy) {
                                const auto ky = static_cast<std::size_t>(oy);
                                const T wy1 = static_cast<T>(ty->w1[ky]), wy0 = T(1) - wy1;
                                T* r0 = dst + ty->i0[ky] * W;
                                T* r1 = dst + ty->i1[ky] * W;
                                for (std::int64_t ox = 0; ox < Wo; ++ox) {
                                  const auto kx = static_cast<std::size_t>(ox);
                                  const T wx1 = static_cast<T>(tx->w1[kx]), wx0 = T(1) - wx1;
                                  const auto a = tx->i0[kx], b = tx->i1[kx];
                                  const T d = src[oy * Wo + ox];
                                  r0[a] += wy0 * wx0 * d;
                                  r0[b] += wy0 * wx1 * d;
                                  r1[a] += wy1 * wx0 * d;
                                  r1[b] += wy1 * wx1 * d;
                                }
                              }
                            }
                          });
}

template <typename T>
Var<T> block_mean(const Var<T>& x, std::int64_t block_h, std::int64_t block_w) {
  const auto& v = x.value();
  require_rank(v.shape(), 4, "block_mean");
  const std::int64_t B = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  if (block_h < 1 || block_w < 1 || H % block_h != 0 || W % block_w != 0) {
    throw ShapeError("block_mean: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible into " +
                     std::to_string(block_h) + "x" + std::to_string(block_w) + " blocks");
  }
  const std::int64_t Ho = H / block_h, Wo = W / block_w;
  const double inv = 1.0 / static_cast<double>(block_h * block_w);
  Tensor<T> out({B, C, Ho, Wo});
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = v.ptr() + bc * H * W;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        double s = 0.0;
        for (std::int64_t y = oy * block_h; y < (oy + 1) * block_h; ++y) {
          for (std::int64_t xx = ox * block_w; xx < (ox + 1) * block_w; ++xx) s += src[y * W + xx];
        }
        out[static_cast<std::size_t>(bc * Ho * Wo + oy * Wo + ox)] = static_cast<T>(s * inv);
      }
    }
  }
  const auto ix = x.id();
  return x.graph().record("block_mean", std::move(out), {ix},
                          [ix, B, C, H, W, Ho, Wo, block_h, block_w, inv](Graph<T>& g, std::size_t self) {
                            const auto& go = g.grad_output(self);
                            auto& gi = g.grad_buffer(ix);
                            for (std::int64_t bc = 0; bc < B * C; ++bc) {
                              T* dst = gi.ptr() + bc * H * W;
                              for (std::int64_t y = 0; y < H; ++y) {
                                for (std::int64_t xx = 0; xx < W; ++xx) {
                                  const T d = go[static_cast<std::size_t>(bc * Ho * Wo + (y / block_h) * Wo + xx / block_w)];
                                  dst[y * W + xx] += static_cast<T>(d * inv);
                                }
                              }
                            }
                          });
}

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  const auto& v = x.value();
  require_rank(v.shape(), 4, "max_pool2x2");
  const std::int64_t B = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  if (H % 2 != 0 || W % 2 != 0) throw ShapeError("max_pool2x2: spatial extents must be even, got " + shape_str(v.shape()));
  const std::int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out({B, C, Ho, Wo});
  auto arg = std::make_shared<std::vector<std::int64_t>>(out.numel());
#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = v.ptr() + bc * H * W;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        std::int64_t best = (2 * oy) * W + 2 * ox;
        for (std::int64_t dy = 0; dy < 2; ++dy) {
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const std::int64_t k = (2 * oy + dy) * W + 2 * ox + dx;
            if (src[k] > src[best]) best = k;
          }
        }
        const auto o = static_cast<std::size_t>(bc * Ho * Wo + oy * Wo + ox);
        out[o] = src[best];
        (*arg)[o] = bc * H * W + best;
      }
    }
  }
  const auto ix = x.id();
  return x.graph().record("max_pool2x2", std::move(out), {ix}, [ix, arg](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    auto& gi = g.grad_buffer(ix);
    for (std::size_t o = 0; o < go.numel(); ++o) gi[static_cast<std::size_t>((*arg)[o])] += go[o];
  });
}

namespace {

struct SampleTap {
  std::int64_t y0, y1, x0, x1;
  double wy, wx;
  double dy_scale, dx_scale;
};

SampleTap sample_tap(double cy, double cx, std::int64_t H, std::int64_t W) {
  auto axis = [](double c, std::int64_t n, std::int64_t& i0, std::int64_t& i1, double& w, double& scale) {
    if (n == 1) {
      i0 = i1 = 0;
      w = 0.0;
      scale = 0.0;
      return;
    }
    scale = 0.5 * static_cast<double>(n - 1);
    const double p = (c + 1.0) * scale;
    i0 = std::min(static_cast<std::int64_t>(std::floor(p)), n - 2);
    if (i0 < 0) i0 = 0;
    i1 = i0 + 1;
    w = p - static_cast<double>(i0);
  };
  SampleTap t{};
  axis(cy, H, t.y0, t.y1, t.wy, t.dy_scale);
  axis(cx, W, t.x0, t.x1, t.wx, t.dx_scale);
  return t;
}

}  // namespace

template <typename T>
Var<T> sample_bilinear_normalized(const Var<T>& input, const Var<T>& coords) {
  const auto& v = input.value();
  const auto& c = coords.value();
  require_rank(v.shape(), 4, "sample_bilinear_normalized input");
  require_rank(c.shape(), 4, "sample_bilinear_normalized coords");
  const std::int64_t B = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  if (c.dim(0) != B || c.dim(3) != 2) {
    throw ShapeError("sample_bilinear_normalized: coords " + shape_str(c.shape()) + " incompatible with input " +
                     shape_str(v.shape()));
  }
  const std::int64_t Ho = c.dim(1), Wo = c.dim(2), P = Ho * Wo;
  for (std::size_t i = 0; i < c.numel(); ++i) {
    if (!(c[i] >= T(-1) && c[i] <= T(1))) {
      throw ContractError("sample_bilinear_normalized: coordinate " + std::to_string(static_cast<double>(c[i])) +
                          " at flat index " + std::to_string(i) + " outside [-1, 1]");
    }
  }
  auto taps = std::make_shared<std::vector<SampleTap>>(static_cast<std::size_t>(B * P));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < P; ++p) {
      const auto k = static_cast<std::size_t>(b * P + p);
      (*taps)[k] = sample_tap(c[2 * k], c[2 * k + 1], H, W);
    }
  }
  Tensor<T> out({B, C, Ho, Wo});
#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const std::int64_t b = bc / C;
    const T* src = v.ptr() + bc * H * W;
    T* dst = out.ptr() + bc * P;
    for (std::int64_t p = 0; p < P; ++p) {
      const auto& t = (*taps)[static_cast<std::size_t>(b * P + p)];
      const double top = (1.0 - t.wx) * src[t.y0 * W + t.x0] + t.wx * src[t.y0 * W + t.x1];
      const double bot = (1.0 - t.wx) * src[t.y1 * W + t.x0] + t.wx * src[t.y1 * W + t.x1];
      dst[p] = static_cast<T>((1.0 - t.wy) * top + t.wy * bot);
    }
  }
  const auto ii = input.id(), ic = coords.id();
  return input.graph().record(
      "sample_bilinear", std::move(out), {ii, ic}, [ii, ic, taps, B, C, H, W, P](Graph<T>& g, std::size_t self) {
        const auto& go = g.grad_output(self);
        const auto& v = g.value(ii);
        if (g.requires_grad(ii)) {
          auto& gi = g.grad_buffer(ii);
#pragma omp parallel for schedule(static)
          for (std::int64_t bc = 0; bc < B * C; ++bc) {
            const std::int64_t b = bc / C;
            T* dst = gi.ptr() + bc * H * W;
            const T* d = go.ptr() + bc * P;
            for (std::int64_t p = 0; p < P; ++p) {
              const auto& t = (*taps)[static_cast<std::size_t>(b * P + p)];
              const double gd = d[p];
              dst[t.y0 * W + t.x0] += static_cast<T>(gd * (1.0 - t.wy) * (1.0 - t.wx));
              dst[t.y0 * W + t.x1] += static_cast<T>(gd * (1.0 - t.wy) * t.wx);
              dst[t.y1 * W + t.x0] += static_cast<T>(gd * t.wy * (1.0 - t.wx));
              dst[t.y1 * W + t.x1] += static_cast<T>(gd * t.wy * t.wx);
            }
          }
        }
        if (g.requires_grad(ic)) {
          auto& gc = g.grad_buffer(ic);
#pragma omp parallel for schedule(static)
          for (std::int64_t bp = 0; bp < B * P; ++bp) {
            const std::int64_t b = bp / P, p = bp % P;
            const auto& t = (*taps)[static_cast<std::size_t>(bp)];
            double gy = 0.0, gx = 0.0;
            for (std::int64_t ch = 0; ch < C; ++ch) {
              const T* src = v.ptr() + (b * C + ch) * H * W;
              const double d = go[static_cast<std::size_t>((b * C + ch) * P + p)];
              const double v00 = src[t.y0 * W + t.x0], v01 = src[t.y0 * W + t.x1];
              const double v10 = src[t.y1 * W + t.x0], v11 = src[t.y1 * W + t.x1];
              gy += d * ((1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
              gx += d * ((1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
            }
            gc[static_cast<std::size_t>(2 * bp)] += static_cast<T>(gy * t.dy_scale);
            gc[static_cast<std::size_t>(2 * bp + 1)] += static_cast<T>(gx * t.dx_scale);
          }
        }
      });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& mask) {
  const auto& v = x.value();
  const auto& m = mask.value();
  if (v.rank() < 2) throw ShapeError("scale_channels: input needs rank >= 2");
  const std::int64_t B = v.dim(0), C = v.dim(1);
  if (m.numel() != static_cast<std::size_t>(B * C)) {
    throw ShapeError("scale_channels: mask " + shape_str(m.shape()) + " does not match " + shape_str(v.shape()));
  }
  const std::int64_t inner = static_cast<std::int64_t>(v.numel()) / (B * C);
  Tensor<T> out(v.shape());
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T k = m[static_cast<std::size_t>(bc)];
    for (std::int64_t i = 0; i < inner; ++i) out[static_cast<std::size_t>(bc * inner + i)] = v[static_cast<std::size_t>(bc * inner + i)] * k;
  }
  const auto ix = x.id(), im = mask.id();
  return x.graph().record("scale_channels", std::move(out), {ix, im}, [ix, im, B, C, inner](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_output(self);
    const auto& v = g.value(ix);
    const auto& m = g.value(im);
    if (g.requires_grad(ix)) {
      auto& gi = g.grad_buffer(ix);
      for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const T k = m[static_cast<std::size_t>(bc)];
        for (std::int64_t i = 0; i < inner; ++i) gi[static_cast<std::size_t>(bc * inner + i)] += go[static_cast<std::size_t>(bc * inner + i)] * k;
      }
    }
    if (g.requires_grad(im)) {
      auto& gm = g.grad_buffer(im);
      for (std::int64_t bc = 0; bc < B * C; ++bc) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < inner; ++i) {
          acc += static_cast<double>(go[static_cast<std::size_t>(bc * inner + i)]) * v[static_cast<std::size_t>(bc * inner + i)];
        }
        gm[static_cast<std::size_t>(bc)] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Tensor<T> standard_grid(std::int64_t height, std::int64_t width) {
  Tensor<T> grid({height, width, 2});
  auto coord = [](std::int64_t i, std::int64_t n) {
    return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      const auto k = static_cast<std::size_t>(2 * (y * width + x));
      grid[k] = static_cast<T>(coord(y, height));
      grid[k + 1] = static_cast<T>(coord(x, width));
    }
  }
  return grid;
}

#define MFP_INSTANTIATE(T)                                                                        \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, const Conv2dOptions&);      \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Conv2dOptions&);                      \
  template Var<T> group_norm(const Var<T>&, const Var<T>&, const Var<T>&, int, double);           \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> sigmoid(const Var<T>&);                                                         \
  template Var<T> softmax_channels(const Var<T>&);                                                \
  template Var<T> activation(const Var<T>&, ActivationKind);                                      \
  template Var<T> upsample_bilinear(const Var<T>&, int);                                          \
  template Var<T> block_mean(const Var<T>&, std::int64_t, std::int64_t);                          \
  template Var<T> max_pool2x2(const Var<T>&);                                                     \
  template Var<T> sample_bilinear_normalized(const Var<T>&, const Var<T>&);                       \
  template Var<T> scale_channels(const Var<T>&, const Var<T>&);                                   \
  template Tensor<T> standard_grid(std::int64_t, std::int64_t);

MFP_INSTANTIATE(float)
MFP_INSTANTIATE(double)

#undef MFP_INSTANTIATE

}  // namespace mfp
