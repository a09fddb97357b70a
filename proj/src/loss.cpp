#include "mfp/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace mfp {
namespace {

struct LossState {
  std::int64_t batch = 0, classes = 0, inner = 0;
  std::vector<double> prob;  // B x K x inner
  std::vector<std::uint8_t> labels;
  std::vector<double> inter, pred_sum, truth_sum;  // per class
  double smooth = 1.0;
  LossTerms terms;
};

template <typename T>
std::shared_ptr<LossState> evaluate(const Tensor<T>& logits, std::span<const std::uint8_t> labels, double smooth) {
  if (logits.rank() != 4) throw ShapeError("loss: logits must be B x K x H x W, got " + shape_str(logits.shape()));
  auto st = std::make_shared<LossState>();
  st->batch = logits.dim(0);
  st->classes = logits.dim(1);
  st->inner = logits.dim(2) * logits.dim(3);
  st->smooth = smooth;
  const std::int64_t B = st->batch, K = st->classes, P = st->inner;
  if (K < 2) throw ShapeError("loss: need at least 2 classes");
  if (static_cast<std::int64_t>(labels.size()) != B * P) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(B * P) + " pixels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= K) {
      throw ContractError("loss: label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                          " is not below class count " + std::to_string(K));
    }
  }
  st->labels.assign(labels.begin(), labels.end());
  st->prob.resize(static_cast<std::size_t>(B * K * P));
  st->inter.assign(static_cast<std::size_t>(K), 0.0);
  st->pred_sum.assign(static_cast<std::size_t>(K), 0.0);
  st->truth_sum.assign(static_cast<std::size_t>(K), 0.0);
  double ce = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < P; ++i) {
      const T* z = logits.ptr() + b * K * P + i;
      double* p = st->prob.data() + b * K * P + i;
      double mx = z[0];
      for (std::int64_t c = 1; c < K; ++c) mx = std::max(mx, static_cast<double>(z[c * P]));
      double s = 0.0;
      for (std::int64_t c = 0; c < K; ++c) {
        p[c * P] = std::exp(z[c * P] - mx);
        s += p[c * P];
      }
      const std::uint8_t y = st->labels[static_cast<std::size_t>(b * P + i)];
      ce -= z[y * P] - mx - std::log(s);
      for (std::int64_t c = 0; c < K; ++c) {
        p[c * P] /= s;
        st->pred_sum[static_cast<std::size_t>(c)] += p[c * P];
      }
      st->inter[y] += p[y * P];
      st->truth_sum[y] += 1.0;
    }
  }
  st->terms.cross_entropy = ce / static_cast<double>(B * P);
  double dice = 0.0;
  for (std::int64_t c = 1; c < K; ++c) {
    const auto k = static_cast<std::size_t>(c);
    dice += (2.0 * st->inter[k] + smooth) / (st->pred_sum[k] + st->truth_sum[k] + smooth);
  }
  st->terms.dice_loss = 1.0 - dice / static_cast<double>(K - 1);
  return st;
}

}  // namespace

template <typename T>
LossTerms loss_terms(const Tensor<T>& logits, std::span<const std::uint8_t> labels, double smooth) {
  return evaluate(logits, labels, smooth)->terms;
}

template <typename T>
Var<T> segmentation_loss(const Var<T>& logits, std::span<const std::uint8_t> labels, double smooth) {
  auto st = evaluate(logits.value(), labels, smooth);
  Tensor<T> out({1}, static_cast<T>(st->terms.total()));
  const auto il = logits.id();
  return logits.graph().record("segmentation_loss", std::move(out), {il}, [il, st](Graph<T>& g, std::size_t self) {
    const double go = g.grad_output(self)[0];
    auto& gi = g.grad_buffer(il);
    const std::int64_t B = st->batch, K = st->classes, P = st->inner;
    const double inv_n = 1.0 / static_cast<double>(B * P);
    const double inv_fg = 1.0 / static_cast<double>(K - 1);
    // dL/dp = -(1/(K-1)) * (2 y / D - (2 I + s) / D^2) for foreground classes.
    std::vector<double> a(static_cast<std::size_t>(K), 0.0), b0(static_cast<std::size_t>(K), 0.0);
    for (std::int64_t c = 1; c < K; ++c) {
      const auto k = static_cast<std::size_t>(c);
      const double d = st->pred_sum[k] + st->truth_sum[k] + st->smooth;
      a[k] = -inv_fg * 2.0 / d;
      b0[k] = inv_fg * (2.0 * st->inter[k] + st->smooth) / (d * d);
    }
    std::vector<double> gp(static_cast<std::size_t>(K));
    for (std::int64_t bb = 0; bb < B; ++bb) {
      for (std::int64_t i = 0; i < P; ++i) {
        const double* p = st->prob.data() + bb * K * P + i;
        const std::uint8_t y = st->labels[static_cast<std::size_t>(bb * P + i)];
        double s = 0.0;
        for (std::int64_t c = 0; c < K; ++c) {
          const auto k = static_cast<std::size_t>(c);
          gp[k] = b0[k] + (c == y ? a[k] : 0.0);
          s += p[c * P] * gp[k];
        }
        T* dz = gi.ptr() + bb * K * P + i;
        for (std::int64_t c = 0; c < K; ++c) {
          const double pc = p[c * P];
          const double grad = pc * (gp[static_cast<std::size_t>(c)] - s) + (pc - (c == y ? 1.0 : 0.0)) * inv_n;
          dz[c * P] += static_cast<T>(go * grad);
        }
      }
    }
  });
}

template LossTerms loss_terms(const Tensor<float>&, std::span<const std::uint8_t>, double);
template LossTerms loss_terms(const Tensor<double>&, std::span<const std::uint8_t>, double);
template Var<float> segmentation_loss(const Var<float>&, std::span<const std::uint8_t>, double);
template Var<double> segmentation_loss(const Var<double>&, std::span<const std::uint8_t>, double);

}  // namespace mfp
