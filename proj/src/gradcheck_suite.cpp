#include "mfp/gradcheck_suite.hpp"

#include "mfp/bica.hpp"
#include "mfp/init.hpp"
#include "mfp/loss.hpp"
#include "mfp/model.hpp"

#include <cmath>
#include <memory>

namespace mfp {
namespace {

using G = Graph<double>;
using V = Var<double>;

Tensor<double> rnd(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return Tensor<double>::random(shape, RandomFill{seed, lo, hi});
}

// sum(w * x) with fixed random weights, so no gradient cancels by symmetry.
V weighted_sum(G& g, const V& x, std::uint64_t seed) {
  return sum(mul(x, g.constant(rnd(x.shape(), seed))));
}

const V& at(const Bindings& b, const std::string& name) { return b.at(name); }

constexpr double kSmooth = 1e-4;
constexpr double kKinked = 1e-6;
constexpr double kSampler = 3e-6;

struct Builder {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  std::vector<GradCheckCase> cases;

  std::uint64_t next() { return derive_seed(seed, counter++); }

  void add(std::string name, ParameterSet<double> params, std::function<V(G&, const Bindings&)> body,
           double eps = kSmooth) {
    const std::uint64_t ws = next();
    cases.push_back({std::move(name), std::move(params),
                     [body = std::move(body), ws](G& g, const Bindings& b) { return weighted_sum(g, body(g, b), ws); },
                     eps});
  }
};

void conv_cases(Builder& bld) {
  struct ConvCase {
    const char* name;
    Shape x, w;
    int stride, dilation;
    std::optional<int> pad;
    bool bias;
  };
  const ConvCase list[] = {
      {"conv2d 3x3", {2, 3, 6, 6}, {4, 3, 3, 3}, 1, 1, std::nullopt, true},
      {"conv2d 3x3 dilation 2", {1, 2, 8, 8}, {3, 2, 3, 3}, 1, 2, std::nullopt, true},
      {"conv2d 3x3 stride 2", {2, 2, 7, 7}, {2, 2, 3, 3}, 2, 1, 1, true},
      {"conv2d 3x3 dilation 2 stride 2", {1, 3, 8, 8}, {2, 3, 3, 3}, 2, 2, 2, false},
      {"conv2d 5x5 dilation 3", {1, 2, 8, 8}, {2, 2, 5, 5}, 1, 3, std::nullopt, true},
      {"conv2d 1x1", {2, 4, 5, 5}, {3, 4, 1, 1}, 1, 1, std::nullopt, true},
  };
  for (const auto& c : list) {
    ParameterSet<double> p;
    p.add("x", rnd(c.x, bld.next()));
    p.add("w", rnd(c.w, bld.next()));
    if (c.bias) p.add("b", rnd({c.w[0]}, bld.next()));
    Conv2dOptions opt;
    opt.stride = c.stride;
    opt.dilation = c.dilation;
    opt.padding = c.pad;
    const bool bias = c.bias;
    bld.add(c.name, std::move(p), [opt, bias](G&, const Bindings& b) {
      return bias ? conv2d(at(b, "x"), at(b, "w"), at(b, "b"), opt) : conv2d(at(b, "x"), at(b, "w"), opt);
    });
  }
}

void nn_cases(Builder& bld) {
  {
    ParameterSet<double> p;
    p.add("x", rnd({2, 8, 4, 4}, bld.next()));
    p.add("gamma", rnd({8}, bld.next(), 0.5, 1.5));
    p.add("beta", rnd({8}, bld.next()));
    bld.add("group_norm 2 groups", std::move(p),
            [](G&, const Bindings& b) { return group_norm(at(b, "x"), at(b, "gamma"), at(b, "beta"), 2); });
  }
  {
    ParameterSet<double> p;
    p.add("x", rnd({2, 4, 3, 5}, bld.next()));
    p.add("gamma", rnd({4}, bld.next(), 0.5, 1.5));
    p.add("beta", rnd({4}, bld.next()));
    bld.add("group_norm 4 groups", std::move(p),
            [](G&, const Bindings& b) { return group_norm(at(b, "x"), at(b, "gamma"), at(b, "beta"), 4); });
  }
  const std::pair<const char*, ActivationKind> acts[] = {{"relu", ActivationKind::Relu},
                                                         {"sigmoid", ActivationKind::Sigmoid},
                                                         {"softmax over channels", ActivationKind::SoftmaxChannels}};
  for (const auto& [name, kind] : acts) {
    ParameterSet<double> p;
    p.add("x", rnd({2, 6, 3, 4}, bld.next(), -3.0, 3.0));
    const auto k = kind;
    bld.add(name, std::move(p), [k](G&, const Bindings& b) { return activation(at(b, "x"), k); },
            k == ActivationKind::Relu ? kKinked : kSmooth);
  }
  for (int factor : {2, 3}) {
    ParameterSet<double> p;
    p.add("x", rnd({2, 2, 3, 4}, bld.next()));
    bld.add("upsample_bilinear x" + std::to_string(factor), std::move(p),
            [factor](G&, const Bindings& b) { return upsample_bilinear(at(b, "x"), factor); });
  }
  {
    ParameterSet<double> p;
    p.add("x", rnd({2, 3, 8, 6}, bld.next()));
    bld.add("block_mean 4x2", std::move(p), [](G&, const Bindings& b) { return block_mean(at(b, "x"), 4, 2); });
  }
  {
    ParameterSet<double> p;
    p.add("x", rnd({2, 3, 6, 8}, bld.next()));
    bld.add("max_pool2x2", std::move(p), [](G&, const Bindings& b) { return max_pool2x2(at(b, "x")); }, kKinked);
  }
  {
    ParameterSet<double> p;
    p.add("x", rnd({2, 3, 5, 6}, bld.next()));
    p.add("coords", rnd({2, 4, 7, 2}, bld.next(), -0.95, 0.95));
    bld.add("sample_bilinear_normalized", std::move(p),
            [](G&, const Bindings& b) { return sample_bilinear_normalized(at(b, "x"), at(b, "coords")); }, kSampler);
  }
  {
    ParameterSet<double> p;
    p.add("x", rnd({2, 3, 4, 4}, bld.next()));
    p.add("mask", rnd({2, 3}, bld.next()));
    bld.add("scale_channels", std::move(p),
            [](G&, const Bindings& b) { return scale_channels(at(b, "x"), at(b, "mask")); });
  }
}

void elementwise_cases(Builder& bld) {
  const std::pair<const char*, ElementwiseKind> kinds[] = {
      {"add", ElementwiseKind::Add}, {"sub", ElementwiseKind::Sub}, {"mul", ElementwiseKind::Mul}};
  for (const auto& [name, kind] : kinds) {
    ParameterSet<double> p;
    p.add("a", rnd({3, 4, 2}, bld.next()));
    p.add("b", rnd({3, 4, 2}, bld.next()));
    const auto k = kind;
    bld.add(name, std::move(p), [k](G&, const Bindings& b) { return elementwise(k, at(b, "a"), at(b, "b")); });
  }
  {
    ParameterSet<double> p;
    p.add("a", rnd({4, 5}, bld.next()));
    bld.add("scale", std::move(p), [](G&, const Bindings& b) { return scale(at(b, "a"), -1.75); });
  }
  {
    ParameterSet<double> p;
    p.add("a", rnd({2, 3, 4, 5}, bld.next()));
    bld.add("permute", std::move(p), [](G&, const Bindings& b) { return permute(at(b, "a"), {0, 2, 3, 1}); });
  }
  {
    ParameterSet<double> p;
    p.add("a", rnd({2, 2, 3, 3}, bld.next()));
    p.add("b", rnd({2, 3, 3, 3}, bld.next()));
    bld.add("concat_channels", std::move(p),
            [](G&, const Bindings& b) { return concat_channels<double>({at(b, "a"), at(b, "b")}); });
  }
  {
    // Values kept away from the clamp bounds, where the derivative jumps.
    Tensor<double> a = rnd({4, 6}, bld.next(), -2.0, 2.0);
    for (auto& v : a.storage()) {
      if (std::abs(std::abs(v) - 1.0) < 0.05) v *= 0.9;
    }
    ParameterSet<double> p;
    p.add("a", std::move(a));
    bld.add("clamp", std::move(p), [](G&, const Bindings& b) { return clamp(at(b, "a"), -1.0, 1.0); }, kKinked);
  }
}

// Every tensor of a fusion unit drawn at random, final flow projections
// included, so the warp does not sit on the pixel grid where the sampler's
// derivative is one-sided.
ParameterSet<double> random_bica_params(std::int64_t channels, std::int64_t rows, std::uint64_t seed) {
  ParameterSet<float> init;
  register_bica_params(init, "u", channels, rows, seed);
  ParameterSet<double> p;
  std::uint64_t k = 0;
  for (const auto& [name, t] : init) {
    const bool gain = name.size() > 2 && name.compare(name.size() - 4, 4, ".n.g") == 0;
    const bool proj = name.find(".c2.") != std::string::npos;
    const double span = proj ? 0.05 : 0.5;
    p.add(name, rnd(t.shape(), derive_seed(seed, ++k), gain ? 0.5 : -span, gain ? 1.5 : span));
  }
  return p;
}

void bica_cases(Builder& bld) {
  // Small maps keep the number of relu and sampler-cell kinks low.
  const std::int64_t B = 1, C = 4, H = 4, W = 4, block = 2;
  const std::int64_t rows = (H / block) * (W / block);
  BicaLevelConfig cfg;
  cfg.block_h = cfg.block_w = block;

  auto with_features = [&](ParameterSet<double> p) {
    p.add("O", rnd({B, C, H, W}, bld.next()));
    p.add("Q", rnd({B, C, H, W}, bld.next()));
    return p;
  };

  bld.add("flow_estimate", with_features(random_bica_params(C, rows, bld.next())), [](G&, const Bindings& b) {
    return flow_estimate(at(b, "O"), at(b, "Q"), bind_bica(b, "u").flow);
  }, kSampler);
  bld.add("channel_attention", with_features(random_bica_params(C, rows, bld.next())),
          [cfg](G&, const Bindings& b) {
            return channel_attention(at(b, "O"), at(b, "Q"), bind_bica(b, "u").attention, cfg);
          });
  {
    ParameterSet<double> p;
    p.add("O", rnd({B, C, H, W}, bld.next()));
    p.add("flow", rnd({B, H, W, 2}, bld.next(), -0.3, 0.3));
    bld.add("flow_warp", std::move(p), [](G&, const Bindings& b) { return flow_warp(at(b, "O"), at(b, "flow")); },
            kSampler);
  }
  bld.add("bica_fuse", with_features(random_bica_params(C, rows, bld.next())), [cfg](G&, const Bindings& b) {
    return bica_fuse(at(b, "O"), at(b, "Q"), bind_bica(b, "u"), cfg);
  }, kSampler);
}

void loss_case(Builder& bld) {
  ParameterSet<double> p;
  p.add("logits", rnd({2, 6, 4, 4}, bld.next(), -2.0, 2.0));
  Rng rng(bld.next());
  auto labels = std::make_shared<std::vector<std::uint8_t>>(2 * 4 * 4);
  for (auto& l : *labels) l = static_cast<std::uint8_t>(rng.below(6));
  // The loss is already scalar; no extra weighting.
  bld.cases.push_back({"segmentation_loss", std::move(p), [labels](G&, const Bindings& b) {
                         return segmentation_loss(at(b, "logits"), std::span<const std::uint8_t>(*labels));
                       },
                       kSmooth});
}

}  // namespace

std::vector<GradCheckCase> operator_gradcheck_cases(std::uint64_t seed) {
  Builder bld;
  bld.seed = seed;
  conv_cases(bld);
  nn_cases(bld);
  elementwise_cases(bld);
  bica_cases(bld);
  loss_case(bld);
  return std::move(bld.cases);
}

std::vector<GradCheckOutcome> run_gradcheck_suite(std::uint64_t seed, double tol) {
  std::vector<GradCheckOutcome> out;
  for (auto& c : operator_gradcheck_cases(seed)) out.push_back({c.name, grad_check(c.fn, c.params, c.eps, tol)});
  return out;
}

}  // namespace mfp
