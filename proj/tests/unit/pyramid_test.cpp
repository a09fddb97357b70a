#include <gtest/gtest.h>

#include "mfp/model.hpp"
#include "mfp/nn.hpp"

using namespace mfp;

namespace {

ModelSpec spec_for(Variant v, int c1 = 8, std::int64_t size = 64) {
  ModelSpec s;
  s.variant = v;
  s.levels = 5;
  s.base_channels = c1;
  s.image_size = size;
  return s;
}

Bound<double> bind_double(Graph<double>& g, const Model& m) { return m.params.cast<double>().bind(g); }

}  // namespace

TEST(ReuseBranch, EmitsHalfChannelsAtReducedExtent) {
  const auto spec = spec_for(Variant::Mfp2, 4, 32);
  const Model m = build_model(spec, 3);
  Graph<double> g;
  const auto vars = bind_double(g, m);
  const auto x = g.input(Tensor<double>::random({1, 1, 32, 32}, {5}));
  const auto feats = encode(spec, vars, x);
  int checked = 0;
  for (int i = 1; i < spec.levels; ++i) {
    EXPECT_EQ(spec.max_branch(i), spec.levels - i);
    for (int k = 1; k <= spec.max_branch(i); ++k) {
      const auto b = reuse_branch(spec, vars, feats[static_cast<std::size_t>(i - 1)], i, k);
      const std::int64_t ci = std::int64_t{4} << (i - 1);
      const std::int64_t side = (32 >> (i - 1)) >> k;
      EXPECT_EQ(b.shape(), (Shape{1, ci / 2, side, side})) << "level " << i << " k " << k;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 10);  // 4 + 3 + 2 + 1
}

TEST(ReuseBranch, ZeroIsThePlainSkipAndRangeIsChecked) {
  const auto spec = spec_for(Variant::Mfp2, 4, 32);
  const Model m = build_model(spec, 3);
  Graph<double> g;
  const auto vars = bind_double(g, m);
  const auto src = g.input(Tensor<double>::random({1, 8, 16, 16}, {6}));
  EXPECT_EQ(reuse_branch(spec, vars, src, 2, 0).id(), src.id());
  EXPECT_THROW(reuse_branch(spec, vars, src, 2, 4), ContractError);
  EXPECT_THROW(reuse_branch(spec, vars, src, 2, -1), ContractError);
}

TEST(Model, ForwardShapesForEveryVariant) {
  for (auto v : {Variant::Unet, Variant::UnetAdd, Variant::Mfp1, Variant::Mfp2, Variant::MfpBica}) {
    const auto spec = spec_for(v, 4, 32);
    const Model m = build_model(spec, 1);
    Graph<float> g;
    const auto vars = m.params.bind(g);
    FeatureTaps<float> taps;
    const auto y = forward(spec, vars, g.input(Tensor<float>::random({2, 1, 32, 32}, {2})), &taps);
    EXPECT_EQ(y.shape(), (Shape{2, 6, 32, 32})) << variant_name(v);
    ASSERT_EQ(taps.decoder.size(), 4u);
    EXPECT_EQ(taps.decoder.front().dim(2), 32);  // X_D^1 at full resolution
    EXPECT_EQ(taps.bica_output.size(), v == Variant::MfpBica ? 4u : 0u);
  }
}

TEST(Model, DecodeStepSumsUpsampledBlockAndSkip) {
  const auto spec = spec_for(Variant::Mfp2, 4, 32);
  const Model m = build_model(spec, 1);
  Graph<double> g;
  const auto vars = bind_double(g, m);
  const auto prev = g.input(Tensor<double>::random({1, 16, 8, 8}, {1}));
  const auto fused = g.input(Tensor<double>::random({1, 8, 16, 16}, {2}));
  const auto a = decode_step(spec, vars, prev, fused, 2, SkipJoin::Sum);
  EXPECT_EQ(a.shape(), (Shape{1, 8, 16, 16}));
  // Linear in the skip: shifting fused by d shifts the result by d.
  Tensor<double> plus_one = fused.value();
  for (auto& v : plus_one.data()) v += 1.0;
  const auto shifted = g.input(std::move(plus_one));
  const auto b = decode_step(spec, vars, prev, shifted, 2, SkipJoin::Sum);
  for (std::size_t i = 0; i < a.value().numel(); ++i) ASSERT_NEAR(b.value()[i] - a.value()[i], 1.0, 1e-12);
  EXPECT_EQ(decode_step(spec, vars, prev, fused, 2, SkipJoin::Concat).dim(1), 16);
}

TEST(Model, ParameterCountDirection) {
  const auto unet = param_count(build_model(spec_for(Variant::Unet, 16, 256), 1).params);
  const auto mfp2 = param_count(build_model(spec_for(Variant::Mfp2, 16, 256), 1).params);
  const auto add = param_count(build_model(spec_for(Variant::UnetAdd, 16, 256), 1).params);
  EXPECT_LT(mfp2, unet);
  EXPECT_LT(add, unet);
}

TEST(Model, InitIsSeededAndNameStable) {
  const auto a = build_model(spec_for(Variant::Unet), 4);
  const auto b = build_model(spec_for(Variant::Unet), 4);
  const auto c = build_model(spec_for(Variant::UnetAdd), 4);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_EQ(a.params.at("enc1.c1.w"), c.params.at("enc1.c1.w"));
  EXPECT_FALSE(a.params.at("enc1.c1.w") == build_model(spec_for(Variant::Unet), 5).params.at("enc1.c1.w"));
}

TEST(ModelSpec, ValidationAndTextRoundTrip) {
  auto s = spec_for(Variant::MfpBica);
  s.mask_activation = MaskActivation::Identity;
  EXPECT_EQ(ModelSpec::from_text(s.to_text()), s);
  auto bad = s;
  bad.image_size = 40;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = s;
  bad.levels = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(ModelSpec::from_text("colour=red\n"), ConfigError);
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
  EXPECT_FALSE(s.set("nonsense", "1"));
}
