#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mfp/loss.hpp"
#include "mfp/trainer.hpp"

using namespace mfp;
namespace fs = std::filesystem;

namespace {

ParameterSet<double> one(const char* name, double v) {
  ParameterSet<double> p;
  p.add(name, Tensor<double>({1}, v));
  return p;
}

GradientSet<double> grad(const char* name, double v) {
  GradientSet<double> g;
  g.set(name, Tensor<double>({1}, v));
  return g;
}

// First `slices` axial slices of a 16 x 32 x 32 phantom.
CaseData small_case(std::uint64_t seed, std::int64_t slices = 16) {
  PhantomSpec spec;
  spec.seed = seed;
  spec.dims = {16, 32, 32};
  const auto p = generate_phantom(spec);
  CaseData c{case_id(static_cast<int>(seed)), ImageVolume({slices, 32, 32}, spec.spacing),
             LabelVolume({slices, 32, 32}, spec.spacing)};
  std::copy_n(p.image.voxels.begin(), c.image.voxels.size(), c.image.voxels.begin());
  std::copy_n(p.labels.voxels.begin(), c.labels.voxels.size(), c.labels.voxels.begin());
  return c;
}

RunConfig small_config(int epochs) {
  RunConfig cfg;
  cfg.model.base_channels = 4;
  cfg.model.image_size = 32;
  cfg.batch_size = 4;
  cfg.epochs = epochs;
  cfg.seed = 11;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mfp_trainer_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Sgd, HandComputedUpdates) {
  for (double wd : {0.0, 0.001}) {
    auto w = one("w", 1.0);
    OptimState<double> st;
    st.lr = 0.1;
    st.momentum = 0.0;
    st.weight_decay = wd;
    sgd_step(w, grad("w", 0.5), st);
    EXPECT_NEAR(w.at("w")[0], wd == 0.0 ? 0.95 : 0.9499, 1e-7);
  }
  auto w = one("w", 0.0);
  OptimState<double> st;
  st.lr = 0.1;
  st.momentum = 0.9;
  st.weight_decay = 0.0;
  sgd_step(w, grad("w", 1.0), st);
  EXPECT_NEAR(st.velocity.at("w")[0], 1.0, 1e-7);
  EXPECT_NEAR(w.at("w")[0], -0.1, 1e-7);
  sgd_step(w, grad("w", 1.0), st);
  EXPECT_NEAR(st.velocity.at("w")[0], 1.9, 1e-7);
  EXPECT_NEAR(w.at("w")[0], -0.29, 1e-7);
}

TEST(Sgd, PlainStepIsVanillaDescentAndShapesAreChecked) {
  ParameterSet<float> p;
  p.add("a", Tensor<float>::random({3, 2}, {1}));
  GradientSet<float> g;
  g.set("a", Tensor<float>::random({3, 2}, {2}));
  OptimState<float> st;
  st.lr = 0.05;
  st.momentum = 0.0;
  st.weight_decay = 0.0;
  const auto before = p.at("a");
  sgd_step(p, g, st);
  for (std::size_t i = 0; i < before.numel(); ++i) {
    EXPECT_EQ(p.at("a")[i], static_cast<float>(static_cast<double>(before[i]) - 0.05 * static_cast<double>(g.at("a")[i])));
  }
  GradientSet<float> bad;
  bad.set("a", Tensor<float>({2, 3}));
  EXPECT_THROW(sgd_step(p, bad, st), ContractError);
}

TEST(LrSchedule, StepValues) {
  const LrSchedule s;
  EXPECT_EQ(lr_at(s, 0), 0.01);
  EXPECT_EQ(lr_at(s, 199), 0.01);
  EXPECT_EQ(lr_at(s, 200), 0.001);
  EXPECT_EQ(lr_at(s, 300), 0.0001);
  EXPECT_EQ(lr_at(s, 399), 0.0001);
  for (int e = 1; e < 500; ++e) EXPECT_LE(lr_at(s, e), lr_at(s, e - 1));
  EXPECT_EQ(LrSchedule::parse(s.to_text()).breakpoints, s.breakpoints);
  EXPECT_THROW(LrSchedule::parse("5:0.1"), ConfigError);
  EXPECT_THROW(LrSchedule::parse("0:0.1,10:0.2"), ConfigError);
}

TEST(Loss, UniformLogitsGiveLogK) {
  const Tensor<double> logits({2, 6, 3, 3}, 0.0);
  std::vector<std::uint8_t> labels(18);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 6);
  EXPECT_NEAR(loss_terms(logits, labels).cross_entropy, std::log(6.0), 1e-12);
}

TEST(Loss, ConfidentCorrectLogitsAreSmall) {
  Tensor<double> logits({1, 6, 4, 4}, -10.0);
  std::vector<std::uint8_t> labels(16);
  for (std::int64_t p = 0; p < 16; ++p) {
    labels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(p % 6);
    logits.at(0, p % 6, p / 4, p % 4) = 10.0;
  }
  const auto t = loss_terms(logits, labels);
  EXPECT_GT(t.total(), 0.0);
  EXPECT_LT(t.total(), 0.05);
}

TEST(Loss, BadLabelsAreRejected) {
  Graph<double> g;
  auto logits = g.input(Tensor<double>({1, 3, 2, 2}));
  std::vector<std::uint8_t> labels{0, 1, 2, 3};
  EXPECT_THROW(segmentation_loss(logits, std::span<const std::uint8_t>(labels)), ContractError);
  labels.pop_back();
  EXPECT_THROW(segmentation_loss(logits, std::span<const std::uint8_t>(labels)), ShapeError);
}

TEST(RunConfig, KeysDefaultsAndFullScalePreset) {
  RunConfig c;
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.epochs, 30);
  EXPECT_EQ(c.model.base_channels, 8);
  EXPECT_EQ(c.model.image_size, 64);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 0.001);
  const auto p = RunConfig::full_scale();
  EXPECT_EQ(p.batch_size, 32);
  EXPECT_EQ(p.epochs, 400);
  EXPECT_EQ(p.model.image_size, 256);
  EXPECT_EQ(lr_at(p.schedule, 0), 0.01);
  try {
    c.set("learning_speed", "3");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_speed"), std::string::npos);
  }
  EXPECT_THROW(c.set("epochs", "many"), ConfigError);
  RunConfig d;
  d.apply_text("# comment\nvariant = unet\nflip_prob=0.25\nlr_schedule=0:0.1,5:0.01\n");
  RunConfig e;
  e.apply_text(d.to_text());
  EXPECT_EQ(e.to_text(), d.to_text());
  EXPECT_EQ(e.model.variant, Variant::Unet);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint c;
  c.spec = small_config(1).model;
  c.params = build_model(c.spec, 3).params;
  for (const auto& [name, t] : c.params) c.optim.velocity.add(name, Tensor<float>::random(t.shape(), {5}));
  c.epoch = 7;
  c.best_val_dice = 0.4321;
  c.best_epoch = 5;
  Rng rng(9);
  rng.next_u64();
  c.rng_state = rng.serialize();
  c.run_config = small_config(1).to_text();
  c.log = "epoch,lr\n1,0.01\n";
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_TRUE(back.params == c.params);
  EXPECT_TRUE(back.optim.velocity == c.optim.velocity);
  EXPECT_EQ(back.spec, c.spec);
  EXPECT_EQ(back.epoch, 7);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad.resize(bytes.size() / 2);
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
}

TEST(Train, TwoEpochSmokeRun) {
  const std::vector<CaseData> train_cases{small_case(1, 8)};
  const auto r = train(small_config(2), train_cases, {small_case(2)});
  ASSERT_EQ(r.records.size(), 2u);
  for (const auto& rec : r.records) {
    EXPECT_TRUE(std::isfinite(rec.train_loss));
    EXPECT_GE(rec.val_dice, 0.0);
  }
  EXPECT_EQ(r.last.epoch, 2);
  EXPECT_EQ(std::count(r.last.log.begin(), r.last.log.end(), '\n'), 3);
}

TEST(Train, DeterministicAndResumable) {
  const std::vector<CaseData> tr{small_case(1, 8)}, va{small_case(2)};
  auto cfg = small_config(2);
  std::optional<Checkpoint> after_one;
  const auto full = train(cfg, tr, va, std::nullopt, [&](const Checkpoint& s, const EpochRecord&, bool) {
    if (s.epoch == 1) after_one = s;
  });
  const auto again = train(cfg, tr, va);
  EXPECT_EQ(encode_checkpoint(full.last), encode_checkpoint(again.last));
  ASSERT_TRUE(after_one);
  const auto resumed = train(cfg, tr, va, decode_checkpoint(encode_checkpoint(*after_one)));
  ASSERT_EQ(resumed.records.size(), 1u);
  EXPECT_EQ(resumed.records[0].train_loss, full.records[1].train_loss);
  EXPECT_EQ(resumed.records[0].val_dice, full.records[1].val_dice);
  EXPECT_EQ(encode_checkpoint(resumed.last), encode_checkpoint(full.last));
}

TEST(Train, NonFiniteLossAbortsWithLocation) {
  auto poisoned = small_case(1, 8);
  poisoned.image.voxels[3 * 32 * 32 + 5] = std::nanf("");
  auto cfg = small_config(1);
  cfg.augment_train = false;
  try {
    train(cfg, {poisoned}, {});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch"), std::string::npos) << e.what();
  }
}

TEST(Train, OnDiskRunWritesArtifacts) {
  const auto data = scratch("data"), out = scratch("run");
  generate_dataset(data, 4, {16, 32, 32}, 3);
  auto cfg = small_config(2);
  cfg.checkpoint_every = 1;
  train_on_disk(cfg, data, out);
  for (const char* f : {"last.ckpt", "best.ckpt", "epoch_001.ckpt", "epoch_002.ckpt", "train_log.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_EQ(read_text(out / "train_log.csv").substr(0, 29), "epoch,lr,train_loss,val_dice\n");
  EXPECT_THROW(train_on_disk(cfg, scratch("missing"), out), IoError);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST(Evaluate, SelfConsistencyAndIdenticalComparison) {
  const auto cfg = small_config(1);
  const auto params = build_model(cfg.model, 4).params;
  auto c = small_case(5);
  c.labels = predict_volume(cfg.model, params, c.image);
  const auto cases = evaluate_cases(cfg.model, params, {c});
  for (double d : cases[0].dice) EXPECT_EQ(d, 1.0);
  auto report = aggregate_report(cases);
  ASSERT_EQ(report.rows.size(), 6u);
  std::vector<CaseMetrics> twice{cases[0], cases[0]};
  twice[1].case_id = "other";
  for (auto& d : twice[1].dice) d *= 0.5;
  auto rep2 = aggregate_report(twice);
  attach_t_tests(rep2, twice, twice);
  for (const auto& row : rep2.rows) {
    EXPECT_EQ(row.dice_test->t, 0.0);
    EXPECT_EQ(row.dice_test->p, 1.0);
  }
}

TEST(Evaluate, ExtentMismatchIsConfigError) {
  const auto cfg = small_config(1);
  const auto params = build_model(cfg.model, 4).params;
  EXPECT_THROW(predict_volume(cfg.model, params, ImageVolume({2, 16, 16}, {1, 1, 1})), ConfigError);
}

TEST(Train, StopAfterLeavesAResumableState) {
  const std::vector<CaseData> tr{small_case(1, 8)}, va{small_case(2)};
  const auto cfg = small_config(3);
  const auto full = train(cfg, tr, va);
  const auto first = train(cfg, tr, va, std::nullopt, {}, 1);
  ASSERT_EQ(first.records.size(), 1u);
  EXPECT_EQ(first.last.epoch, 1);
  const auto rest = train(cfg, tr, va, first.last);
  EXPECT_EQ(encode_checkpoint(rest.last), encode_checkpoint(full.last));
}
