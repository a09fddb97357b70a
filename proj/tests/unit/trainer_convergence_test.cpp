#include <gtest/gtest.h>

#include "mfp/trainer.hpp"

using namespace mfp;

// Default desk-scale recipe on generated phantoms: across the first ten
// epoch-to-epoch transitions the training loss should fall at least 8 times
// (the stochastic tolerance allows two rises).
TEST(TrainConvergence, LossMostlyDecreasesOverTenTransitions) {
  const auto dir = std::filesystem::temp_directory_path() / "mfp_convergence_data";
  std::filesystem::remove_all(dir);
  const auto m = generate_dataset(dir, 12, {16, 64, 64}, 7);
  RunConfig cfg;
  cfg.epochs = 11;
  const auto result = train(cfg, load_cases(dir, m.train), {});
  ASSERT_EQ(result.records.size(), 11u);
  int falls = 0;
  for (std::size_t i = 1; i < result.records.size(); ++i) {
    falls += result.records[i].train_loss <= result.records[i - 1].train_loss;
  }
  EXPECT_GE(falls, 8);
  std::filesystem::remove_all(dir);
}
