#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mfp/augment.hpp"
#include "mfp/dataset.hpp"
#include "mfp/metrics.hpp"
#include "mfp/model.hpp"
#include "mfp/optim.hpp"

namespace mfp {

struct RunConfig {
  ModelSpec model = desk_model();
  int batch_size = 8;
  int epochs = 30;
  std::uint64_t seed = 1;
  double momentum = 0.9;
  double weight_decay = 0.001;
  LrSchedule schedule;
  bool augment_train = true;
  AugmentConfig augment;
  // Also write epoch_XXX.ckpt every this many epochs; 0 disables.
  int checkpoint_every = 0;
  // Wall-clock seconds per epoch in the log. Off by default because it makes
  // logs differ between otherwise identical runs.
  bool log_wall_time = false;

  static ModelSpec desk_model();
  // 256x256 slices, batch 32, 400 epochs, base channels 16, flips on.
  static RunConfig full_scale();

  // Model keys are forwarded to ModelSpec. Throws ConfigError naming an
  // unknown key or a bad value.
  void set(const std::string& key, const std::string& value);
  // key=value lines; '#' starts a comment.
  void apply_text(const std::string& text);
  std::string to_text() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based count of completed epochs
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  double wall_seconds = 0.0;
};

std::string log_header(bool wall_time);
std::string log_row(const EpochRecord& r, bool wall_time);

struct Checkpoint {
  ModelSpec spec;
  std::string run_config;  // RunConfig::to_text()
  int epoch = 0;           // completed epochs
  double best_val_dice = -1.0;
  int best_epoch = 0;
  std::string rng_state;
  OptimState<float> optim;
  ParameterSet<float> params;
  std::string log;  // train_log.csv contents up to `epoch`
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
// Throws FormatError with the byte offset of the first fault.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Called after every epoch with the state to persist.
using EpochHook = std::function<void(const Checkpoint& state, const EpochRecord& record, bool is_best)>;

struct TrainResult {
  Checkpoint last;
  Checkpoint best;
  std::vector<EpochRecord> records;  // this invocation only
};

// Runs the epoch loop from scratch or from `resume`. Throws NumericError if
// the loss or a gradient stops being finite, naming the epoch and batch.
// A positive `stop_after` ends this call after that many epochs, leaving
// exactly the state an interrupted run would have saved.
TrainResult train(const RunConfig& cfg, const std::vector<CaseData>& train_cases,
                  const std::vector<CaseData>& val_cases, const std::optional<Checkpoint>& resume = std::nullopt,
                  const EpochHook& hook = {}, int stop_after = 0);

// Reads the manifest and cases from `data_dir` and writes last.ckpt,
// best.ckpt, epoch_XXX.ckpt and train_log.csv to `out_dir`.
TrainResult train_on_disk(const RunConfig& cfg, const std::filesystem::path& data_dir,
                          const std::filesystem::path& out_dir,
                          const std::optional<std::filesystem::path>& resume = std::nullopt,
                          const std::function<void(const EpochRecord&)>& progress = {}, int stop_after = 0);

// Per-slice normalized input and argmax over classes.
LabelVolume predict_volume(const ModelSpec& spec, const ParameterSet<float>& params, const ImageVolume& image,
                           int batch_size = 8);

// Logits for a stack of normalized slices, B x K x S x S.
Tensor<float> predict_logits(const ModelSpec& spec, const ParameterSet<float>& params, const Tensor<float>& input);

std::vector<CaseMetrics> evaluate_cases(const ModelSpec& spec, const ParameterSet<float>& params,
                                        const std::vector<CaseData>& cases, int batch_size = 8);

// Mean over cases of the mean foreground Dice.
double mean_foreground_dice(const std::vector<CaseMetrics>& cases);

}  // namespace mfp
