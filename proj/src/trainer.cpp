#include "mfp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mfp/config.hpp"
#include "mfp/loss.hpp"

namespace mfp {
namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

Bound<float> bind_constants(Graph<float>& g, const ParameterSet<float>& params) {
  Bound<float> vars;
  for (const auto& [name, t] : params) vars.emplace(name, g.constant(t));
  return vars;
}

void check_extent(const ModelSpec& spec, std::int64_t h, std::int64_t w) {
  if (h != spec.image_size || w != spec.image_size) {
    throw ConfigError("slice extent " + std::to_string(h) + "x" + std::to_string(w) +
                      " does not match image_size=" + std::to_string(spec.image_size));
  }
}

struct SliceRef {
  std::size_t case_index;
  std::int64_t z;
};

}  // namespace

ModelSpec RunConfig::desk_model() {
  ModelSpec s;
  s.variant = Variant::MfpBica;
  s.levels = 5;
  s.base_channels = 8;
  s.image_size = 64;
  return s;
}

RunConfig RunConfig::full_scale() {
  RunConfig c;
  c.model.base_channels = 16;
  c.model.image_size = 256;
  c.batch_size = 32;
  c.epochs = 400;
  c.augment.flip_prob = 0.5;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (model.set(key, value)) return;
  auto& a = augment;
  if (key == "batch_size") {
    batch_size = static_cast<int>(parse_int(key, value));
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  } else if (key == "epochs") {
    epochs = static_cast<int>(parse_int(key, value));
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "momentum") {
    momentum = parse_double(key, value);
  } else if (key == "weight_decay") {
    weight_decay = parse_double(key, value);
  } else if (key == "lr_schedule") {
    schedule = LrSchedule::parse(value);
  } else if (key == "augment") {
    augment_train = parse_bool(key, value);
  } else if (key == "rotation_prob") {
    a.rotation_prob = parse_double(key, value);
  } else if (key == "rotation_deg") {
    a.rotation_deg = parse_double(key, value);
  } else if (key == "contrast_prob") {
    a.contrast_prob = parse_double(key, value);
  } else if (key == "contrast_lo") {
    a.contrast_lo = parse_double(key, value);
  } else if (key == "contrast_hi") {
    a.contrast_hi = parse_double(key, value);
  } else if (key == "elastic_prob") {
    a.elastic_prob = parse_double(key, value);
  } else if (key == "elastic_grid") {
    a.elastic_grid = static_cast<int>(parse_int(key, value));
    if (a.elastic_grid < 2) throw ConfigError("elastic_grid must be >= 2");
  } else if (key == "elastic_sigma_px") {
    a.elastic_sigma_px = parse_double(key, value);
  } else if (key == "flip_prob") {
    a.flip_prob = parse_double(key, value);
  } else if (key == "checkpoint_every") {
    checkpoint_every = static_cast<int>(parse_int(key, value));
  } else if (key == "log_wall_time") {
    log_wall_time = parse_bool(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::apply_text(const std::string& text) {
  for_each_setting(text, [this](const std::string& k, const std::string& v) { set(k, v); });
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << model.to_text() << "batch_size=" << batch_size << "\n"
     << "epochs=" << epochs << "\n"
     << "seed=" << seed << "\n"
     << "momentum=" << format_double(momentum) << "\n"
     << "weight_decay=" << format_double(weight_decay) << "\n"
     << "lr_schedule=" << schedule.to_text() << "\n"
     << "augment=" << (augment_train ? "true" : "false") << "\n"
     << "rotation_prob=" << format_double(augment.rotation_prob) << "\n"
     << "rotation_deg=" << format_double(augment.rotation_deg) << "\n"
     << "contrast_prob=" << format_double(augment.contrast_prob) << "\n"
     << "contrast_lo=" << format_double(augment.contrast_lo) << "\n"
     << "contrast_hi=" << format_double(augment.contrast_hi) << "\n"
     << "elastic_prob=" << format_double(augment.elastic_prob) << "\n"
     << "elastic_grid=" << augment.elastic_grid << "\n"
     << "elastic_sigma_px=" << format_double(augment.elastic_sigma_px) << "\n"
     << "flip_prob=" << format_double(augment.flip_prob) << "\n"
     << "checkpoint_every=" << checkpoint_every << "\n"
     << "log_wall_time=" << (log_wall_time ? "true" : "false") << "\n";
  return os.str();
}

std::string log_header(bool wall_time) {
  return wall_time ? "epoch,lr,train_loss,val_dice,wall_seconds\n" : "epoch,lr,train_loss,val_dice\n";
}

std::string log_row(const EpochRecord& r, bool wall_time) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.6g,%.8f,%.6f", r.epoch, r.lr, r.train_loss, r.val_dice);
  std::string s = buf;
  if (wall_time) {
    std::snprintf(buf, sizeof buf, ",%.3f", r.wall_seconds);
    s += buf;
  }
  return s + "\n";
}

Tensor<float> predict_logits(const ModelSpec& spec, const ParameterSet<float>& params, const Tensor<float>& input) {
  Graph<float> g;
  const auto vars = bind_constants(g, params);
  return forward(spec, vars, g.input(input)).value();
}

LabelVolume predict_volume(const ModelSpec& spec, const ParameterSet<float>& params, const ImageVolume& image,
                           int batch_size) {
  const auto [d, h, w] = image.dims;
  check_extent(spec, h, w);
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  LabelVolume out(image.dims, image.spacing);
  const std::int64_t plane = h * w;
  const std::int64_t k = spec.classes;
  for (std::int64_t z0 = 0; z0 < d; z0 += batch_size) {
    const std::int64_t nb = std::min<std::int64_t>(batch_size, d - z0);
    Tensor<float> x(Shape{nb, 1, h, w});
    for (std::int64_t b = 0; b < nb; ++b) {
      float* dst = x.ptr() + b * plane;
      const float* src = image.voxels.data() + (z0 + b) * plane;
      std::copy_n(src, static_cast<std::size_t>(plane), dst);
      normalize(std::span<float>(dst, static_cast<std::size_t>(plane)));
    }
    const Tensor<float> logits = predict_logits(spec, params, x);
    const float* l = logits.ptr();
    for (std::int64_t b = 0; b < nb; ++b) {
      for (std::int64_t p = 0; p < plane; ++p) {
        std::int64_t best = 0;
        float best_v = l[(b * k) * plane + p];
        for (std::int64_t c = 1; c < k; ++c) {
          const float v = l[(b * k + c) * plane + p];
          if (v > best_v) best_v = v, best = c;
        }
        out.voxels[static_cast<std::size_t>((z0 + b) * plane + p)] = static_cast<std::uint8_t>(best);
      }
    }
  }
  return out;
}

std::vector<CaseMetrics> evaluate_cases(const ModelSpec& spec, const ParameterSet<float>& params,
                                        const std::vector<CaseData>& cases, int batch_size) {
  std::vector<CaseMetrics> out;
  for (const auto& c : cases) out.push_back(evaluate_case(c.id, predict_volume(spec, params, c.image, batch_size), c.labels));
  return out;
}

double mean_foreground_dice(const std::vector<CaseMetrics>& cases) {
  if (cases.empty()) return std::nan("");
  double total = 0.0;
  for (const auto& c : cases) total += mean_of(c.dice);
  return total / static_cast<double>(cases.size());
}

TrainResult train(const RunConfig& cfg, const std::vector<CaseData>& train_cases,
                  const std::vector<CaseData>& val_cases, const std::optional<Checkpoint>& resume,
                  const EpochHook& hook, int stop_after) {
  cfg.model.validate();
  if (train_cases.empty()) throw ConfigError("no training cases");
  std::vector<SliceRef> slices;
  for (std::size_t i = 0; i < train_cases.size(); ++i) {
    const auto& dims = train_cases[i].image.dims;
    check_extent(cfg.model, dims[1], dims[2]);
    for (std::int64_t z = 0; z < dims[0]; ++z) slices.push_back({i, z});
  }
  for (const auto& c : val_cases) check_extent(cfg.model, c.image.dims[1], c.image.dims[2]);

  Checkpoint state;
  Rng rng(derive_seed(cfg.seed, 2));
  if (resume) {
    if (!(resume->spec == cfg.model)) throw ConfigError("checkpoint model spec differs from the run config");
    state = *resume;
    rng.deserialize(state.rng_state);
  } else {
    state.spec = cfg.model;
    state.params = build_model(cfg.model, derive_seed(cfg.seed, 1)).params;
    state.log = log_header(cfg.log_wall_time);
  }
  state.run_config = cfg.to_text();
  state.optim.momentum = cfg.momentum;
  state.optim.weight_decay = cfg.weight_decay;

  TrainResult result;
  result.best = state;
  const std::int64_t s = cfg.model.image_size;
  const std::int64_t plane = s * s;
  const int end = stop_after > 0 ? std::min(cfg.epochs, state.epoch + stop_after) : cfg.epochs;
  for (int epoch = state.epoch; epoch < end; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    state.optim.lr = lr_at(cfg.schedule, epoch);
    // Shuffle from the canonical order so an epoch depends only on the RNG
    // state, which the checkpoint carries.
    std::vector<SliceRef> order = slices;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t b0 = 0; b0 < slices.size(); b0 += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const auto nb = static_cast<std::int64_t>(std::min(slices.size() - b0, static_cast<std::size_t>(cfg.batch_size)));
      Tensor<float> x(Shape{nb, 1, s, s});
      std::vector<std::uint8_t> labels(static_cast<std::size_t>(nb * plane));
      for (std::int64_t b = 0; b < nb; ++b) {
        const auto& ref = order[b0 + static_cast<std::size_t>(b)];
        Slice sl = axial_slice(train_cases[ref.case_index], ref.z);
        normalize(sl.image);
        if (cfg.augment_train) sl = augment(sl, rng, cfg.augment);
        std::copy(sl.image.begin(), sl.image.end(), x.data().begin() + b * plane);
        std::copy(sl.labels.begin(), sl.labels.end(), labels.begin() + b * plane);
      }
      Graph<float> g;
      const auto vars = state.params.bind(g);
      const auto logits = forward(cfg.model, vars, g.input(std::move(x)));
      const auto loss = segmentation_loss(logits, std::span<const std::uint8_t>(labels));
      const double value = loss.value().data()[0];
      const std::string where = "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batch_index + 1);
      if (!std::isfinite(value)) throw NumericError("non-finite loss at " + where);
      const auto grads = g.backward(loss);
      for (const auto& [name, gt] : grads) {
        for (float v : gt.data()) {
          if (!std::isfinite(v)) throw NumericError("non-finite gradient for '" + name + "' at " + where);
        }
      }
      sgd_step(state.params, grads, state.optim);
      loss_sum += value * static_cast<double>(nb);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = state.optim.lr;
    rec.train_loss = loss_sum / static_cast<double>(slices.size());
    rec.val_dice = mean_foreground_dice(evaluate_cases(cfg.model, state.params, val_cases, cfg.batch_size));
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    state.epoch = epoch + 1;
    state.rng_state = rng.serialize();
    state.log += log_row(rec, cfg.log_wall_time);
    const double score = std::isnan(rec.val_dice) ? -rec.train_loss : rec.val_dice;
    const bool is_best = state.best_epoch == 0 || score > state.best_val_dice;
    if (is_best) {
      state.best_val_dice = score;
      state.best_epoch = state.epoch;
    }
    result.records.push_back(rec);
    if (is_best) result.best = state;
    if (hook) hook(state, rec, is_best);
  }
  result.last = std::move(state);
  return result;
}

TrainResult train_on_disk(const RunConfig& cfg, const std::filesystem::path& data_dir,
                          const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& resume,
                          const std::function<void(const EpochRecord&)>& progress, int stop_after) {
  const SplitManifest m = SplitManifest::parse(read_text(manifest_path(data_dir)));
  const auto train_cases = load_cases(data_dir, m.train);
  const auto val_cases = load_cases(data_dir, m.val);
  std::optional<Checkpoint> start;
  if (resume) start = load_checkpoint(*resume);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory '" + out_dir.string() + "': " + ec.message());
  const auto log_file = out_dir / "train_log.csv";
  std::string log = start ? start->log : log_header(cfg.log_wall_time);
  write_text(log_file, log);

  auto hook = [&](const Checkpoint& state, const EpochRecord& rec, bool is_best) {
    save_checkpoint(out_dir / "last.ckpt", state);
    if (is_best) save_checkpoint(out_dir / "best.ckpt", state);
    if (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", state.epoch);
      save_checkpoint(out_dir / name, state);
    }
    log = state.log;
    write_text(log_file, log);
    if (progress) progress(rec);
  };
  try {
    return train(cfg, train_cases, val_cases, start, hook, stop_after);
  } catch (const NumericError& e) {
    write_text(log_file, log + "# aborted: " + e.what() + "\n");
    throw;
  }
}

}  // namespace mfp
