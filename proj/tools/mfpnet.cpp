// Command-line front end: data generation, training, evaluation, inference,
// gradient checking and feature heat maps.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "mfp/config.hpp"
#include "mfp/dataset.hpp"
#include "mfp/gradcheck.hpp"
#include "mfp/gradcheck_suite.hpp"
#include "mfp/heatmap.hpp"
#include "mfp/parallel.hpp"
#include "mfp/trainer.hpp"

namespace {

using namespace mfp;

// Options every subcommand accepts.
struct Common {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string config_file;
  std::vector<std::string> overrides;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed")->each([&c](const std::string&) { c.seed_given = true; });
  cmd->add_option("--threads", c.threads, "Kernel worker threads (1 = deterministic reference)")->check(CLI::PositiveNumber);
  cmd->add_option("--config", c.config_file, "key=value config file");
  cmd->add_option("--set", c.overrides, "key=value override, repeatable; wins over --config");
}

RunConfig resolve_config(RunConfig cfg, const Common& c) {
  if (!c.config_file.empty()) cfg.apply_text(read_text(c.config_file));
  for (const auto& kv : c.overrides) {
    const auto [k, v] = split_setting(kv);
    cfg.set(k, v);
  }
  if (c.seed_given) cfg.seed = c.seed;
  cfg.model.validate();
  return cfg;
}

Dims3 parse_dims(const std::string& s) {
  Dims3 d{};
  int got = 0;
  std::size_t start = 0;
  while (got < 3) {
    const auto x = s.find('x', start);
    d[static_cast<std::size_t>(got++)] = parse_int("dims", s.substr(start, x == std::string::npos ? x : x - start));
    if (x == std::string::npos) break;
    start = x + 1;
  }
  if (got != 3 || s.find('x', start) != std::string::npos) throw ConfigError("dims must be DxHxW, got '" + s + "'");
  return d;
}

std::vector<std::string> split_ids(const SplitManifest& m, const std::string& split) {
  if (split == "train") return m.train;
  if (split == "val") return m.val;
  if (split == "test") return m.test;
  throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale feature pyramid segmentation network: training and evaluation tools"};
  app.require_subcommand(1);

  Common common;

  auto* gen = app.add_subcommand("gen-data", "Write phantom cases and a split manifest");
  int cases = 12;
  std::string dims_text = "16x64x64";
  std::string data_out = "data";
  gen->add_option("--cases", cases, "Number of cases")->check(CLI::PositiveNumber);
  gen->add_option("--dims", dims_text, "Volume extent DxHxW");
  gen->add_option("--out", data_out, "Output directory");
  add_common(gen, common);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string data_dir = "data", run_dir = "run", variant, resume;
  bool full_scale = false, dry_run = false;
  int stop_after = 0;
  train_cmd->add_option("--data", data_dir, "Dataset directory");
  train_cmd->add_option("--out", run_dir, "Run directory for checkpoints and the log");
  train_cmd->add_option("--variant", variant, "unet, unet-add, mfp1, mfp2 or mfp-bica");
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint");
  train_cmd->add_flag("--paper-config", full_scale, "256x256 slices, batch 32, 400 epochs, base channels 16");
  train_cmd->add_flag("--dry-run", dry_run, "Print the resolved configuration and exit");
  train_cmd->add_option("--stop-after", stop_after, "Stop after this many epochs, as if interrupted (resume later)")
      ->check(CLI::NonNegativeNumber);
  add_common(train_cmd, common);

  auto* eval_cmd = app.add_subcommand("eval", "Per-organ Dice/MSD report as CSV");
  std::string checkpoint, compare, split = "test", report_out, label;
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory");
  eval_cmd->add_option("--split", split, "Manifest split to evaluate");
  eval_cmd->add_option("--compare", compare, "Baseline checkpoint for paired t-tests");
  eval_cmd->add_option("--out", report_out, "CSV path (default: stdout)");
  eval_cmd->add_option("--label", label, "Report label");
  add_common(eval_cmd, common);

  auto* infer_cmd = app.add_subcommand("infer", "Segment one image volume");
  std::string input, output;
  infer_cmd->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  infer_cmd->add_option("--input", input, "Image SegVol")->required();
  infer_cmd->add_option("--output", output, "Label SegVol to write")->required();
  add_common(infer_cmd, common);

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operator");
  double tol = 1e-4;
  bool verbose = false;
  grad_cmd->add_option("--tol", tol, "Maximum relative error");
  grad_cmd->add_flag("--verbose", verbose, "Print per-parameter details");
  add_common(grad_cmd, common);

  auto* heat_cmd = app.add_subcommand("heatmap", "Export one feature map as a PGM image");
  std::string tap = "enc1";
  std::int64_t slice = -1;
  int channel = -1;
  heat_cmd->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  heat_cmd->add_option("--input", input, "Image SegVol")->required();
  heat_cmd->add_option("--output", output, "PGM path")->required();
  heat_cmd->add_option("--slice", slice, "Axial slice (default: middle)");
  heat_cmd->add_option("--tap", tap, "enc<i>, dec<i>, branch<i>.<k>, bica_in<i> or bica_out<i>");
  heat_cmd->add_option("--channel", channel, "Channel index, or -1 for the channel mean");
  add_common(heat_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    set_num_threads(common.threads);

    if (gen->parsed()) {
      const auto m = generate_dataset(data_out, cases, parse_dims(dims_text), common.seed);
      std::cout << "wrote " << cases << " cases to " << data_out << " (train " << m.train.size() << ", val "
                << m.val.size() << ", test " << m.test.size() << ")\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      RunConfig base = full_scale ? RunConfig::full_scale() : RunConfig{};
      std::optional<std::filesystem::path> resume_path;
      if (!resume.empty()) {
        resume_path = resume;
        base = RunConfig{};
        base.apply_text(load_checkpoint(resume).run_config);
      }
      if (!variant.empty()) base.model.variant = parse_variant(variant);
      const RunConfig cfg = resolve_config(base, common);
      std::cout << "# configuration\n" << cfg.to_text() << "lr=" << lr_at(cfg.schedule, 0) << "\n" << std::flush;
      if (dry_run) return 0;
      const auto result = train_on_disk(cfg, data_dir, run_dir, resume_path, [&](const EpochRecord& r) {
        std::cout << log_row(r, cfg.log_wall_time) << std::flush;
      }, stop_after);
      std::cout << "best val dice " << result.last.best_val_dice << " at epoch " << result.last.best_epoch << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      const auto ids = split_ids(SplitManifest::parse(read_text(manifest_path(data_dir))), split);
      const auto data = load_cases(data_dir, ids);
      const Checkpoint ck = load_checkpoint(checkpoint);
      const auto cm = evaluate_cases(ck.spec, ck.params, data);
      MetricReport report = aggregate_report(cm);
      report.label = label.empty() ? variant_name(ck.spec.variant) : label;
      if (!compare.empty()) {
        const Checkpoint base = load_checkpoint(compare);
        attach_t_tests(report, cm, evaluate_cases(base.spec, base.params, data));
      }
      if (report_out.empty()) {
        std::cout << report.to_csv();
      } else {
        write_text(report_out, report.to_csv());
      }
      return 0;
    }

    if (infer_cmd->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint);
      write_segvol(output, predict_volume(ck.spec, ck.params, read_image(input)));
      return 0;
    }

    if (grad_cmd->parsed()) {
      int failed = 0;
      for (const auto& c : operator_gradcheck_cases(common.seed)) {
        const auto r = grad_check(c.fn, c.params, c.eps, tol);
        std::printf("%-28s %s  max rel err %.3e\n", c.name.c_str(), r.passed ? "ok  " : "FAIL", r.max_rel_err);
        if (verbose || !r.passed) std::cout << format_report(r);
        failed += r.passed ? 0 : 1;
      }
      if (failed) {
        std::cerr << "error: " << failed << " operator(s) failed the gradient check\n";
        return 1;
      }
      return 0;
    }

    if (heat_cmd->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint);
      const ImageVolume image = read_image(input);
      const std::int64_t z = slice < 0 ? image.dims[0] / 2 : slice;
      if (z >= image.dims[0]) throw ConfigError("slice " + std::to_string(z) + " out of range");
      CaseData c{"input", image, LabelVolume(image.dims, image.spacing)};
      Slice s = axial_slice(c, z);
      normalize(s.image);
      Tensor<float> x(Shape{1, 1, s.size, s.size}, s.image);
      export_heatmap(feature_map(ck.spec, ck.params, x, tap, channel), output);
      return 0;
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
