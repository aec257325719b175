/* Copyright (c) 2026 The mitodet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mitodet/checkpoint.h"
#include "mitodet/config.h"
#include "mitodet/data.h"
#include "mitodet/eval.h"
#include "mitodet/train.h"

namespace fs = std::filesystem;
using namespace mitodet;
using nlohmann::json;

namespace {

// Exit codes, one per error class.
enum Exit {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kDataset = 4,
  kCheckpoint = 5,
  kMismatch = 6,
  kIo = 7,
};

class JsonlLog {
 public:
  JsonlLog(const fs::path& path, bool echo) : out_(path, std::ios::app), echo_(echo) {
    if (!out_) throw fs::filesystem_error("cannot open log", path, std::error_code());
  }
  void write(const json& row) {
    const std::string line = row.dump();
    out_ << line << "\n";
    out_.flush();
    if (echo_) std::cout << line << std::endl;
  }

 private:
  std::ofstream out_;
  bool echo_;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
};

RunConfig resolve_config(const Common& common) {
  RunConfig config =
      common.config_path.empty() ? RunConfig{} : load_config(common.config_path);
  for (const auto& kv : common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    }
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return config;
}

fs::path output_dir(const RunConfig& config) {
  fs::path dir = config.output_dir;
  if (const char* root = std::getenv("MITODET_OUTPUT_ROOT"); root && dir.is_relative()) {
    dir = fs::path(root) / dir;
  }
  fs::create_directories(dir);
  return dir;
}

json epoch_row(const EpochLog& log) {
  return {{"event", "epoch"},       {"epoch", log.epoch},
          {"det_cls", log.loss.det_cls}, {"det_reg", log.loss.det_reg},
          {"tumor_ce", log.loss.tumor_ce}, {"fg_focal", log.loss.fg_focal},
          {"total", log.loss.total},    {"steps", log.steps},
          {"val_ap", log.val_ap},       {"improved", log.improved},
          {"seconds", log.seconds}};
}

json report_row(const EvalReport& r) {
  return {{"event", "report"},         {"name", r.name},
          {"foreground_head", r.foreground_head},
          {"tumor_head", r.tumor_head}, {"augmentation", r.augmentation},
          {"map", r.map},               {"precision", r.precision},
          {"recall", r.recall},         {"f1", r.f1},
          {"score_threshold", r.score_threshold},
          {"failed", r.failed},         {"failure", r.failure}};
}

void require_manifest(const RunConfig& config) {
  if (config.manifest.empty()) throw ConfigError("data.manifest is not set");
}

int cmd_synth(const Common& common, int cases, std::uint64_t seed, int size,
              const std::string& out) {
  RunConfig config = resolve_config(common);
  if (cases > 0) config.synth_cases = cases;
  if (size > 0) config.synth_image_size = size;
  if (seed != ~0ULL) config.synth_seed = seed;
  const fs::path dir = out.empty() ? output_dir(config) / "synth" : fs::path(out);
  fs::create_directories(dir);
  const Dataset ds = generate_synthetic_dataset(
      config.synth_cases, config.synth_image_size, default_palettes(), config.synth_seed);
  const fs::path manifest = write_dataset(ds, dir);
  json row{{"event", "synth"},
           {"manifest", manifest.string()},
           {"cases", ds.records.size()},
           {"seed", config.synth_seed},
           {"hash", dataset_hash(ds.records, ds.images)}};
  std::cout << row.dump() << std::endl;
  return kOk;
}

int cmd_train(const Common& common) {
  RunConfig config = resolve_config(common);
  config.validate();
  require_manifest(config);
  const fs::path dir = output_dir(config);
  save_config(dir / "config.txt", config);
  JsonlLog log(dir / "train_log.jsonl", !common.quiet);
  const Dataset dataset = load_dataset_with_images(config.manifest, config.classes);
  log.write({{"event", "start"},
             {"command", "train"},
             {"cases", dataset.records.size()},
             {"hash", dataset_hash(dataset.records, dataset.images)}});
  split_leave_one_tumor_out(dataset.records, config.held_out);
  const Dataset pool = filter_dataset(
      dataset, [&](const CaseRecord& r) { return r.tumor_type != config.held_out; });
  auto [train_set, val_set] = split_train_val(pool, config.val_fraction, config.seed);
  TrainOptions opts;
  opts.checkpoint_dir = dir / "checkpoints";
  opts.on_epoch = [&](const EpochLog& e) { log.write(epoch_row(e)); };
  const TrainResult result = train(config, train_set, val_set, opts);
  log.write({{"event", "done"},
             {"best_epoch", result.best_epoch},
             {"best_val_ap", result.best_val_ap},
             {"score_threshold", result.score_threshold},
             {"diverged", result.diverged},
             {"checkpoint", (opts.checkpoint_dir / "best").string()}});
  if (result.diverged) {
    throw std::runtime_error("diverged: " + result.divergence +
                             "; last good checkpoint retained");
  }
  return kOk;
}

int cmd_evaluate(const Common& common, const std::string& checkpoint,
                 const std::string& split, double threshold) {
  CheckpointInfo info;
  const Model model = load_checkpoint(checkpoint, &info);
  RunConfig config = info.config;
  if (!common.config_path.empty() || !common.overrides.empty()) {
    config = resolve_config(common);
    verify_compatible(info.config, config);
  }
  require_manifest(config);
  // Ablation flags always describe the trained model.
  config.foreground_head = info.config.foreground_head;
  config.tumor_head = info.config.tumor_head;
  config.augment.enabled = info.config.augment.enabled;

  const Dataset dataset = load_dataset_with_images(config.manifest, config.classes);
  Dataset subset;
  if (split == "test") {
    subset = filter_dataset(
        dataset, [&](const CaseRecord& r) { return r.tumor_type == config.held_out; });
  } else if (split == "train") {
    subset = filter_dataset(
        dataset, [&](const CaseRecord& r) { return r.tumor_type != config.held_out; });
  } else {
    subset = dataset;
  }
  if (subset.records.empty()) throw DatasetError("the " + split + " split is empty");

  const double thr = threshold >= 0.0 ? threshold : info.score_threshold;
  const EvalReport report = evaluate_model(model, subset, config, thr, split);
  const fs::path dir = output_dir(config);
  const std::vector<EvalReport> reports{report};
  write_report_json(dir / ("report_" + split + ".json"), reports);
  write_report_csv(dir / ("report_" + split + ".csv"), reports);
  if (config.plots) plot_pr_curve(dir / ("pr_curve_" + split + ".png"), report.curve);
  JsonlLog log(dir / "evaluate_log.jsonl", !common.quiet);
  log.write(report_row(report));
  return kOk;
}

int cmd_ablate(const Common& common) {
  RunConfig config = resolve_config(common);
  config.validate();
  require_manifest(config);
  const fs::path dir = output_dir(config);
  save_config(dir / "config.txt", config);
  JsonlLog log(dir / "ablate_log.jsonl", !common.quiet);
  const Dataset dataset = load_dataset_with_images(config.manifest, config.classes);
  AblationOptions opts;
  opts.on_epoch = [&](const AblationRow& row, std::uint64_t seed, const EpochLog& e) {
    json r = epoch_row(e);
    r["row"] = row.name;
    r["seed"] = seed;
    log.write(r);
  };
  opts.on_row = [&](const EvalReport& r) { log.write(report_row(r)); };
  const auto reports = run_ablation(dataset, config, opts);
  write_ablation_csv(dir / "ablation.csv", reports);
  write_report_csv(dir / "ablation_report.csv", reports);
  write_report_json(dir / "ablation.json", reports);
  if (config.plots) plot_ablation(dir / "ablation.png", reports);
  return kOk;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(Exit code, const char* reason, const std::string& message) {
  std::cerr << "error: " << reason << ": " << one_line(message) << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task mitosis detector"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config_path, "Run configuration file");
  app.add_option("-s,--set", common.overrides, "Override a config key (key=value)");
  app.add_flag("-q,--quiet", common.quiet, "Do not echo log rows to stdout");

  int synth_cases = 0;
  int synth_size = 0;
  std::uint64_t synth_seed = ~0ULL;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("-n,--cases", synth_cases, "Number of cases");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--size", synth_size, "Image side in pixels");
  synth->add_option("-o,--out", synth_out, "Output directory");

  auto* train_cmd = app.add_subcommand("train", "Train a model");

  std::string checkpoint;
  std::string split = "test";
  double threshold = -1.0;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  evaluate->add_option("checkpoint", checkpoint, "Checkpoint stem (without extension)")
      ->required();
  evaluate->add_option("--split", split, "test, train or all")
      ->check(CLI::IsMember({"test", "train", "all"}));
  evaluate->add_option("--threshold", threshold, "Score threshold for F1");

  auto* ablate = app.add_subcommand("ablate", "Run the eight-row component ablation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, "usage", e.what());
  }

  try {
    if (*synth) return cmd_synth(common, synth_cases, synth_seed, synth_size, synth_out);
    if (*train_cmd) return cmd_train(common);
    if (*evaluate) return cmd_evaluate(common, checkpoint, split, threshold);
    if (*ablate) return cmd_ablate(common);
  } catch (const ConfigMismatch& e) {
    return fail(kMismatch, "config_mismatch", e.what());
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const DatasetError& e) {
    return fail(kDataset, "dataset", e.what());
  } catch (const CheckpointError& e) {
    return fail(kCheckpoint, "checkpoint", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kIo, "io", e.what());
  } catch (const std::exception& e) {
    return fail(kInternal, "runtime", e.what());
  }
  return kUsage;
}
