// factify: command-line front end.
//
//   factify synth    --per-category N --seed S --out DIR [--no-image-signal]
//   factify train    --config CONFIG.json
//   factify evaluate --bundle DIR --split PATH [--out PRED.csv]
//   factify grid     --config CONFIG.json --grid table2|table3|table4
//   factify report   --run DIR
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "factify/factify.hpp"

namespace fs = std::filesystem;
using namespace factify;

namespace {

int cmd_synth(int per_category, std::uint64_t seed, const fs::path& out, bool no_image_signal) {
  synth::SynthSpec spec;
  spec.per_category = per_category;
  spec.seed = seed;
  spec.image_signal = !no_image_signal;
  auto ds = synth::synth_dataset(spec);
  synth::write_synth_dataset(ds, out);

  nlohmann::ordered_json cfg;
  cfg["dataset"] = {{"train", "train.csv"}, {"val", "val.csv"}, {"test", "test.csv"}};
  cfg["text_backend"] = "planted-text";
  cfg["image_backend"] = "planted-image";
  cfg["head_variant"] = "TextPair3";
  cfg["head_text_backend"] = "planted-text";
  cfg["head_image_backend"] = "planted-image";
  cfg["feature_flags"] = {"rouge", "length", "text_cosine", "image_cosine", "head"};
  cfg["seed"] = seed;
  cfg["output_dir"] = "runs";
  cfg["cache_root"] = ".factify-cache";
  io::atomic_write(out / "config.json", cfg.dump(2) + "\n");
  std::cout << "wrote " << ds.train.rows.size() << "/" << ds.val.rows.size() << "/" << ds.test.rows.size()
            << " train/val/test rows and config.json to " << out.string() << "\n";
  return 0;
}

int cmd_train(const fs::path& config_path, int workers) {
  auto config = load_config(config_path);
  if (workers > 0) {
    config.workers = workers;
    config.forest.workers = workers;
  }
  pipeline::RunOptions opts;
  opts.log = &std::cerr;
  auto r = pipeline::run_experiment(config, opts);
  std::cout << "run directory: " << r.run_dir.string() << "\n";
  if (r.val) std::cout << "\nvalidation\n" << metrics::to_text(*r.val);
  if (r.test) std::cout << "\ntest\n" << metrics::to_text(*r.test);
  return 0;
}

int cmd_evaluate(const fs::path& bundle, const fs::path& split, const fs::path& out, std::string cache_root, int workers) {
  if (cache_root.empty()) {
    const char* env = std::getenv("FACTIFY_CACHE");
    cache_root = env != nullptr && *env != '\0' ? env : ".factify-cache";
  }
  pipeline::RunOptions opts;
  opts.log = &std::cerr;
  auto r = pipeline::evaluate_bundle(bundle, split, cache_root, std::max(workers, 1), opts);
  const auto csv = pipeline::predictions_csv(r.manifest, r.predictions);
  if (out.empty()) {
    if (!r.report) std::cout << csv;
  } else {
    io::atomic_write(out, csv);
  }
  for (const auto& issue : r.issues) std::cerr << "row " << issue.id << ": " << issue.kind << ": " << issue.detail << "\n";
  if (r.report) std::cout << metrics::to_text(*r.report);
  return 0;
}

int cmd_grid(const fs::path& config_path, const std::string& grid, int workers) {
  auto config = load_config(config_path);
  if (workers > 0) {
    config.workers = workers;
    config.forest.workers = workers;
  }
  pipeline::RunOptions opts;
  opts.log = &std::cerr;
  const auto result = pipeline::run_grid(config, grid, opts);
  io::atomic_write(config.output_dir / ("grid_" + grid + ".json"), pipeline::to_json(result).dump(2) + "\n");
  io::atomic_write(config.output_dir / ("grid_" + grid + ".txt"), pipeline::to_text(result));
  std::cout << pipeline::to_text(result);
  return 0;
}

int cmd_report(const fs::path& run) {
  if (fs::exists(run / "failed")) {
    std::cerr << "run failed: " << io::read_text(run / "failed");
    return 3;
  }
  bool any = false;
  for (const char* split : {"val", "test"}) {
    const auto path = run / (std::string("eval_") + split + ".json");
    if (!fs::exists(path)) continue;
    const auto report = metrics::report_from_json(nlohmann::json::parse(io::read_text(path)));
    std::cout << (any ? "\n" : "") << split << "\n" << metrics::to_text(report);
    any = true;
  }
  if (!any) throw Error(ErrorKind::Io, "no evaluation reports in " + run.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Claim/document fact verification pipeline"};
  app.require_subcommand(1);

  auto* synth_cmd = app.add_subcommand("synth", "Write a planted-signal synthetic dataset and config");
  int per_category = 100;
  std::uint64_t seed = 42;
  std::string out_dir;
  bool no_image_signal = false;
  synth_cmd->add_option("--per-category", per_category, "Rows per category")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed, "Generator seed");
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_flag("--no-image-signal", no_image_signal, "Make image similarity uninformative");

  auto* train_cmd = app.add_subcommand("train", "Run one experiment");
  std::string config_path;
  int workers = 0;
  train_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--workers", workers, "Override the worker count");

  auto* eval_cmd = app.add_subcommand("evaluate", "Apply a persisted bundle to a split");
  std::string bundle, split, pred_out, cache_root;
  eval_cmd->add_option("--bundle", bundle, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--split", split, "Split CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", pred_out, "Write predictions CSV here");
  eval_cmd->add_option("--cache", cache_root, "Cache root (default $FACTIFY_CACHE or .factify-cache)");
  eval_cmd->add_option("--workers", workers, "Worker count");

  auto* grid_cmd = app.add_subcommand("grid", "Run a built-in experiment grid");
  std::string grid;
  grid_cmd->add_option("--config", config_path, "Base config (JSON)")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--grid", grid, "table2, table3 or table4")->required();
  grid_cmd->add_option("--workers", workers, "Override the worker count");

  auto* report_cmd = app.add_subcommand("report", "Print the evaluation reports of a run");
  std::string run_dir;
  report_cmd->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth_cmd) return cmd_synth(per_category, seed, out_dir, no_image_signal);
    if (*train_cmd) return cmd_train(config_path, workers);
    if (*eval_cmd) return cmd_evaluate(bundle, split, pred_out, cache_root, workers);
    if (*grid_cmd) return cmd_grid(config_path, grid, workers);
    if (*report_cmd) return cmd_report(run_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.detail() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
