// cdnas command-line front end.
//
//   cdnas synth  --config cfg.json [--out DIR]            generate a dataset
//   cdnas train  --config cfg.json [--seed 1,2] [...]     train one variant
//   cdnas ablate --config cfg.json [...]                  all six variants
//   cdnas report RUN_DIR [--baseline DIR]                 summarize a run
//   cdnas eval   --config cfg.json --checkpoint CK        test a checkpoint
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "cdnas/experiment.hpp"

using namespace cdnas;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<uint64_t> seeds;
  std::string variant;
  int jobs = 0;
};

ExperimentConfig load_with_overrides(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  if (!args.seeds.empty()) cfg.seeds = args.seeds;
  if (!args.variant.empty()) cfg.variant = parse_variant(args.variant);
  if (args.jobs > 0) cfg.jobs = args.jobs;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_variant = true) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seeds, "seed list override")->delimiter(',');
  if (with_variant) cmd->add_option("--variant", args.variant, "variant override");
  cmd->add_option("--jobs", args.jobs, "concurrent seed runs");
}

void print_experiment_summary(const ExperimentReport& rep, const std::filesystem::path& dir) {
  std::printf("wrote %s\n", dir.string().c_str());
  for (const auto& r : rep.runs)
    std::printf("  seed %llu: test AUC %.4f, LogLoss %.4f (best epoch %d, stopped at %d)\n",
                static_cast<unsigned long long>(r.seed), r.test.auc, r.test.logloss,
                r.best_epoch, r.last_epoch);
  if (rep.runs.size() >= 2)
    std::printf("  mean AUC %.4f +/- %.4f, mean LogLoss %.4f +/- %.4f\n", rep.metrics.auc.mean,
                rep.metrics.auc.stddev, rep.metrics.logloss.mean, rep.metrics.logloss.stddev);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-domain GNN architecture search with importance-weighted transfer"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, ablate_args, eval_args;
  std::string report_dir, report_baseline, eval_checkpoint;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, synth_args, false);

  CLI::App* train = app.add_subcommand("train", "train the configured variant across seeds");
  add_common(train, train_args);

  CLI::App* ablate = app.add_subcommand("ablate", "run all six variants with shared seeds");
  add_common(ablate, ablate_args);

  CLI::App* report = app.add_subcommand("report", "summarize a finished run directory");
  report->add_option("run_dir", report_dir, "run directory")->required();
  report->add_option("--baseline", report_baseline, "baseline run directory for RelaImpr");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint.json path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      ExperimentConfig cfg = load_with_overrides(synth_args);
      auto dir = resolve_out_dir(cfg, synth_args.out_dir);
      write_synth_dataset(cfg, dir);
      std::printf("wrote %s\n", dir.string().c_str());
      return 0;
    }
    if (train->parsed()) {
      ExperimentConfig cfg = load_with_overrides(train_args);
      auto dir = resolve_out_dir(cfg, train_args.out_dir);
      auto rep = run_experiment(cfg, dir);
      print_experiment_summary(rep, dir);
      return 0;
    }
    if (ablate->parsed()) {
      ExperimentConfig cfg = load_with_overrides(ablate_args);
      auto dir = resolve_out_dir(cfg, ablate_args.out_dir);
      auto rows = run_ablation(cfg, dir);
      std::printf("%-10s %-9s %-9s %-9s %-9s %s\n", "variant", "AUC", "+/-", "LogLoss", "+/-",
                  "t vs FULL");
      for (const auto& r : rows) {
        std::printf("%-10s %-9.4f %-9.4f %-9.4f %-9.4f", r.variant.c_str(), r.metrics.auc.mean,
                    r.metrics.auc.stddev, r.metrics.logloss.mean, r.metrics.logloss.stddev);
        if (r.variant != "FULL")
          std::printf(" %.3f%s", r.vs_full.t_statistic, r.vs_full.significant ? " *" : "");
        std::printf("\n");
      }
      std::printf("wrote %s\n", (dir / "ablation.json").string().c_str());
      return 0;
    }
    if (report->parsed()) {
      std::cout << render_report(report_dir, report_baseline);
      return 0;
    }
    if (eval->parsed()) {
      ExperimentConfig cfg = load_with_overrides(eval_args);
      auto graph = assemble_dataset(cfg);
      auto ck = load_checkpoint(eval_checkpoint);
      auto m = evaluate_checkpoint(cfg, graph, ck);
      std::printf("test AUC %.6f, LogLoss %.6f\n", m.auc, m.logloss);
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
