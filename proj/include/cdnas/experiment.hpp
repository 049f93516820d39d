// Experiment front end: declarative JSON configs with strict schema
// validation, dataset assembly (TSV or synthetic), seeded multi-run training
// with per-run directories, ablation sweeps, checkpoints and reports.
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdnas/bilevel.hpp"

namespace cdnas {

inline constexpr const char* kVersion = "cdnas 0.1.0";
inline constexpr const char* kOutRootEnv = "CDNAS_OUT_ROOT";

struct ExperimentConfig {
  // dataset: either a TSV path with a domain spec, or a synthetic generator
  std::string tsv;
  DomainSpec domains;
  std::optional<SynthConfig> synth;
  bool resplit = false;  // re-tag splits and draw fixed eval negatives (implied for synth)
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  uint64_t split_seed = 7;
  double eval_negative_ratio = 1.0;

  ModelConfig model;
  std::string precision = "float32";  // or "float64"
  BilevelConfig bilevel;

  Variant variant = Variant::FULL;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir;
  int jobs = 1;
  bool dump_importance = false;

  void validate() const;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
std::string config_snapshot(const ExperimentConfig& cfg);  // canonical JSON dump
uint64_t config_hash(const ExperimentConfig& cfg);

// Resolves the output directory: explicit flag > config > $CDNAS_OUT_ROOT/run-<hash>.
std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg,
                                      const std::string& cli_override);

// Builds the interaction graph per the dataset section (generating, splitting
// and drawing fixed evaluation negatives as configured).
InteractionGraph assemble_dataset(const ExperimentConfig& cfg);

// One training run, normalized to double precision records.
struct RunOutcome {
  uint64_t seed = 0;
  std::string variant;
  RunMetrics test;
  double best_valid_auc = 0.0;
  int best_epoch = 0;
  int last_epoch = 0;
  std::vector<EpochRecord> epochs;
  Eigen::MatrixXd arch_mixtures;
  std::vector<double> gamma_domains;
  std::vector<std::string> domain_names;
  bool warmup_phi_unchanged = true;
  size_t outer_steps = 0;
  size_t outer_overlap_total = 0;
  size_t n_source_train_edges = 0;
  ParamVector<double> theta;
  ParamVector<double> phi;
  std::vector<ImportanceRow> importance;
  double runtime_seconds = 0.0;
};

RunOutcome run_single(const ExperimentConfig& cfg, const InteractionGraph& graph, uint64_t seed);

struct ExperimentReport {
  std::vector<RunOutcome> runs;  // successful runs, in seed order
  std::vector<std::string> failures;
  MetricsReport metrics;
};

// Runs every seed (up to cfg.jobs concurrently), writes run directories and
// the aggregate record under out_dir. Throws after persisting partial
// results if any seed failed.
ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir);

// Writes dataset.tsv, the synth config sidecar and the oracle score table.
void write_synth_dataset(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

struct AblationRow {
  std::string variant;
  MetricsReport metrics;
  TTestResult vs_full;  // valid when variant != FULL
  Eigen::MatrixXd arch_mixtures;  // first seed's mixture, for the report
  std::vector<std::string> domain_names;
};

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg,
                                      const std::filesystem::path& out_dir);

// Human-readable summary of a finished run directory; optionally computes
// relative improvement against a second (baseline) run directory.
std::string render_report(const std::filesystem::path& run_dir,
                          const std::filesystem::path& baseline_dir = {});

// Flat-parameter checkpoints (values, layouts, config hash).
struct Checkpoint {
  ParamVector<double> theta;
  ParamVector<double> phi;
  uint64_t config_hash = 0;
};
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Evaluates a checkpoint on the test split of the configured dataset.
RunMetrics evaluate_checkpoint(const ExperimentConfig& cfg, const InteractionGraph& graph,
                               const Checkpoint& ck);

}  // namespace cdnas
