// Metrics and statistical reporting: rank-based AUC with tie handling,
// clipped log loss, relative-improvement measures, multi-seed aggregation and
// a paired two-sided t-test.
#pragma once

#include <string>
#include <vector>

namespace cdnas {

// Probability a random positive outranks a random negative; ties count 1/2.
// Requires at least one positive and one negative label.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean binary cross-entropy with scores clipped to [1e-7, 1 - 1e-7].
double logloss(const std::vector<double>& scores, const std::vector<int>& labels);

// ((target - 0.5) / (baseline - 0.5) - 1) * 100; baseline must exceed 0.5.
double rela_impr_auc(double target_auc, double baseline_auc);

// (baseline / target - 1) * 100; target must be positive.
double rela_impr_logloss(double target_logloss, double baseline_logloss);

struct MetricAggregate {
  double mean = 0.0;
  double stddev = 0.0;          // sample standard deviation (n - 1)
  bool stddev_available = false;  // false for a single run
  std::vector<double> values;
};

MetricAggregate aggregate_values(const std::vector<double>& values);

struct RunMetrics {
  double auc = 0.0;
  double logloss = 0.0;
};

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  int dof = 0;
  bool significant = false;
};

// Paired two-sided t-test on per-seed differences (ours - baseline).
TTestResult paired_t_test(const std::vector<double>& ours, const std::vector<double>& baseline,
                          double level = 0.05);

struct RelaImprEntry {
  std::string baseline_name;
  double auc_pct = 0.0;
  double logloss_pct = 0.0;
};

struct MetricsReport {
  std::vector<RunMetrics> per_seed;
  MetricAggregate auc;
  MetricAggregate logloss;
  std::vector<RelaImprEntry> rela_impr;
  TTestResult t_test;
  bool has_t_test = false;
};

MetricsReport aggregate_runs(const std::vector<RunMetrics>& per_seed);

// Regularized incomplete beta function, exposed for the t distribution.
double incomplete_beta(double a, double b, double x);

}  // namespace cdnas
