#include "cdnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cdnas {

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc: scores and labels differ in length");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auc: labels must be binary");
    n_pos += static_cast<size_t>(y);
  }
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc: needs at least one positive and one negative label");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // average ranks within tie groups (1-based ranks)
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  double pos_rank_sum = 0.0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k] == 1) pos_rank_sum += rank[k];

  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

double logloss(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("logloss: scores and labels differ in length");
  if (scores.empty()) throw std::invalid_argument("logloss: empty input");
  constexpr double kClip = 1e-7;
  double sum = 0.0;
  for (size_t k = 0; k < scores.size(); ++k) {
    const double p = std::min(1.0 - kClip, std::max(kClip, scores[k]));
    sum += labels[k] == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return sum / static_cast<double>(scores.size());
}

double rela_impr_auc(double target_auc, double baseline_auc) {
  if (baseline_auc <= 0.5)
    throw std::invalid_argument("rela_impr_auc: baseline must exceed the 0.5 random floor");
  return ((target_auc - 0.5) / (baseline_auc - 0.5) - 1.0) * 100.0;
}

double rela_impr_logloss(double target_logloss, double baseline_logloss) {
  if (target_logloss <= 0.0)
    throw std::invalid_argument("rela_impr_logloss: target must be positive");
  return (baseline_logloss / target_logloss - 1.0) * 100.0;
}

MetricAggregate aggregate_values(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("aggregate: empty value list");
  MetricAggregate a;
  a.values = values;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    a.stddev_available = true;
  }
  return a;
}

MetricsReport aggregate_runs(const std::vector<RunMetrics>& per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("aggregate_runs: no runs");
  MetricsReport r;
  r.per_seed = per_seed;
  std::vector<double> aucs, lls;
  for (const auto& m : per_seed) {
    aucs.push_back(m.auc);
    lls.push_back(m.logloss);
  }
  r.auc = aggregate_values(aucs);
  r.logloss = aggregate_values(lls);
  return r;
}

namespace {

// Continued-fraction evaluation for the regularized incomplete beta (modified
// Lentz iteration).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

TTestResult paired_t_test(const std::vector<double>& ours, const std::vector<double>& baseline,
                          double level) {
  if (ours.size() != baseline.size())
    throw std::invalid_argument("paired_t_test: lists differ in length");
  const size_t n = ours.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: needs at least two pairs");

  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = ours[i] - baseline[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.dof = static_cast<int>(n) - 1;
  if (sd == 0.0) {
    if (mean == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 1.0;
      r.significant = false;
    } else {
      r.t_statistic = mean > 0 ? std::numeric_limits<double>::infinity()
                               : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
      r.significant = true;
    }
    return r;
  }
  r.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double nu = static_cast<double>(r.dof);
  const double t2 = r.t_statistic * r.t_statistic;
  r.p_value = incomplete_beta(nu / 2.0, 0.5, nu / (nu + t2));
  r.significant = r.p_value < level;
  return r;
}

}  // namespace cdnas
