// Cross-domain heterogeneous interaction graph and the data tooling around
// it: TSV ingestion, synthetic dataset generation, per-user stratified
// splits, in-domain negative sampling and disjoint batch draws.
//
// The graph is immutable after construction and safe for unrestricted
// concurrent readers. Samplers own their randomness.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cdnas/rng.hpp"

namespace cdnas {

enum class Split : uint8_t { train = 0, valid = 1, test = 2 };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct Interaction {
  std::string user;
  std::string item;
  std::string domain;
  int label = 1;  // 1 = click, 0 = no click
  Split split = Split::train;
};

// Target domain plus an ordered list of source domains. Sources may be empty
// only for the single-domain ablation.
struct DomainSpec {
  std::string target;
  std::vector<std::string> sources;

  std::vector<std::string> all() const;  // target first, then sources in order
  void validate() const;
};

class InteractionGraph {
 public:
  struct Edge {
    int user;
    int item;
    int domain;
    int label;
    Split split;
  };

  // Parallel endpoint arrays for one set of propagation edges.
  struct EdgeList {
    std::vector<int> user;
    std::vector<int> item;
    size_t size() const { return user.size(); }
  };

  static InteractionGraph build(const std::vector<Interaction>& interactions,
                                const DomainSpec& spec);

  int n_users() const { return static_cast<int>(users_.size()); }
  int n_items() const { return static_cast<int>(items_.size()); }
  int n_domains() const { return static_cast<int>(domains_.size()); }
  size_t n_edges() const { return edges_.size(); }

  const std::vector<Edge>& edges() const { return edges_; }
  const std::string& user_id(int u) const { return users_[u]; }
  const std::string& item_id(int i) const { return items_[i]; }
  const std::string& domain_name(int d) const { return domains_[d]; }
  const DomainSpec& domain_spec() const { return spec_; }

  int user_index(const std::string& id) const;  // -1 when absent
  int item_index(const std::string& id) const;
  int domain_index(const std::string& name) const;

  int item_domain(int item) const { return item_domain_[item]; }
  const std::vector<int>& items_of_domain(int d) const { return items_of_domain_[d]; }

  bool is_positive(int user, int item) const {
    return positives_.count(pair_key(user, item)) != 0;
  }

  // Any recorded interaction of the pair, clicks and non-clicks alike.
  bool is_observed(int user, int item) const {
    return observed_.count(pair_key(user, item)) != 0;
  }

  // Message passing runs over observed train-split clicks.
  const EdgeList& train_clicks(int domain) const { return train_clicks_[domain]; }
  const EdgeList& train_clicks_all() const { return train_clicks_all_; }

  std::vector<Edge> edges_of_split(Split s) const;

  // Interaction count of a domain over |U| x |I_d| candidate pairs, in percent.
  double density_percent(int domain) const;

 private:
  int64_t pair_key(int user, int item) const {
    return static_cast<int64_t>(user) * static_cast<int64_t>(items_.size()) + item;
  }

  DomainSpec spec_;
  std::vector<std::string> users_, items_, domains_;
  std::unordered_map<std::string, int> user_index_, item_index_, domain_index_;
  std::vector<int> item_domain_;
  std::vector<std::vector<int>> items_of_domain_;
  std::vector<Edge> edges_;
  std::unordered_set<int64_t> positives_;            // label-1 pairs, any split
  std::unordered_set<int64_t> observed_;             // all pairs, any label or split
  std::unordered_map<int64_t, int> positive_count_;  // (user, domain) -> count
  std::vector<EdgeList> train_clicks_;
  EdgeList train_clicks_all_;

  friend std::vector<Interaction> negative_sample_for_split(const InteractionGraph&, Split,
                                                            double, Rng&);
};

// Density from raw counts, in percent (edges / (users * items) * 100).
double density_percent(long long n_edges, long long n_users, long long n_items);

// TSV with header `user_id\titem_id\tdomain\tlabel\tsplit`; the split column
// is optional and defaults to train. Malformed lines raise errors that cite
// the 1-based line number.
std::vector<Interaction> ingest_tsv(const std::string& path);
void write_tsv(const std::string& path, const std::vector<Interaction>& interactions);

// For each train-split positive edge, emits `ratio` negatives on average:
// same-user, same-domain items absent from the positive set, label 0. A
// user-domain pair whose items are exhausted is skipped with a warning.
std::vector<Interaction> negative_sample(const InteractionGraph& graph, double ratio, Rng& rng);

// Same procedure against the positives of another split (fixed evaluation
// negatives are drawn once at split time).
std::vector<Interaction> negative_sample_for_split(const InteractionGraph& graph, Split split,
                                                   double ratio, Rng& rng);

// Per-(user, domain, label) stratified random assignment. Every group of at
// least 3 interactions lands in all three splits.
std::vector<Interaction> make_splits(std::vector<Interaction> interactions,
                                     const std::array<double, 3>& ratios, uint64_t seed);

struct SynthConfig {
  int n_users = 100;
  int n_items_per_domain = 100;
  int n_domains = 2;
  int latent_dim = 8;
  double shared_factor_strength = 1.0;
  double source_noise_fraction = 0.0;
  int positives_per_user = 20;  // per domain
  uint64_t seed = 1;

  void validate() const;
};

// Planted-factor generator: users draw shared latent vectors, each domain
// draws its own item vectors, and clicks follow a logistic preference model.
// Each user-domain pair emits positives_per_user clicked impressions (drawn
// without replacement with odds exp(gain * z), the conditional form of
// independent logistic(gain * z) click trials at fixed count) plus as many
// unclicked impressions drawn uniformly from the remaining items.
struct SynthResult {
  std::vector<Interaction> interactions;
  std::vector<double> oracle_scores;  // aligned with interactions
  DomainSpec spec;

  // latent state kept for oracle checks
  std::vector<Eigen::MatrixXd> user_factors;  // per domain, n_users x dim
  std::vector<Eigen::MatrixXd> item_factors;  // per domain, n_items x dim
  double gain = 0.0;

  // sigma(gain * <u_d, v_{d,i}> / sqrt(dim)) — the Bayes preference score,
  // optionally scored with another domain's user factors.
  double preference_score(int user, int item_domain, int item_local,
                          int user_factor_domain) const;
};

SynthResult synth_generate(const SynthConfig& config);

// Two disjoint batches of `batch_size` drawn from the pool; the second (dev)
// batch holds target-domain interactions only.
std::pair<std::vector<int>, std::vector<int>> sample_disjoint_index_batches(
    const std::vector<char>& is_target, int batch_size, Rng& rng);

std::pair<std::vector<Interaction>, std::vector<Interaction>> sample_disjoint_batches(
    const std::vector<Interaction>& train_pool, int batch_size, const std::string& target_domain,
    Rng& rng);

enum class GraphFilter { FULL, NO_SOURCE };

// NO_SOURCE keeps only target-domain items and edges; FULL is the identity.
InteractionGraph apply_ablation_filter(const InteractionGraph& graph, GraphFilter variant);

}  // namespace cdnas
