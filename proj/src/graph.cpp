#include "cdnas/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace cdnas {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split tag '" + s + "'");
}

std::vector<std::string> DomainSpec::all() const {
  std::vector<std::string> out;
  out.reserve(sources.size() + 1);
  out.push_back(target);
  for (const auto& s : sources) out.push_back(s);
  return out;
}

void DomainSpec::validate() const {
  if (target.empty()) throw std::invalid_argument("domain spec: empty target");
  std::unordered_set<std::string> seen{target};
  for (const auto& s : sources) {
    if (s == target) throw std::invalid_argument("domain spec: target listed as source");
    if (!seen.insert(s).second) throw std::invalid_argument("domain spec: duplicate source " + s);
  }
}

namespace {

std::string describe(const Interaction& r) {
  return "(" + r.user + ", " + r.item + ", " + r.domain + ", label=" + std::to_string(r.label) +
         ", split=" + split_name(r.split) + ")";
}

}  // namespace

InteractionGraph InteractionGraph::build(const std::vector<Interaction>& interactions,
                                         const DomainSpec& spec) {
  spec.validate();
  InteractionGraph g;
  g.spec_ = spec;
  g.domains_ = spec.all();
  for (size_t d = 0; d < g.domains_.size(); ++d)
    g.domain_index_[g.domains_[d]] = static_cast<int>(d);
  g.items_of_domain_.resize(g.domains_.size());

  std::unordered_set<int64_t> seen_edges;  // (user, item, domain, split) within ...
  // node indices are assigned in first-appearance order
  for (const auto& r : interactions) {
    auto dit = g.domain_index_.find(r.domain);
    if (dit == g.domain_index_.end())
      throw std::invalid_argument("build_graph: unknown domain in record " + describe(r));
    if (r.label != 0 && r.label != 1)
      throw std::invalid_argument("build_graph: non-binary label in record " + describe(r));
    const int d = dit->second;

    int u;
    if (auto it = g.user_index_.find(r.user); it != g.user_index_.end()) {
      u = it->second;
    } else {
      u = static_cast<int>(g.users_.size());
      g.user_index_[r.user] = u;
      g.users_.push_back(r.user);
    }

    int i;
    if (auto it = g.item_index_.find(r.item); it != g.item_index_.end()) {
      i = it->second;
      if (g.item_domain_[i] != d)
        throw std::invalid_argument("build_graph: item " + r.item +
                                    " appears in more than one domain");
    } else {
      i = static_cast<int>(g.items_.size());
      g.item_index_[r.item] = i;
      g.items_.push_back(r.item);
      g.item_domain_.push_back(d);
      g.items_of_domain_[d].push_back(i);
    }

    const int64_t ek = ((static_cast<int64_t>(u) * static_cast<int64_t>(interactions.size() + 1) +
                         i) *
                            static_cast<int64_t>(g.domains_.size()) +
                        d) *
                           4 +
                       static_cast<int>(r.split);
    if (!seen_edges.insert(ek).second)
      throw std::invalid_argument("build_graph: duplicate interaction " + describe(r));

    g.edges_.push_back(Edge{u, i, d, r.label, r.split});
  }

  g.train_clicks_.resize(g.domains_.size());
  for (const auto& e : g.edges_) {
    g.observed_.insert(g.pair_key(e.user, e.item));
    if (e.label == 1) g.positives_.insert(g.pair_key(e.user, e.item));
    if (e.label == 1) {
      const int64_t pk = static_cast<int64_t>(e.user) * static_cast<int64_t>(g.domains_.size()) +
                         e.domain;
      ++g.positive_count_[pk];
    }
    if (e.split == Split::train && e.label == 1) {
      g.train_clicks_[e.domain].user.push_back(e.user);
      g.train_clicks_[e.domain].item.push_back(e.item);
      g.train_clicks_all_.user.push_back(e.user);
      g.train_clicks_all_.item.push_back(e.item);
    }
  }
  return g;
}

int InteractionGraph::user_index(const std::string& id) const {
  auto it = user_index_.find(id);
  return it == user_index_.end() ? -1 : it->second;
}

int InteractionGraph::item_index(const std::string& id) const {
  auto it = item_index_.find(id);
  return it == item_index_.end() ? -1 : it->second;
}

int InteractionGraph::domain_index(const std::string& name) const {
  auto it = domain_index_.find(name);
  return it == domain_index_.end() ? -1 : it->second;
}

std::vector<InteractionGraph::Edge> InteractionGraph::edges_of_split(Split s) const {
  std::vector<Edge> out;
  for (const auto& e : edges_)
    if (e.split == s) out.push_back(e);
  return out;
}

double InteractionGraph::density_percent(int domain) const {
  long long cnt = 0;
  for (const auto& e : edges_)
    if (e.domain == domain) ++cnt;
  return cdnas::density_percent(cnt, n_users(), static_cast<long long>(items_of_domain_[domain].size()));
}

double density_percent(long long n_edges, long long n_users, long long n_items) {
  if (n_users <= 0 || n_items <= 0)
    throw std::invalid_argument("density: user and item counts must be positive");
  return 100.0 * static_cast<double>(n_edges) /
         (static_cast<double>(n_users) * static_cast<double>(n_items));
}

std::vector<Interaction> ingest_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest_tsv: cannot open " + path);
  std::vector<Interaction> out;
  std::string line;
  size_t lineno = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first_content) {
      first_content = false;
      if (line.rfind("user_id\t", 0) == 0) continue;  // header
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 4 && cols.size() != 5)
      throw std::runtime_error("ingest_tsv: malformed line " + std::to_string(lineno) + " in " +
                               path + " (expected 4 or 5 tab-separated fields)");
    Interaction r;
    r.user = cols[0];
    r.item = cols[1];
    r.domain = cols[2];
    if (cols[3] == "0")
      r.label = 0;
    else if (cols[3] == "1")
      r.label = 1;
    else
      throw std::runtime_error("ingest_tsv: non-binary label '" + cols[3] + "' on line " +
                               std::to_string(lineno) + " in " + path);
    if (cols.size() == 5) {
      try {
        r.split = parse_split(cols[4]);
      } catch (const std::invalid_argument&) {
        throw std::runtime_error("ingest_tsv: bad split tag on line " + std::to_string(lineno) +
                                 " in " + path);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_tsv(const std::string& path, const std::vector<Interaction>& interactions) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_tsv: cannot open " + path);
  out << "user_id\titem_id\tdomain\tlabel\tsplit\n";
  for (const auto& r : interactions)
    out << r.user << '\t' << r.item << '\t' << r.domain << '\t' << r.label << '\t'
        << split_name(r.split) << '\n';
  if (!out) throw std::runtime_error("write_tsv: write failed for " + path);
}

namespace {

std::vector<Interaction> sample_negatives_impl(const InteractionGraph& g, Split split,
                                               double ratio, Rng& rng) {
  if (ratio <= 0.0) throw std::invalid_argument("negative_sample: ratio must be positive");
  std::vector<Interaction> out;
  std::unordered_set<int64_t> emitted;  // avoid duplicate negatives within this draw
  const int64_t n_items = g.n_items();
  double quota = 0.0;
  for (const auto& e : g.edges()) {
    if (e.split != split || e.label != 1) continue;
    quota += ratio;
    while (quota >= 1.0) {
      quota -= 1.0;
      const auto& pool = g.items_of_domain(e.domain);
      const int64_t pk = static_cast<int64_t>(e.user) * n_items;
      // saturation: every item of the domain already observed or emitted
      size_t taken = 0;
      for (int it : pool)
        if (g.is_observed(e.user, it) || emitted.count(pk + it)) ++taken;
      if (taken >= pool.size()) {
        std::cerr << "[warn] negative_sample: user " << g.user_id(e.user) << " exhausted domain "
                  << g.domain_name(e.domain) << ", skipping\n";
        continue;
      }
      int item = -1;
      for (int attempt = 0; attempt < 32; ++attempt) {
        const int cand = pool[rng.below(pool.size())];
        if (!g.is_observed(e.user, cand) && !emitted.count(pk + cand)) {
          item = cand;
          break;
        }
      }
      if (item < 0) {
        // dense user: fall back to an explicit scan of the free items
        std::vector<int> free;
        for (int it : pool)
          if (!g.is_observed(e.user, it) && !emitted.count(pk + it)) free.push_back(it);
        item = free[rng.below(free.size())];
      }
      emitted.insert(pk + item);
      out.push_back(Interaction{g.user_id(e.user), g.item_id(item), g.domain_name(e.domain), 0,
                                split});
    }
  }
  return out;
}

}  // namespace

std::vector<Interaction> negative_sample(const InteractionGraph& graph, double ratio, Rng& rng) {
  return sample_negatives_impl(graph, Split::train, ratio, rng);
}

std::vector<Interaction> negative_sample_for_split(const InteractionGraph& graph, Split split,
                                                   double ratio, Rng& rng) {
  return sample_negatives_impl(graph, split, ratio, rng);
}

std::vector<Interaction> make_splits(std::vector<Interaction> interactions,
                                     const std::array<double, 3>& ratios, uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (r <= 0.0) throw std::invalid_argument("make_splits: ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("make_splits: ratios must sum to 1");

  // (user, domain, label) groups in first-appearance order
  std::unordered_map<std::string, size_t> group_of;
  std::vector<std::vector<size_t>> groups;
  for (size_t i = 0; i < interactions.size(); ++i) {
    const auto& r = interactions[i];
    const std::string key = r.user + '\x1f' + r.domain + '\x1f' + std::to_string(r.label);
    auto it = group_of.find(key);
    if (it == group_of.end()) {
      group_of.emplace(key, groups.size());
      groups.emplace_back();
      groups.back().push_back(i);
    } else {
      groups[it->second].push_back(i);
    }
  }

  Rng rng(mix_seed(seed, 0x511f5ULL));
  for (auto& idx : groups) {
    rng.shuffle(idx);
    const size_t n = idx.size();
    std::array<size_t, 3> take{};
    std::array<double, 3> frac{};
    size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double exact = ratios[k] * static_cast<double>(n);
      take[k] = static_cast<size_t>(exact);
      frac[k] = exact - static_cast<double>(take[k]);
      assigned += take[k];
    }
    while (assigned < n) {  // largest remainder, ties favor train, valid, test
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (frac[k] > frac[best]) best = k;
      ++take[best];
      frac[best] = -1.0;
      ++assigned;
    }
    if (n >= 3) {  // every split represented
      for (int k = 0; k < 3; ++k) {
        if (take[k] > 0) continue;
        int donor = 0;
        for (int j = 1; j < 3; ++j)
          if (take[j] > take[donor]) donor = j;
        --take[donor];
        ++take[k];
      }
    }
    size_t p = 0;
    for (int k = 0; k < 3; ++k)
      for (size_t c = 0; c < take[k]; ++c)
        interactions[idx[p++]].split = static_cast<Split>(k);
  }
  return interactions;
}

void SynthConfig::validate() const {
  if (n_users < 1 || n_items_per_domain < 1 || n_domains < 1 || latent_dim < 1 ||
      positives_per_user < 1)
    throw std::invalid_argument("synth: all counts must be at least 1");
  if (shared_factor_strength < 0.0 || shared_factor_strength > 1.0 ||
      source_noise_fraction < 0.0 || source_noise_fraction > 1.0)
    throw std::invalid_argument("synth: fractions must lie in [0, 1]");
  if (positives_per_user > n_items_per_domain)
    throw std::invalid_argument("synth: positives_per_user exceeds items per domain");
}

double SynthResult::preference_score(int user, int item_domain, int item_local,
                                     int user_factor_domain) const {
  const auto& u = user_factors[user_factor_domain];
  const auto& v = item_factors[item_domain];
  const double z = u.row(user).dot(v.row(item_local)) / std::sqrt(static_cast<double>(u.cols()));
  return 1.0 / (1.0 + std::exp(-gain * z));
}

SynthResult synth_generate(const SynthConfig& config) {
  config.validate();
  constexpr double kPreferenceGain = 4.0;

  SynthResult res;
  res.gain = kPreferenceGain;
  res.spec.target = "d0";
  for (int d = 1; d < config.n_domains; ++d) res.spec.sources.push_back("d" + std::to_string(d));

  Rng rng(mix_seed(config.seed, 0xda7a));
  const int n = config.n_users;
  const int m = config.n_items_per_domain;
  const int dim = config.latent_dim;
  const double s = config.shared_factor_strength;

  Eigen::MatrixXd shared(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) shared(i, j) = rng.normal();

  for (int d = 0; d < config.n_domains; ++d) {
    Eigen::MatrixXd ud(n, dim);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j)
        ud(i, j) = s * shared(i, j) + std::sqrt(1.0 - s * s) * rng.normal();
    res.user_factors.push_back(std::move(ud));
    Eigen::MatrixXd vd(m, dim);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < dim; ++j) vd(i, j) = rng.normal();
    res.item_factors.push_back(std::move(vd));
  }

  const double sqrt_dim = std::sqrt(static_cast<double>(dim));
  for (int u = 0; u < n; ++u) {
    for (int d = 0; d < config.n_domains; ++d) {
      // Clicked impressions: a Plackett-Luce draw of positives_per_user
      // distinct items with odds exp(gain * z), the fixed-count form of
      // independent logistic(gain * z) click trials.
      std::vector<double> weight(m);
      std::vector<char> used(m, 0);
      for (int i = 0; i < m; ++i) {
        const double z =
            res.user_factors[d].row(u).dot(res.item_factors[d].row(i)) / sqrt_dim;
        weight[i] = std::exp(kPreferenceGain * z);
      }
      auto emit = [&](int item, int label) {
        Interaction r;
        r.user = "u" + std::to_string(u);
        r.item = "d" + std::to_string(d) + "_i" + std::to_string(item);
        r.domain = "d" + std::to_string(d);
        r.label = label;
        res.interactions.push_back(std::move(r));
        const double z =
            res.user_factors[d].row(u).dot(res.item_factors[d].row(item)) / sqrt_dim;
        res.oracle_scores.push_back(1.0 / (1.0 + std::exp(-kPreferenceGain * z)));
      };
      for (int k = 0; k < config.positives_per_user; ++k) {
        double total = 0.0;
        for (int i = 0; i < m; ++i)
          if (!used[i]) total += weight[i];
        double pick = rng.uniform() * total;
        int chosen = -1;
        for (int i = 0; i < m; ++i) {
          if (used[i]) continue;
          pick -= weight[i];
          if (pick <= 0.0) {
            chosen = i;
            break;
          }
        }
        if (chosen < 0) {  // numeric tail guard
          for (int i = m - 1; i >= 0; --i)
            if (!used[i]) {
              chosen = i;
              break;
            }
        }
        used[chosen] = 1;
        emit(chosen, 1);
      }
      // Unclicked impressions: the same number of distinct non-clicked items,
      // uniform (capped by the items left over).
      std::vector<int> rest;
      for (int i = 0; i < m; ++i)
        if (!used[i]) rest.push_back(i);
      rng.shuffle(rest);
      const size_t n_neg = std::min(rest.size(), static_cast<size_t>(config.positives_per_user));
      for (size_t k = 0; k < n_neg; ++k) emit(rest[k], 0);
    }
  }

  // Planted noise: flip the requested fraction of source-domain edges,
  // clustered by user (whole users in random order, the boundary user
  // partially). An affected user's source behavior reads anti-preference, a
  // conflict that lands in the shared user embedding and cannot be absorbed
  // by item-local parameters — uniform source weighting is therefore
  // genuinely harmful, while the corruption stays identifiable at the
  // user-behavior level.
  if (config.source_noise_fraction > 0.0) {
    std::unordered_map<std::string, std::vector<size_t>> by_user;
    std::vector<std::string> users;
    size_t n_source = 0;
    for (size_t i = 0; i < res.interactions.size(); ++i) {
      const auto& r = res.interactions[i];
      if (r.domain == res.spec.target) continue;
      ++n_source;
      auto [it, fresh] = by_user.try_emplace(r.user);
      if (fresh) users.push_back(r.user);
      it->second.push_back(i);
    }
    rng.shuffle(users);
    size_t remaining = static_cast<size_t>(
        std::llround(config.source_noise_fraction * static_cast<double>(n_source)));
    for (const auto& key : users) {
      if (remaining == 0) break;
      for (size_t i : by_user[key]) {
        if (remaining == 0) break;
        res.interactions[i].label = 1 - res.interactions[i].label;
        --remaining;
      }
    }
  }
  return res;
}

std::pair<std::vector<int>, std::vector<int>> sample_disjoint_index_batches(
    const std::vector<char>& is_target, int batch_size, Rng& rng) {
  const size_t n = is_target.size();
  if (batch_size < 1) throw std::invalid_argument("disjoint batches: batch_size must be positive");
  if (n < 2 * static_cast<size_t>(batch_size))
    throw std::invalid_argument("disjoint batches: pool too small for two batches");
  std::vector<int> target_idx;
  for (size_t i = 0; i < n; ++i)
    if (is_target[i]) target_idx.push_back(static_cast<int>(i));
  if (target_idx.size() < static_cast<size_t>(batch_size))
    throw std::invalid_argument("disjoint batches: not enough target-domain interactions");

  rng.shuffle(target_idx);
  std::vector<int> dev(target_idx.begin(), target_idx.begin() + batch_size);
  std::vector<char> in_dev(n, 0);
  for (int i : dev) in_dev[i] = 1;

  std::vector<int> rest;
  rest.reserve(n - dev.size());
  for (size_t i = 0; i < n; ++i)
    if (!in_dev[i]) rest.push_back(static_cast<int>(i));
  rng.shuffle(rest);
  std::vector<int> inner(rest.begin(), rest.begin() + batch_size);
  return {std::move(inner), std::move(dev)};
}

std::pair<std::vector<Interaction>, std::vector<Interaction>> sample_disjoint_batches(
    const std::vector<Interaction>& train_pool, int batch_size, const std::string& target_domain,
    Rng& rng) {
  std::vector<char> is_target(train_pool.size());
  for (size_t i = 0; i < train_pool.size(); ++i)
    is_target[i] = train_pool[i].domain == target_domain ? 1 : 0;
  auto [inner, dev] = sample_disjoint_index_batches(is_target, batch_size, rng);
  std::vector<Interaction> a, b;
  for (int i : inner) a.push_back(train_pool[i]);
  for (int i : dev) b.push_back(train_pool[i]);
  return {std::move(a), std::move(b)};
}

InteractionGraph apply_ablation_filter(const InteractionGraph& graph, GraphFilter variant) {
  if (variant == GraphFilter::FULL) return graph;
  std::vector<Interaction> kept;
  const int target = 0;  // domain 0 is the target by construction
  for (const auto& e : graph.edges()) {
    if (e.domain != target) continue;
    kept.push_back(Interaction{graph.user_id(e.user), graph.item_id(e.item),
                               graph.domain_name(e.domain), e.label, e.split});
  }
  DomainSpec spec;
  spec.target = graph.domain_spec().target;
  return InteractionGraph::build(kept, spec);
}

}  // namespace cdnas
