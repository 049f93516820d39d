// Alternating bi-level trainer. Inner steps descend the importance-weighted
// training loss in theta (supernet weights, architecture logits, CTR head);
// outer steps update the perceptron phi along the implicit hypergradient,
// with the inverse Hessian approximated by an alpha-scaled K-truncated
// Neumann series evaluated through Hessian-vector products.
#pragma once

#include <algorithm>
#include <cstring>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>

#include "cdnas/importance.hpp"
#include "cdnas/metrics.hpp"

namespace cdnas {

enum class Variant { FULL, MANUAL, MIX, DISCRETE, NO_SOURCE, NO_IMPO };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);
std::vector<Variant> all_variants();

struct BilevelConfig {
  int K = 5;              // Neumann truncation depth
  double alpha = -1.0;    // Neumann step scale; non-positive resolves to lr_inner
  int T_inner = 5;        // inner steps per outer step
  int warmup_epochs = 10;
  int max_epochs = 100;
  int patience = 10;
  double lr_inner = 1e-3;
  double lr_outer = 1e-2;
  int batch_size = 512;
  double negative_ratio = 1.0;
  uint64_t seed = 1;
  std::string optimizer = "adam";  // or "sgd"
  OpKind manual_op = OpKind::LIGHTGCN;

  double resolved_alpha() const { return alpha > 0.0 ? alpha : lr_inner; }
  void validate() const;
};

template <typename S>
struct Optimizer {
  bool adam = true;
  S lr = S(1e-3);
  S beta1 = S(0.9), beta2 = S(0.999), eps = S(1e-8);
  Eigen::Matrix<S, Eigen::Dynamic, 1> m, v;
  long t = 0;

  static Optimizer make(const std::string& kind, double lr_) {
    if (kind != "adam" && kind != "sgd")
      throw std::invalid_argument("optimizer must be adam or sgd, got " + kind);
    Optimizer o;
    o.adam = kind == "adam";
    o.lr = static_cast<S>(lr_);
    return o;
  }

  void step(ParamVector<S>& p, const ParamVector<S>& g) {
    check_same_layout(p, g, "optimizer step");
    if (!adam) {
      p.values -= lr * g.values;
      return;
    }
    if (m.size() != g.values.size()) {
      m = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(g.values.size());
      v = m;
    }
    ++t;
    m = beta1 * m + (S(1) - beta1) * g.values;
    v = (beta2 * v.array() + (S(1) - beta2) * g.values.array().square()).matrix();
    const S c1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), t));
    const S c2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), t));
    p.values.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

// alpha * sum_{n=0..K} (I - alpha * H)^n v computed with K Hessian-vector
// products: p <- v; acc <- v; repeat K times { p <- p - alpha*H*p; acc <- acc + p }.
template <typename S>
ParamVector<S> neumann_inverse_hvp(const LossFn<S>& loss, const ParamVector<S>& at,
                                   const ParamVector<S>& v, int K, double alpha,
                                   const std::set<std::string>* frozen = nullptr) {
  if (K < 0) throw std::invalid_argument("neumann: K must be non-negative");
  if (alpha <= 0.0) throw std::invalid_argument("neumann: alpha must be positive");
  check_same_layout(at, v, "neumann");
  ParamVector<S> p = v;
  ParamVector<S> acc = v;
  for (int n = 0; n < K; ++n) {
    ParamVector<S> hv = hvp(loss, at, p, frozen);
    p.values -= static_cast<S>(alpha) * hv.values;
    acc.values += p.values;
    if (!acc.values.allFinite())
      throw std::runtime_error("neumann: non-finite iterate at step " + std::to_string(n + 1));
  }
  acc.values *= static_cast<S>(alpha);
  return acc;
}

// d L_dev / d phi through the inner optimum:
//   -(grad_theta L_dev) . (inverse Hessian of L_main) . (d^2 L_main / dphi dtheta)
template <typename S>
ParamVector<S> implicit_hypergradient(const JointLossFn<S>& main_loss, const LossFn<S>& dev_loss,
                                      const ParamVector<S>& theta, const ParamVector<S>& phi,
                                      int K, double alpha,
                                      const std::set<std::string>* frozen_theta = nullptr) {
  ParamVector<S> g = gradient(dev_loss, theta, frozen_theta);
  ParamVector<S> u =
      neumann_inverse_hvp(bind_phi(main_loss, phi), theta, g, K, alpha, frozen_theta);
  ParamVector<S> out = mixed_second_vjp(main_loss, theta, phi, u, frozen_theta);
  out.values = -out.values;
  return out;
}

template <typename S>
struct TrainState {
  ParamVector<S> theta;
  ParamVector<S> phi;
  int epoch = 0;
  double best_valid_auc = 0.0;
  int epochs_since_best = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_auc = 0.0;
  double valid_logloss = 0.0;
  std::vector<double> gamma_domains;
  Eigen::MatrixXd arch_mixtures;  // rows layer*n_domains+domain, cols ops
};

template <typename S>
struct RunResult {
  RunMetrics test;
  double best_valid_auc = 0.0;
  int best_epoch = 0;
  int last_epoch = 0;
  std::vector<EpochRecord> epochs;
  Eigen::MatrixXd arch_mixtures;
  std::vector<double> gamma_domains;
  bool warmup_phi_unchanged = true;
  std::vector<size_t> outer_batch_overlaps;  // one entry per outer step
  TrainState<S> state;  // best-checkpoint parameters
};

struct ImportanceRow {
  std::string user, item, domain;
  double gamma = 0.0;
};

template <typename S>
class Trainer {
 public:
  Trainer(const InteractionGraph& graph, ModelConfig mcfg, BilevelConfig cfg, Variant variant)
      : graph_(variant == Variant::NO_SOURCE ? apply_ablation_filter(graph, GraphFilter::NO_SOURCE)
                                             : graph),
        cfg_(cfg),
        variant_(variant),
        supernet_(graph_, mcfg) {
    cfg_.validate();
    perceptron_on_ = (variant == Variant::FULL || variant == Variant::MANUAL ||
                      variant == Variant::MIX || variant == Variant::DISCRETE) &&
                     graph_.n_domains() > 1;
    if (perceptron_on_) perceptron_.emplace(graph_, mcfg);
    if (variant == Variant::MANUAL || variant == Variant::MIX) frozen_.insert("arch_logits");
  }

  const SupernetModel<S>& supernet() const { return supernet_; }
  const InteractionGraph& graph() const { return graph_; }
  bool perceptron_enabled() const { return perceptron_on_; }

  // Weighted training objective over one batch. When `weighted` is false (or
  // the batch has no source edges) every interaction enters with weight one.
  JointLossFn<S> main_loss(Batch batch, bool weighted) const {
    return [this, batch = std::move(batch), weighted](ad::Tape<S>& t, const Bound<S>& theta,
                                                      const Bound<S>& phi) -> ad::Var {
      auto stack = supernet_.forward_embeddings(t, theta);
      ad::Var logits = supernet_.batch_logits(t, stack, theta, batch);
      ad::Mat<S> labels(static_cast<Eigen::Index>(batch.size()), 1);
      for (size_t k = 0; k < batch.size(); ++k)
        labels(static_cast<Eigen::Index>(k), 0) = static_cast<S>(batch.label[k]);
      ad::Var bce = t.bce_with_logits(logits, std::move(labels));

      std::vector<int> tgt, src;
      for (size_t k = 0; k < batch.size(); ++k)
        (batch.domain[k] == 0 ? tgt : src).push_back(static_cast<int>(k));
      if (!weighted || !perceptron_on_ || src.empty()) return t.mean_all(bce);

      auto src_idx = ad::make_index(src);
      auto item_rows = std::make_shared<std::vector<int>>();
      auto user_rows = std::make_shared<std::vector<int>>();
      auto source_index = std::make_shared<std::vector<int>>();
      for (int k : src) {
        user_rows->push_back(batch.user[k]);
        item_rows->push_back(supernet_.n_users() + batch.item[k]);
        source_index->push_back(batch.domain[k] - 1);
      }
      // item-global head sees the final supernet level as a constant
      ad::Var item_emb = t.detach(t.gather_rows(stack.h2, item_rows));
      ad::Var gamma_v = perceptron_->item_global_weight(t, item_emb, phi);
      ad::Var reps = perceptron_->node_representations(t, phi);
      ad::Var gamma_uv = perceptron_->pair_weight(t, reps, user_rows, item_rows, phi);
      ad::Var weights =
          perceptron_->importance_weights(t, gamma_v, gamma_uv, source_index, phi);

      ad::Var src_sum = t.sum_all(t.mul(weights, t.gather_rows(bce, src_idx)));
      ad::Var total = src_sum;
      if (!tgt.empty())
        total = t.add(t.sum_all(t.gather_rows(bce, ad::make_index(tgt))), src_sum);
      return t.scale(total, S(1) / static_cast<S>(batch.size()));
    };
  }

  // Unweighted mean BCE on a (target-domain) development batch.
  LossFn<S> dev_loss(Batch batch) const {
    return [this, batch = std::move(batch)](ad::Tape<S>& t, const Bound<S>& theta) -> ad::Var {
      auto stack = supernet_.forward_embeddings(t, theta);
      ad::Var logits = supernet_.batch_logits(t, stack, theta, batch);
      ad::Mat<S> labels(static_cast<Eigen::Index>(batch.size()), 1);
      for (size_t k = 0; k < batch.size(); ++k)
        labels(static_cast<Eigen::Index>(k), 0) = static_cast<S>(batch.label[k]);
      return t.mean_all(t.bce_with_logits(logits, std::move(labels)));
    };
  }

  // One optimizer step on theta; returns the batch loss.
  double inner_step(TrainState<S>& state, const Batch& batch, bool weighted,
                    Optimizer<S>& opt) const {
    auto loss = bind_phi(main_loss(batch, weighted), state.phi);
    const double value = static_cast<double>(loss_value(loss, state.theta));
    ParamVector<S> g = gradient(loss, state.theta, &frozen_);
    opt.step(state.theta, g);
    return value;
  }

  ParamVector<S> neumann_step(const TrainState<S>& state, const Batch& inner_batch,
                              const ParamVector<S>& v) const {
    return neumann_inverse_hvp(bind_phi(main_loss(inner_batch, true), state.phi), state.theta, v,
                               cfg_.K, cfg_.resolved_alpha(), &frozen_);
  }

  ParamVector<S> hypergradient(const TrainState<S>& state, const Batch& inner_batch,
                               const Batch& dev_batch) const {
    return implicit_hypergradient(main_loss(inner_batch, true), dev_loss(dev_batch), state.theta,
                                  state.phi, cfg_.K, cfg_.resolved_alpha(), &frozen_);
  }

  // One optimizer step on phi; skips (with a warning) on non-finite input.
  bool outer_step(TrainState<S>& state, const ParamVector<S>& hypergrad,
                  Optimizer<S>& opt) const {
    if (!hypergrad.values.allFinite()) {
      std::cerr << "[warn] outer step skipped: non-finite hypergradient\n";
      return false;
    }
    opt.step(state.phi, hypergrad);
    if (state.phi.layout->has("gamma_domain")) {
      auto g = state.phi.group("gamma_domain");
      g = g.cwiseMax(S(0));  // domain weights stay non-negative
    }
    return true;
  }

  RunResult<S> run();

  RunMetrics evaluate(const ParamVector<S>& theta, const Batch& batch) const {
    auto scores = supernet_.batch_scores(theta, batch);
    std::vector<int> labels(batch.label.begin(), batch.label.end());
    return {auc(scores, labels), logloss(scores, labels)};
  }

  // Evaluation is target-domain CTR: source-domain records never enter the
  // validation or test metrics.
  Batch eval_batch(Split split) const {
    Batch b;
    for (const auto& e : graph_.edges())
      if (e.split == split && e.domain == 0) b.push(e.user, e.item, e.domain, e.label);
    return b;
  }

  // Importance weights of every source train edge under one full-batch
  // normalization (the analysis dump).
  std::vector<ImportanceRow> importance_dump(const TrainState<S>& state) const;

 private:
  struct Pool {
    Batch all;
    std::vector<char> is_target;
  };

  Pool build_pool(int epoch) const {
    Pool p;
    for (const auto& e : graph_.edges())
      if (e.split == Split::train) {
        p.all.push(e.user, e.item, e.domain, e.label);
        p.is_target.push_back(e.domain == 0 ? 1 : 0);
      }
    Rng neg_rng(mix_seed(mix_seed(cfg_.seed, 0xe94ULL), static_cast<uint64_t>(epoch)));
    for (const auto& r : negative_sample(graph_, cfg_.negative_ratio, neg_rng)) {
      p.all.push(graph_.user_index(r.user), graph_.item_index(r.item),
                 graph_.domain_index(r.domain), 0);
      p.is_target.push_back(r.domain == graph_.domain_spec().target ? 1 : 0);
    }
    return p;
  }

  static Batch take(const Batch& pool, const std::vector<int>& idx) {
    Batch b;
    for (int k : idx) b.push(pool.user[k], pool.item[k], pool.domain[k], pool.label[k]);
    return b;
  }

  InteractionGraph graph_;
  BilevelConfig cfg_;
  Variant variant_;
  SupernetModel<S> supernet_;
  std::optional<PerceptronModel<S>> perceptron_;
  bool perceptron_on_ = false;
  std::set<std::string> frozen_;
};

template <typename S>
RunResult<S> Trainer<S>::run() {
  RunResult<S> res;
  TrainState<S> state;
  state.theta = supernet_.init_theta(cfg_.seed);
  if (variant_ == Variant::MANUAL) supernet_.set_manual_arch(state.theta, cfg_.manual_op);
  if (perceptron_on_) {
    state.phi = perceptron_->init_phi(cfg_.seed);
  } else {
    state.phi = ParamVector<S>(std::make_shared<Layout>());
  }

  auto inner_opt = Optimizer<S>::make(cfg_.optimizer, cfg_.lr_inner);
  auto outer_opt = Optimizer<S>::make(cfg_.optimizer, cfg_.lr_outer);

  const Batch valid = eval_batch(Split::valid);
  const Batch test = eval_batch(Split::test);
  Rng flow(mix_seed(cfg_.seed, 0xf10fULL));

  TrainState<S> best = state;
  int steps_since_outer = 0;
  bool warned_outer = false;

  for (int epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
    state.epoch = epoch;
    const bool warm = epoch <= cfg_.warmup_epochs;
    Pool pool = build_pool(epoch);
    std::vector<int> order(pool.all.size());
    std::iota(order.begin(), order.end(), 0);
    flow.shuffle(order);

    Eigen::Matrix<S, Eigen::Dynamic, 1> phi_before;
    if (warm) phi_before = state.phi.values;

    const bool outer_feasible =
        pool.all.size() >= 2 * static_cast<size_t>(cfg_.batch_size) &&
        static_cast<size_t>(std::count(pool.is_target.begin(), pool.is_target.end(), 1)) >=
            static_cast<size_t>(cfg_.batch_size);

    double loss_sum = 0.0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const size_t stop = std::min(order.size(), start + cfg_.batch_size);
      std::vector<int> idx(order.begin() + start, order.begin() + stop);
      Batch batch = take(pool.all, idx);
      const bool weighted = !warm && perceptron_on_;
      loss_sum += inner_step(state, batch, weighted, inner_opt);
      ++n_batches;

      if (weighted && ++steps_since_outer >= cfg_.T_inner) {
        steps_since_outer = 0;
        if (!outer_feasible) {
          if (!warned_outer) {
            std::cerr << "[warn] outer steps disabled: pool too small for disjoint batches\n";
            warned_outer = true;
          }
          continue;
        }
        auto [ib, db] = sample_disjoint_index_batches(pool.is_target, cfg_.batch_size, flow);
        std::set<int> seen(ib.begin(), ib.end());
        size_t overlap = 0;
        for (int k : db) overlap += seen.count(k);
        res.outer_batch_overlaps.push_back(overlap);
        try {
          ParamVector<S> hg = hypergradient(state, take(pool.all, ib), take(pool.all, db));
          outer_step(state, hg, outer_opt);
        } catch (const std::runtime_error& e) {
          std::cerr << "[warn] outer step skipped: " << e.what() << "\n";
        }
      }
    }

    if (warm && (phi_before.size() != state.phi.values.size() ||
                 std::memcmp(phi_before.data(), state.phi.values.data(),
                             sizeof(S) * phi_before.size()) != 0))
      res.warmup_phi_unchanged = false;

    if (variant_ == Variant::DISCRETE && epoch == cfg_.warmup_epochs) {
      supernet_.discretize_into(state.theta);
      frozen_.insert("arch_logits");
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = n_batches > 0 ? loss_sum / n_batches : 0.0;
    RunMetrics vm = evaluate(state.theta, valid);
    rec.valid_auc = vm.auc;
    rec.valid_logloss = vm.logloss;
    if (perceptron_on_) {
      auto g = state.phi.group("gamma_domain");
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        rec.gamma_domains.push_back(static_cast<double>(g(i, 0)));
    }
    rec.arch_mixtures = supernet_.arch_mixtures(state.theta);
    res.epochs.push_back(rec);

    if (vm.auc > state.best_valid_auc) {
      state.best_valid_auc = vm.auc;
      state.epochs_since_best = 0;
      best = state;
      res.best_epoch = epoch;
    } else {
      ++state.epochs_since_best;
    }
    res.last_epoch = epoch;
    if (state.epochs_since_best >= cfg_.patience) break;
  }

  res.best_valid_auc = state.best_valid_auc;
  res.state = best;
  res.test = evaluate(best.theta, test);
  res.arch_mixtures = supernet_.arch_mixtures(best.theta);
  if (perceptron_on_) {
    auto g = best.phi.group("gamma_domain");
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      res.gamma_domains.push_back(static_cast<double>(g(i, 0)));
  }
  return res;
}

template <typename S>
std::vector<ImportanceRow> Trainer<S>::importance_dump(const TrainState<S>& state) const {
  std::vector<ImportanceRow> rows;
  if (!perceptron_on_) return rows;
  Batch batch;
  for (const auto& e : graph_.edges())
    if (e.split == Split::train && e.domain != 0) batch.push(e.user, e.item, e.domain, e.label);
  if (batch.size() == 0) return rows;

  ad::Tape<S> t;
  Bound<S> theta = supernet_.bind_constants(t, state.theta);
  Bound<S> phi = perceptron_->bind_const(t, state.phi);
  auto stack = supernet_.forward_embeddings(t, theta);
  auto user_rows = std::make_shared<std::vector<int>>();
  auto item_rows = std::make_shared<std::vector<int>>();
  auto source_index = std::make_shared<std::vector<int>>();
  for (size_t k = 0; k < batch.size(); ++k) {
    user_rows->push_back(batch.user[k]);
    item_rows->push_back(supernet_.n_users() + batch.item[k]);
    source_index->push_back(batch.domain[k] - 1);
  }
  ad::Var item_emb = t.detach(t.gather_rows(stack.h2, item_rows));
  ad::Var gamma_v = perceptron_->item_global_weight(t, item_emb, phi);
  ad::Var reps = perceptron_->node_representations(t, phi);
  ad::Var gamma_uv = perceptron_->pair_weight(t, reps, user_rows, item_rows, phi);
  ad::Var weights = perceptron_->importance_weights(t, gamma_v, gamma_uv, source_index, phi);
  const auto& w = t.value(weights);
  for (size_t k = 0; k < batch.size(); ++k)
    rows.push_back(ImportanceRow{graph_.user_id(batch.user[k]), graph_.item_id(batch.item[k]),
                                 graph_.domain_name(batch.domain[k]),
                                 static_cast<double>(w(static_cast<Eigen::Index>(k), 0))});
  return rows;
}

}  // namespace cdnas
