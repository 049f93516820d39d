// Cross-domain customized supernetwork: five candidate message-passing
// operations blended per (layer, domain) by softmaxed architecture logits,
// a three-level embedding readout and an MLP click-through-rate head.
//
// Per-domain updates run on domain-filtered edge subsets and are summed into
// the node states. Edge-free pathways (the linear op and the self half of
// the sage op) are scaled by each node's fractional domain membership so a
// node's self information is counted once across domains.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cdnas/grad_engine.hpp"
#include "cdnas/graph.hpp"

namespace cdnas {

enum class OpKind : int { GCN = 0, GAT = 1, SAGE = 2, LIGHTGCN = 3, LINEAR = 4 };
inline constexpr int kNumOps = 5;
inline constexpr double kMaskedLogit = -1e9;  // softmax underflows to an exact 0

const char* op_name(OpKind k);
OpKind parse_op(const std::string& name);
std::vector<OpKind> all_ops();

struct ModelConfig {
  int hidden_dim = 64;
  std::vector<int> head_widths = {128, 64};
  int perceptron_dim = 32;
  int perceptron_hidden = 32;
  double emb_init_std = 0.1;
  std::vector<OpKind> op_set = all_ops();  // candidate restriction hook
};

// Row-wise softmax of architecture logits; rows indexed layer * n_domains + d.
Eigen::MatrixXd arch_probs_all(const Eigen::MatrixXd& logits);
Eigen::VectorXd arch_probs(const Eigen::MatrixXd& logits, int layer, int domain, int n_domains);

// One-hot architecture: per row the argmax op gets logit 0, the rest the
// masked logit (softmax then yields an exact one-hot). Ties break toward the
// lowest op index.
Eigen::MatrixXd discretize_arch(const Eigen::MatrixXd& logits);

// Multi-order readout h* = (u0 || u1 || u2 || i0 || i1 || i2).
struct EmbeddingStack {
  std::vector<Eigen::VectorXd> levels;  // exactly 3
};
Eigen::VectorXd concat_multi_order(const EmbeddingStack& user_stack,
                                   const EmbeddingStack& item_stack);

// A batch of interactions by graph index.
struct Batch {
  std::vector<int> user;    // graph user index
  std::vector<int> item;    // graph item index
  std::vector<int> domain;  // graph domain index (0 = target)
  std::vector<int> label;
  size_t size() const { return user.size(); }
  void push(int u, int i, int d, int y) {
    user.push_back(u);
    item.push_back(i);
    domain.push_back(d);
    label.push_back(y);
  }
};

namespace detail {

// Constants derived from one edge subset: node-indexed endpoints, symmetric
// degree normalization and inverse degrees, all local to the subset.
struct SubsetConsts {
  ad::IdxPtr e_user;  // user node ids
  ad::IdxPtr e_item;  // item node ids (offset by n_users)
  Eigen::MatrixXd norm_coeff;  // E x 1, 1/sqrt(du * di)
  Eigen::MatrixXd inv_deg;     // V x 1, 0 where the node has no subset edges
  int n_nodes = 0;
};

SubsetConsts build_subset(const InteractionGraph::EdgeList& edges, int n_users, int n_nodes);

}  // namespace detail

template <typename S>
class SupernetModel {
 public:
  SupernetModel(const InteractionGraph& graph, ModelConfig cfg)
      : cfg_(std::move(cfg)),
        n_users_(graph.n_users()),
        n_items_(graph.n_items()),
        n_domains_(graph.n_domains()),
        n_nodes_(graph.n_users() + graph.n_items()) {
    for (int d = 0; d < n_domains_; ++d)
      subsets_.push_back(detail::build_subset(graph.train_clicks(d), n_users_, n_nodes_));
    build_self_scales(graph);
    build_layout();
    build_op_mask();
  }

  const LayoutPtr& theta_layout() const { return layout_; }
  const ModelConfig& config() const { return cfg_; }
  int n_users() const { return n_users_; }
  int n_items() const { return n_items_; }
  int n_domains() const { return n_domains_; }
  int n_nodes() const { return n_nodes_; }

  ParamVector<S> init_theta(uint64_t seed) const {
    ParamVector<S> p(layout_);
    Rng rng(mix_seed(seed, 0x7e7aULL));
    fill_normal(p, "user_emb", cfg_.emb_init_std, rng);
    fill_normal(p, "item_emb", cfg_.emb_init_std, rng);
    fill_glorot(p, "gcn_w", rng);
    fill_glorot(p, "gat_w", rng);
    fill_normal(p, "gat_a_self", 0.1, rng);
    fill_normal(p, "gat_a_nei", 0.1, rng);
    fill_glorot(p, "sage_w_self", rng);
    fill_glorot(p, "sage_w_nei", rng);
    fill_glorot(p, "linear_w", rng);
    for (size_t k = 0; k < cfg_.head_widths.size() + 1; ++k) {
      fill_glorot(p, "ctr_w" + std::to_string(k), rng);
      // biases stay zero
    }
    // arch logits start uniform (zeros)
    return p;
  }

  struct Stack {
    ad::Var h0, h1, h2;  // (U + I) x d
  };

  Stack forward_embeddings(ad::Tape<S>& t, const Bound<S>& theta) const {
    if (n_nodes_ == 0) throw std::invalid_argument("supernet: empty graph");
    ad::Var probs = masked_arch_probs(t, theta);
    Stack s;
    s.h0 = t.concat_rows(theta["user_emb"], theta["item_emb"]);
    s.h1 = mixed_layer(t, s.h0, 0, theta, probs);
    s.h2 = mixed_layer(t, s.h1, 1, theta, probs);
    return s;
  }

  // Softmax over the active candidate set, rows = layer * n_domains + domain.
  ad::Var masked_arch_probs(ad::Tape<S>& t, const Bound<S>& theta) const {
    ad::Var logits = theta["arch_logits"];
    if (!full_op_set_) logits = t.add(logits, t.constant(op_mask_.template cast<S>()));
    return t.softmax_rows(logits);
  }

  // One blended propagation step: sum over domains of the per-domain mixture.
  ad::Var mixed_layer(ad::Tape<S>& t, ad::Var h, int layer, const Bound<S>& theta,
                      ad::Var probs) const {
    ad::Var out;
    for (int d = 0; d < n_domains_; ++d) {
      ad::Var lam = t.constant(self_scale_[d].template cast<S>());
      for (OpKind o : cfg_.op_set) {
        ad::Var p = t.block(probs, layer * n_domains_ + d, static_cast<int>(o), 1, 1);
        ad::Var cand = apply_op(t, o, h, subsets_[d], theta, lam);
        ad::Var term = t.mul(cand, p);
        out = out.ok() ? t.add(out, term) : term;
      }
    }
    return out;
  }

  // One candidate operation on an edge subset. Normalization (degrees,
  // attention softmax, neighborhood means) is local to the subset. When
  // self_scale is valid it multiplies the edge-free pathways.
  ad::Var apply_op(ad::Tape<S>& t, OpKind kind, ad::Var h, const detail::SubsetConsts& sub,
                   const Bound<S>& theta, ad::Var self_scale = {}) const {
    if (t.value(h).rows() != n_nodes_)
      throw std::invalid_argument("supernet: node features do not cover the graph");
    switch (kind) {
      case OpKind::LIGHTGCN:
        return neighbor_sum(t, h, sub, sub.norm_coeff);
      case OpKind::GCN:
        return t.matmul(neighbor_sum(t, h, sub, sub.norm_coeff), theta["gcn_w"]);
      case OpKind::GAT: {
        ad::Var att = attention_sum(t, h, sub, theta);
        return t.matmul(att, theta["gat_w"]);
      }
      case OpKind::SAGE: {
        ad::Var mean = t.mul_colvec(neighbor_sum(t, h, sub, {}),
                                    t.constant(sub.inv_deg.template cast<S>()));
        ad::Var self = t.matmul(h, theta["sage_w_self"]);
        if (self_scale.ok()) self = t.mul_colvec(self, self_scale);
        return t.add(self, t.matmul(mean, theta["sage_w_nei"]));
      }
      case OpKind::LINEAR: {
        ad::Var out = t.matmul(h, theta["linear_w"]);
        if (self_scale.ok()) out = t.mul_colvec(out, self_scale);
        return out;
      }
    }
    throw std::invalid_argument("supernet: unknown op");
  }

  // Per-edge CTR logits for a batch, from the three-level readout.
  ad::Var batch_logits(ad::Tape<S>& t, const Stack& stack, const Bound<S>& theta,
                       const Batch& batch) const {
    auto urows = std::make_shared<std::vector<int>>();
    auto irows = std::make_shared<std::vector<int>>();
    for (size_t k = 0; k < batch.size(); ++k) {
      urows->push_back(batch.user[k]);
      irows->push_back(n_users_ + batch.item[k]);
    }
    ad::IdxPtr ui = urows, ii = irows;
    ad::Var x = t.concat_cols(t.gather_rows(stack.h0, ui), t.gather_rows(stack.h1, ui));
    x = t.concat_cols(x, t.gather_rows(stack.h2, ui));
    x = t.concat_cols(x, t.gather_rows(stack.h0, ii));
    x = t.concat_cols(x, t.gather_rows(stack.h1, ii));
    x = t.concat_cols(x, t.gather_rows(stack.h2, ii));
    return head_logits(t, x, theta);
  }

  ad::Var head_logits(ad::Tape<S>& t, ad::Var features, const Bound<S>& theta) const {
    ad::Var x = features;
    for (size_t k = 0; k < cfg_.head_widths.size(); ++k) {
      x = t.relu(t.add_rowvec(t.matmul(x, theta["ctr_w" + std::to_string(k)]),
                              theta["ctr_b" + std::to_string(k)]));
    }
    const std::string last = std::to_string(cfg_.head_widths.size());
    return t.add_rowvec(t.matmul(x, theta["ctr_w" + last]), theta["ctr_b" + last]);
  }

  // ---- value-level conveniences (tests, evaluation, reporting) ----------

  ad::Mat<S> candidate_op_values(OpKind kind, const ad::Mat<S>& h,
                                 const InteractionGraph::EdgeList& edges,
                                 const ParamVector<S>& theta) const {
    ad::Tape<S> t;
    Bound<S> b = bind_constants(t, theta);
    auto sub = detail::build_subset(edges, n_users_, n_nodes_);
    return t.value(apply_op(t, kind, t.constant(h), sub, b));
  }

  ad::Mat<S> mixed_layer_values(const ad::Mat<S>& h, int layer,
                                const ParamVector<S>& theta) const {
    ad::Tape<S> t;
    Bound<S> b = bind_constants(t, theta);
    ad::Var probs = masked_arch_probs(t, b);
    return t.value(mixed_layer(t, t.constant(h), layer, b, probs));
  }

  std::vector<ad::Mat<S>> forward_values(const ParamVector<S>& theta) const {
    ad::Tape<S> t;
    Bound<S> b = bind_constants(t, theta);
    Stack s = forward_embeddings(t, b);
    return {t.value(s.h0), t.value(s.h1), t.value(s.h2)};
  }

  // Probability for one user-item feature vector (the spec-level predictor).
  S predict_ctr(const Eigen::VectorXd& features, const ParamVector<S>& theta) const {
    const int want = 6 * cfg_.hidden_dim;
    if (features.size() != want)
      throw std::invalid_argument("predict_ctr: feature width " +
                                  std::to_string(features.size()) + ", expected " +
                                  std::to_string(want));
    ad::Tape<S> t;
    Bound<S> b = bind_constants(t, theta);
    ad::Mat<S> row = features.transpose().template cast<S>();
    ad::Var logit = head_logits(t, t.constant(row), b);
    // keep the probability strictly inside (0, 1) even when sigmoid saturates
    const S eps = std::numeric_limits<S>::epsilon();
    return std::min(S(1) - eps, std::max(eps, t.value(t.sigmoid(logit))(0, 0)));
  }

  std::vector<double> batch_scores(const ParamVector<S>& theta, const Batch& batch) const {
    ad::Tape<S> t;
    Bound<S> b = bind_constants(t, theta);
    Stack s = forward_embeddings(t, b);
    ad::Var probs = t.sigmoid(batch_logits(t, s, b, batch));
    const auto& m = t.value(probs);
    std::vector<double> out(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] = static_cast<double>(m(i, 0));
    return out;
  }

  // Softmaxed mixture weights honoring the active op set; rows as in logits.
  Eigen::MatrixXd arch_mixtures(const ParamVector<S>& theta) const {
    Eigen::MatrixXd logits = theta.group("arch_logits").template cast<double>();
    if (!full_op_set_) logits += op_mask_;
    return arch_probs_all(logits);
  }

  // Restricts the argmax to the active op set and freezes an exact one-hot.
  void discretize_into(ParamVector<S>& theta) const {
    Eigen::MatrixXd logits = theta.group("arch_logits").template cast<double>();
    if (!full_op_set_) logits += op_mask_;
    theta.set_group("arch_logits", discretize_arch(logits).template cast<S>());
  }

  void set_manual_arch(ParamVector<S>& theta, OpKind op) const {
    Eigen::MatrixXd logits =
        Eigen::MatrixXd::Constant(2 * n_domains_, kNumOps, kMaskedLogit);
    logits.col(static_cast<int>(op)).setZero();
    theta.set_group("arch_logits", logits.template cast<S>());
  }

  Bound<S> bind_constants(ad::Tape<S>& t, const ParamVector<S>& theta) const {
    std::set<std::string> all;
    for (const auto& g : theta.layout->groups()) all.insert(g.name);
    return bind_params(t, theta, static_cast<const ParamVector<S>*>(nullptr), &all);
  }

 private:
  ad::Var neighbor_sum(ad::Tape<S>& t, ad::Var h, const detail::SubsetConsts& sub,
                       const Eigen::MatrixXd& coeff) const {
    ad::Var to_users = t.gather_rows(h, sub.e_item);
    ad::Var to_items = t.gather_rows(h, sub.e_user);
    if (coeff.size() > 0) {
      ad::Var c = t.constant(coeff.template cast<S>());
      to_users = t.mul_colvec(to_users, c);
      to_items = t.mul_colvec(to_items, c);
    }
    return t.add(t.scatter_add_rows(to_users, sub.e_user, n_nodes_),
                 t.scatter_add_rows(to_items, sub.e_item, n_nodes_));
  }

  ad::Var attention_sum(ad::Tape<S>& t, ad::Var h, const detail::SubsetConsts& sub,
                        const Bound<S>& theta) const {
    ad::Var s_self = t.matmul(h, theta["gat_a_self"]);
    ad::Var s_nei = t.matmul(h, theta["gat_a_nei"]);
    // items -> users
    ad::Var e1 = t.leaky_relu(
        t.add(t.gather_rows(s_self, sub.e_user), t.gather_rows(s_nei, sub.e_item)), S(0.2));
    ad::Var a1 = t.segment_softmax(e1, sub.e_user, n_nodes_);
    ad::Var m1 = t.scatter_add_rows(t.mul_colvec(t.gather_rows(h, sub.e_item), a1), sub.e_user,
                                    n_nodes_);
    // users -> items
    ad::Var e2 = t.leaky_relu(
        t.add(t.gather_rows(s_self, sub.e_item), t.gather_rows(s_nei, sub.e_user)), S(0.2));
    ad::Var a2 = t.segment_softmax(e2, sub.e_item, n_nodes_);
    ad::Var m2 = t.scatter_add_rows(t.mul_colvec(t.gather_rows(h, sub.e_user), a2), sub.e_item,
                                    n_nodes_);
    return t.add(m1, m2);
  }

  void build_self_scales(const InteractionGraph& graph) {
    // users: per-domain share of the user's train-click degree (uniform when
    // isolated); items: one-hot on their own domain
    Eigen::MatrixXd deg = Eigen::MatrixXd::Zero(n_nodes_, n_domains_);
    for (int d = 0; d < n_domains_; ++d) {
      const auto& el = graph.train_clicks(d);
      for (size_t k = 0; k < el.size(); ++k) deg(el.user[k], d) += 1.0;
    }
    for (int d = 0; d < n_domains_; ++d) {
      Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(n_nodes_, 1);
      for (int u = 0; u < n_users_; ++u) {
        const double total = deg.row(u).sum();
        lam(u, 0) = total > 0 ? deg(u, d) / total : 1.0 / n_domains_;
      }
      for (int i = 0; i < n_items_; ++i)
        lam(n_users_ + i, 0) = graph.item_domain(i) == d ? 1.0 : 0.0;
      self_scale_.push_back(std::move(lam));
    }
  }

  void build_layout() {
    auto l = std::make_shared<Layout>();
    const int d = cfg_.hidden_dim;
    l->add("user_emb", n_users_, d);
    l->add("item_emb", n_items_, d);
    l->add("gcn_w", d, d);
    l->add("gat_w", d, d);
    l->add("gat_a_self", d, 1);
    l->add("gat_a_nei", d, 1);
    l->add("sage_w_self", d, d);
    l->add("sage_w_nei", d, d);
    l->add("linear_w", d, d);
    int in = 6 * d;
    for (size_t k = 0; k < cfg_.head_widths.size(); ++k) {
      l->add("ctr_w" + std::to_string(k), in, cfg_.head_widths[k]);
      l->add("ctr_b" + std::to_string(k), 1, cfg_.head_widths[k]);
      in = cfg_.head_widths[k];
    }
    const std::string last = std::to_string(cfg_.head_widths.size());
    l->add("ctr_w" + last, in, 1);
    l->add("ctr_b" + last, 1, 1);
    l->add("arch_logits", 2 * n_domains_, kNumOps);
    layout_ = LayoutPtr(l);
  }

  void build_op_mask() {
    full_op_set_ = cfg_.op_set.size() == static_cast<size_t>(kNumOps);
    op_mask_ = Eigen::MatrixXd::Constant(2 * n_domains_, kNumOps, kMaskedLogit);
    for (OpKind o : cfg_.op_set) op_mask_.col(static_cast<int>(o)).setZero();
  }

  void fill_normal(ParamVector<S>& p, const std::string& name, double std, Rng& rng) const {
    auto g = p.group(name);
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = static_cast<S>(rng.normal() * std);
  }

  void fill_glorot(ParamVector<S>& p, const std::string& name, Rng& rng) const {
    auto g = p.group(name);
    const double std = std::sqrt(2.0 / static_cast<double>(g.rows() + g.cols()));
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = static_cast<S>(rng.normal() * std);
  }

  ModelConfig cfg_;
  int n_users_, n_items_, n_domains_, n_nodes_;
  LayoutPtr layout_;
  std::vector<detail::SubsetConsts> subsets_;
  std::vector<Eigen::MatrixXd> self_scale_;  // per domain, V x 1
  Eigen::MatrixXd op_mask_;
  bool full_op_set_ = true;
};

}  // namespace cdnas
