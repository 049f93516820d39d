// Graph-based behavior importance perceptron (the outer-level model):
// a per-source-domain scalar, an item-global MLP over supernet embeddings,
// and a user-specific head on top of the perceptron's own two-layer
// GraphSAGE, combined into strictly positive per-interaction loss weights.
#pragma once

#include <string>
#include <vector>

#include "cdnas/supernet.hpp"

namespace cdnas {

// gamma = gamma_S * raw / mean(batch_raws) with raw = logistic(gamma_v * gamma_uv).
// batch_raws must hold the raw outputs of every source edge in the batch.
double combine_importance(double gamma_S, double gamma_v, double gamma_uv,
                          const std::vector<double>& batch_raws);

// L_main over one batch: target terms enter unweighted, source terms scaled by
// their importance weight, averaged by total batch size. source_weights is
// aligned with the source edges in batch order.
double weighted_main_loss(const std::vector<double>& predictions, const std::vector<int>& labels,
                          const std::vector<std::string>& domains,
                          const std::vector<double>& source_weights, const DomainSpec& spec);

template <typename S>
class PerceptronModel {
 public:
  PerceptronModel(const InteractionGraph& graph, ModelConfig cfg)
      : cfg_(std::move(cfg)),
        n_users_(graph.n_users()),
        n_items_(graph.n_items()),
        n_nodes_(graph.n_users() + graph.n_items()),
        n_sources_(graph.n_domains() - 1),
        sub_(detail::build_subset(graph.train_clicks_all(), graph.n_users(), n_nodes_)) {
    if (n_sources_ < 1)
      throw std::invalid_argument("perceptron: needs at least one source domain");
    build_layout();
  }

  const LayoutPtr& phi_layout() const { return layout_; }
  int n_sources() const { return n_sources_; }

  ParamVector<S> init_phi(uint64_t seed) const {
    ParamVector<S> p(layout_);
    Rng rng(mix_seed(seed, 0x9e4cULL));
    p.group("gamma_domain").setOnes();
    fill_normal(p, "pcp_user_emb", cfg_.emb_init_std, rng);
    fill_normal(p, "pcp_item_emb", cfg_.emb_init_std, rng);
    for (const char* name : {"sage1_self", "sage1_nei", "sage2_self", "sage2_nei", "item_w0",
                             "item_w1", "pair_w0", "pair_w1"})
      fill_glorot(p, name, rng);
    // Output biases start at one so each head's gradient is not throttled by
    // the other head's near-zero output (the product sigma(gamma_v*gamma_uv)
    // has a saddle at the all-zero origin). The batch-mean normalization
    // keeps the initial weights at gamma_S either way.
    p.group("item_b1").setOnes();
    p.group("pair_b1").setOnes();
    return p;
  }

  // Two GraphSAGE layers (mean aggregator, rectifier between layers) over the
  // full train-click graph, on the perceptron's own embeddings.
  ad::Var node_representations(ad::Tape<S>& t, const Bound<S>& phi) const {
    ad::Var h0 = t.concat_rows(phi["pcp_user_emb"], phi["pcp_item_emb"]);
    ad::Var h1 = t.relu(sage_layer(t, h0, phi["sage1_self"], phi["sage1_nei"]));
    return sage_layer(t, h1, phi["sage2_self"], phi["sage2_nei"]);
  }

  // Item-global scalar head; item_embs carries one supernet item embedding
  // per row (detached upstream so gamma stays constant in theta).
  ad::Var item_global_weight(ad::Tape<S>& t, ad::Var item_embs, const Bound<S>& phi) const {
    ad::Var h = t.relu(t.add_rowvec(t.matmul(item_embs, phi["item_w0"]), phi["item_b0"]));
    return t.add_rowvec(t.matmul(h, phi["item_w1"]), phi["item_b1"]);
  }

  // Pair head on concatenated user/item representations.
  ad::Var pair_weight(ad::Tape<S>& t, ad::Var reps, const ad::IdxPtr& user_rows,
                      const ad::IdxPtr& item_rows, const Bound<S>& phi) const {
    ad::Var x = t.concat_cols(t.gather_rows(reps, user_rows), t.gather_rows(reps, item_rows));
    ad::Var h = t.relu(t.add_rowvec(t.matmul(x, phi["pair_w0"]), phi["pair_b0"]));
    return t.add_rowvec(t.matmul(h, phi["pair_w1"]), phi["pair_b1"]);
  }

  // Per-source-edge importance weights: domain scalar times the batch-mean
  // normalized logistic of the item and pair products. The product is clamped
  // to +/-10 so the raws stay bounded away from 0 and the mean normalization
  // remains well-conditioned in single precision.
  ad::Var importance_weights(ad::Tape<S>& t, ad::Var gamma_v, ad::Var gamma_uv,
                             const ad::IdxPtr& source_index, const Bound<S>& phi) const {
    ad::Var raw = t.sigmoid(t.clamp_sym(t.mul(gamma_v, gamma_uv), S(10)));
    ad::Var normalized = t.div(raw, t.mean_all(raw));
    ad::Var gs = t.gather_rows(phi["gamma_domain"], source_index);
    return t.mul(gs, normalized);
  }

  // ---- value-level spec operations --------------------------------------

  double item_global_weight_value(const Eigen::VectorXd& item_embedding,
                                  const ParamVector<S>& phi) const {
    if (item_embedding.size() != cfg_.hidden_dim)
      throw std::invalid_argument("item_global_weight: embedding width mismatch");
    ad::Tape<S> t;
    Bound<S> b = bind_const(t, phi);
    ad::Mat<S> row = item_embedding.transpose().template cast<S>();
    return static_cast<double>(t.value(item_global_weight(t, t.constant(row), b))(0, 0));
  }

  double user_item_weight_value(int user, int item, const ParamVector<S>& phi) const {
    if (user < 0 || user >= n_users_ || item < 0 || item >= n_items_)
      throw std::invalid_argument("user_item_weight: node absent from the train graph");
    ad::Tape<S> t;
    Bound<S> b = bind_const(t, phi);
    ad::Var reps = node_representations(t, b);
    auto u = ad::make_index({user});
    auto i = ad::make_index({n_users_ + item});
    return static_cast<double>(t.value(pair_weight(t, reps, u, i, b))(0, 0));
  }

  Bound<S> bind_const(ad::Tape<S>& t, const ParamVector<S>& phi) const {
    std::set<std::string> all;
    for (const auto& g : phi.layout->groups()) all.insert(g.name);
    return bind_params(t, phi, static_cast<const ParamVector<S>*>(nullptr), &all);
  }

 private:
  ad::Var sage_layer(ad::Tape<S>& t, ad::Var h, ad::Var w_self, ad::Var w_nei) const {
    ad::Var to_users = t.gather_rows(h, sub_.e_item);
    ad::Var to_items = t.gather_rows(h, sub_.e_user);
    ad::Var sum = t.add(t.scatter_add_rows(to_users, sub_.e_user, n_nodes_),
                        t.scatter_add_rows(to_items, sub_.e_item, n_nodes_));
    ad::Var mean = t.mul_colvec(sum, t.constant(sub_.inv_deg.template cast<S>()));
    return t.add(t.matmul(h, w_self), t.matmul(mean, w_nei));
  }

  void build_layout() {
    auto l = std::make_shared<Layout>();
    const int dp = cfg_.perceptron_dim;
    const int ph = cfg_.perceptron_hidden;
    l->add("gamma_domain", n_sources_, 1);
    l->add("item_w0", cfg_.hidden_dim, ph);
    l->add("item_b0", 1, ph);
    l->add("item_w1", ph, 1);
    l->add("item_b1", 1, 1);
    l->add("pcp_user_emb", n_users_, dp);
    l->add("pcp_item_emb", n_items_, dp);
    l->add("sage1_self", dp, dp);
    l->add("sage1_nei", dp, dp);
    l->add("sage2_self", dp, dp);
    l->add("sage2_nei", dp, dp);
    l->add("pair_w0", 2 * dp, ph);
    l->add("pair_b0", 1, ph);
    l->add("pair_w1", ph, 1);
    l->add("pair_b1", 1, 1);
    layout_ = LayoutPtr(l);
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
  int n_users_, n_items_, n_nodes_, n_sources_;
  detail::SubsetConsts sub_;
  LayoutPtr layout_;
};

}  // namespace cdnas
