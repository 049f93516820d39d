#include "cdnas/supernet.hpp"

#include <stdexcept>

namespace cdnas {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::GCN: return "GCN";
    case OpKind::GAT: return "GAT";
    case OpKind::SAGE: return "SAGE";
    case OpKind::LIGHTGCN: return "LIGHTGCN";
    case OpKind::LINEAR: return "LINEAR";
  }
  return "?";
}

OpKind parse_op(const std::string& name) {
  for (OpKind k : all_ops())
    if (name == op_name(k)) return k;
  throw std::invalid_argument("unknown candidate op '" + name + "'");
}

std::vector<OpKind> all_ops() {
  return {OpKind::GCN, OpKind::GAT, OpKind::SAGE, OpKind::LIGHTGCN, OpKind::LINEAR};
}

Eigen::MatrixXd arch_probs_all(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    Eigen::ArrayXd e = (logits.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

Eigen::VectorXd arch_probs(const Eigen::MatrixXd& logits, int layer, int domain, int n_domains) {
  const Eigen::Index row = static_cast<Eigen::Index>(layer) * n_domains + domain;
  if (row < 0 || row >= logits.rows())
    throw std::invalid_argument("arch_probs: layer/domain out of range");
  return arch_probs_all(logits).row(row).transpose();
}

Eigen::MatrixXd discretize_arch(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(logits.rows(), logits.cols(), kMaskedLogit);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;  // ties keep the lowest index
    out(r, best) = 0.0;
  }
  return out;
}

Eigen::VectorXd concat_multi_order(const EmbeddingStack& user_stack,
                                   const EmbeddingStack& item_stack) {
  if (user_stack.levels.size() != 3 || item_stack.levels.size() != 3)
    throw std::invalid_argument("concat_multi_order: stacks must have exactly 3 levels");
  const Eigen::Index d = user_stack.levels[0].size();
  for (const auto& v : user_stack.levels)
    if (v.size() != d) throw std::invalid_argument("concat_multi_order: level width mismatch");
  for (const auto& v : item_stack.levels)
    if (v.size() != d) throw std::invalid_argument("concat_multi_order: level width mismatch");
  Eigen::VectorXd out(6 * d);
  for (int k = 0; k < 3; ++k) out.segment(k * d, d) = user_stack.levels[k];
  for (int k = 0; k < 3; ++k) out.segment((3 + k) * d, d) = item_stack.levels[k];
  return out;
}

namespace detail {

SubsetConsts build_subset(const InteractionGraph::EdgeList& edges, int n_users, int n_nodes) {
  SubsetConsts sub;
  sub.n_nodes = n_nodes;
  auto eu = std::make_shared<std::vector<int>>();
  auto ei = std::make_shared<std::vector<int>>();
  eu->reserve(edges.size());
  ei->reserve(edges.size());
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(n_nodes);
  for (size_t k = 0; k < edges.size(); ++k) {
    const int u = edges.user[k];
    const int i = n_users + edges.item[k];
    if (u < 0 || u >= n_nodes || i < 0 || i >= n_nodes)
      throw std::invalid_argument("subset: edge endpoint outside the graph");
    eu->push_back(u);
    ei->push_back(i);
    deg[u] += 1.0;
    deg[i] += 1.0;
  }
  sub.e_user = eu;
  sub.e_item = ei;
  sub.norm_coeff.resize(static_cast<Eigen::Index>(edges.size()), 1);
  for (size_t k = 0; k < edges.size(); ++k)
    sub.norm_coeff(static_cast<Eigen::Index>(k), 0) =
        1.0 / std::sqrt(deg[(*eu)[k]] * deg[(*ei)[k]]);
  sub.inv_deg.resize(n_nodes, 1);
  for (int v = 0; v < n_nodes; ++v) sub.inv_deg(v, 0) = deg[v] > 0 ? 1.0 / deg[v] : 0.0;
  return sub;
}

}  // namespace detail

}  // namespace cdnas
