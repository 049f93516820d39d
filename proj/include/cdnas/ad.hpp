// Reverse-mode automatic differentiation on dense matrices, with an optional
// forward-mode tangent carried through both the forward and the backward
// sweep. Running the whole computation in dual numbers makes the adjoint of a
// leaf carry d/dt[grad(x + t*v)] in its tangent slot, which yields exact
// Hessian-vector products and mixed second-order vector-Jacobian products
// without ever materializing a Hessian.
//
// Values are evaluated eagerly as nodes are created; backward() runs one
// reverse sweep and accumulates adjoints (and adjoint tangents when the tape
// was built with tangents enabled).
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdnas::ad {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using IdxPtr = std::shared_ptr<const std::vector<int>>;

inline IdxPtr make_index(std::vector<int> v) {
  return std::make_shared<const std::vector<int>>(std::move(v));
}

struct Var {
  int id = -1;
  bool ok() const { return id >= 0; }
};

enum class OpK : uint8_t {
  Leaf,
  Const,
  Add,
  Sub,
  Neg,
  Scale,
  Mul,       // elementwise; either side may be 1x1
  Div,       // elementwise; denominator may be 1x1
  MatMul,
  GatherRows,
  ScatterAddRows,
  ConcatRows,
  ConcatCols,
  Block,
  AddRowVec,  // a (r x c) + b (1 x c) broadcast down rows
  MulColVec,  // a (r x c) * v (r x 1) broadcast across cols
  DivColVec,
  SubColVec,
  SumAll,
  SumCols,  // row-wise sum -> (r x 1)
  Relu,
  LeakyRelu,
  Sigmoid,
  Softplus,
  Log,
  Exp,
};

template <typename S>
class Tape {
 public:
  explicit Tape(bool with_tangent = false) : with_tangent_(with_tangent) {}

  bool with_tangent() const { return with_tangent_; }
  size_t size() const { return nodes_.size(); }

  Var leaf(Mat<S> value) {
    Node n;
    n.op = OpK::Leaf;
    n.value = std::move(value);
    n.requires_grad = true;
    if (with_tangent_) n.tangent = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return push(std::move(n));
  }

  Var leaf(Mat<S> value, Mat<S> tangent) {
    if (!with_tangent_) throw std::logic_error("ad: tangent leaf on a tape without tangents");
    if (value.rows() != tangent.rows() || value.cols() != tangent.cols())
      throw std::invalid_argument("ad: leaf tangent shape mismatch");
    Node n;
    n.op = OpK::Leaf;
    n.value = std::move(value);
    n.tangent = std::move(tangent);
    n.requires_grad = true;
    return push(std::move(n));
  }

  Var constant(Mat<S> value) {
    Node n;
    n.op = OpK::Const;
    n.value = std::move(value);
    n.requires_grad = false;
    if (with_tangent_) n.tangent = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return push(std::move(n));
  }

  Var constant_scalar(S v) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  const Mat<S>& value(Var v) const { return node(v).value; }
  const Mat<S>& tangent(Var v) const { return node(v).tangent; }

  // ---- primitive operations -------------------------------------------

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Node n = binary(OpK::Add, a, b);
    n.value = node(a).value + node(b).value;
    if (with_tangent_) n.tangent = node(a).tangent + node(b).tangent;
    return push(std::move(n));
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Node n = binary(OpK::Sub, a, b);
    n.value = node(a).value - node(b).value;
    if (with_tangent_) n.tangent = node(a).tangent - node(b).tangent;
    return push(std::move(n));
  }

  Var neg(Var a) {
    Node n = unary(OpK::Neg, a);
    n.value = -node(a).value;
    if (with_tangent_) n.tangent = -node(a).tangent;
    return push(std::move(n));
  }

  Var scale(Var a, S c) {
    Node n = unary(OpK::Scale, a);
    n.scalar = c;
    n.value = node(a).value * c;
    if (with_tangent_) n.tangent = node(a).tangent * c;
    return push(std::move(n));
  }

  Var mul(Var a, Var b) {
    const bool as = is_scalar(a), bs = is_scalar(b);
    if (!as && !bs) check_same_shape(a, b, "mul");
    Node n = binary(OpK::Mul, a, b);
    const auto& A = node(a).value;
    const auto& B = node(b).value;
    if (bs && !as) {
      n.value = A * B(0, 0);
      if (with_tangent_) n.tangent = node(a).tangent * B(0, 0) + A * node(b).tangent(0, 0);
    } else if (as && !bs) {
      n.value = B * A(0, 0);
      if (with_tangent_) n.tangent = node(b).tangent * A(0, 0) + B * node(a).tangent(0, 0);
    } else {
      n.value = A.cwiseProduct(B);
      if (with_tangent_)
        n.tangent = node(a).tangent.cwiseProduct(B) + A.cwiseProduct(node(b).tangent);
    }
    return push(std::move(n));
  }

  Var div(Var a, Var b) {
    const bool bs = is_scalar(b);
    if (!bs) check_same_shape(a, b, "div");
    Node n = binary(OpK::Div, a, b);
    const auto& A = node(a).value;
    const auto& B = node(b).value;
    if (bs) {
      n.value = A / B(0, 0);
      if (with_tangent_)
        n.tangent = node(a).tangent / B(0, 0) - n.value * (node(b).tangent(0, 0) / B(0, 0));
    } else {
      n.value = A.cwiseQuotient(B);
      if (with_tangent_)
        n.tangent =
            (node(a).tangent - n.value.cwiseProduct(node(b).tangent)).cwiseQuotient(B);
    }
    return push(std::move(n));
  }

  Var matmul(Var a, Var b) {
    if (node(a).value.cols() != node(b).value.rows())
      throw std::invalid_argument("ad: matmul inner dimension mismatch");
    Node n = binary(OpK::MatMul, a, b);
    n.value.noalias() = node(a).value * node(b).value;
    if (with_tangent_) {
      n.tangent.noalias() = node(a).tangent * node(b).value;
      n.tangent.noalias() += node(a).value * node(b).tangent;
    }
    return push(std::move(n));
  }

  Var gather_rows(Var a, IdxPtr idx) {
    Node n = unary(OpK::GatherRows, a);
    n.idx = std::move(idx);
    const auto& A = node(a).value;
    const auto& I = *n.idx;
    n.value.resize(static_cast<Eigen::Index>(I.size()), A.cols());
    for (size_t k = 0; k < I.size(); ++k) n.value.row(static_cast<Eigen::Index>(k)) = A.row(I[k]);
    if (with_tangent_) {
      const auto& T = node(a).tangent;
      n.tangent.resize(n.value.rows(), n.value.cols());
      for (size_t k = 0; k < I.size(); ++k)
        n.tangent.row(static_cast<Eigen::Index>(k)) = T.row(I[k]);
    }
    return push(std::move(n));
  }

  // Rows of `a` summed into a zero (out_rows x cols) matrix at positions idx.
  Var scatter_add_rows(Var a, IdxPtr idx, int out_rows) {
    if (static_cast<size_t>(node(a).value.rows()) != idx->size())
      throw std::invalid_argument("ad: scatter_add_rows index count mismatch");
    Node n = unary(OpK::ScatterAddRows, a);
    n.idx = std::move(idx);
    n.aux0 = out_rows;
    const auto& A = node(a).value;
    const auto& I = *n.idx;
    n.value = Mat<S>::Zero(out_rows, A.cols());
    for (size_t k = 0; k < I.size(); ++k) n.value.row(I[k]) += A.row(static_cast<Eigen::Index>(k));
    if (with_tangent_) {
      const auto& T = node(a).tangent;
      n.tangent = Mat<S>::Zero(out_rows, A.cols());
      for (size_t k = 0; k < I.size(); ++k)
        n.tangent.row(I[k]) += T.row(static_cast<Eigen::Index>(k));
    }
    return push(std::move(n));
  }

  Var concat_rows(Var a, Var b) {
    if (node(a).value.cols() != node(b).value.cols())
      throw std::invalid_argument("ad: concat_rows column mismatch");
    Node n = binary(OpK::ConcatRows, a, b);
    n.value.resize(node(a).value.rows() + node(b).value.rows(), node(a).value.cols());
    n.value << node(a).value, node(b).value;
    if (with_tangent_) {
      n.tangent.resize(n.value.rows(), n.value.cols());
      n.tangent << node(a).tangent, node(b).tangent;
    }
    return push(std::move(n));
  }

  Var concat_cols(Var a, Var b) {
    if (node(a).value.rows() != node(b).value.rows())
      throw std::invalid_argument("ad: concat_cols row mismatch");
    Node n = binary(OpK::ConcatCols, a, b);
    n.value.resize(node(a).value.rows(), node(a).value.cols() + node(b).value.cols());
    n.value << node(a).value, node(b).value;
    if (with_tangent_) {
      n.tangent.resize(n.value.rows(), n.value.cols());
      n.tangent << node(a).tangent, node(b).tangent;
    }
    return push(std::move(n));
  }

  Var block(Var a, int r0, int c0, int rows, int cols) {
    const auto& A = node(a).value;
    if (r0 < 0 || c0 < 0 || r0 + rows > A.rows() || c0 + cols > A.cols())
      throw std::invalid_argument("ad: block out of range");
    Node n = unary(OpK::Block, a);
    n.aux0 = r0;
    n.aux1 = c0;
    n.aux2 = rows;
    n.aux3 = cols;
    n.value = A.block(r0, c0, rows, cols);
    if (with_tangent_) n.tangent = node(a).tangent.block(r0, c0, rows, cols);
    return push(std::move(n));
  }

  Var add_rowvec(Var a, Var b) {
    if (node(b).value.rows() != 1 || node(b).value.cols() != node(a).value.cols())
      throw std::invalid_argument("ad: add_rowvec expects b of shape 1 x cols(a)");
    Node n = binary(OpK::AddRowVec, a, b);
    n.value = node(a).value.rowwise() + node(b).value.row(0);
    if (with_tangent_) n.tangent = node(a).tangent.rowwise() + node(b).tangent.row(0);
    return push(std::move(n));
  }

  Var mul_colvec(Var a, Var v) {
    check_colvec(a, v, "mul_colvec");
    Node n = binary(OpK::MulColVec, a, v);
    n.value = (node(a).value.array().colwise() * node(v).value.col(0).array()).matrix();
    if (with_tangent_)
      n.tangent = (node(a).tangent.array().colwise() * node(v).value.col(0).array()).matrix() +
                  (node(a).value.array().colwise() * node(v).tangent.col(0).array()).matrix();
    return push(std::move(n));
  }

  Var div_colvec(Var a, Var v) {
    check_colvec(a, v, "div_colvec");
    Node n = binary(OpK::DivColVec, a, v);
    n.value = (node(a).value.array().colwise() / node(v).value.col(0).array()).matrix();
    if (with_tangent_) {
      Mat<S> num =
          node(a).tangent -
          (n.value.array().colwise() * node(v).tangent.col(0).array()).matrix();
      n.tangent = (num.array().colwise() / node(v).value.col(0).array()).matrix();
    }
    return push(std::move(n));
  }

  Var sub_colvec(Var a, Var v) {
    check_colvec(a, v, "sub_colvec");
    Node n = binary(OpK::SubColVec, a, v);
    n.value = (node(a).value.array().colwise() - node(v).value.col(0).array()).matrix();
    if (with_tangent_)
      n.tangent = (node(a).tangent.array().colwise() - node(v).tangent.col(0).array()).matrix();
    return push(std::move(n));
  }

  Var sum_all(Var a) {
    Node n = unary(OpK::SumAll, a);
    n.value.resize(1, 1);
    n.value(0, 0) = node(a).value.sum();
    if (with_tangent_) {
      n.tangent.resize(1, 1);
      n.tangent(0, 0) = node(a).tangent.sum();
    }
    return push(std::move(n));
  }

  Var sum_cols(Var a) {
    Node n = unary(OpK::SumCols, a);
    n.value = node(a).value.rowwise().sum();
    if (with_tangent_) n.tangent = node(a).tangent.rowwise().sum();
    return push(std::move(n));
  }

  Var relu(Var a) {
    Node n = unary(OpK::Relu, a);
    n.value = node(a).value.cwiseMax(S(0));
    if (with_tangent_)
      n.tangent =
          ((node(a).value.array() > S(0)).template cast<S>() * node(a).tangent.array()).matrix();
    return push(std::move(n));
  }

  Var leaky_relu(Var a, S slope) {
    Node n = unary(OpK::LeakyRelu, a);
    n.scalar = slope;
    const auto mask = (node(a).value.array() > S(0)).template cast<S>();
    n.value = (mask * node(a).value.array() + (S(1) - mask) * slope * node(a).value.array()).matrix();
    if (with_tangent_)
      n.tangent =
          (mask * node(a).tangent.array() + (S(1) - mask) * slope * node(a).tangent.array()).matrix();
    return push(std::move(n));
  }

  Var sigmoid(Var a) {
    Node n = unary(OpK::Sigmoid, a);
    n.value = node(a).value.unaryExpr([](S z) { return stable_sigmoid(z); });
    if (with_tangent_)
      n.tangent = (n.value.array() * (S(1) - n.value.array()) * node(a).tangent.array()).matrix();
    return push(std::move(n));
  }

  Var softplus(Var a) {
    Node n = unary(OpK::Softplus, a);
    n.value = node(a).value.unaryExpr([](S z) { return stable_softplus(z); });
    if (with_tangent_) {
      Mat<S> s = node(a).value.unaryExpr([](S z) { return stable_sigmoid(z); });
      n.tangent = s.cwiseProduct(node(a).tangent);
    }
    return push(std::move(n));
  }

  Var log(Var a) {
    Node n = unary(OpK::Log, a);
    n.value = node(a).value.array().log().matrix();
    if (with_tangent_) n.tangent = node(a).tangent.cwiseQuotient(node(a).value);
    return push(std::move(n));
  }

  Var exp(Var a) {
    Node n = unary(OpK::Exp, a);
    n.value = node(a).value.array().exp().matrix();
    if (with_tangent_) n.tangent = n.value.cwiseProduct(node(a).tangent);
    return push(std::move(n));
  }

  // ---- composed helpers ------------------------------------------------

  Var mean_all(Var a) {
    const auto& A = node(a).value;
    return scale(sum_all(a), S(1) / static_cast<S>(A.rows() * A.cols()));
  }

  // Row-wise softmax, shifted by the (detached) row maximum. The shift leaves
  // the function value and all derivatives unchanged.
  Var softmax_rows(Var a) {
    Mat<S> rowmax = node(a).value.rowwise().maxCoeff();
    Var shifted = sub_colvec(a, constant(std::move(rowmax)));
    Var e = exp(shifted);
    return div_colvec(e, sum_cols(e));
  }

  // Softmax of a column of scores within segments given by `seg` (one id per
  // row, ids in [0, n_segments)).
  Var segment_softmax(Var scores, IdxPtr seg, int n_segments) {
    const auto& V = node(scores).value;
    if (V.cols() != 1 || static_cast<size_t>(V.rows()) != seg->size())
      throw std::invalid_argument("ad: segment_softmax expects a column of per-row scores");
    Mat<S> segmax = Mat<S>::Constant(n_segments, 1, std::numeric_limits<S>::lowest());
    for (size_t k = 0; k < seg->size(); ++k) {
      const int s = (*seg)[k];
      segmax(s, 0) = std::max(segmax(s, 0), V(static_cast<Eigen::Index>(k), 0));
    }
    Var shift = gather_rows(constant(std::move(segmax)), seg);
    Var e = exp(sub(scores, shift));
    Var denom = gather_rows(scatter_add_rows(e, seg, n_segments), seg);
    return div(e, denom);
  }

  // Per-element binary cross-entropy from logits: softplus(z) - y .* z.
  // Labels enter as constants; soft labels in [0,1] are permitted.
  Var bce_with_logits(Var logits, Mat<S> labels) {
    if (labels.rows() != node(logits).value.rows() || labels.cols() != node(logits).value.cols())
      throw std::invalid_argument("ad: bce_with_logits label shape mismatch");
    Var y = constant(std::move(labels));
    return sub(softplus(logits), mul(y, logits));
  }

  Var detach(Var a) { return constant(node(a).value); }

  // Clamp to [-c, c] via relu(z + c) - c - relu(z - c): identity inside the
  // band, flat outside.
  Var clamp_sym(Var a, S c) {
    Var shifted = relu(add(a, constant_like(a, c)));
    Var upper = relu(sub(a, constant_like(a, c)));
    return sub(sub(shifted, constant_like(a, c)), upper);
  }

  Var constant_like(Var a, S fill) {
    return constant(Mat<S>::Constant(node(a).value.rows(), node(a).value.cols(), fill));
  }

  // ---- backward --------------------------------------------------------

  void backward(Var root) {
    const Node& r = node(root);
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw std::invalid_argument("ad: backward root must be scalar");
    adj_.assign(nodes_.size(), Mat<S>());
    if (with_tangent_) adj_dot_.assign(nodes_.size(), Mat<S>());
    accum(adj_, root.id, Mat<S>::Ones(1, 1));
    if (with_tangent_) accum(adj_dot_, root.id, Mat<S>::Zero(1, 1));
    for (int i = root.id; i >= 0; --i) {
      if (adj_[i].size() == 0 || !nodes_[i].requires_grad) continue;
      backstep(i);
    }
  }

  bool has_adjoint(Var v) const { return v.id < static_cast<int>(adj_.size()) && adj_[v.id].size() != 0; }

  Mat<S> adjoint(Var v) const {
    if (has_adjoint(v)) return adj_[v.id];
    return Mat<S>::Zero(node(v).value.rows(), node(v).value.cols());
  }

  Mat<S> adjoint_tangent(Var v) const {
    if (!with_tangent_) throw std::logic_error("ad: adjoint_tangent on a tape without tangents");
    if (v.id < static_cast<int>(adj_dot_.size()) && adj_dot_[v.id].size() != 0) return adj_dot_[v.id];
    return Mat<S>::Zero(node(v).value.rows(), node(v).value.cols());
  }

 private:
  struct Node {
    OpK op = OpK::Const;
    Var a, b;
    S scalar = S(0);
    IdxPtr idx;
    int aux0 = 0, aux1 = 0, aux2 = 0, aux3 = 0;
    Mat<S> value;
    Mat<S> tangent;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<Mat<S>> adj_;
  std::vector<Mat<S>> adj_dot_;
  bool with_tangent_;

  static S stable_sigmoid(S z) {
    if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
    const S e = std::exp(z);
    return e / (S(1) + e);
  }

  static S stable_softplus(S z) {
    return std::max(z, S(0)) + std::log1p(std::exp(-std::abs(z)));
  }

  const Node& node(Var v) const {
    if (!v.ok() || v.id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("ad: invalid variable handle");
    return nodes_[v.id];
  }

  bool is_scalar(Var v) const { return node(v).value.rows() == 1 && node(v).value.cols() == 1; }

  void check_same_shape(Var a, Var b, const char* what) const {
    if (node(a).value.rows() != node(b).value.rows() || node(a).value.cols() != node(b).value.cols())
      throw std::invalid_argument(std::string("ad: shape mismatch in ") + what);
  }

  void check_colvec(Var a, Var v, const char* what) const {
    if (node(v).value.cols() != 1 || node(v).value.rows() != node(a).value.rows())
      throw std::invalid_argument(std::string("ad: ") + what + " expects v of shape rows(a) x 1");
  }

  Node unary(OpK op, Var a) {
    Node n;
    n.op = op;
    n.a = a;
    n.requires_grad = node(a).requires_grad;
    return n;
  }

  Node binary(OpK op, Var a, Var b) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return n;
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  static void accum(std::vector<Mat<S>>& store, int id, const Mat<S>& g) {
    if (store[id].size() == 0)
      store[id] = g;
    else
      store[id] += g;
  }

  void add_grad(int id, const Mat<S>& g) {
    if (!nodes_[id].requires_grad) return;
    accum(adj_, id, g);
  }

  void add_grad_dot(int id, const Mat<S>& g) {
    if (!nodes_[id].requires_grad) return;
    accum(adj_dot_, id, g);
  }

  // Distributes node i's adjoint (and, in tangent mode, adjoint tangent) to
  // its inputs. u = adjoint, ud = adjoint tangent; ta/tb = input tangents.
  void backstep(int i) {
    Node& n = nodes_[i];
    const Mat<S>& u = adj_[i];
    const bool wt = with_tangent_;
    const Mat<S>* ud = wt ? &adj_dot_[i] : nullptr;
    Mat<S> ud_zero;
    if (wt && ud->size() == 0) {
      ud_zero = Mat<S>::Zero(u.rows(), u.cols());
      ud = &ud_zero;
    }
    switch (n.op) {
      case OpK::Leaf:
      case OpK::Const:
        return;
      case OpK::Add: {
        add_grad(n.a.id, u);
        add_grad(n.b.id, u);
        if (wt) {
          add_grad_dot(n.a.id, *ud);
          add_grad_dot(n.b.id, *ud);
        }
        return;
      }
      case OpK::Sub: {
        add_grad(n.a.id, u);
        add_grad(n.b.id, -u);
        if (wt) {
          add_grad_dot(n.a.id, *ud);
          add_grad_dot(n.b.id, -*ud);
        }
        return;
      }
      case OpK::Neg: {
        add_grad(n.a.id, -u);
        if (wt) add_grad_dot(n.a.id, -*ud);
        return;
      }
      case OpK::Scale: {
        add_grad(n.a.id, u * n.scalar);
        if (wt) add_grad_dot(n.a.id, *ud * n.scalar);
        return;
      }
      case OpK::Mul: {
        const Mat<S>& A = nodes_[n.a.id].value;
        const Mat<S>& B = nodes_[n.b.id].value;
        const bool as = A.rows() == 1 && A.cols() == 1 && !(B.rows() == 1 && B.cols() == 1);
        const bool bs = B.rows() == 1 && B.cols() == 1 && !(A.rows() == 1 && A.cols() == 1);
        if (bs) {
          add_grad(n.a.id, u * B(0, 0));
          Mat<S> gb(1, 1);
          gb(0, 0) = u.cwiseProduct(A).sum();
          add_grad(n.b.id, gb);
          if (wt) {
            const Mat<S>& TA = nodes_[n.a.id].tangent;
            const Mat<S>& TB = nodes_[n.b.id].tangent;
            add_grad_dot(n.a.id, *ud * B(0, 0) + u * TB(0, 0));
            Mat<S> gbd(1, 1);
            gbd(0, 0) = ud->cwiseProduct(A).sum() + u.cwiseProduct(TA).sum();
            add_grad_dot(n.b.id, gbd);
          }
        } else if (as) {
          add_grad(n.b.id, u * A(0, 0));
          Mat<S> ga(1, 1);
          ga(0, 0) = u.cwiseProduct(B).sum();
          add_grad(n.a.id, ga);
          if (wt) {
            const Mat<S>& TA = nodes_[n.a.id].tangent;
            const Mat<S>& TB = nodes_[n.b.id].tangent;
            add_grad_dot(n.b.id, *ud * A(0, 0) + u * TA(0, 0));
            Mat<S> gad(1, 1);
            gad(0, 0) = ud->cwiseProduct(B).sum() + u.cwiseProduct(TB).sum();
            add_grad_dot(n.a.id, gad);
          }
        } else {
          add_grad(n.a.id, u.cwiseProduct(B));
          add_grad(n.b.id, u.cwiseProduct(A));
          if (wt) {
            const Mat<S>& TA = nodes_[n.a.id].tangent;
            const Mat<S>& TB = nodes_[n.b.id].tangent;
            add_grad_dot(n.a.id, ud->cwiseProduct(B) + u.cwiseProduct(TB));
            add_grad_dot(n.b.id, ud->cwiseProduct(A) + u.cwiseProduct(TA));
          }
        }
        return;
      }
      case OpK::Div: {
        const Mat<S>& B = nodes_[n.b.id].value;
        const Mat<S>& Y = n.value;
        const bool bs = B.rows() == 1 && B.cols() == 1 && Y.size() != 1;
        if (bs) {
          const S b0 = B(0, 0);
          add_grad(n.a.id, u / b0);
          Mat<S> gb(1, 1);
          gb(0, 0) = -u.cwiseProduct(Y).sum() / b0;
          add_grad(n.b.id, gb);
          if (wt) {
            const Mat<S>& TB = nodes_[n.b.id].tangent;
            const Mat<S>& TY = n.tangent;
            add_grad_dot(n.a.id, *ud / b0 - u * (TB(0, 0) / (b0 * b0)));
            Mat<S> gbd(1, 1);
            gbd(0, 0) = -(ud->cwiseProduct(Y).sum() + u.cwiseProduct(TY).sum()) / b0 +
                        u.cwiseProduct(Y).sum() * TB(0, 0) / (b0 * b0);
            add_grad_dot(n.b.id, gbd);
          }
        } else {
          add_grad(n.a.id, u.cwiseQuotient(B));
          add_grad(n.b.id, -u.cwiseProduct(Y).cwiseQuotient(B));
          if (wt) {
            const Mat<S>& TB = nodes_[n.b.id].tangent;
            const Mat<S>& TY = n.tangent;
            add_grad_dot(n.a.id,
                         ud->cwiseQuotient(B) -
                             u.cwiseProduct(TB).cwiseQuotient(B.cwiseProduct(B)));
            add_grad_dot(
                n.b.id,
                -(ud->cwiseProduct(Y) + u.cwiseProduct(TY)).cwiseQuotient(B) +
                    u.cwiseProduct(Y).cwiseProduct(TB).cwiseQuotient(B.cwiseProduct(B)));
          }
        }
        return;
      }
      case OpK::MatMul: {
        const Mat<S>& A = nodes_[n.a.id].value;
        const Mat<S>& B = nodes_[n.b.id].value;
        add_grad(n.a.id, u * B.transpose());
        add_grad(n.b.id, A.transpose() * u);
        if (wt) {
          const Mat<S>& TA = nodes_[n.a.id].tangent;
          const Mat<S>& TB = nodes_[n.b.id].tangent;
          add_grad_dot(n.a.id, *ud * B.transpose() + u * TB.transpose());
          add_grad_dot(n.b.id, TA.transpose() * u + A.transpose() * *ud);
        }
        return;
      }
      case OpK::GatherRows: {
        if (!nodes_[n.a.id].requires_grad) return;
        const auto& I = *n.idx;
        Mat<S> g = Mat<S>::Zero(nodes_[n.a.id].value.rows(), nodes_[n.a.id].value.cols());
        for (size_t k = 0; k < I.size(); ++k) g.row(I[k]) += u.row(static_cast<Eigen::Index>(k));
        add_grad(n.a.id, g);
        if (wt) {
          Mat<S> gd = Mat<S>::Zero(g.rows(), g.cols());
          for (size_t k = 0; k < I.size(); ++k)
            gd.row(I[k]) += ud->row(static_cast<Eigen::Index>(k));
          add_grad_dot(n.a.id, gd);
        }
        return;
      }
      case OpK::ScatterAddRows: {
        if (!nodes_[n.a.id].requires_grad) return;
        const auto& I = *n.idx;
        Mat<S> g(static_cast<Eigen::Index>(I.size()), u.cols());
        for (size_t k = 0; k < I.size(); ++k) g.row(static_cast<Eigen::Index>(k)) = u.row(I[k]);
        add_grad(n.a.id, g);
        if (wt) {
          Mat<S> gd(static_cast<Eigen::Index>(I.size()), u.cols());
          for (size_t k = 0; k < I.size(); ++k)
            gd.row(static_cast<Eigen::Index>(k)) = ud->row(I[k]);
          add_grad_dot(n.a.id, gd);
        }
        return;
      }
      case OpK::ConcatRows: {
        const Eigen::Index ra = nodes_[n.a.id].value.rows();
        add_grad(n.a.id, u.topRows(ra));
        add_grad(n.b.id, u.bottomRows(u.rows() - ra));
        if (wt) {
          add_grad_dot(n.a.id, ud->topRows(ra));
          add_grad_dot(n.b.id, ud->bottomRows(u.rows() - ra));
        }
        return;
      }
      case OpK::ConcatCols: {
        const Eigen::Index ca = nodes_[n.a.id].value.cols();
        add_grad(n.a.id, u.leftCols(ca));
        add_grad(n.b.id, u.rightCols(u.cols() - ca));
        if (wt) {
          add_grad_dot(n.a.id, ud->leftCols(ca));
          add_grad_dot(n.b.id, ud->rightCols(u.cols() - ca));
        }
        return;
      }
      case OpK::Block: {
        if (!nodes_[n.a.id].requires_grad) return;
        Mat<S> g = Mat<S>::Zero(nodes_[n.a.id].value.rows(), nodes_[n.a.id].value.cols());
        g.block(n.aux0, n.aux1, n.aux2, n.aux3) = u;
        add_grad(n.a.id, g);
        if (wt) {
          Mat<S> gd = Mat<S>::Zero(g.rows(), g.cols());
          gd.block(n.aux0, n.aux1, n.aux2, n.aux3) = *ud;
          add_grad_dot(n.a.id, gd);
        }
        return;
      }
      case OpK::AddRowVec: {
        add_grad(n.a.id, u);
        add_grad(n.b.id, u.colwise().sum());
        if (wt) {
          add_grad_dot(n.a.id, *ud);
          add_grad_dot(n.b.id, ud->colwise().sum());
        }
        return;
      }
      case OpK::MulColVec: {
        const Mat<S>& A = nodes_[n.a.id].value;
        const auto v = nodes_[n.b.id].value.col(0).array();
        add_grad(n.a.id, (u.array().colwise() * v).matrix());
        add_grad(n.b.id, u.cwiseProduct(A).rowwise().sum());
        if (wt) {
          const Mat<S>& TA = nodes_[n.a.id].tangent;
          const auto tv = nodes_[n.b.id].tangent.col(0).array();
          add_grad_dot(n.a.id,
                       (ud->array().colwise() * v + u.array().colwise() * tv).matrix());
          add_grad_dot(n.b.id,
                       (ud->cwiseProduct(A) + u.cwiseProduct(TA)).rowwise().sum());
        }
        return;
      }
      case OpK::DivColVec: {
        const auto v = nodes_[n.b.id].value.col(0).array();
        const Mat<S>& Y = n.value;
        add_grad(n.a.id, (u.array().colwise() / v).matrix());
        add_grad(n.b.id, (-(u.cwiseProduct(Y).rowwise().sum()).array() / v).matrix());
        if (wt) {
          const auto tv = nodes_[n.b.id].tangent.col(0).array();
          const Mat<S>& TY = n.tangent;
          Mat<S> t1 = (ud->array().colwise() / v).matrix();
          Mat<S> t2 = (u.array().colwise() * (tv / (v * v)).eval()).matrix();
          add_grad_dot(n.a.id, t1 - t2);
          Eigen::Array<S, Eigen::Dynamic, 1> s =
              (ud->cwiseProduct(Y) + u.cwiseProduct(TY)).rowwise().sum().array();
          Eigen::Array<S, Eigen::Dynamic, 1> s2 = u.cwiseProduct(Y).rowwise().sum().array();
          add_grad_dot(n.b.id, (-(s / v) + s2 * tv / (v * v)).matrix());
        }
        return;
      }
      case OpK::SubColVec: {
        add_grad(n.a.id, u);
        add_grad(n.b.id, -u.rowwise().sum());
        if (wt) {
          add_grad_dot(n.a.id, *ud);
          add_grad_dot(n.b.id, -ud->rowwise().sum());
        }
        return;
      }
      case OpK::SumAll: {
        const Mat<S>& A = nodes_[n.a.id].value;
        add_grad(n.a.id, Mat<S>::Constant(A.rows(), A.cols(), u(0, 0)));
        if (wt) add_grad_dot(n.a.id, Mat<S>::Constant(A.rows(), A.cols(), (*ud)(0, 0)));
        return;
      }
      case OpK::SumCols: {
        const Mat<S>& A = nodes_[n.a.id].value;
        add_grad(n.a.id, u.col(0).replicate(1, A.cols()));
        if (wt) add_grad_dot(n.a.id, ud->col(0).replicate(1, A.cols()));
        return;
      }
      case OpK::Relu: {
        const auto mask = (nodes_[n.a.id].value.array() > S(0)).template cast<S>();
        add_grad(n.a.id, (u.array() * mask).matrix());
        if (wt) add_grad_dot(n.a.id, (ud->array() * mask).matrix());
        return;
      }
      case OpK::LeakyRelu: {
        const auto mask = (nodes_[n.a.id].value.array() > S(0)).template cast<S>();
        const auto f = mask + (S(1) - mask) * n.scalar;
        add_grad(n.a.id, (u.array() * f).matrix());
        if (wt) add_grad_dot(n.a.id, (ud->array() * f).matrix());
        return;
      }
      case OpK::Sigmoid: {
        const auto y = n.value.array();
        const auto g = y * (S(1) - y);
        add_grad(n.a.id, (u.array() * g).matrix());
        if (wt) {
          const auto ty = n.tangent.array();
          add_grad_dot(n.a.id,
                       (ud->array() * g + u.array() * (S(1) - S(2) * y) * ty).matrix());
        }
        return;
      }
      case OpK::Softplus: {
        const Mat<S> s = nodes_[n.a.id].value.unaryExpr([](S z) { return stable_sigmoid(z); });
        add_grad(n.a.id, u.cwiseProduct(s));
        if (wt) {
          const auto ta = nodes_[n.a.id].tangent.array();
          const auto sa = s.array();
          add_grad_dot(n.a.id,
                       (ud->array() * sa + u.array() * sa * (S(1) - sa) * ta).matrix());
        }
        return;
      }
      case OpK::Log: {
        const Mat<S>& A = nodes_[n.a.id].value;
        add_grad(n.a.id, u.cwiseQuotient(A));
        if (wt) {
          const Mat<S>& TA = nodes_[n.a.id].tangent;
          add_grad_dot(n.a.id,
                       ud->cwiseQuotient(A) -
                           u.cwiseProduct(TA).cwiseQuotient(A.cwiseProduct(A)));
        }
        return;
      }
      case OpK::Exp: {
        const Mat<S>& Y = n.value;
        add_grad(n.a.id, u.cwiseProduct(Y));
        if (wt) {
          const Mat<S>& TY = n.tangent;
          add_grad_dot(n.a.id, ud->cwiseProduct(Y) + u.cwiseProduct(TY));
        }
        return;
      }
    }
  }
};

}  // namespace cdnas::ad
