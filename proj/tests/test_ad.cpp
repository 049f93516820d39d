// Finite-difference oracle checks for the tape: every primitive op is
// verified on three levels — value gradient (adjoint), forward tangent, and
// the tangent of the adjoint (the Hessian-vector pathway).
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "cdnas/ad.hpp"
#include "cdnas/rng.hpp"

using cdnas::Rng;
using cdnas::ad::IdxPtr;
using cdnas::ad::make_index;
using cdnas::ad::Tape;
using cdnas::ad::Var;
using Mat = cdnas::ad::Mat<double>;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0, double shift = 0.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal() * scale + shift;
  return m;
}

// Loss builder over a set of leaf inputs; returns a scalar Var.
using LossBuilder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

double eval_loss(const LossBuilder& f, const std::vector<Mat>& xs) {
  Tape<double> t;
  std::vector<Var> vars;
  for (const auto& x : xs) vars.push_back(t.leaf(x));
  return t.value(f(t, vars))(0, 0);
}

std::vector<Mat> grad_fd(const LossBuilder& f, std::vector<Mat> xs, double h = 1e-6) {
  std::vector<Mat> g;
  for (size_t k = 0; k < xs.size(); ++k) {
    Mat gk = Mat::Zero(xs[k].rows(), xs[k].cols());
    for (int i = 0; i < xs[k].rows(); ++i) {
      for (int j = 0; j < xs[k].cols(); ++j) {
        const double keep = xs[k](i, j);
        xs[k](i, j) = keep + h;
        const double fp = eval_loss(f, xs);
        xs[k](i, j) = keep - h;
        const double fm = eval_loss(f, xs);
        xs[k](i, j) = keep;
        gk(i, j) = (fp - fm) / (2 * h);
      }
    }
    g.push_back(std::move(gk));
  }
  return g;
}

std::vector<Mat> grad_ad(const LossBuilder& f, const std::vector<Mat>& xs,
                         const std::vector<Mat>* tangents = nullptr,
                         std::vector<Mat>* adj_tangents = nullptr) {
  Tape<double> t(tangents != nullptr);
  std::vector<Var> vars;
  for (size_t k = 0; k < xs.size(); ++k) {
    if (tangents)
      vars.push_back(t.leaf(xs[k], (*tangents)[k]));
    else
      vars.push_back(t.leaf(xs[k]));
  }
  Var l = f(t, vars);
  t.backward(l);
  std::vector<Mat> g;
  for (auto v : vars) g.push_back(t.adjoint(v));
  if (adj_tangents) {
    adj_tangents->clear();
    for (auto v : vars) adj_tangents->push_back(t.adjoint_tangent(v));
  }
  return g;
}

double rel_err(const Mat& a, const Mat& b) {
  const double denom = std::max(b.norm(), 1e-12);
  return (a - b).norm() / denom;
}

double eval_loss_shifted(const LossBuilder& f, std::vector<Mat> xs, const std::vector<Mat>& v,
                         double h) {
  for (size_t k = 0; k < xs.size(); ++k) xs[k] += h * v[k];
  return eval_loss(f, xs);
}

// Full three-level check of a loss builder at a point.
void check_derivatives(const LossBuilder& f, const std::vector<Mat>& xs, Rng& rng,
                       double tol_grad = 2e-6, double tol_hvp = 2e-4) {
  auto fd = grad_fd(f, xs);
  auto ad = grad_ad(f, xs);
  REQUIRE(fd.size() == ad.size());
  for (size_t k = 0; k < fd.size(); ++k) {
    CAPTURE(k);
    CHECK(rel_err(ad[k], fd[k]) < tol_grad);
  }

  // Tangent direction v; check adjoint tangent == d/dt grad(x + t v) by FD.
  std::vector<Mat> v;
  for (const auto& x : xs) v.push_back(random_mat(rng, x.rows(), x.cols(), 0.5));
  std::vector<Mat> adj_tan;
  grad_ad(f, xs, &v, &adj_tan);

  const double h = 1e-5;
  std::vector<Mat> xp = xs, xm = xs;
  for (size_t k = 0; k < xs.size(); ++k) {
    xp[k] += h * v[k];
    xm[k] -= h * v[k];
  }
  auto gp = grad_ad(f, xp);
  auto gm = grad_ad(f, xm);
  for (size_t k = 0; k < xs.size(); ++k) {
    Mat hv_fd = (gp[k] - gm[k]) / (2 * h);
    CAPTURE(k);
    CHECK(rel_err(adj_tan[k], hv_fd) < tol_hvp);
  }

  // Forward tangent equals the directional derivative of the loss.
  Tape<double> t(true);
  std::vector<Var> vars;
  for (size_t k = 0; k < xs.size(); ++k) vars.push_back(t.leaf(xs[k], v[k]));
  Var l = f(t, vars);
  const double dir_fd = (eval_loss_shifted(f, xs, v, h) - eval_loss_shifted(f, xs, v, -h)) / (2 * h);
  CHECK(std::abs(t.tangent(l)(0, 0) - dir_fd) <
        1e-4 * std::max(1.0, std::abs(dir_fd)));
}

// Reduces a matrix-valued expression to a scalar with fixed random weights so
// every entry participates in the loss.
LossBuilder scalarized(std::function<Var(Tape<double>&, const std::vector<Var>&)> expr, Mat w) {
  return [expr, w](Tape<double>& t, const std::vector<Var>& xs) {
    Var y = expr(t, xs);
    return t.sum_all(t.mul(y, t.constant(w)));
  };
}

}  // namespace

TEST_CASE("elementwise arithmetic ops match finite differences") {
  Rng rng(42);
  const int r = 3, c = 4;
  Mat w = random_mat(rng, r, c);
  std::vector<Mat> xs = {random_mat(rng, r, c), random_mat(rng, r, c, 1.0, 3.0)};

  SUBCASE("add") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.add(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("sub") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.sub(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("neg+scale") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.scale(t.neg(v[0]), 2.5);
                      }, w), xs, rng);
  }
  SUBCASE("mul") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.mul(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("div") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.div(v[0], v[1]);
                      }, w), xs, rng);
  }
}

TEST_CASE("scalar broadcasts in mul and div") {
  Rng rng(7);
  const int r = 3, c = 2;
  Mat w = random_mat(rng, r, c);
  std::vector<Mat> xs = {random_mat(rng, r, c), random_mat(rng, 1, 1, 1.0, 2.0)};

  SUBCASE("matrix * scalar") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.mul(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("scalar * matrix") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.mul(v[1], v[0]);
                      }, w), xs, rng);
  }
  SUBCASE("matrix / scalar") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.div(v[0], v[1]);
                      }, w), xs, rng);
  }
}

TEST_CASE("matmul matches finite differences") {
  Rng rng(11);
  Mat w = random_mat(rng, 3, 5);
  std::vector<Mat> xs = {random_mat(rng, 3, 4), random_mat(rng, 4, 5)};
  check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                      return t.matmul(v[0], v[1]);
                    }, w), xs, rng);
}

TEST_CASE("index and layout ops match finite differences") {
  Rng rng(13);

  SUBCASE("gather_rows") {
    IdxPtr idx = make_index({2, 0, 2, 1});
    Mat w = random_mat(rng, 4, 3);
    std::vector<Mat> xs = {random_mat(rng, 3, 3)};
    check_derivatives(scalarized([idx](Tape<double>& t, const std::vector<Var>& v) {
                        return t.gather_rows(v[0], idx);
                      }, w), xs, rng);
  }
  SUBCASE("scatter_add_rows") {
    IdxPtr idx = make_index({1, 3, 1, 0});
    Mat w = random_mat(rng, 5, 3);
    std::vector<Mat> xs = {random_mat(rng, 4, 3)};
    check_derivatives(scalarized([idx](Tape<double>& t, const std::vector<Var>& v) {
                        return t.scatter_add_rows(v[0], idx, 5);
                      }, w), xs, rng);
  }
  SUBCASE("concat_rows") {
    Mat w = random_mat(rng, 5, 2);
    std::vector<Mat> xs = {random_mat(rng, 3, 2), random_mat(rng, 2, 2)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.concat_rows(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("concat_cols") {
    Mat w = random_mat(rng, 3, 5);
    std::vector<Mat> xs = {random_mat(rng, 3, 2), random_mat(rng, 3, 3)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.concat_cols(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("block") {
    Mat w = random_mat(rng, 2, 2);
    std::vector<Mat> xs = {random_mat(rng, 4, 5)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.block(v[0], 1, 2, 2, 2);
                      }, w), xs, rng);
  }
}

TEST_CASE("broadcast column and row helpers match finite differences") {
  Rng rng(17);
  const int r = 4, c = 3;
  Mat w = random_mat(rng, r, c);

  SUBCASE("add_rowvec") {
    std::vector<Mat> xs = {random_mat(rng, r, c), random_mat(rng, 1, c)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.add_rowvec(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("mul_colvec") {
    std::vector<Mat> xs = {random_mat(rng, r, c), random_mat(rng, r, 1, 0.5, 1.5)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.mul_colvec(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("div_colvec") {
    std::vector<Mat> xs = {random_mat(rng, r, c), random_mat(rng, r, 1, 0.3, 2.0)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.div_colvec(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("sub_colvec") {
    std::vector<Mat> xs = {random_mat(rng, r, c), random_mat(rng, r, 1)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.sub_colvec(v[0], v[1]);
                      }, w), xs, rng);
  }
  SUBCASE("sum_cols") {
    Mat wc = random_mat(rng, r, 1);
    std::vector<Mat> xs = {random_mat(rng, r, c)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.sum_cols(v[0]);
                      }, wc), xs, rng);
  }
}

TEST_CASE("nonlinearities match finite differences") {
  Rng rng(19);
  const int r = 3, c = 3;
  Mat w = random_mat(rng, r, c);
  // Keep relu inputs away from the kink.
  Mat x = random_mat(rng, r, c);
  for (int i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < 0.1) x.data()[i] += 0.3;
  std::vector<Mat> xs = {x};

  SUBCASE("relu") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.relu(v[0]);
                      }, w), xs, rng);
  }
  SUBCASE("leaky_relu") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.leaky_relu(v[0], 0.2);
                      }, w), xs, rng);
  }
  SUBCASE("sigmoid") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.sigmoid(v[0]);
                      }, w), xs, rng);
  }
  SUBCASE("softplus") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.softplus(v[0]);
                      }, w), xs, rng);
  }
  SUBCASE("exp") {
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.exp(v[0]);
                      }, w), xs, rng);
  }
  SUBCASE("log") {
    std::vector<Mat> pos = {random_mat(rng, r, c, 0.4, 2.0)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.log(v[0]);
                      }, w), pos, rng);
  }
}

TEST_CASE("softmax helpers match finite differences") {
  Rng rng(23);

  SUBCASE("softmax_rows") {
    Mat w = random_mat(rng, 4, 5);
    std::vector<Mat> xs = {random_mat(rng, 4, 5, 2.0)};
    check_derivatives(scalarized([](Tape<double>& t, const std::vector<Var>& v) {
                        return t.softmax_rows(v[0]);
                      }, w), xs, rng);
  }
  SUBCASE("segment_softmax") {
    IdxPtr seg = make_index({0, 0, 1, 2, 2, 2});
    Mat w = random_mat(rng, 6, 1);
    std::vector<Mat> xs = {random_mat(rng, 6, 1, 1.5)};
    check_derivatives(scalarized([seg](Tape<double>& t, const std::vector<Var>& v) {
                        return t.segment_softmax(v[0], seg, 3);
                      }, w), xs, rng);
  }
  SUBCASE("segment softmax over a singleton segment is exactly one") {
    Tape<double> t;
    Mat s(1, 1);
    s(0, 0) = -3.7;
    Var out = t.segment_softmax(t.leaf(s), make_index({0}), 1);
    CHECK(t.value(out)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("bce_with_logits value and derivatives") {
  Rng rng(29);
  Mat labels(4, 1);
  labels << 1, 0, 1, 0;
  Mat w = Mat::Ones(4, 1);
  std::vector<Mat> xs = {random_mat(rng, 4, 1, 2.0)};

  check_derivatives(scalarized([labels](Tape<double>& t, const std::vector<Var>& v) {
                      return t.bce_with_logits(v[0], labels);
                    }, w), xs, rng);

  Tape<double> t;
  Var z = t.leaf(xs[0]);
  Var l = t.bce_with_logits(z, labels);
  for (int i = 0; i < 4; ++i) {
    const double zi = xs[0](i, 0);
    const double p = 1.0 / (1.0 + std::exp(-zi));
    const double expect = -(labels(i, 0) * std::log(p) + (1 - labels(i, 0)) * std::log(1 - p));
    CHECK(t.value(l)(i, 0) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("constants do not receive gradients and detach blocks flow") {
  Tape<double> t;
  Mat x(2, 2);
  x << 1, 2, 3, 4;
  Var a = t.leaf(x);
  Var c = t.constant(2.0 * x);
  Var d = t.detach(a);
  Var loss = t.sum_all(t.add(t.mul(a, c), d));
  t.backward(loss);
  CHECK(t.adjoint(a).isApprox(2.0 * x));  // only through the live path
  CHECK_FALSE(t.has_adjoint(c));
  CHECK_FALSE(t.has_adjoint(d));
}

TEST_CASE("repeated use of a variable accumulates adjoints") {
  Tape<double> t;
  Mat x(1, 1);
  x << 3.0;
  Var a = t.leaf(x);
  Var loss = t.add(t.mul(a, a), a);  // x^2 + x -> d/dx = 2x + 1
  t.backward(loss);
  CHECK(t.adjoint(a)(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("shape errors are rejected") {
  Tape<double> t;
  Var a = t.leaf(Mat::Zero(2, 3));
  Var b = t.leaf(Mat::Zero(3, 2));
  CHECK_THROWS_AS(t.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(t.add_rowvec(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(a), std::invalid_argument);
}
