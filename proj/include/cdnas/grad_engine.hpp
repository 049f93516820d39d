// Differentiation contract used by every learning module: first-order
// gradients, Hessian-vector products and the mixed second-order
// vector-Jacobian product over partitioned parameter sets. Loss functions are
// expressed as tape builders; second-order quantities come from running the
// tape in dual-number mode (never from materialized Hessians).
#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <string>

#include "cdnas/ad.hpp"
#include "cdnas/param_vector.hpp"

namespace cdnas {

// Parameter groups bound onto a tape, addressable by group name. Frozen
// groups are bound as constants and therefore drop out of every derivative.
template <typename S>
struct Bound {
  const Layout* layout = nullptr;
  std::vector<ad::Var> vars;

  ad::Var operator[](const std::string& name) const {
    const auto& gs = layout->groups();
    for (size_t i = 0; i < gs.size(); ++i)
      if (gs[i].name == name) return vars[i];
    throw std::invalid_argument("bound: unknown group " + name);
  }
};

template <typename S>
using LossFn = std::function<ad::Var(ad::Tape<S>&, const Bound<S>&)>;

template <typename S>
using JointLossFn = std::function<ad::Var(ad::Tape<S>&, const Bound<S>&, const Bound<S>&)>;

template <typename S>
Bound<S> bind_params(ad::Tape<S>& tape, const ParamVector<S>& at,
                     const ParamVector<S>* tangent = nullptr,
                     const std::set<std::string>* frozen = nullptr) {
  if (tangent) check_same_layout(at, *tangent, "bind_params");
  Bound<S> b;
  b.layout = at.layout.get();
  b.vars.reserve(at.layout->groups().size());
  for (const auto& g : at.layout->groups()) {
    ad::Mat<S> v = at.group(g.name);
    if (frozen && frozen->count(g.name)) {
      b.vars.push_back(tape.constant(std::move(v)));
    } else if (tangent) {
      b.vars.push_back(tape.leaf(std::move(v), tangent->group(g.name)));
    } else {
      b.vars.push_back(tape.leaf(std::move(v)));
    }
  }
  return b;
}

namespace detail {

template <typename S>
ParamVector<S> collect(const ad::Tape<S>& tape, const Bound<S>& bound, const LayoutPtr& layout,
                       bool tangent_slot, const char* what) {
  ParamVector<S> out(layout);
  const auto& gs = layout->groups();
  for (size_t i = 0; i < gs.size(); ++i) {
    ad::Mat<S> g = tangent_slot ? tape.adjoint_tangent(bound.vars[i]) : tape.adjoint(bound.vars[i]);
    if (!g.allFinite())
      throw std::runtime_error(std::string(what) + ": non-finite derivative in group " +
                               gs[i].name);
    out.group(gs[i].name) = g;
  }
  return out;
}

template <typename S>
void check_finite_loss(const ad::Tape<S>& tape, ad::Var loss, const char* what) {
  if (!std::isfinite(static_cast<double>(tape.value(loss)(0, 0))))
    throw std::runtime_error(std::string(what) + ": non-finite loss value");
}

}  // namespace detail

// grad f at `at`, same layout as `at`.
template <typename S>
ParamVector<S> gradient(const LossFn<S>& loss, const ParamVector<S>& at,
                        const std::set<std::string>* frozen = nullptr) {
  ad::Tape<S> tape;
  Bound<S> b = bind_params(tape, at, static_cast<const ParamVector<S>*>(nullptr), frozen);
  ad::Var l = loss(tape, b);
  detail::check_finite_loss(tape, l, "gradient");
  tape.backward(l);
  return detail::collect(tape, b, at.layout, false, "gradient");
}

// (Hessian of f) * v without materializing the Hessian: the whole
// forward+backward sweep runs in dual numbers with the leaf tangent seeded
// to v, so the adjoint tangent of the leaves is d/dt grad f(at + t v).
template <typename S>
ParamVector<S> hvp(const LossFn<S>& loss, const ParamVector<S>& at, const ParamVector<S>& v,
                   const std::set<std::string>* frozen = nullptr) {
  check_same_layout(at, v, "hvp");
  ad::Tape<S> tape(true);
  Bound<S> b = bind_params(tape, at, &v, frozen);
  ad::Var l = loss(tape, b);
  detail::check_finite_loss(tape, l, "hvp");
  tape.backward(l);
  return detail::collect(tape, b, at.layout, true, "hvp");
}

// v^T * d/dphi d/dtheta f, laid out over phi: seed theta's tangent with v and
// read the tangent of phi's adjoint.
template <typename S>
ParamVector<S> mixed_second_vjp(const JointLossFn<S>& loss, const ParamVector<S>& at_theta,
                                const ParamVector<S>& at_phi, const ParamVector<S>& v,
                                const std::set<std::string>* frozen_theta = nullptr) {
  check_same_layout(at_theta, v, "mixed_second_vjp");
  ad::Tape<S> tape(true);
  Bound<S> btheta = bind_params(tape, at_theta, &v, frozen_theta);
  ParamVector<S> zero(at_phi.layout);
  Bound<S> bphi = bind_params(tape, at_phi, &zero);
  ad::Var l = loss(tape, btheta, bphi);
  detail::check_finite_loss(tape, l, "mixed_second_vjp");
  tape.backward(l);
  return detail::collect(tape, bphi, at_phi.layout, true, "mixed_second_vjp");
}

// Evaluates a loss without differentiating.
template <typename S>
S loss_value(const LossFn<S>& loss, const ParamVector<S>& at) {
  ad::Tape<S> tape;
  Bound<S> b = bind_params(tape, at);
  return tape.value(loss(tape, b))(0, 0);
}

template <typename S>
JointLossFn<S> as_joint(const LossFn<S>& loss) {
  return [loss](ad::Tape<S>& t, const Bound<S>& theta, const Bound<S>&) {
    return loss(t, theta);
  };
}

// Fixes phi (as constants) so a joint loss can be differentiated in theta alone.
template <typename S>
LossFn<S> bind_phi(const JointLossFn<S>& loss, ParamVector<S> phi) {
  return [loss, phi = std::move(phi)](ad::Tape<S>& t, const Bound<S>& theta) {
    std::set<std::string> all;
    for (const auto& g : phi.layout->groups()) all.insert(g.name);
    Bound<S> bphi = bind_params(t, phi, static_cast<const ParamVector<S>*>(nullptr), &all);
    return loss(t, theta, bphi);
  };
}

}  // namespace cdnas
