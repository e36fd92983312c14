#pragma once

// Numerical diagnostics for the prefix flow: divergence of the velocity field,
// the log-density change the surrogate likelihood leaves out, and trajectory
// straightness. None of this participates in training.

#include <algorithm>
#include <cmath>
#include <vector>

#include "trfp/flow_policy/flow_policy.hpp"

namespace trfp::flow {

// div_u v(s, u, t) per row by central differences with step h.
inline Matrix estimate_divergence(const FlowPolicyParams& p, const Matrix& states, const Matrix& u, double t,
                                  double h = 1e-4) {
  Matrix div = Matrix::Zero(u.rows(), 1);
  for (Index j = 0; j < u.cols(); ++j) {
    Matrix up = u;
    Matrix dn = u;
    up.col(j).array() += h;
    dn.col(j).array() -= h;
    div.col(0) += (velocity(p, states, up, t).col(j) - velocity(p, states, dn, t).col(j)) / (2.0 * h);
  }
  return div;
}

struct PrefixDensityError {
  Matrix delta;               // -int_0^tau div v dt, batch x 1
  Matrix max_abs_divergence;  // max over the integration nodes, batch x 1
  double tau = 0.0;

  // |delta| <= max|div| * tau, with a few ulps of slack for the quadrature.
  bool bound_holds(Index row) const {
    const double bound = max_abs_divergence(row, 0) * tau;
    return std::abs(delta(row, 0)) <= bound * (1.0 + 1e-12) + 1e-15;
  }
  bool bound_holds() const {
    for (Index i = 0; i < delta.rows(); ++i) {
      if (!bound_holds(i)) return false;
    }
    return true;
  }
};

// Follows the ODE from u0 over [0, tau] with `substeps` Heun steps and applies
// the trapezoid rule to the divergence sampled at every node.
inline PrefixDensityError prefix_logdensity_error(const FlowPolicyParams& p, const Matrix& states, const Matrix& u0,
                                                  double tau, int substeps) {
  if (substeps < 10) throw ConfigError("prefix_logdensity_error: substeps must be >= 10");
  if (tau < 0.0 || tau > 1.0) throw ConfigError("prefix_logdensity_error: tau must lie in [0, 1]");
  PrefixDensityError out;
  out.tau = tau;
  out.delta = Matrix::Zero(u0.rows(), 1);
  out.max_abs_divergence = Matrix::Zero(u0.rows(), 1);
  const double dt = tau / substeps;
  Matrix u = u0;
  Matrix prev = estimate_divergence(p, states, u, 0.0);
  out.max_abs_divergence = prev.cwiseAbs();
  for (int k = 0; k < substeps; ++k) {
    const double t = k * dt;
    u = heun_step(p, states, u, t, dt);
    Matrix cur = estimate_divergence(p, states, u, t + dt);
    out.delta -= 0.5 * dt * (prev + cur);
    out.max_abs_divergence = out.max_abs_divergence.cwiseMax(cur.cwiseAbs());
    prev = std::move(cur);
  }
  return out;
}

// max_k dist(u_k, segment[u_0, u_K]) / ||u_K - u_0|| per row; 0 for a
// degenerate (zero-length) trajectory.
inline Matrix straightness(const std::vector<Matrix>& trajectory) {
  const Matrix& a = trajectory.front();
  const Matrix& b = trajectory.back();
  Matrix out = Matrix::Zero(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    const Eigen::RowVectorXd d = b.row(i) - a.row(i);
    const double len2 = d.squaredNorm();
    if (len2 == 0.0) continue;
    double worst = 0.0;
    for (const Matrix& uk : trajectory) {
      const Eigen::RowVectorXd w = uk.row(i) - a.row(i);
      const double s = std::clamp(w.dot(d) / len2, 0.0, 1.0);
      worst = std::max(worst, (w - s * d).norm());
    }
    out(i, 0) = worst / std::sqrt(len2);
  }
  return out;
}

}  // namespace trfp::flow
