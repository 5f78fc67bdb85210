#pragma once

// Exact finite-horizon discrete-time LQR by dynamic programming; the
// ground-truth oracle for the i2c equivalence tests.

#include "i2c/gaussian.hpp"
#include "i2c/models.hpp"

#include <vector>

namespace i2c {

struct LinearGaussianController {
  std::vector<Matd> K;        // d_u x d_x, t = 0..T-1
  std::vector<Vecd> k;        // d_u
  std::vector<Matd> Sigma_k;  // d_u x d_u
  int horizon() const { return static_cast<int>(K.size()); }
};

struct QuadraticValue {
  std::vector<Matd> P;  // t = 0..T
  std::vector<Vecd> p;
  std::vector<double> p_scalar;  // tracked but unused by the policy
};

// Backward DP recursion. Terminal: P_T = Q_f, p_T = -Q x_g. Gains:
//   K_t = -(R + B'P_{t+1}B)^-1 B'P_{t+1}A
//   k_t = -(R + B'P_{t+1}B)^-1 (B'P_{t+1}a + B'p_{t+1} - R u_g)
inline std::pair<LinearGaussianController, QuadraticValue> solve_lqr(
    const LinearDynamics& dyn, const Matd& Q, const Matd& R, const Matd& Q_f,
    const Vecd& x_g, const Vecd& u_g, int T) {
  if (T < 1) throw DimensionError("solve_lqr: T must be >= 1");
  const Matd& A = dyn.A;
  const Matd& B = dyn.B;
  const Vecd& a = dyn.a;
  const auto d_u = B.cols();

  QuadraticValue val;
  val.P.assign(T + 1, Matd());
  val.p.assign(T + 1, Vecd());
  val.p_scalar.assign(T + 1, 0.0);
  LinearGaussianController ctrl;
  ctrl.K.assign(T, Matd());
  ctrl.k.assign(T, Vecd());
  ctrl.Sigma_k.assign(T, Matd::Zero(d_u, d_u));

  Matd P = symmetrize(Q_f);
  Vecd p = -Q * x_g;
  double ps = x_g.dot(Q * x_g);
  val.P[T] = P;
  val.p[T] = p;
  val.p_scalar[T] = ps;
  for (int t = T - 1; t >= 0; --t) {
    const Matd H = symmetrize(Matd(R + B.transpose() * P * B));
    Eigen::LLT<Matd> llt(H);
    if (llt.info() != Eigen::Success)
      throw NumericalError("solve_lqr: singular (R + B'PB)");
    const Matd K = -llt.solve(B.transpose() * P * A);
    const Vecd k = -llt.solve(Vecd(B.transpose() * (P * a + p) - R * u_g));
    ctrl.K[t] = K;
    ctrl.k[t] = k;
    const Vecd h = B.transpose() * (P * a + p) - R * u_g;
    const Matd Pn = Q + A.transpose() * P * A + A.transpose() * P * B * K;
    const Vecd pn =
        A.transpose() * (P * a + p + P * B * k) - Q * x_g;
    ps = ps + a.dot(P * a) + 2.0 * a.dot(p) - h.dot(llt.solve(h)) +
         u_g.dot(R * u_g) + x_g.dot(Q * x_g);
    P = symmetrize(Pn);
    p = pn;
    val.P[t] = P;
    val.p[t] = p;
    val.p_scalar[t] = ps;
  }
  return {ctrl, val};
}

// Deterministic rollout of u_t = K_t x_t + k_t; returns T+1 states, T inputs.
inline std::pair<std::vector<Vecd>, std::vector<Vecd>> lqr_rollout(
    const LinearDynamics& dyn, const LinearGaussianController& ctrl,
    const Vecd& x0, int T) {
  if (ctrl.horizon() < T) throw DimensionError("lqr_rollout: controller too short");
  std::vector<Vecd> xs{x0};
  std::vector<Vecd> us;
  for (int t = 0; t < T; ++t) {
    us.push_back(ctrl.K[t] * xs.back() + ctrl.k[t]);
    xs.push_back(dyn.A * xs.back() + dyn.B * us.back() + dyn.a);
  }
  return {xs, us};
}

}  // namespace i2c
