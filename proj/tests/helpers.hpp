#pragma once

// Shared test utilities: seeded random problem generation and the brute-force
// joint-Gaussian oracle used to validate message passing on linear systems.

#include "i2c/engine.hpp"
#include "i2c/gaussian.hpp"
#include "i2c/models.hpp"

#include <Eigen/Dense>
#include <random>
#include <vector>

namespace testutil {

using i2c::Matd;
using i2c::Vecd;

inline Matd random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

inline Vecd random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vecd v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Matd random_spd(std::mt19937_64& rng, int n, double jitter = 0.1) {
  const Matd L = random_matrix(rng, n, n);
  return Matd(L * L.transpose() + jitter * Matd::Identity(n, n));
}

// Random linear Gaussian control problem with identity features z = [x; u],
// wrapped as an Environment so it can drive the full engine.
struct LinearProblem {
  i2c::Environment env;
  i2c::Priors priors;
  double alpha = 1.0;
};

inline LinearProblem random_linear_problem(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dx_d(1, 3), du_d(1, 2), T_d(1, 5);
  const int dx = dx_d(rng), du = du_d(rng), T = T_d(rng);

  i2c::Environment env;
  env.name = "random_linear";
  env.d_x = dx;
  env.d_u = du;
  env.d_z = dx + du;
  env.dt = 1.0;
  env.horizon = T;
  env.u_lo = Vecd::Constant(du, -std::numeric_limits<double>::infinity());
  env.u_hi = Vecd::Constant(du, std::numeric_limits<double>::infinity());
  env.Sigma_eta = random_spd(rng, dx, 0.05);
  env.x0 = random_vector(rng, dx);
  const Matd A = random_matrix(rng, dx, dx, 0.9);
  const Matd B = random_matrix(rng, dx, du);
  const Vecd a = random_vector(rng, dx, 0.5);
  env.x_goal = random_vector(rng, dx, 2.0);
  env.step = [A, B, a](const Vecd& x, const Vecd& u) -> Vecd {
    return A * x + B * u + a;
  };
  env.step_jac = [A, B](const Vecd&, const Vecd&, Matd& Ao, Matd& Bo) {
    Ao = A;
    Bo = B;
  };
  env.obs.feature = [dx, du](const Vecd& x, const Vecd& u) {
    Vecd z(dx + du);
    z << x, u;
    return z;
  };
  env.obs.feature_jac = [dx, du](const Vecd&, const Vecd&, Matd& E, Matd& F) {
    E = Matd::Zero(dx + du, dx);
    E.topRows(dx).setIdentity();
    F = Matd::Zero(dx + du, du);
    F.bottomRows(du).setIdentity();
  };
  std::uniform_real_distribution<double> th(0.5, 2.0);
  Vecd theta(dx + du);
  for (int i = 0; i < dx + du; ++i) theta[i] = th(rng);
  env.obs.Theta = theta.asDiagonal();
  env.obs.n_x_features = dx;
  env.obs.Q_f = env.obs.Theta.topLeftCorner(dx, dx);
  Vecd zg(dx + du);
  zg << env.x_goal, Vecd::Zero(du);
  env.obs.z_g = zg;
  env.sig_u0 = 1.0;
  env.alpha0 = 1.0;

  LinearProblem p;
  p.env = env;
  p.priors.x0 = i2c::Gaussian(env.x0, Matd(0.5 * Matd::Identity(dx, dx)));
  for (int t = 0; t < T; ++t)
    p.priors.u.push_back(
        i2c::Gaussian(random_vector(rng, du, 0.5),
                      Matd(th(rng) * Matd::Identity(du, du))));
  p.alpha = th(rng);
  return p;
}

// Brute-force posterior of the stacked trajectory w = (x_{0:T}, u_{0:T-1})
// given all observation factors and the terminal factor, assembled directly as
// one joint Gaussian. This is the ground truth for every smoothed quantity.
struct JointPosterior {
  Vecd mean;
  Matd cov;
  int d_x, d_u, T;

  int x_off(int t) const { return t * d_x; }
  int u_off(int t) const { return (T + 1) * d_x + t * d_u; }

  Vecd x_mean(int t) const { return mean.segment(x_off(t), d_x); }
  Vecd u_mean(int t) const { return mean.segment(u_off(t), d_u); }
  Matd x_cov(int t) const { return cov.block(x_off(t), x_off(t), d_x, d_x); }
  Matd u_cov(int t) const { return cov.block(u_off(t), u_off(t), d_u, d_u); }
  Matd xu_cov(int t) const { return cov.block(x_off(t), u_off(t), d_x, d_u); }
};

inline JointPosterior joint_posterior(const LinearProblem& p) {
  const i2c::Environment& env = p.env;
  const int dx = env.d_x, du = env.d_u, T = env.horizon;
  const int N = (T + 1) * dx + T * du;          // stacked trajectory
  const int Ns = dx + T * du + T * dx;          // basics: x0, u_t, eta_t

  Matd A(dx, dx), B(dx, du);
  env.step_jac(env.x0, Vecd::Zero(du), A, B);
  const Vecd a = env.step(Vecd::Zero(dx), Vecd::Zero(du));

  // linear map w = M s + off from independent basics s
  Matd M = Matd::Zero(N, Ns);
  Vecd off = Vecd::Zero(N);
  const int u_base = dx, eta_base = dx + T * du;
  M.block(0, 0, dx, dx).setIdentity();
  for (int t = 0; t < T; ++t) {
    const int rx = (t + 1) * dx;
    M.middleRows(rx, dx) = A * M.middleRows(t * dx, dx);
    M.block(rx, u_base + t * du, dx, du) += B;
    M.block(rx, eta_base + t * dx, dx, dx).setIdentity();
    off.segment(rx, dx) = A * off.segment(t * dx, dx) + a;
    M.block((T + 1) * dx + t * du, u_base + t * du, du, du).setIdentity();
  }

  Vecd mu_s = Vecd::Zero(Ns);
  Matd S_s = Matd::Zero(Ns, Ns);
  mu_s.head(dx) = p.priors.x0.mu;
  S_s.topLeftCorner(dx, dx) = p.priors.x0.Sigma;
  for (int t = 0; t < T; ++t) {
    mu_s.segment(u_base + t * du, du) = p.priors.u[t].mu;
    S_s.block(u_base + t * du, u_base + t * du, du, du) = p.priors.u[t].Sigma;
    S_s.block(eta_base + t * dx, eta_base + t * dx, dx, dx) = env.Sigma_eta;
  }
  const Vecd m_prior = M * mu_s + off;
  const Matd S_prior = i2c::symmetrize(Matd(M * S_s * M.transpose()));

  // condition on the observation factors in canonical form
  Matd Lam = S_prior.ldlt().solve(Matd::Identity(N, N));
  Lam = i2c::symmetrize(Lam);
  Vecd nu = Lam * m_prior;
  const Matd Lxi = p.alpha * env.obs.Theta;
  Matd E, F;
  env.obs.feature_jac(env.x0, Vecd::Zero(du), E, F);
  for (int t = 0; t < T; ++t) {
    Matd H = Matd::Zero(env.d_z, N);
    H.middleCols(t * dx, dx) = E;
    H.middleCols((T + 1) * dx + t * du, du) = F;
    Lam += H.transpose() * Lxi * H;
    nu += H.transpose() * (Lxi * env.obs.z_g);
  }
  // terminal factor on x_T: alpha * Theta_x with target z_g_x
  const Matd Theta_x = env.obs.Theta.topLeftCorner(dx, dx);
  Lam.block(T * dx, T * dx, dx, dx) += p.alpha * Theta_x;
  nu.segment(T * dx, dx) += p.alpha * Theta_x * env.obs.z_g.head(dx);

  JointPosterior post;
  post.d_x = dx;
  post.d_u = du;
  post.T = T;
  post.cov = i2c::symmetrize(Matd(Lam.ldlt().solve(Matd::Identity(N, N))));
  post.mean = post.cov * nu;
  return post;
}

inline double rel_err(const Matd& got, const Matd& want) {
  const double n = want.cwiseAbs().maxCoeff();
  return (got - want).cwiseAbs().maxCoeff() / std::max(n, 1e-12);
}

inline double rel_err(const Vecd& got, const Vecd& want) {
  const double n = want.cwiseAbs().maxCoeff();
  return (got - want).cwiseAbs().maxCoeff() / std::max(n, 1e-12);
}

}  // namespace testutil
