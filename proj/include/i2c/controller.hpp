#pragma once

// Time-varying linear Gaussian controller extraction from the smoothed
// messages, the B.4 propagation diagnostics (Gamma, Psi), and the closed-form
// Riccati-style backward recursion used as an independent cross-check of the
// message-passing backward sweep.

#include "i2c/engine.hpp"
#include "i2c/gaussian.hpp"
#include "i2c/lqr.hpp"
#include "i2c/models.hpp"

#include <utility>
#include <vector>

namespace i2c {

namespace detail {

// X = Lam (I + Sigma Lam)^-1, valid for rank-deficient Lam and Sigma; the
// result is symmetric in exact arithmetic.
inline Matd shrink_precision(const Matd& Lam, const Matd& Sigma) {
  const Matd I = Matd::Identity(Lam.rows(), Lam.cols());
  // solve (I + Lam Sigma) X' = Lam for X' = X^T
  const Matd Xt = (I + Lam * Sigma).partialPivLu().solve(Lam);
  return symmetrize(Xt.transpose());
}

// nu_out = (I + Lam Sigma)^-1 nu
inline Vecd shrink_shift(const Matd& Lam, const Matd& Sigma, const Vecd& nu) {
  const Matd I = Matd::Identity(Lam.rows(), Lam.cols());
  return (I + Lam * Sigma).partialPivLu().solve(nu);
}

}  // namespace detail

// Exact conditional p(u_t | x_t, z): for each t, fold the backward message on
// x_{t+1} through the process noise and B, combine with the observation factor
// and the input prior, and read off u_t = K_t x_t + k_t with covariance
// Sigma_k.
inline LinearGaussianController extract_controller(
    const Environment& env, const std::vector<MessageState>& msgs,
    const Priors& priors, double alpha) {
  const int T = static_cast<int>(msgs.size()) - 1;
  const Matd Lxi = alpha * env.obs.Theta;
  LinearGaussianController ctrl;
  ctrl.K.reserve(T);
  ctrl.k.reserve(T);
  ctrl.Sigma_k.reserve(T);
  for (int t = 0; t < T; ++t) {
    const MessageState& m = msgs[t];
    const Matd& A = m.model.dyn.A;
    const Matd& B = m.model.dyn.B;
    const Vecd& a = m.model.dyn.a;
    const Matd& E = m.model.obs.E;
    const Matd& F = m.model.obs.F;
    const Vecd& e = m.model.obs.e;
    const Canonical& bw = msgs[t + 1].bx;
    // backward message widened by the process noise
    const Matd Lam_bar = detail::shrink_precision(bw.Lambda, env.Sigma_eta);
    const Vecd nu_bar = detail::shrink_shift(bw.Lambda, env.Sigma_eta, bw.nu);
    const Canonical up = to_canonical(priors.u[t], "extract_controller u prior");
    const Matd Lam_cond = symmetrize(
        Matd(up.Lambda + F.transpose() * Lxi * F + B.transpose() * Lam_bar * B));
    const Matd Sk = spd_inverse(Lam_cond, "extract_controller Lam_cond");
    ctrl.K.push_back(
        Matd(-Sk * (F.transpose() * Lxi * E + B.transpose() * Lam_bar * A)));
    ctrl.k.push_back(Vecd(Sk * (up.nu + F.transpose() * Lxi * (env.obs.z_g - e) +
                                B.transpose() * (nu_bar - Lam_bar * a))));
    ctrl.Sigma_k.push_back(Sk);
  }
  return ctrl;
}

// B.4 diagnostics at the addition node feeding x_{t+1}:
//   Gamma = Lam_fwd_x''' (Lam_bwd + Lam_fwd_x''')^-1
//   Psi   = I + Sigma_fwd_x''' Lam_bwd_x'''
// where Lam_bwd_x''' is the backward message seen by the x''' edge, i.e. the
// backward on x_{t+1} widened by the forward covariance of u''.
inline std::pair<Matd, Matd> compute_gamma_psi(const Gaussian& fx3,
                                               const Gaussian& fu2,
                                               const Canonical& bx_next) {
  const Matd Lam_f = spd_inverse(fx3.Sigma, "compute_gamma_psi forward");
  const Matd Gamma =
      Lam_f * spd_inverse(Matd(bx_next.Lambda + Lam_f), "compute_gamma_psi sum");
  const Matd Lam_b3 = detail::shrink_precision(bx_next.Lambda, fu2.Sigma);
  const Matd I = Matd::Identity(fx3.dim(), fx3.dim());
  const Matd Psi = I + fx3.Sigma * Lam_b3;
  return {Gamma, Psi};
}

// Closed-form backward recursion for the canonical backward state messages,
// written directly in Riccati style (no marginals or auxiliaries):
//   S_t        = Sigma_eta + B Sigma_u' B'
//   Lambda_t   = E' M E + A' (I + Lambda_{t+1} S_t)^-1 Lambda_{t+1} A
//   nu_t       = E' M (z - F mu_u - e)
//              + A' (I + Lambda_{t+1} S_t)^-1 (nu_{t+1} - Lambda_{t+1}(a + mu_u''))
// with M = (Sigma_xi + F Sigma_u F')^-1. Uses only forward-pass quantities and
// the stored linearizations, so it cross-checks backward_pass independently.
inline std::vector<Canonical> riccati_backward(
    const Environment& env, const std::vector<MessageState>& msgs,
    const Canonical& terminal) {
  const int T = static_cast<int>(msgs.size()) - 1;
  std::vector<Canonical> bw(T + 1);
  bw[T] = terminal;
  for (int t = T - 1; t >= 0; --t) {
    const MessageState& m = msgs[t];
    const Matd& A = m.model.dyn.A;
    const Matd& B = m.model.dyn.B;
    const Vecd& a = m.model.dyn.a;
    const Matd& E = m.model.obs.E;
    const Matd& F = m.model.obs.F;
    const Vecd& e = m.model.obs.e;
    const Matd M = spd_inverse(
        Matd(m.model.obs.Sigma_xi + F * m.fu.Sigma * F.transpose()),
        "riccati_backward M");
    const Matd S = symmetrize(Matd(env.Sigma_eta + B * m.fu1.Sigma * B.transpose()));
    const Matd& Ln = bw[t + 1].Lambda;
    const Matd I = Matd::Identity(env.d_x, env.d_x);
    const Eigen::PartialPivLU<Matd> lu(Matd(I + Ln * S));
    const Matd Lam =
        symmetrize(Matd(E.transpose() * M * E +
                        A.transpose() * lu.solve(Matd(Ln * A))));
    const Vecd nu =
        E.transpose() * (M * (env.obs.z_g - F * m.fu.mu - e)) +
        A.transpose() * lu.solve(Vecd(bw[t + 1].nu - Ln * (a + m.fu2.mu)));
    bw[t] = Canonical(nu, Lam);
  }
  return bw;
}

// Iterate score: deterministic closed-loop cost of the controller extracted
// from this iterate, i.e. the quantity a deployed controller is judged by.
// Divergent rollouts score +inf.
inline IterateScore closed_loop_score(const Environment& env) {
  return [&env](const std::vector<MessageState>& msgs, const Priors& priors,
                double alpha) {
    const LinearGaussianController ctrl =
        extract_controller(env, msgs, priors, alpha);
    std::vector<Vecd> xs{priors.x0.mu};
    std::vector<Vecd> us;
    try {
      for (int t = 0; t < ctrl.horizon(); ++t) {
        us.push_back(env.clip(Vecd(ctrl.K[t] * xs.back() + ctrl.k[t])));
        xs.push_back(env_step(env, xs.back(), us.back()));
      }
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
    return trajectory_cost(env.obs, xs, us);
  };
}

struct TrajoptResult {
  EmResult em;
  LinearGaussianController controller;
};

// Full trajectory optimization: EM with closed-loop iterate selection, then
// controller extraction from the selected iterate's refreshed priors.
inline TrajoptResult solve_trajopt(const Environment& env, const Priors& priors,
                                   EmConfig cfg) {
  if (!cfg.iterate_score) cfg.iterate_score = closed_loop_score(env);
  TrajoptResult res;
  res.em = em_iterate(env, priors, cfg);
  if (res.em.iterations == 0) {
    // no EM: the controller is the prior policy (zero feedback)
    for (const Gaussian& g : res.em.refreshed_priors.u) {
      res.controller.K.push_back(Matd::Zero(env.d_u, env.d_x));
      res.controller.k.push_back(g.mu);
      res.controller.Sigma_k.push_back(g.Sigma);
    }
    return res;
  }
  res.controller = extract_controller(env, res.em.msgs,
                                      res.em.refreshed_priors,
                                      res.em.refreshed_alpha);
  return res;
}

}  // namespace i2c
