#pragma once

// Closed-loop rollout of an extracted controller on the true simulator and
// Monte-Carlo evaluation. Noise comes from a counter-based generator
// (splitmix64 + Box-Muller) so that results are reproducible bit-for-bit
// across platforms regardless of call order.

#include "i2c/gaussian.hpp"
#include "i2c/lqr.hpp"
#include "i2c/models.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace i2c {

// splitmix64: a counter keyed stream; output i of stream `seed` is
// splitmix64(seed, i). Uniform in [0, 2^64).
inline std::uint64_t splitmix64(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t z = seed + (counter + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stateless standard normal stream: pairs of uniforms through Box-Muller,
// indexed by draw number.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : seed_(seed) {}

  double operator()(std::uint64_t index) const {
    const std::uint64_t pair = index / 2;
    const double u1 = to_unit(splitmix64(seed_, 2 * pair));
    const double u2 = to_unit(splitmix64(seed_, 2 * pair + 1));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * M_PI * u2;
    return index % 2 == 0 ? r * std::cos(phi) : r * std::sin(phi);
  }

  Vecd draw(Eigen::Index n, std::uint64_t& counter) const {
    Vecd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = (*this)(counter++);
    return v;
  }

 private:
  // open interval (0, 1]; never 0 so log is finite
  static double to_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 1.0) * 0x1.0p-53;
  }

  std::uint64_t seed_;
};

struct Rollout {
  std::vector<Vecd> xs;  // T+1
  std::vector<Vecd> us;  // T (clipped, as applied)
  double cost = 0.0;
  bool diverged = false;
};

// u_t = clip(K_t x_t + k_t); with `stochastic`, process noise is drawn from
// the stream. A non-finite state marks the trial diverged with infinite cost.
inline Rollout rollout(const Environment& env,
                       const LinearGaussianController& ctrl, bool stochastic,
                       std::uint64_t seed) {
  const int T = ctrl.horizon();
  NormalStream stream(seed);
  std::uint64_t counter = 0;
  Rollout r;
  r.xs.reserve(T + 1);
  r.us.reserve(T);
  r.xs.push_back(env.x0);
  for (int t = 0; t < T; ++t) {
    const Vecd u = env.clip(Vecd(ctrl.K[t] * r.xs.back() + ctrl.k[t]));
    r.us.push_back(u);
    Vecd next;
    try {
      if (stochastic) {
        const Vecd noise = stream.draw(env.d_x, counter);
        next = env_step(env, r.xs.back(), u, &noise);
      } else {
        next = env_step(env, r.xs.back(), u);
      }
    } catch (const NumericalError&) {
      r.diverged = true;
      r.cost = std::numeric_limits<double>::infinity();
      return r;
    }
    r.xs.push_back(next);
  }
  r.cost = trajectory_cost(env.obs, r.xs, r.us);
  return r;
}

struct EvalReport {
  double predicted_cost = 0.0;  // filled by the caller (plan or rollout cost)
  double mean_cost = 0.0;       // over non-divergent trials
  double stddev_cost = 0.0;     // population std over non-divergent trials
  int trials = 0;
  int divergent = 0;
  std::uint64_t seed = 0;
  std::vector<double> costs;  // per trial; +inf for divergent ones
};

// Mean and population std over the finite entries of rep.costs. Deviations
// are taken around the first finite cost, so identical costs give exactly
// zero spread (a mean-centered or one-pass form leaves rounding residue).
inline void finalize_moments(EvalReport& rep) {
  double K = 0.0;
  int ok = 0;
  for (double c : rep.costs) {
    if (std::isfinite(c)) {
      if (ok == 0) K = c;
      ++ok;
    }
  }
  if (ok == 0) return;
  double sm = 0.0, ss = 0.0;
  for (double c : rep.costs) {
    if (std::isfinite(c)) {
      sm += c - K;
      ss += (c - K) * (c - K);
    }
  }
  rep.mean_cost = K + sm / ok;
  rep.stddev_cost = std::sqrt(std::max(ss - sm * sm / ok, 0.0) / ok);
}

// `trials` stochastic rollouts with per-trial seeds derived from `seed`, so a
// trial's noise does not depend on how many trials run before it.
inline EvalReport monte_carlo_eval(const Environment& env,
                                   const LinearGaussianController& ctrl,
                                   int trials, std::uint64_t seed) {
  EvalReport rep;
  rep.trials = trials;
  rep.seed = seed;
  rep.costs.reserve(trials);
  for (int i = 0; i < trials; ++i) {
    const std::uint64_t trial_seed = splitmix64(seed, 0xE7A1ULL + i);
    const Rollout r = rollout(env, ctrl, true, trial_seed);
    rep.costs.push_back(r.cost);
    if (r.diverged) ++rep.divergent;
  }
  finalize_moments(rep);
  return rep;
}

}  // namespace i2c
