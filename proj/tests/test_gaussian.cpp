#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "i2c/gaussian.hpp"

#include <cmath>
#include <random>

using namespace i2c;
using testutil::rel_err;

TEST_CASE("linear_transform_fwd") {
  SUBCASE("identity") {
    Gaussian x(Vecd({{1.0, 2.0}}), Matd(Matd::Identity(2, 2)));
    const Gaussian y = linear_transform_fwd(Matd(Matd::Identity(2, 2)), x);
    CHECK(y.mu.isApprox(x.mu));
    CHECK(y.Sigma.isApprox(x.Sigma));
  }
  SUBCASE("diagonal scaling") {
    Matd A(2, 2);
    A << 2, 0, 0, 3;
    Gaussian x(Vecd({{1.0, 1.0}}), Matd(Matd::Identity(2, 2)));
    const Gaussian y = linear_transform_fwd(A, x);
    CHECK(y.mu.isApprox(Vecd({{2.0, 3.0}})));
    CHECK(y.Sigma.isApprox(Matd(Vecd({{4.0, 9.0}}).asDiagonal())));
  }
  SUBCASE("sum of independent Gaussians") {
    Matd A(1, 2);
    A << 1, 1;
    Gaussian x(Vecd({{1.0, 2.0}}), Matd(Matd::Identity(2, 2)));
    const Gaussian y = linear_transform_fwd(A, x);
    CHECK(y.mu[0] == doctest::Approx(3.0));
    CHECK(y.Sigma(0, 0) == doctest::Approx(2.0));
  }
  SUBCASE("dimension mismatch throws") {
    Gaussian x(Vecd::Zero(2), Matd(Matd::Identity(2, 2)));
    CHECK_THROWS_AS(linear_transform_fwd(Matd(Matd::Identity(3, 3)), x),
                    DimensionError);
  }
}

TEST_CASE("linear_transform_bwd") {
  SUBCASE("identity") {
    Canonical g(Vecd({{1.0, -2.0}}), Matd(2.0 * Matd::Identity(2, 2)));
    const Canonical h = linear_transform_bwd(Matd(Matd::Identity(2, 2)), g);
    CHECK(h.nu.isApprox(g.nu));
    CHECK(h.Lambda.isApprox(g.Lambda));
  }
  SUBCASE("column selector") {
    Matd A(2, 1);
    A << 1, 0;
    Canonical y(Vecd({{1.0, 1.0}}), Matd(Matd::Identity(2, 2)));
    const Canonical x = linear_transform_bwd(A, y);
    CHECK(x.nu[0] == doctest::Approx(1.0));
    CHECK(x.Lambda(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("zero matrix annihilates") {
    Canonical y(Vecd({{1.0, 1.0}}), Matd(Matd::Identity(2, 2)));
    const Canonical x = linear_transform_bwd(Matd(Matd::Zero(2, 3)), y);
    CHECK(x.nu.isZero());
    CHECK(x.Lambda.isZero());
  }
}

TEST_CASE("add_fwd") {
  SUBCASE("zero noise") {
    Gaussian x(Vecd::Zero(2), Matd(Matd::Identity(2, 2)));
    Gaussian z(Vecd::Zero(2), Matd(Matd::Zero(2, 2)));
    const Gaussian y = add_fwd(x, z);
    CHECK(y.mu.isZero());
    CHECK(y.Sigma.isApprox(x.Sigma));
  }
  SUBCASE("scalar convolution") {
    Gaussian x(Vecd({{1.0}}), Matd({{2.0}}));
    Gaussian z(Vecd({{3.0}}), Matd({{4.0}}));
    const Gaussian y = add_fwd(x, z);
    CHECK(y.mu[0] == doctest::Approx(4.0));
    CHECK(y.Sigma(0, 0) == doctest::Approx(6.0));
  }
  SUBCASE("deterministic offset") {
    Gaussian x(Vecd({{1.0, 2.0}}), Matd(0.5 * Matd::Identity(2, 2)));
    Gaussian z(Vecd({{-1.0, 1.0}}), Matd(Matd::Zero(2, 2)));
    const Gaussian y = add_fwd(x, z);
    CHECK(y.mu.isApprox(Vecd({{0.0, 3.0}})));
    CHECK(y.Sigma.isApprox(x.Sigma));
  }
}

TEST_CASE("equality_fuse") {
  SUBCASE("vacuous message is identity") {
    Canonical a(Vecd({{1.0, 2.0}}), Matd(3.0 * Matd::Identity(2, 2)));
    const Canonical c = equality_fuse(a, Canonical::Vacuous(2));
    CHECK(c.nu.isApprox(a.nu));
    CHECK(c.Lambda.isApprox(a.Lambda));
  }
  SUBCASE("symmetric fusion preserves mean") {
    Canonical a(Vecd({{1.0}}), Matd({{1.0}}));
    const Canonical c = equality_fuse(a, a);
    CHECK(c.nu[0] == doctest::Approx(2.0));
    CHECK(c.Lambda(0, 0) == doctest::Approx(2.0));
    CHECK(to_moment(c).mu[0] == doctest::Approx(to_moment(a).mu[0]));
  }
  SUBCASE("density-grid product oracle (3-dim)") {
    std::mt19937_64 rng(11);
    const Gaussian ga(testutil::random_vector(rng, 3),
                      testutil::random_spd(rng, 3, 0.5));
    const Gaussian gb(testutil::random_vector(rng, 3),
                      testutil::random_spd(rng, 3, 0.5));
    const Gaussian prod =
        to_moment(equality_fuse(to_canonical(ga), to_canonical(gb)));

    // Riemann sum of the pointwise product density on a grid around the
    // (analytic) product, wide enough that truncation error is negligible.
    const Matd La = spd_inverse(ga.Sigma, "grid a");
    const Matd Lb = spd_inverse(gb.Sigma, "grid b");
    const int n = 61;
    const double half = 7.0;
    std::vector<double> axis(n);
    Vecd sd(3);
    for (int i = 0; i < 3; ++i) sd[i] = std::sqrt(prod.Sigma(i, i));
    double w_sum = 0.0;
    Vecd mean = Vecd::Zero(3);
    Matd second = Matd::Zero(3, 3);
    Vecd p(3);
    for (int i = 0; i < n; ++i)
      axis[i] = -half + 2.0 * half * i / (n - 1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          p << prod.mu[0] + axis[i] * sd[0], prod.mu[1] + axis[j] * sd[1],
              prod.mu[2] + axis[k] * sd[2];
          const Vecd da = p - ga.mu, db = p - gb.mu;
          const double w =
              std::exp(-0.5 * (da.dot(La * da) + db.dot(Lb * db)));
          w_sum += w;
          mean += w * p;
          second += w * p * p.transpose();
        }
    mean /= w_sum;
    const Matd cov = second / w_sum - mean * mean.transpose();
    CHECK(rel_err(mean, prod.mu) < 1e-6);
    CHECK(rel_err(cov, prod.Sigma) < 1e-6);
  }
}

TEST_CASE("fuse_marginal") {
  SUBCASE("vacuous backward returns forward") {
    Gaussian f(Vecd({{1.0, 2.0}}), Matd(2.0 * Matd::Identity(2, 2)));
    const Gaussian m = fuse_marginal(f, Canonical::Vacuous(2));
    CHECK(m.mu.isApprox(f.mu, 1e-10));
    CHECK(m.Sigma.isApprox(f.Sigma, 1e-10));
  }
  SUBCASE("scalar Bayes update") {
    Gaussian f(Vecd::Zero(1), Matd({{1.0}}));
    Canonical b(Vecd({{1.0}}), Matd({{1.0}}));
    const Gaussian m = fuse_marginal(f, b);
    CHECK(m.mu[0] == doctest::Approx(0.5));
    CHECK(m.Sigma(0, 0) == doctest::Approx(0.5));
  }
  SUBCASE("two identical isotropic beliefs halve the covariance") {
    Gaussian f(Vecd({{1.0, -1.0}}), Matd(2.0 * Matd::Identity(2, 2)));
    const Gaussian m = fuse_marginal(f, to_canonical(f));
    CHECK(m.mu.isApprox(f.mu, 1e-10));
    CHECK(m.Sigma.isApprox(Matd(0.5 * f.Sigma), 1e-10));
  }
  SUBCASE("commutative in canonical form") {
    std::mt19937_64 rng(7);
    const Gaussian a(testutil::random_vector(rng, 3),
                     testutil::random_spd(rng, 3));
    const Gaussian b(testutil::random_vector(rng, 3),
                     testutil::random_spd(rng, 3));
    const Gaussian m1 = fuse_marginal(a, to_canonical(b));
    const Gaussian m2 = fuse_marginal(b, to_canonical(a));
    CHECK(rel_err(m1.mu, m2.mu) < 1e-10);
    CHECK(rel_err(m1.Sigma, m2.Sigma) < 1e-10);
  }
}

TEST_CASE("auxiliary_of") {
  SUBCASE("marginal equal to forward is vacuous") {
    Gaussian f(Vecd({{1.0, 2.0}}), Matd(2.0 * Matd::Identity(2, 2)));
    const Auxiliary a = auxiliary_of(f, f);
    CHECK(a.nu_aux.isZero(1e-12));
    CHECK(a.Lambda_aux.isZero(1e-12));
  }
  SUBCASE("scalar example with backward (1,1)") {
    // fwd = N(0,1), bwd moment (mu=1, Sigma=1) -> marginal (0.5, 0.5);
    // Lambda_aux = 1 - 0.5 = 0.5 = (Sigma_fwd + Sigma_bwd)^-1, nu_aux = -0.5
    Gaussian f(Vecd::Zero(1), Matd({{1.0}}));
    Gaussian marg(Vecd({{0.5}}), Matd({{0.5}}));
    const Auxiliary a = auxiliary_of(f, marg);
    CHECK(a.Lambda_aux(0, 0) == doctest::Approx(0.5));
    CHECK(a.nu_aux[0] == doctest::Approx(-0.5));
  }
  SUBCASE("dual-formula agreement on random 2-dim case") {
    std::mt19937_64 rng(13);
    const Gaussian f(testutil::random_vector(rng, 2),
                     testutil::random_spd(rng, 2));
    const Gaussian bwd(testutil::random_vector(rng, 2),
                       testutil::random_spd(rng, 2));
    const Gaussian marg = fuse_marginal(f, to_canonical(bwd));
    const Auxiliary a = auxiliary_of(f, marg);
    const Matd direct = spd_inverse(Matd(f.Sigma + bwd.Sigma), "dual");
    CHECK(rel_err(a.Lambda_aux, direct) < 1e-8);
  }
}

TEST_CASE("round trip moment <-> canonical") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const Gaussian g(testutil::random_vector(rng, 3),
                     testutil::random_spd(rng, 3));
    const Gaussian h = to_moment(to_canonical(g));
    CHECK(rel_err(h.mu, g.mu) < 1e-8);
    CHECK(rel_err(h.Sigma, g.Sigma) < 1e-8);
    const Canonical c = to_canonical(g);
    const Canonical c2 = to_canonical(to_moment(c));
    CHECK(rel_err(c2.nu, c.nu) < 1e-8);
    CHECK(rel_err(c2.Lambda, c.Lambda) < 1e-8);
  }
}

TEST_CASE("chain marginals match the explicit joint Gaussian") {
  // Chain y = A x with canonical evidence c on y. Edge marginals by message
  // passing must match conditioning of the assembled joint over (x, y).
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const int d = 2;
    Matd A = testutil::random_matrix(rng, d, d);
    A += 2.0 * Matd::Identity(d, d);  // invertible
    const Gaussian x(testutil::random_vector(rng, d),
                     testutil::random_spd(rng, d));
    const Canonical c(testutil::random_vector(rng, d),
                      testutil::random_spd(rng, d, 0.2));

    const Gaussian fy = linear_transform_fwd(A, x);
    const Gaussian my = fuse_marginal(fy, c);
    const Gaussian mx = fuse_marginal(x, linear_transform_bwd(A, c));

    // direct Bayes in canonical coordinates: y = Ax is deterministic, so the
    // evidence pulls back as A' Lambda A on x, and the y marginal is the
    // pushforward of the x posterior
    const Matd Lam_x = x.Sigma.inverse() + A.transpose() * c.Lambda * A;
    const Vecd nu_x = x.Sigma.inverse() * x.mu + A.transpose() * c.nu;
    const Matd cov_x = symmetrize(Lam_x).inverse();
    const Vecd mean_x = cov_x * nu_x;

    CHECK(rel_err(mx.mu, mean_x) < 1e-8);
    CHECK(rel_err(mx.Sigma, cov_x) < 1e-8);
    CHECK(rel_err(my.mu, Vecd(A * mean_x)) < 1e-8);
    CHECK(rel_err(my.Sigma, Matd(A * cov_x * A.transpose())) < 1e-8);
  }
}

TEST_CASE("all returned matrices are symmetric") {
  std::mt19937_64 rng(23);
  const Gaussian g(testutil::random_vector(rng, 3),
                   testutil::random_spd(rng, 3));
  const Matd A = testutil::random_matrix(rng, 3, 3);
  auto sym = [](const Matd& M) {
    return (M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-10;
  };
  CHECK(sym(linear_transform_fwd(A, g).Sigma));
  CHECK(sym(to_canonical(g).Lambda));
  CHECK(sym(fuse_marginal(g, to_canonical(g)).Sigma));
  CHECK(sym(auxiliary_of(g, g).Lambda_aux));
}
