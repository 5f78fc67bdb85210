#pragma once

// Multivariate Gaussian representations and the elementary linear Gaussian
// message passing rules (Forney factor graph style) that the i2c engine is
// composed from. Everything here is value-semantic and thread-safe.

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace i2c {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matd = Mat<double>;
using Vecd = Vec<double>;

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Derived>
Mat<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& M) {
  using S = typename Derived::Scalar;
  return (S(0.5) * (M + M.transpose())).eval();
}

// SPD inverse via Cholesky. On failure, regularize the diagonal once with
// 1e-9 * trace/d and retry; a second failure throws.
template <typename S>
Mat<S> spd_inverse(const Mat<S>& M, const std::string& what) {
  const Eigen::Index d = M.rows();
  if (d != M.cols()) throw DimensionError("spd_inverse: non-square " + what);
  const Mat<S> I = Mat<S>::Identity(d, d);
  Eigen::LLT<Mat<S>> llt(symmetrize(M));
  if (llt.info() == Eigen::Success) {
    Mat<S> inv = llt.solve(I);
    if (inv.allFinite()) return symmetrize(inv);
  }
  const S bump = S(1e-9) * M.trace() / S(d);
  llt.compute(symmetrize(M) + bump * I);
  if (llt.info() != Eigen::Success)
    throw NumericalError("singular matrix in " + what);
  Mat<S> inv = llt.solve(I);
  if (!inv.allFinite()) throw NumericalError("non-finite inverse in " + what);
  return symmetrize(inv);
}

template <typename S>
struct GaussianMomentT {
  Vec<S> mu;
  Mat<S> Sigma;

  GaussianMomentT() = default;
  GaussianMomentT(Vec<S> mu_, const Mat<S>& Sigma_)
      : mu(std::move(mu_)), Sigma(symmetrize(Sigma_)) {
    if (mu.size() != Sigma.rows() || Sigma.rows() != Sigma.cols())
      throw DimensionError("GaussianMoment: mu/Sigma dimension mismatch");
  }
  Eigen::Index dim() const { return mu.size(); }
};

template <typename S>
struct GaussianCanonicalT {
  Vec<S> nu;
  Mat<S> Lambda;  // may be rank deficient (backward messages)

  GaussianCanonicalT() = default;
  GaussianCanonicalT(Vec<S> nu_, const Mat<S>& Lambda_)
      : nu(std::move(nu_)), Lambda(symmetrize(Lambda_)) {
    if (nu.size() != Lambda.rows() || Lambda.rows() != Lambda.cols())
      throw DimensionError("GaussianCanonical: nu/Lambda dimension mismatch");
  }
  static GaussianCanonicalT Vacuous(Eigen::Index d) {
    return GaussianCanonicalT(Vec<S>::Zero(d), Mat<S>::Zero(d, d));
  }
  Eigen::Index dim() const { return nu.size(); }
};

template <typename S>
struct GaussianAuxiliaryT {
  Vec<S> nu_aux;
  Mat<S> Lambda_aux;

  GaussianAuxiliaryT() = default;
  GaussianAuxiliaryT(Vec<S> nu_, const Mat<S>& Lambda_)
      : nu_aux(std::move(nu_)), Lambda_aux(symmetrize(Lambda_)) {}
  Eigen::Index dim() const { return nu_aux.size(); }
};

using Gaussian = GaussianMomentT<double>;
using Canonical = GaussianCanonicalT<double>;
using Auxiliary = GaussianAuxiliaryT<double>;

template <typename S>
GaussianCanonicalT<S> to_canonical(const GaussianMomentT<S>& g,
                                   const std::string& what = "to_canonical") {
  Mat<S> Lambda = spd_inverse(g.Sigma, what);
  return GaussianCanonicalT<S>(Lambda * g.mu, Lambda);
}

template <typename S>
GaussianMomentT<S> to_moment(const GaussianCanonicalT<S>& g,
                             const std::string& what = "to_moment") {
  Mat<S> Sigma = spd_inverse(g.Lambda, what);
  return GaussianMomentT<S>(Sigma * g.nu, Sigma);
}

// y = A x   (moment form, forward rule)
template <typename S>
GaussianMomentT<S> linear_transform_fwd(const Mat<S>& A,
                                        const GaussianMomentT<S>& x) {
  if (A.cols() != x.dim())
    throw DimensionError("linear_transform_fwd: A cols != dim(x)");
  return GaussianMomentT<S>(A * x.mu, symmetrize(A * x.Sigma * A.transpose()));
}

// y = A x   (canonical form, backward rule); result may be rank deficient.
template <typename S>
GaussianCanonicalT<S> linear_transform_bwd(const Mat<S>& A,
                                           const GaussianCanonicalT<S>& y) {
  if (A.rows() != y.dim())
    throw DimensionError("linear_transform_bwd: A rows != dim(y)");
  return GaussianCanonicalT<S>(A.transpose() * y.nu,
                               symmetrize(A.transpose() * y.Lambda * A));
}

// y = x + z  (moment form addition node)
template <typename S>
GaussianMomentT<S> add_fwd(const GaussianMomentT<S>& x,
                           const GaussianMomentT<S>& z) {
  if (x.dim() != z.dim()) throw DimensionError("add_fwd: dimension mismatch");
  return GaussianMomentT<S>(x.mu + z.mu, symmetrize(x.Sigma + z.Sigma));
}

// equality node: precisions and scaled means add
template <typename S>
GaussianCanonicalT<S> equality_fuse(const GaussianCanonicalT<S>& a,
                                    const GaussianCanonicalT<S>& b) {
  if (a.dim() != b.dim())
    throw DimensionError("equality_fuse: dimension mismatch");
  return GaussianCanonicalT<S>(a.nu + b.nu, symmetrize(a.Lambda + b.Lambda));
}

// Posterior of an edge: fuse forward moment with backward canonical.
template <typename S>
GaussianMomentT<S> fuse_marginal(const GaussianMomentT<S>& fwd,
                                 const GaussianCanonicalT<S>& bwd,
                                 const std::string& what = "fuse_marginal") {
  if (fwd.dim() != bwd.dim())
    throw DimensionError("fuse_marginal: dimension mismatch");
  GaussianCanonicalT<S> f = to_canonical(fwd, what + " (fwd precision)");
  Mat<S> Sigma = spd_inverse(Mat<S>(f.Lambda + bwd.Lambda), what);
  return GaussianMomentT<S>(Sigma * (f.nu + bwd.nu), Sigma);
}

// Auxiliary form of an edge given its forward message and marginal:
//   Lambda_aux = Lambda_fwd - Lambda_fwd Sigma_marg Lambda_fwd
//   nu_aux     = nu_fwd - Lambda_fwd mu_marg
template <typename S>
GaussianAuxiliaryT<S> auxiliary_of(const GaussianMomentT<S>& fwd,
                                   const GaussianMomentT<S>& marginal,
                                   const std::string& what = "auxiliary_of") {
  if (fwd.dim() != marginal.dim())
    throw DimensionError("auxiliary_of: dimension mismatch");
  GaussianCanonicalT<S> f = to_canonical(fwd, what);
  return GaussianAuxiliaryT<S>(
      f.nu - f.Lambda * marginal.mu,
      symmetrize(f.Lambda - f.Lambda * marginal.Sigma * f.Lambda));
}

}  // namespace i2c
