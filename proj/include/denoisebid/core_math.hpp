// Scalar and 2-vector numerical kernels shared by the prior, posterior and
// bidding layers. Everything here is pure and thread-safe.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace denoisebid {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Matrix2 = Eigen::Matrix<Scalar, 2, 2>;

/// Univariate normal in logit units.
template <typename Scalar>
struct Gaussian1 {
  Scalar mean{0};
  Scalar variance{1};
};

/// Bivariate normal in logit units; covariance is symmetric positive definite.
template <typename Scalar>
struct Gaussian2 {
  Vector2<Scalar> mean = Vector2<Scalar>::Zero();
  Matrix2<Scalar> covariance = Matrix2<Scalar>::Identity();
};

using Gaussian1D = Gaussian1<double>;
using Gaussian2D = Gaussian2<double>;

/// Result of multiplying a Gaussian likelihood kernel by a Gaussian prior:
/// `likelihood * prior = evidence * N(. | posterior)`.
template <typename Gaussian>
struct GaussianProduct {
  double evidence = 0;
  double log_evidence = 0;
  Gaussian posterior;
};

// ---------------------------------------------------------------------------
// Logit transforms

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Scalar logit(Scalar p) {
  using std::log;
  using std::log1p;
  if (!(p > Scalar(0) && p < Scalar(1)))
    throw std::domain_error("logit: probability must lie in (0, 1)");
  return log(p) - log1p(-p);
}

// ---------------------------------------------------------------------------
// Densities

template <typename Scalar>
Scalar normal_logpdf(Scalar x, Scalar mean, Scalar variance) {
  using std::log;
  const Scalar d = x - mean;
  return Scalar(-0.5) * (log(Scalar(2) * std::numbers::pi_v<Scalar> * variance) + d * d / variance);
}

template <typename Scalar>
Scalar normal_pdf(Scalar x, Scalar mean, Scalar variance) {
  using std::exp;
  return exp(normal_logpdf(x, mean, variance));
}

template <typename Scalar>
Scalar normal_logpdf(const Vector2<Scalar>& x, const Vector2<Scalar>& mean, const Matrix2<Scalar>& cov) {
  using std::log;
  const Scalar det = cov.determinant();
  const Vector2<Scalar> d = x - mean;
  // closed-form 2x2 inverse quadratic form
  const Scalar quad =
      (cov(1, 1) * d(0) * d(0) - Scalar(2) * cov(0, 1) * d(0) * d(1) + cov(0, 0) * d(1) * d(1)) / det;
  return -log(Scalar(2) * std::numbers::pi_v<Scalar>) - Scalar(0.5) * log(det) - Scalar(0.5) * quad;
}

template <typename Scalar>
Scalar normal_pdf(const Vector2<Scalar>& x, const Vector2<Scalar>& mean, const Matrix2<Scalar>& cov) {
  using std::exp;
  return exp(normal_logpdf(x, mean, cov));
}

// ---------------------------------------------------------------------------
// Matrix predicates

template <typename Scalar>
bool is_symmetric(const Matrix2<Scalar>& m, Scalar rel_tol = Scalar(1e-12)) {
  using std::abs;
  const Scalar scale = std::max<Scalar>(Scalar(1), m.cwiseAbs().maxCoeff());
  return abs(m(0, 1) - m(1, 0)) <= rel_tol * scale;
}

/// Positive definite via leading entry and determinant (equivalent to both
/// eigenvalues positive for a symmetric 2x2).
template <typename Scalar>
bool is_positive_definite(const Matrix2<Scalar>& m) {
  return is_symmetric(m) && m(0, 0) > Scalar(0) && m.trace() > Scalar(0) && m.determinant() > Scalar(0);
}

/// Positive semidefinite with a small absolute slack on the determinant.
template <typename Scalar>
bool is_positive_semidefinite(const Matrix2<Scalar>& m, Scalar tol = Scalar(1e-12)) {
  const Scalar scale = std::max<Scalar>(Scalar(1), m.cwiseAbs().maxCoeff());
  return is_symmetric(m) && m(0, 0) >= -tol * scale && m(1, 1) >= -tol * scale &&
         m.determinant() >= -tol * scale * scale;
}

// ---------------------------------------------------------------------------
// Gaussian products

namespace detail {

// Gain form of the product. Accepts a zero (or singular, in 2D) likelihood
// covariance, which is the noiseless limit; the prior must be proper.
template <typename Scalar>
GaussianProduct<Gaussian1<Scalar>> condition(Scalar center, Scalar noise_var, const Gaussian1<Scalar>& prior) {
  using std::exp;
  const Scalar total = noise_var + prior.variance;
  const Scalar gain = prior.variance / total;
  GaussianProduct<Gaussian1<Scalar>> out;
  out.log_evidence = static_cast<double>(normal_logpdf(center, prior.mean, total));
  out.evidence = exp(out.log_evidence);
  out.posterior.mean = prior.mean + gain * (center - prior.mean);
  out.posterior.variance = noise_var * gain;
  return out;
}

template <typename Scalar>
GaussianProduct<Gaussian2<Scalar>> condition(const Vector2<Scalar>& center, const Matrix2<Scalar>& noise_cov,
                                             const Gaussian2<Scalar>& prior) {
  using std::exp;
  const Matrix2<Scalar> total = noise_cov + prior.covariance;
  const Matrix2<Scalar> total_inv = total.inverse();
  const Matrix2<Scalar> gain = prior.covariance * total_inv;
  GaussianProduct<Gaussian2<Scalar>> out;
  out.log_evidence = static_cast<double>(normal_logpdf(center, prior.mean, total));
  out.evidence = exp(out.log_evidence);
  out.posterior.mean = prior.mean + gain * (center - prior.mean);
  const Matrix2<Scalar> cov = prior.covariance - gain * prior.covariance;
  out.posterior.covariance = Scalar(0.5) * (cov + cov.transpose());
  return out;
}

}  // namespace detail

/// N(center | x, likelihood_var) * N(x | prior) = evidence * N(x | posterior).
template <typename Scalar>
GaussianProduct<Gaussian1<Scalar>> gaussian_product_1d(Scalar likelihood_center, Scalar likelihood_var,
                                                       const Gaussian1<Scalar>& prior) {
  if (!(likelihood_var > Scalar(0)) || !(prior.variance > Scalar(0)))
    throw std::domain_error("gaussian_product_1d: variances must be positive");
  return detail::condition(likelihood_center, likelihood_var, prior);
}

template <typename Scalar>
GaussianProduct<Gaussian2<Scalar>> gaussian_product_2d(const Vector2<Scalar>& likelihood_center,
                                                       const Matrix2<Scalar>& likelihood_cov,
                                                       const Gaussian2<Scalar>& prior) {
  if (!is_positive_definite(likelihood_cov) || !is_positive_definite(prior.covariance))
    throw std::domain_error("gaussian_product_2d: covariances must be positive definite");
  return detail::condition(likelihood_center, likelihood_cov, prior);
}

// ---------------------------------------------------------------------------
// Sigmoid-Gaussian integrals

/// Probit approximation of E[sigmoid(x)], x ~ g.
template <typename Scalar>
Scalar probit_sigmoid_gaussian(const Gaussian1<Scalar>& g) {
  using std::sqrt;
  const Scalar scale = sqrt(Scalar(1) + std::numbers::pi_v<Scalar> / Scalar(8) * g.variance);
  return sigmoid(g.mean / scale);
}

/// Lower-triangular L with L * L^T = cov, using the explicit 2x2 formula.
template <typename Scalar>
Matrix2<Scalar> cholesky_2x2(const Matrix2<Scalar>& cov) {
  using std::sqrt;
  if (!is_symmetric(cov)) throw std::domain_error("cholesky_2x2: matrix is not symmetric");
  const Scalar s1 = cov(0, 0);
  const Scalar s0 = cov(1, 0);
  const Scalar s2 = cov(1, 1);
  if (!(s1 > Scalar(0))) throw std::domain_error("cholesky_2x2: matrix is not positive definite");
  const Scalar schur = s2 - s0 * s0 / s1;
  if (!(schur > Scalar(0))) throw std::domain_error("cholesky_2x2: matrix is not positive definite");
  Matrix2<Scalar> l;
  l << sqrt(s1), Scalar(0), s0 / sqrt(s1), sqrt(schur);
  return l;
}

/// Gauss-Hermite rule in the physicists' convention (nodes a_i for weight
/// exp(-x^2)), with weights divided by sqrt(pi) so they sum to one. Under
/// this normalization E[f(z)], z ~ N(0,1), is approximated by
/// sum_i weights[i] * f(sqrt(2) * nodes[i]).
struct QuadratureGrid {
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline constexpr int kMaxQuadratureOrder = 20;

/// Builds the M-point rule by Golub-Welsch (eigen-decomposition of the
/// Hermite Jacobi matrix). Throws std::domain_error for M outside [1, 20].
QuadratureGrid gh_grid(int order);

/// Tensor-product Gauss-Hermite approximation of E[f(eta)], eta ~ g, with
/// nodes mu + sqrt(2) L (a_i, a_j)^T. Singular covariances are regularized
/// once by adding 1e-10 I before the Cholesky factorization.
template <typename Scalar, typename F>
Scalar gh_expectation(const Gaussian2<Scalar>& g, const QuadratureGrid& grid, F&& f) {
  Matrix2<Scalar> l;
  try {
    l = cholesky_2x2(g.covariance);
  } catch (const std::domain_error&) {
    l = cholesky_2x2<Scalar>(g.covariance + Scalar(1e-10) * Matrix2<Scalar>::Identity());
  }
  const Scalar root2 = std::numbers::sqrt2_v<Scalar>;
  Scalar total(0);
  for (int i = 0; i < grid.order; ++i) {
    for (int j = 0; j < grid.order; ++j) {
      const Vector2<Scalar> a(Scalar(grid.nodes[i]), Scalar(grid.nodes[j]));
      const Vector2<Scalar> eta = g.mean + root2 * (l * a);
      total += Scalar(grid.weights[i] * grid.weights[j]) * f(eta);
    }
  }
  return total;
}

/// Gauss-Hermite approximation of E[sigmoid(eta_0) * sigmoid(eta_1)].
template <typename Scalar>
Scalar gh_sigmoid_product(const Gaussian2<Scalar>& g, const QuadratureGrid& grid) {
  return gh_expectation(g, grid, [](const Vector2<Scalar>& eta) { return sigmoid(eta(0)) * sigmoid(eta(1)); });
}

/// log(sum(exp(values))) without overflow; -inf for an empty or all -inf input.
inline double log_sum_exp(const double* values, std::size_t n) {
  double hi = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) hi = std::max(hi, values[i]);
  if (!std::isfinite(hi)) return hi;
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(values[i] - hi);
  return hi + std::log(acc);
}

}  // namespace denoisebid
