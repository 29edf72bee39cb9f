// Gaussian-mixture priors over logit-CTR (1D) and joint logit-CTR/CVR (2D),
// fitted from heteroscedastically noisy observations by extreme
// deconvolution EM.
#pragma once

#include "denoisebid/core_math.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace denoisebid {

struct GmmPrior1D {
  std::vector<double> weights;
  std::vector<Gaussian1D> components;

  [[nodiscard]] std::size_t size() const { return weights.size(); }
  /// Throws std::invalid_argument unless weights are a positive simplex and
  /// every variance is positive.
  void validate() const;
};

struct GmmPrior2D {
  std::vector<double> weights;
  std::vector<Gaussian2D> components;

  [[nodiscard]] std::size_t size() const { return weights.size(); }
  void validate() const;
};

struct NoisyObservation1D {
  double logit = 0;
  double noise_variance = 0;
};

struct NoisyObservation2D {
  Eigen::Vector2d logits = Eigen::Vector2d::Zero();
  Eigen::Matrix2d noise_cov = Eigen::Matrix2d::Zero();
};

struct FitConfig {
  int components = 3;
  int max_iterations = 300;
  /// Stop once the total log-likelihood improves by less than this.
  double loglik_tolerance = 2.0e-5;
  int restarts = 3;
  std::uint64_t seed = 0;
  double variance_floor = 1e-6;
  double min_weight = 1e-8;

  void validate() const;
};

struct FitDiagnostics {
  int iterations = 0;
  bool converged = false;
  int best_restart = 0;
  int pruned_components = 0;
  bool variance_floored = false;
  double final_loglik = 0;
  /// Total log-likelihood before the first EM step and after every step.
  std::vector<double> loglik_trace;
};

template <typename Prior>
struct FitResult {
  Prior prior;
  FitDiagnostics diagnostics;
};

/// One EM update and the log-likelihood of the prior it started from.
template <typename Prior>
struct EmStep {
  Prior prior;
  double loglik_before = 0;
  bool variance_floored = false;
  int pruned_components = 0;
};

/// sum_t log sum_k pi_k N(obs_t | mu_k, theta_k^2 + sigma_t^2).
double marginal_loglik(const GmmPrior1D& prior, std::span<const NoisyObservation1D> obs);
double marginal_loglik(const GmmPrior2D& prior, std::span<const NoisyObservation2D> obs);

/// Single extreme-deconvolution EM step. With all noise variances zero this
/// is exactly a standard GMM EM step.
EmStep<GmmPrior1D> xd_em_step(const GmmPrior1D& prior, std::span<const NoisyObservation1D> obs,
                              const FitConfig& config = {});
EmStep<GmmPrior2D> xd_em_step(const GmmPrior2D& prior, std::span<const NoisyObservation2D> obs,
                              const FitConfig& config = {});

/// EM from `prior` until tolerance or the iteration cap.
FitResult<GmmPrior1D> xd_em_run(GmmPrior1D prior, std::span<const NoisyObservation1D> obs,
                                const FitConfig& config);
FitResult<GmmPrior2D> xd_em_run(GmmPrior2D prior, std::span<const NoisyObservation2D> obs,
                                const FitConfig& config);

/// Best-of-restarts fit. Requires at least `config.components` observations.
FitResult<GmmPrior1D> xdgmm_fit(std::span<const NoisyObservation1D> obs, const FitConfig& config);
FitResult<GmmPrior2D> xdgmm_fit(std::span<const NoisyObservation2D> obs, const FitConfig& config);

/// Initial mixtures used by the fitter. Restart 0 spreads means over
/// quantiles of the observations; later restarts pick random observations.
GmmPrior1D initial_prior(std::span<const NoisyObservation1D> obs, int components, int restart, std::uint64_t seed);
GmmPrior2D initial_prior(std::span<const NoisyObservation2D> obs, int components, int restart, std::uint64_t seed);

std::vector<double> sample_prior(const GmmPrior1D& prior, std::size_t n, std::uint64_t seed);
std::vector<Eigen::Vector2d> sample_prior(const GmmPrior2D& prior, std::size_t n, std::uint64_t seed);

/// Prior text format:
///
///     gmm <dim> <K>
///     <weight> <mean> <variance>                          (dim 1, K rows)
///     <weight> <mean0> <mean1> <cov00> <cov01> <cov11>    (dim 2, K rows)
///
/// Lines starting with '#' are ignored. Values are written with 17
/// significant digits so a round trip is exact.
void write_prior(std::ostream& out, const GmmPrior1D& prior);
void write_prior(std::ostream& out, const GmmPrior2D& prior);
/// Returns the dimension (1 or 2) of the prior found in the stream and fills
/// the matching output. Throws std::runtime_error on malformed input.
int read_prior(std::istream& in, GmmPrior1D& prior1, GmmPrior2D& prior2);

}  // namespace denoisebid
