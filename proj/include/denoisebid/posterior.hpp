// Denoised posterior expectations of CTR and CTR*CVR given noisy logit
// observations and a Gaussian-mixture prior.
#pragma once

#include "denoisebid/prior_model.hpp"

namespace denoisebid {

struct PosteriorComponents1D {
  std::vector<double> weights;
  std::vector<Gaussian1D> components;
  /// Set when every component evidence underflowed and the nearest prior
  /// component received all the weight.
  bool fallback = false;
};

struct PosteriorComponents2D {
  std::vector<double> weights;
  std::vector<Gaussian2D> components;
  bool fallback = false;
};

/// Posterior mixture of the latent logit. A zero noise variance is the
/// noiseless limit: every component collapses onto the observation.
PosteriorComponents1D posterior_components(const NoisyObservation1D& obs, const GmmPrior1D& prior);
PosteriorComponents2D posterior_components(const NoisyObservation2D& obs, const GmmPrior2D& prior);

/// E[CTR | obs] by the probit closed form applied per posterior component.
double denoised_ctr(const NoisyObservation1D& obs, const GmmPrior1D& prior);
double denoised_ctr(const PosteriorComponents1D& posterior);

/// E[CTR | obs] under the joint model, via the CTR marginal of each component.
double denoised_ctr_joint(const NoisyObservation2D& obs, const GmmPrior2D& prior);
double denoised_ctr_joint(const PosteriorComponents2D& posterior);

/// E[CTR * CVR | obs] by tensor Gauss-Hermite quadrature per component.
double denoised_value_joint(const NoisyObservation2D& obs, const GmmPrior2D& prior, const QuadratureGrid& grid);
double denoised_value_joint(const PosteriorComponents2D& posterior, const QuadratureGrid& grid);

}  // namespace denoisebid
