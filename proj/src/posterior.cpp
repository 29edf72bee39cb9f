#include "denoisebid/posterior.hpp"

namespace denoisebid {

namespace {

template <typename Posterior>
void normalize_log_weights(Posterior& post, std::vector<double>& log_w, const std::vector<double>& distance) {
  const double norm = log_sum_exp(log_w.data(), log_w.size());
  post.weights.resize(log_w.size());
  if (!std::isfinite(norm)) {
    const auto nearest = static_cast<std::size_t>(
        std::min_element(distance.begin(), distance.end()) - distance.begin());
    std::fill(post.weights.begin(), post.weights.end(), 0.0);
    post.weights[nearest] = 1.0;
    post.fallback = true;
    return;
  }
  for (std::size_t k = 0; k < log_w.size(); ++k) post.weights[k] = std::exp(log_w[k] - norm);
}

}  // namespace

PosteriorComponents1D posterior_components(const NoisyObservation1D& obs, const GmmPrior1D& prior) {
  if (!(obs.noise_variance >= 0) || !std::isfinite(obs.logit))
    throw std::invalid_argument("posterior_components: invalid observation");
  PosteriorComponents1D post;
  std::vector<double> log_w(prior.size());
  std::vector<double> distance(prior.size());
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const auto product = detail::condition(obs.logit, obs.noise_variance, prior.components[k]);
    log_w[k] = std::log(prior.weights[k]) + product.log_evidence;
    distance[k] = std::abs(obs.logit - prior.components[k].mean);
    post.components.push_back(product.posterior);
  }
  normalize_log_weights(post, log_w, distance);
  return post;
}

PosteriorComponents2D posterior_components(const NoisyObservation2D& obs, const GmmPrior2D& prior) {
  if (!obs.logits.allFinite() || !is_positive_semidefinite(obs.noise_cov))
    throw std::invalid_argument("posterior_components: invalid observation");
  PosteriorComponents2D post;
  std::vector<double> log_w(prior.size());
  std::vector<double> distance(prior.size());
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const auto product = detail::condition<double>(obs.logits, obs.noise_cov, prior.components[k]);
    log_w[k] = std::log(prior.weights[k]) + product.log_evidence;
    distance[k] = (obs.logits - prior.components[k].mean).norm();
    post.components.push_back(product.posterior);
  }
  normalize_log_weights(post, log_w, distance);
  return post;
}

double denoised_ctr(const PosteriorComponents1D& posterior) {
  double total = 0;
  for (std::size_t k = 0; k < posterior.weights.size(); ++k)
    total += posterior.weights[k] * probit_sigmoid_gaussian(posterior.components[k]);
  return total;
}

double denoised_ctr(const NoisyObservation1D& obs, const GmmPrior1D& prior) {
  return denoised_ctr(posterior_components(obs, prior));
}

double denoised_ctr_joint(const PosteriorComponents2D& posterior) {
  double total = 0;
  for (std::size_t k = 0; k < posterior.weights.size(); ++k) {
    const auto& c = posterior.components[k];
    total += posterior.weights[k] * probit_sigmoid_gaussian(Gaussian1D{c.mean(0), c.covariance(0, 0)});
  }
  return total;
}

double denoised_ctr_joint(const NoisyObservation2D& obs, const GmmPrior2D& prior) {
  return denoised_ctr_joint(posterior_components(obs, prior));
}

double denoised_value_joint(const PosteriorComponents2D& posterior, const QuadratureGrid& grid) {
  double total = 0;
  for (std::size_t k = 0; k < posterior.weights.size(); ++k)
    total += posterior.weights[k] * gh_sigmoid_product(posterior.components[k], grid);
  return total;
}

double denoised_value_joint(const NoisyObservation2D& obs, const GmmPrior2D& prior, const QuadratureGrid& grid) {
  return denoised_value_joint(posterior_components(obs, prior), grid);
}

}  // namespace denoisebid
