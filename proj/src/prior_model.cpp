#include "denoisebid/prior_model.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace denoisebid {

namespace {

void validate_weights(const std::vector<double>& weights, std::size_t n_components) {
  if (weights.empty()) throw std::invalid_argument("prior: at least one component is required");
  if (weights.size() != n_components) throw std::invalid_argument("prior: weight/component count mismatch");
  double total = 0;
  for (double w : weights) {
    if (!(w > 0)) throw std::invalid_argument("prior: weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-10) throw std::invalid_argument("prior: weights must sum to one");
}

// Dimension-generic helpers so the EM code below is written once.
double outer(double d) { return d * d; }
Eigen::Matrix2d outer(const Eigen::Vector2d& d) { return d * d.transpose(); }

template <typename T>
T zero_like();
template <>
double zero_like<double>() { return 0.0; }
template <>
Eigen::Vector2d zero_like<Eigen::Vector2d>() { return Eigen::Vector2d::Zero(); }
template <>
Eigen::Matrix2d zero_like<Eigen::Matrix2d>() { return Eigen::Matrix2d::Zero(); }

double& point_of(Gaussian1D& g) { return g.mean; }
double& spread_of(Gaussian1D& g) { return g.variance; }
Eigen::Vector2d& point_of(Gaussian2D& g) { return g.mean; }
Eigen::Matrix2d& spread_of(Gaussian2D& g) { return g.covariance; }
double spread_of(const Gaussian1D& g) { return g.variance; }
const Eigen::Matrix2d& spread_of(const Gaussian2D& g) { return g.covariance; }

GaussianProduct<Gaussian1D> condition_on(const NoisyObservation1D& o, const Gaussian1D& c) {
  return detail::condition(o.logit, o.noise_variance, c);
}
GaussianProduct<Gaussian2D> condition_on(const NoisyObservation2D& o, const Gaussian2D& c) {
  return detail::condition<double>(o.logits, o.noise_cov, c);
}

double log_evidence(const NoisyObservation1D& o, const Gaussian1D& c) {
  return normal_logpdf(o.logit, c.mean, c.variance + o.noise_variance);
}
double log_evidence(const NoisyObservation2D& o, const Gaussian2D& c) {
  return normal_logpdf<double>(o.logits, c.mean, c.covariance + o.noise_cov);
}

bool apply_floor(double& variance, double floor) {
  if (variance >= floor) return false;
  variance = floor;
  return true;
}

bool apply_floor(Eigen::Matrix2d& cov, double floor) {
  cov = 0.5 * (cov + cov.transpose());
  const double half_trace = 0.5 * cov.trace();
  const double disc = std::sqrt(std::max(0.0, 0.25 * (cov(0, 0) - cov(1, 1)) * (cov(0, 0) - cov(1, 1)) +
                                                  cov(0, 1) * cov(0, 1)));
  const double smallest = half_trace - disc;
  if (smallest >= floor) return false;
  cov += (floor - smallest) * Eigen::Matrix2d::Identity();
  return true;
}

template <typename Prior, typename Obs>
double loglik_impl(const Prior& prior, std::span<const Obs> obs) {
  if (obs.empty()) throw std::invalid_argument("marginal_loglik: no observations");
  const std::size_t k_count = prior.size();
  std::vector<double> terms(k_count);
  std::vector<double> log_weights(k_count);
  for (std::size_t k = 0; k < k_count; ++k) log_weights[k] = std::log(prior.weights[k]);
  double total = 0;
  for (const Obs& o : obs) {
    for (std::size_t k = 0; k < k_count; ++k) terms[k] = log_weights[k] + log_evidence(o, prior.components[k]);
    total += log_sum_exp(terms.data(), k_count);
  }
  return total;
}

template <typename Prior, typename Obs>
EmStep<Prior> em_step_impl(const Prior& prior, std::span<const Obs> obs, const FitConfig& config) {
  using Component = typename decltype(prior.components)::value_type;
  using Point = std::remove_cvref_t<decltype(point_of(std::declval<Component&>()))>;
  using Spread = std::remove_cvref_t<decltype(spread_of(std::declval<Component&>()))>;

  if (obs.empty()) throw std::invalid_argument("xd_em_step: no observations");
  const std::size_t n = obs.size();
  const std::size_t k_count = prior.size();

  std::vector<double> log_weights(k_count);
  for (std::size_t k = 0; k < k_count; ++k) log_weights[k] = std::log(prior.weights[k]);

  // E-step: responsibilities and per-sample posterior moments, row-major (t, k).
  std::vector<double> resp(n * k_count);
  std::vector<Point> post_mean(n * k_count);
  std::vector<Spread> post_spread(n * k_count);
  std::vector<double> terms(k_count);
  double loglik = 0;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < k_count; ++k) {
      const auto product = condition_on(obs[t], prior.components[k]);
      terms[k] = log_weights[k] + product.log_evidence;
      post_mean[t * k_count + k] = product.posterior.mean;
      post_spread[t * k_count + k] = spread_of(product.posterior);
    }
    const double norm = log_sum_exp(terms.data(), k_count);
    loglik += norm;
    for (std::size_t k = 0; k < k_count; ++k) resp[t * k_count + k] = std::exp(terms[k] - norm);
  }

  // M-step.
  EmStep<Prior> step;
  step.loglik_before = loglik;
  Prior next;
  for (std::size_t k = 0; k < k_count; ++k) {
    double mass = 0;
    Point mean = zero_like<Point>();
    for (std::size_t t = 0; t < n; ++t) {
      const double r = resp[t * k_count + k];
      mass += r;
      mean += r * post_mean[t * k_count + k];
    }
    const double weight = mass / static_cast<double>(n);
    if (!(weight >= config.min_weight) || mass <= 0) {
      ++step.pruned_components;
      continue;
    }
    mean /= mass;
    Spread spread = zero_like<Spread>();
    for (std::size_t t = 0; t < n; ++t) {
      const double r = resp[t * k_count + k];
      spread += r * (outer(Point(post_mean[t * k_count + k] - mean)) + post_spread[t * k_count + k]);
    }
    spread /= mass;
    step.variance_floored |= apply_floor(spread, config.variance_floor);

    Component c;
    point_of(c) = mean;
    spread_of(c) = spread;
    next.weights.push_back(weight);
    next.components.push_back(c);
  }
  if (next.weights.empty()) throw std::runtime_error("xd_em_step: every component collapsed");
  const double total = std::accumulate(next.weights.begin(), next.weights.end(), 0.0);
  for (double& w : next.weights) w /= total;
  step.prior = std::move(next);
  return step;
}

template <typename Prior, typename Obs>
FitResult<Prior> em_run_impl(Prior prior, std::span<const Obs> obs, const FitConfig& config) {
  config.validate();
  FitResult<Prior> result;
  auto& diag = result.diagnostics;
  for (int it = 0; it < config.max_iterations; ++it) {
    EmStep<Prior> step = em_step_impl<Prior, Obs>(prior, obs, config);
    diag.loglik_trace.push_back(step.loglik_before);
    if (it > 0) {
      const double gain = diag.loglik_trace[it] - diag.loglik_trace[it - 1];
      if (gain < config.loglik_tolerance) {
        diag.converged = true;
        break;
      }
    }
    diag.pruned_components += step.pruned_components;
    diag.variance_floored |= step.variance_floored;
    prior = std::move(step.prior);
    ++diag.iterations;
  }
  if (!diag.converged) diag.loglik_trace.push_back(loglik_impl<Prior, Obs>(prior, obs));
  diag.final_loglik = diag.loglik_trace.back();
  result.prior = std::move(prior);
  return result;
}

template <typename Prior, typename Obs>
FitResult<Prior> fit_impl(std::span<const Obs> obs, const FitConfig& config) {
  config.validate();
  if (obs.size() < static_cast<std::size_t>(config.components))
    throw std::invalid_argument("xdgmm_fit: fewer observations than components");
  FitResult<Prior> best;
  bool have_best = false;
  for (int r = 0; r < config.restarts; ++r) {
    Prior init = initial_prior(obs, config.components, r, config.seed);
    FitResult<Prior> candidate = em_run_impl<Prior, Obs>(std::move(init), obs, config);
    candidate.diagnostics.best_restart = r;
    if (!have_best || candidate.diagnostics.final_loglik > best.diagnostics.final_loglik) {
      best = std::move(candidate);
      have_best = true;
    }
  }
  return best;
}

std::mt19937_64 restart_rng(std::uint64_t seed, int restart) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(restart), 0x5eedu};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> random_picks(std::size_t n, int count, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  // Partial Fisher-Yates; avoids std::sample's unspecified ordering.
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), n - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[pick(rng)]);
  }
  all.resize(static_cast<std::size_t>(count));
  return all;
}

}  // namespace

void GmmPrior1D::validate() const {
  validate_weights(weights, components.size());
  for (const auto& c : components)
    if (!(c.variance > 0) || !std::isfinite(c.mean)) throw std::invalid_argument("prior: invalid component");
}

void GmmPrior2D::validate() const {
  validate_weights(weights, components.size());
  for (const auto& c : components)
    if (!is_positive_definite(c.covariance) || !c.mean.allFinite())
      throw std::invalid_argument("prior: component covariance must be positive definite");
}

void FitConfig::validate() const {
  if (components < 1) throw std::invalid_argument("fit config: components must be >= 1");
  if (max_iterations < 1) throw std::invalid_argument("fit config: max_iterations must be >= 1");
  if (!(loglik_tolerance > 0)) throw std::invalid_argument("fit config: tolerance must be positive");
  if (restarts < 1) throw std::invalid_argument("fit config: restarts must be >= 1");
}

double marginal_loglik(const GmmPrior1D& prior, std::span<const NoisyObservation1D> obs) {
  return loglik_impl<GmmPrior1D, NoisyObservation1D>(prior, obs);
}

double marginal_loglik(const GmmPrior2D& prior, std::span<const NoisyObservation2D> obs) {
  return loglik_impl<GmmPrior2D, NoisyObservation2D>(prior, obs);
}

EmStep<GmmPrior1D> xd_em_step(const GmmPrior1D& prior, std::span<const NoisyObservation1D> obs,
                              const FitConfig& config) {
  return em_step_impl<GmmPrior1D, NoisyObservation1D>(prior, obs, config);
}

EmStep<GmmPrior2D> xd_em_step(const GmmPrior2D& prior, std::span<const NoisyObservation2D> obs,
                              const FitConfig& config) {
  return em_step_impl<GmmPrior2D, NoisyObservation2D>(prior, obs, config);
}

FitResult<GmmPrior1D> xd_em_run(GmmPrior1D prior, std::span<const NoisyObservation1D> obs,
                                const FitConfig& config) {
  return em_run_impl<GmmPrior1D, NoisyObservation1D>(std::move(prior), obs, config);
}

FitResult<GmmPrior2D> xd_em_run(GmmPrior2D prior, std::span<const NoisyObservation2D> obs,
                                const FitConfig& config) {
  return em_run_impl<GmmPrior2D, NoisyObservation2D>(std::move(prior), obs, config);
}

FitResult<GmmPrior1D> xdgmm_fit(std::span<const NoisyObservation1D> obs, const FitConfig& config) {
  return fit_impl<GmmPrior1D, NoisyObservation1D>(obs, config);
}

FitResult<GmmPrior2D> xdgmm_fit(std::span<const NoisyObservation2D> obs, const FitConfig& config) {
  return fit_impl<GmmPrior2D, NoisyObservation2D>(obs, config);
}

GmmPrior1D initial_prior(std::span<const NoisyObservation1D> obs, int components, int restart,
                         std::uint64_t seed) {
  if (obs.size() < static_cast<std::size_t>(components))
    throw std::invalid_argument("initial_prior: fewer observations than components");
  const auto n = obs.size();
  double mean = 0;
  for (const auto& o : obs) mean += o.logit;
  mean /= static_cast<double>(n);
  double var = 0;
  for (const auto& o : obs) var += (o.logit - mean) * (o.logit - mean);
  var = std::max(var / static_cast<double>(n), 1e-6);
  // Deconvolved spread: start the means inside the latent distribution rather
  // than at the quantiles of the noisy logits.
  double noise = 0;
  for (const auto& o : obs) noise += o.noise_variance;
  noise /= static_cast<double>(n);
  const double latent = std::max({var - noise, 1e-2 * var, 1e-6});
  const double shrink = std::sqrt(latent / var);
  auto start = [&](double x) { return mean + shrink * (x - mean); };

  GmmPrior1D prior;
  prior.weights.assign(static_cast<std::size_t>(components), 1.0 / components);
  if (restart == 0) {
    std::vector<double> sorted(n);
    std::transform(obs.begin(), obs.end(), sorted.begin(), [](const auto& o) { return o.logit; });
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k < components; ++k) {
      const auto idx = static_cast<std::size_t>((k + 0.5) / components * static_cast<double>(n - 1) + 0.5);
      prior.components.push_back({start(sorted[std::min(idx, n - 1)]), latent});
    }
  } else {
    auto rng = restart_rng(seed, restart);
    for (std::size_t idx : random_picks(n, components, rng)) prior.components.push_back({start(obs[idx].logit), latent});
  }
  return prior;
}

GmmPrior2D initial_prior(std::span<const NoisyObservation2D> obs, int components, int restart,
                         std::uint64_t seed) {
  if (obs.size() < static_cast<std::size_t>(components))
    throw std::invalid_argument("initial_prior: fewer observations than components");
  const auto n = obs.size();
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& o : obs) mean += o.logits;
  mean /= static_cast<double>(n);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& o : obs) cov += outer(Eigen::Vector2d(o.logits - mean));
  cov /= static_cast<double>(n);
  apply_floor(cov, 1e-6);
  Eigen::Matrix2d noise = Eigen::Matrix2d::Zero();
  for (const auto& o : obs) noise += o.noise_cov;
  noise /= static_cast<double>(n);
  Eigen::Matrix2d latent = cov;
  Eigen::Vector2d shrink;
  for (int a = 0; a < 2; ++a) {
    const double v = std::max({cov(a, a) - noise(a, a), 1e-2 * cov(a, a), 1e-6});
    shrink(a) = std::sqrt(v / cov(a, a));
  }
  latent = shrink.asDiagonal() * cov * shrink.asDiagonal();
  apply_floor(latent, 1e-6);
  auto start = [&](const Eigen::Vector2d& x) -> Eigen::Vector2d {
    return mean + shrink.cwiseProduct(x - mean);
  };

  GmmPrior2D prior;
  prior.weights.assign(static_cast<std::size_t>(components), 1.0 / components);
  if (restart == 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return obs[a].logits(0) < obs[b].logits(0); });
    for (int k = 0; k < components; ++k) {
      const auto idx = static_cast<std::size_t>((k + 0.5) / components * static_cast<double>(n - 1) + 0.5);
      prior.components.push_back({start(obs[order[std::min(idx, n - 1)]].logits), latent});
    }
  } else {
    auto rng = restart_rng(seed, restart);
    for (std::size_t idx : random_picks(n, components, rng)) prior.components.push_back({start(obs[idx].logits), latent});
  }
  return prior;
}

std::vector<double> sample_prior(const GmmPrior1D& prior, std::size_t n, std::uint64_t seed) {
  prior.validate();
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(prior.weights.begin(), prior.weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (double& x : out) {
    const auto& c = prior.components[pick(rng)];
    x = c.mean + std::sqrt(c.variance) * normal(rng);
  }
  return out;
}

std::vector<Eigen::Vector2d> sample_prior(const GmmPrior2D& prior, std::size_t n, std::uint64_t seed) {
  prior.validate();
  std::vector<Eigen::Matrix2d> factors;
  for (const auto& c : prior.components) factors.push_back(cholesky_2x2<double>(c.covariance));
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(prior.weights.begin(), prior.weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::Vector2d> out(n);
  for (auto& x : out) {
    const std::size_t k = pick(rng);
    const double z0 = normal(rng);
    const double z1 = normal(rng);
    x = prior.components[k].mean + factors[k] * Eigen::Vector2d(z0, z1);
  }
  return out;
}

void write_prior(std::ostream& out, const GmmPrior1D& prior) {
  const auto old_precision = out.precision(17);
  out << "gmm 1 " << prior.size() << '\n';
  for (std::size_t k = 0; k < prior.size(); ++k)
    out << prior.weights[k] << ' ' << prior.components[k].mean << ' ' << prior.components[k].variance << '\n';
  out.precision(old_precision);
}

void write_prior(std::ostream& out, const GmmPrior2D& prior) {
  const auto old_precision = out.precision(17);
  out << "gmm 2 " << prior.size() << '\n';
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const auto& c = prior.components[k];
    out << prior.weights[k] << ' ' << c.mean(0) << ' ' << c.mean(1) << ' ' << c.covariance(0, 0) << ' '
        << c.covariance(0, 1) << ' ' << c.covariance(1, 1) << '\n';
  }
  out.precision(old_precision);
}

int read_prior(std::istream& in, GmmPrior1D& prior1, GmmPrior2D& prior2) {
  std::string line;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      const auto pos = line.find_first_not_of(" \t\r");
      if (pos == std::string::npos || line[pos] == '#') continue;
      return true;
    }
    return false;
  };
  if (!next_line()) throw std::runtime_error("read_prior: empty input");
  std::istringstream header(line);
  std::string tag;
  int dim = 0;
  long k_count = 0;
  if (!(header >> tag >> dim >> k_count) || tag != "gmm" || (dim != 1 && dim != 2) || k_count < 1)
    throw std::runtime_error("read_prior: bad header '" + line + "'");

  GmmPrior1D p1;
  GmmPrior2D p2;
  for (long k = 0; k < k_count; ++k) {
    if (!next_line()) throw std::runtime_error("read_prior: missing component rows");
    std::istringstream row(line);
    double w = 0;
    if (dim == 1) {
      Gaussian1D c;
      if (!(row >> w >> c.mean >> c.variance)) throw std::runtime_error("read_prior: bad row '" + line + "'");
      p1.weights.push_back(w);
      p1.components.push_back(c);
    } else {
      Gaussian2D c;
      double c00 = 0, c01 = 0, c11 = 0;
      if (!(row >> w >> c.mean(0) >> c.mean(1) >> c00 >> c01 >> c11))
        throw std::runtime_error("read_prior: bad row '" + line + "'");
      c.covariance << c00, c01, c01, c11;
      p2.weights.push_back(w);
      p2.components.push_back(c);
    }
  }
  try {
    if (dim == 1) {
      p1.validate();
      prior1 = std::move(p1);
    } else {
      p2.validate();
      prior2 = std::move(p2);
    }
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("read_prior: ") + e.what());
  }
  return dim;
}

}  // namespace denoisebid
