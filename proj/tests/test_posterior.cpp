#include "denoisebid/posterior.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace denoisebid;

namespace {

GmmPrior1D ctr_prior() { return {{0.6, 0.2, 0.2}, {{-3.0, 0.09}, {-2.5, 0.09}, {-1.0, 0.16}}}; }

// CTR-by-CVR product of the CTR prior with the two-component CVR prior.
GmmPrior2D joint_prior() {
  const double cw[] = {0.6, 0.4}, cm[] = {-2.0, -1.0}, cv[] = {0.49, 0.16};
  GmmPrior2D p;
  const auto ctr = ctr_prior();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      p.weights.push_back(ctr.weights[i] * cw[j]);
      p.components.push_back({Eigen::Vector2d(ctr.components[i].mean, cm[j]),
                              Eigen::Vector2d(ctr.components[i].variance, cv[j]).asDiagonal()});
    }
  return p;
}

oracle::Mixture1 as_oracle(const GmmPrior1D& p) {
  oracle::Mixture1 m;
  for (std::size_t k = 0; k < p.size(); ++k) {
    m.w.push_back(p.weights[k]);
    m.mu.push_back(p.components[k].mean);
    m.var.push_back(p.components[k].variance);
  }
  return m;
}

oracle::Mixture2 as_oracle(const GmmPrior2D& p) {
  oracle::Mixture2 m;
  for (std::size_t k = 0; k < p.size(); ++k) {
    m.w.push_back(p.weights[k]);
    m.mu.push_back(p.components[k].mean);
    m.cov.push_back(p.components[k].covariance);
  }
  return m;
}

NoisyObservation2D obs2(double a, double b, const Eigen::Matrix2d& noise) {
  NoisyObservation2D o;
  o.logits = Eigen::Vector2d(a, b);
  o.noise_cov = noise;
  return o;
}

}  // namespace

TEST_CASE("posterior components, 1D") {
  SUBCASE("single component equals the Gaussian product") {
    const GmmPrior1D p{{1.0}, {{-1.0, 0.5}}};
    const auto post = posterior_components({0.3, 0.8}, p);
    const auto prod = gaussian_product_1d(0.3, 0.8, p.components[0]);
    CHECK(post.weights[0] == doctest::Approx(1.0));
    CHECK(post.components[0].mean == doctest::Approx(prod.posterior.mean));
    CHECK(post.components[0].variance == doctest::Approx(prod.posterior.variance));
  }
  SUBCASE("uninformative observation keeps the prior") {
    const auto post = posterior_components({-2.0, 1e12}, ctr_prior());
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(post.weights[k] - ctr_prior().weights[k]) < 1e-4);
      CHECK(std::abs(post.components[k].mean - ctr_prior().components[k].mean) < 1e-4);
    }
  }
  SUBCASE("weights against an extended-precision density ratio") {
    using oracle::Big;
    const auto prior = ctr_prior();
    const double obs = -1.0, nv = 0.25;
    const auto post = posterior_components({obs, nv}, prior);
    std::vector<Big> a(3);
    Big total = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const Big var = Big(prior.components[k].variance) + Big(nv);
      const Big d = Big(obs) - Big(prior.components[k].mean);
      a[k] = Big(prior.weights[k]) * boost::multiprecision::exp(-d * d / (2 * var)) / boost::multiprecision::sqrt(var);
      total += a[k];
    }
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(post.weights[k] == doctest::Approx(static_cast<double>(a[k] / total)).epsilon(1e-13));
  }
  SUBCASE("posterior variances shrink") {
    const auto post = posterior_components({-2.0, 0.3}, ctr_prior());
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(post.components[k].variance <= std::min(0.3, ctr_prior().components[k].variance) + 1e-15);
  }
  SUBCASE("linear-domain underflow is handled in log space") {
    const GmmPrior1D p{{0.5, 0.5}, {{-1.0, 1e-6}, {1.0, 1e-6}}};
    const auto post = posterior_components({1e6, 1e-8}, p);
    CHECK_FALSE(post.fallback);
    CHECK(post.weights[1] == 1.0);
    CHECK(std::isfinite(denoised_ctr(post)));
  }
}

TEST_CASE("denoised_ctr") {
  const auto prior = ctr_prior();
  CHECK(std::abs(denoised_ctr({-2.0, 0.0}, prior) - sigmoid(-2.0)) <= 1e-10);
  SUBCASE("prior reversion") {
    const GmmPrior1D one{{1.0}, {{-2.0, 0.4}}};
    CHECK(denoised_ctr({3.0, 1e12}, one) == doctest::Approx(probit_sigmoid_gaussian(one.components[0])).epsilon(1e-6));
    const double prior_mean =
        oracle::trapezoid([&](double x) { return oracle::mixture_density(as_oracle(prior), x) * oracle::plain_sigmoid(x); },
                          -12, 8, 20000);
    CHECK(std::abs(denoised_ctr({0.0, 1e12}, prior) - prior_mean) < 1e-3);
  }
  SUBCASE("grid-Bayes agreement") {
    CHECK(std::abs(denoised_ctr({-2.0, 1.0}, prior) - oracle::bayes_ctr_1d(as_oracle(prior), -2.0, 1.0)) < 0.01);
  }
  SUBCASE("strictly increasing in the observation") {
    double prev = 0;
    for (int i = 0; i < 100; ++i) {
      const double v = denoised_ctr({-8.0 + 0.12 * i, 0.8}, prior);
      CHECK(v > prev);
      prev = v;
    }
  }
  SUBCASE("convex-combination bound") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-6, 2), s(0.01, 3);
    for (int i = 0; i < 200; ++i) {
      const NoisyObservation1D o{u(rng), std::pow(s(rng), 2)};
      const auto post = posterior_components(o, prior);
      double lo = 1, hi = 0;
      for (const auto& c : post.components) {
        lo = std::min(lo, probit_sigmoid_gaussian(c));
        hi = std::max(hi, probit_sigmoid_gaussian(c));
      }
      const double v = denoised_ctr(post);
      CHECK(v >= lo - 1e-15);
      CHECK(v <= hi + 1e-15);
    }
  }
  SUBCASE("noiseless identity for any prior") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-6, 2);
    for (int i = 0; i < 100; ++i) {
      const double x = u(rng);
      CHECK(std::abs(denoised_ctr({x, 1e-12}, prior) - sigmoid(x)) < 1e-6);
      CHECK(std::abs(denoised_ctr({x, 0.0}, prior) - sigmoid(x)) < 1e-12);
    }
  }
}

TEST_CASE("denoised joint expectations") {
  const auto grid = gh_grid(5);
  const auto prior = joint_prior();

  SUBCASE("noiseless identity") {
    for (double zero : {0.0, 1e-12}) {
      const auto o = obs2(-2.2, -0.8, zero * Eigen::Matrix2d::Identity());
      CHECK(std::abs(denoised_ctr_joint(o, prior) - sigmoid(-2.2)) < 1e-6);
      CHECK(std::abs(denoised_value_joint(o, prior, grid) - sigmoid(-2.2) * sigmoid(-0.8)) < 1e-6);
    }
  }
  SUBCASE("separable prior and noise reduce to the 1D marginal") {
    const double ws[] = {0.6, 0.4}, ms[] = {-2.0, -1.0}, vs[] = {0.49, 0.16};
    const GmmPrior1D cvr{{ws[0], ws[1]}, {{ms[0], vs[0]}, {ms[1], vs[1]}}};
    const Eigen::Matrix2d noise = Eigen::Vector2d(0.49, 0.36).asDiagonal();
    const auto o = obs2(-2.4, -1.1, noise);
    const double ctr = denoised_ctr({-2.4, 0.49}, ctr_prior());
    const double cv = denoised_ctr({-1.1, 0.36}, cvr);
    CHECK(std::abs(denoised_ctr_joint(o, prior) - ctr) <= 1e-10);
    CHECK(std::abs(denoised_value_joint(o, prior, grid) - ctr * cv) < 2e-3);
  }
  SUBCASE("correlated prior against 2D grid Bayes") {
    Eigen::Matrix2d c;
    c << 1.0, 0.5, 0.5, 1.0;
    const GmmPrior2D p{{1.0}, {{Eigen::Vector2d(-2.0, -1.0), c}}};
    const auto o = obs2(-1.5, -1.4, 0.49 * Eigen::Matrix2d::Identity());
    const auto ref = oracle::bayes_joint(as_oracle(p), o.logits, o.noise_cov);
    CHECK(std::abs(denoised_ctr_joint(o, p) - ref.ctr) < 0.01);
    CHECK(std::abs(denoised_value_joint(o, p, grid) - ref.value) < 0.01);
  }
  SUBCASE("product CTR-CVR prior against 2D grid Bayes") {
    const auto o = obs2(-2.0, -1.5, 0.5 * Eigen::Matrix2d::Identity());
    const auto ref = oracle::bayes_joint(as_oracle(prior), o.logits, o.noise_cov);
    CHECK(std::abs(denoised_value_joint(o, prior, grid) - ref.value) < 2e-3);
  }
  SUBCASE("per-component oracle agrees with the global-box oracle") {
    Eigen::Matrix2d c;
    c << 0.8, -0.3, -0.3, 0.6;
    Eigen::Matrix2d nz;
    nz << 0.3, 0.05, 0.05, 1.2;
    oracle::Mixture2 m = as_oracle(prior);
    m.w.push_back(0.25);
    for (double& w : m.w) w /= 1.25;
    m.mu.push_back(Eigen::Vector2d(-1.0, -3.0));
    m.cov.push_back(c);
    for (const auto& obs : {Eigen::Vector2d(-2.0, -1.5), Eigen::Vector2d(-0.5, -3.5), Eigen::Vector2d(-4.0, 0.5)}) {
      const auto a = oracle::bayes_joint(m, obs, nz);
      const auto b = oracle::bayes_joint_components(m, obs, nz);
      CHECK(std::abs(a.ctr - b.ctr) < 1e-6);
      CHECK(std::abs(a.value - b.value) < 1e-6);
    }
  }
  SUBCASE("prior reversion") {
    const auto o = obs2(1.0, 1.0, 1e12 * Eigen::Matrix2d::Identity());
    const auto ref = oracle::bayes_joint(as_oracle(prior), Eigen::Vector2d(-2.5, -1.6), 1e6 * Eigen::Matrix2d::Identity());
    CHECK(std::abs(denoised_ctr_joint(o, prior) - ref.ctr) < 1e-3);
    CHECK(std::abs(denoised_value_joint(o, prior, grid) - ref.value) < 1e-3);
  }
  SUBCASE("value never exceeds the click expectation by more than quadrature error") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-5, 1), s(0.05, 2.5);
    for (int i = 0; i < 200; ++i) {
      const double a = s(rng), b = s(rng);
      const auto o = obs2(u(rng), u(rng), Eigen::Vector2d(a * a, b * b).asDiagonal());
      CHECK(denoised_value_joint(o, prior, grid) <= denoised_ctr_joint(o, prior) + 2e-3);
    }
  }
}
