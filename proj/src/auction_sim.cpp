#include "denoisebid/auction_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace denoisebid {

namespace {

// Keeps saturated predictions strictly inside (0, 1) so their logits stay finite.
double representable(double p) {
  return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

}  // namespace

Eigen::Matrix2d AuctionRecord::noise_cov() const {
  Eigen::Matrix2d cov;
  cov << noise_var_logit_ctr, noise_cov_logit, noise_cov_logit, noise_var_logit_cvr;
  return cov;
}

void AuctionRecord::validate() const {
  auto prob = [](double p) { return p > 0 && p < 1; };
  if (!(wp > 0) || !std::isfinite(wp)) throw std::invalid_argument("auction record: wp must be positive");
  if (!prob(ctr_true) || !prob(cvr_true) || !prob(ctr_hat) || !prob(cvr_hat))
    throw std::invalid_argument("auction record: probabilities must lie in (0, 1)");
  if (!is_positive_semidefinite(noise_cov()))
    throw std::invalid_argument("auction record: noise covariance must be positive semidefinite");
}

double campaign_cpc(const std::vector<AuctionRecord>& records) {
  double spend = 0;
  double clicks = 0;
  for (const auto& r : records) {
    spend += r.wp;
    clicks += r.ctr_true;
  }
  if (!(clicks > 0)) throw std::invalid_argument("campaign_cpc: total CTR must be positive");
  return spend / clicks;
}

Constraints derive_constraints(const std::vector<AuctionRecord>& records, const ConstraintFactors& factors) {
  if (records.empty()) throw std::invalid_argument("derive_constraints: no records");
  double spend = 0;
  for (const auto& r : records) spend += r.wp;
  return {factors.budget * spend, factors.cpc * campaign_cpc(records)};
}

GmmPrior1D default_ctr_prior() {
  return {{0.6, 0.2, 0.2}, {{-3.0, 0.3 * 0.3}, {-2.5, 0.3 * 0.3}, {-1.0, 0.4 * 0.4}}};
}

GmmPrior1D default_cvr_prior() { return {{0.6, 0.4}, {{-2.0, 0.7 * 0.7}, {-1.0, 0.4 * 0.4}}}; }

double SyntheticParams::wp_location() const { return wp_mu.value_or(std::log(100.0) - wp_sigma); }

Campaign generate_synthetic_campaign(const SyntheticParams& params, std::uint64_t seed, std::string id) {
  if (params.auctions == 0) throw std::invalid_argument("generate_synthetic_campaign: need at least one auction");
  if (!(params.wp_sigma >= 0)) throw std::invalid_argument("generate_synthetic_campaign: wp_sigma must be >= 0");

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xca3e1u};
  std::mt19937_64 rng(seq);
  const auto ctr_logits = sample_prior(params.ctr_prior, params.auctions, rng());
  const auto cvr_logits = sample_prior(params.cvr_prior, params.auctions, rng());
  std::normal_distribution<double> normal(0.0, 1.0);

  Campaign c;
  c.id = std::move(id);
  c.records.resize(params.auctions);
  const double mu = params.wp_location();
  for (std::size_t t = 0; t < params.auctions; ++t) {
    auto& r = c.records[t];
    r.wp = std::exp(mu + params.wp_sigma * normal(rng));
    r.ctr_true = r.ctr_hat = sigmoid(ctr_logits[t]);
    r.cvr_true = r.cvr_hat = sigmoid(cvr_logits[t]);
  }
  c.constraints = derive_constraints(c.records, params.factors);
  return c;
}

Campaign inject_noise(const Campaign& campaign, double sigma_ctr, double sigma_cvr, double correlation,
                      std::uint64_t seed) {
  if (!(sigma_ctr >= 0) || !(sigma_cvr >= 0)) throw std::invalid_argument("inject_noise: sigmas must be >= 0");
  if (!(std::abs(correlation) < 1)) throw std::invalid_argument("inject_noise: |correlation| must be < 1");

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x4015eu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double ortho = std::sqrt(1 - correlation * correlation);

  Campaign out = campaign;
  for (auto& r : out.records) {
    const double z0 = normal(rng);
    const double z1 = normal(rng);
    const double eps_ctr = sigma_ctr * z0;
    const double eps_cvr = sigma_cvr * (correlation * z0 + ortho * z1);
    r.ctr_hat = representable(sigmoid(logit(r.ctr_true) + eps_ctr));
    r.cvr_hat = representable(sigmoid(logit(r.cvr_true) + eps_cvr));
    r.noise_var_logit_ctr = sigma_ctr * sigma_ctr;
    r.noise_var_logit_cvr = sigma_cvr * sigma_cvr;
    r.noise_cov_logit = correlation * sigma_ctr * sigma_cvr;
  }
  return out;
}

SimulationOutcome replay(const Campaign& campaign, const std::vector<double>& bids, double r_star,
                         OutcomeMode mode) {
  if (bids.size() != campaign.records.size()) throw std::invalid_argument("replay: one bid per auction required");
  SimulationOutcome out;
  const double budget = campaign.constraints.budget;
  double true_clicks = 0;
  for (std::size_t t = 0; t < bids.size(); ++t) {
    const auto& r = campaign.records[t];
    true_clicks += r.ctr_true;
    if (!(bids[t] >= r.wp) || out.spend + r.wp > budget) continue;
    ++out.wins;
    out.spend += r.wp;
    if (mode == OutcomeMode::Realized) {
      out.expected_clicks += r.click.value_or(0.0);
      out.expected_conversions += r.conversion.value_or(0.0);
    } else {
      out.expected_clicks += r.ctr_true;
      out.expected_conversions += r.ctr_true * r.cvr_true;
    }
  }
  double total_wp = 0;
  for (const auto& r : campaign.records) total_wp += r.wp;
  out.cpc_camp = true_clicks > 0 ? total_wp / true_clicks : 0;
  out.cpc = out.expected_clicks > 0 ? out.spend / out.expected_clicks : 0;
  out.ratio_cpc = out.cpc_camp > 0 ? out.cpc / out.cpc_camp : 0;
  out.r_star = r_star;
  out.ratio_r = r_star > 0 ? out.expected_conversions / r_star : 0;
  out.budget_violated = out.spend > budget;
  out.cpc_violated = out.spend > campaign.constraints.target_cpc * out.expected_clicks;
  return out;
}

double oracle_optimum(const Campaign& campaign) {
  BidInputs in;
  for (const auto& r : campaign.records) {
    in.winning_price.push_back(r.wp);
    in.value.push_back(r.ctr_true * r.cvr_true);
    in.click.push_back(r.ctr_true);
  }
  const DualSolution sol = solve_dual(in, campaign.constraints);
  const Allocation alloc = primal_from_duals(sol.p, sol.q, in, campaign.constraints);
  if (!alloc.budget_feasible || !alloc.cpc_feasible) return sol.primal_value;
  return std::max(alloc.value, sol.primal_value);
}

CriteoMetrics criteo_style_metrics(const SimulationOutcome& outcome, const SimulationOutcome& baseline,
                                   const Constraints& constraints) {
  CriteoMetrics m;
  if (baseline.expected_conversions > 0) {
    m.conv_uplift = (outcome.expected_conversions - baseline.expected_conversions) / baseline.expected_conversions;
  } else {
    m.uplift_defined = false;
  }
  m.cpc_shift = constraints.target_cpc > 0 ? (outcome.cpc - baseline.cpc) / constraints.target_cpc : 0;
  return m;
}

}  // namespace denoisebid
