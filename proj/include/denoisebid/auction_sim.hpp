// Synthetic campaigns, logit-space noise injection, and offline
// second-price replay with the evaluation metrics.
#pragma once

#include "denoisebid/bidding.hpp"
#include "denoisebid/prior_model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace denoisebid {

struct AuctionRecord {
  double wp = 1;
  double ctr_true = 0.5;
  double cvr_true = 0.5;
  double ctr_hat = 0.5;
  double cvr_hat = 0.5;
  double noise_var_logit_ctr = 0;
  double noise_var_logit_cvr = 0;
  double noise_cov_logit = 0;
  /// Realized outcomes, present only for logs that carry them.
  std::optional<double> click;
  std::optional<double> conversion;

  [[nodiscard]] Eigen::Matrix2d noise_cov() const;
  void validate() const;
};

struct Campaign {
  std::string id;
  std::vector<AuctionRecord> records;
  Constraints constraints;
};

struct ConstraintFactors {
  double budget = 0.2;
  double cpc = 0.2;
};

/// B = k_B sum wp,  C = k_C sum wp / sum CTR.
Constraints derive_constraints(const std::vector<AuctionRecord>& records, const ConstraintFactors& factors);

/// The campaign's own mean CPC, sum wp / sum CTR_true.
double campaign_cpc(const std::vector<AuctionRecord>& records);

GmmPrior1D default_ctr_prior();
GmmPrior1D default_cvr_prior();

struct SyntheticParams {
  std::size_t auctions = 1000;
  double wp_sigma = 1.0;
  /// Log-normal location; defaults to ln(100) - wp_sigma.
  std::optional<double> wp_mu;
  GmmPrior1D ctr_prior = default_ctr_prior();
  GmmPrior1D cvr_prior = default_cvr_prior();
  ConstraintFactors factors;

  [[nodiscard]] double wp_location() const;
};

/// Deterministic in `seed`; predictions start equal to the truths.
Campaign generate_synthetic_campaign(const SyntheticParams& params, std::uint64_t seed, std::string id = "");

/// Adds N(0, sigma^2) noise to the CTR and CVR logits (correlated with
/// `correlation`) and records the injected variances on each auction.
/// Constraints are left unchanged.
Campaign inject_noise(const Campaign& campaign, double sigma_ctr, double sigma_cvr, double correlation,
                      std::uint64_t seed);

enum class OutcomeMode {
  /// Clicks and conversions counted as CTR_true and CTR_true * CVR_true.
  Expected,
  /// Realized click / conversion columns.
  Realized,
};

struct SimulationOutcome {
  std::size_t wins = 0;
  double spend = 0;
  double expected_clicks = 0;
  double expected_conversions = 0;
  double r_star = 0;
  double cpc = 0;
  double cpc_camp = 0;
  double ratio_r = 0;
  double ratio_cpc = 0;
  bool budget_violated = false;
  bool cpc_violated = false;
};

/// Sequential replay: auction t is won iff bid_t >= wp_t and the budget can
/// still cover wp_t. `r_star` only feeds ratio_r (0 leaves it at 0).
SimulationOutcome replay(const Campaign& campaign, const std::vector<double>& bids, double r_star = 0,
                         OutcomeMode mode = OutcomeMode::Expected);

/// Fractional LP optimum of conversions under the true CTR/CVR.
double oracle_optimum(const Campaign& campaign);

struct CriteoMetrics {
  double conv_uplift = 0;
  double cpc_shift = 0;
  /// False when the baseline had no conversions, leaving the uplift undefined (0).
  bool uplift_defined = true;
};

CriteoMetrics criteo_style_metrics(const SimulationOutcome& outcome, const SimulationOutcome& baseline,
                                   const Constraints& constraints);

}  // namespace denoisebid
