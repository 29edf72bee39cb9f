#include "denoisebid/strategies.hpp"

namespace denoisebid {

StrategyResult run_strategy(BidInputs inputs, const Constraints& constraints) {
  StrategyResult out;
  out.dual = solve_dual(inputs, constraints);
  out.bids = bids_from_duals(out.dual.p, out.dual.q, inputs, constraints);
  out.inputs = std::move(inputs);
  return out;
}

StrategyResult strategy_oracle(const std::vector<AuctionRecord>& records, const Constraints& constraints) {
  BidInputs in;
  for (const auto& r : records) {
    in.winning_price.push_back(r.wp);
    in.value.push_back(r.ctr_true * r.cvr_true);
    in.click.push_back(r.ctr_true);
  }
  return run_strategy(std::move(in), constraints);
}

StrategyResult strategy_non_robust(const std::vector<AuctionRecord>& records, const Constraints& constraints) {
  BidInputs in;
  for (const auto& r : records) {
    in.winning_price.push_back(r.wp);
    in.value.push_back(r.ctr_hat * r.cvr_hat);
    in.click.push_back(r.ctr_hat);
  }
  return run_strategy(std::move(in), constraints);
}

StrategyResult strategy_denoise_ctr_only(const std::vector<AuctionRecord>& records, const GmmPrior1D& prior,
                                         const Constraints& constraints) {
  BidInputs in;
  for (const auto& r : records) {
    // A noiseless observation is its own posterior mean; skipping the logit
    // round trip keeps these inputs bitwise equal to the raw predictions.
    const double ctr = r.noise_var_logit_ctr == 0
                           ? r.ctr_hat
                           : denoised_ctr(NoisyObservation1D{logit(r.ctr_hat), r.noise_var_logit_ctr}, prior);
    in.winning_price.push_back(r.wp);
    in.value.push_back(r.cvr_hat * ctr);
    in.click.push_back(ctr);
  }
  return run_strategy(std::move(in), constraints);
}

StrategyResult strategy_denoise_joint(const std::vector<AuctionRecord>& records, const GmmPrior2D& prior,
                                      const Constraints& constraints, const QuadratureGrid& grid) {
  BidInputs in;
  for (const auto& r : records) {
    if (r.noise_var_logit_ctr == 0 && r.noise_var_logit_cvr == 0) {
      in.winning_price.push_back(r.wp);
      in.value.push_back(r.ctr_hat * r.cvr_hat);
      in.click.push_back(r.ctr_hat);
      continue;
    }
    const NoisyObservation2D obs{Eigen::Vector2d(logit(r.ctr_hat), logit(r.cvr_hat)), r.noise_cov()};
    const auto post = posterior_components(obs, prior);
    const double ctr = denoised_ctr_joint(post);
    // Probit and quadrature errors are independent, so clamp to the
    // invariant E[CTR*CVR] <= E[CTR].
    const double value = std::min(denoised_value_joint(post, grid), ctr);
    in.winning_price.push_back(r.wp);
    in.value.push_back(value);
    in.click.push_back(ctr);
  }
  return run_strategy(std::move(in), constraints);
}

std::vector<NoisyObservation1D> ctr_observations(const std::vector<AuctionRecord>& records) {
  std::vector<NoisyObservation1D> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({logit(r.ctr_hat), r.noise_var_logit_ctr});
  return out;
}

std::vector<NoisyObservation2D> joint_observations(const std::vector<AuctionRecord>& records) {
  std::vector<NoisyObservation2D> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({Eigen::Vector2d(logit(r.ctr_hat), logit(r.cvr_hat)), r.noise_cov()});
  return out;
}

}  // namespace denoisebid
