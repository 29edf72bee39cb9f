// Bidding strategies: the LP dual bid rule fed with raw predictions, with
// CTR-only denoised expectations, or with joint CTR/CVR expectations.
#pragma once

#include "denoisebid/auction_sim.hpp"
#include "denoisebid/posterior.hpp"

namespace denoisebid {

struct StrategyResult {
  BidInputs inputs;
  DualSolution dual;
  Bids bids;
};

/// Solves the dual on `inputs` and converts the duals to bids.
StrategyResult run_strategy(BidInputs inputs, const Constraints& constraints);

/// Bids on the true CTR/CVR (upper-bound reference, not a deployable strategy).
StrategyResult strategy_oracle(const std::vector<AuctionRecord>& records, const Constraints& constraints);

/// v_t = CTR_hat * CVR_hat, c_t = CTR_hat.
StrategyResult strategy_non_robust(const std::vector<AuctionRecord>& records, const Constraints& constraints);

/// v_t = CVR_hat * E[CTR | CTR_hat], c_t = E[CTR | CTR_hat]; CVR taken as exact.
StrategyResult strategy_denoise_ctr_only(const std::vector<AuctionRecord>& records, const GmmPrior1D& prior,
                                         const Constraints& constraints);

/// v_t = E[CTR * CVR | obs], c_t = E[CTR | obs] under the joint prior.
StrategyResult strategy_denoise_joint(const std::vector<AuctionRecord>& records, const GmmPrior2D& prior,
                                      const Constraints& constraints, const QuadratureGrid& grid);

std::vector<NoisyObservation1D> ctr_observations(const std::vector<AuctionRecord>& records);
std::vector<NoisyObservation2D> joint_observations(const std::vector<AuctionRecord>& records);

}  // namespace denoisebid
