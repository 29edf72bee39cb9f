// Budget + CPC constrained conversion maximization: the LP, its dual, and
// the bid rule read off the optimal dual variables.
#pragma once

#include <vector>

namespace denoisebid {

struct Constraints {
  double budget = 0;
  double target_cpc = 0;

  void validate() const;
};

/// Per-auction LP coefficients. `value` is the expected conversions and
/// `click` the expected clicks of winning the impression.
struct BidInputs {
  std::vector<double> winning_price;
  std::vector<double> value;
  std::vector<double> click;

  [[nodiscard]] std::size_t size() const { return winning_price.size(); }
  void validate() const;
};

struct Allocation {
  std::vector<double> x;
  double value = 0;
  double spend = 0;
  double clicks = 0;
  bool budget_feasible = true;
  bool cpc_feasible = true;
};

struct DualSolution {
  double p = 0;  ///< budget multiplier
  double q = 0;  ///< CPC multiplier
  double dual_value = 0;
  double primal_value = 0;
  double gap = 0;
  bool budget_active = false;
  bool cpc_active = false;
  /// |p * (spend - B)| and |q * (spend - C * clicks)| at the returned allocation.
  double budget_slackness = 0;
  double cpc_slackness = 0;
  Allocation allocation;
};

struct Bids {
  std::vector<double> bids;
  /// True when p + q = 0 and every bid was set to the cap.
  bool capped = false;
};

/// g(p, q) = B p + sum_t max(0, v_t - p wp_t - q (wp_t - C c_t)).
double dual_objective(double p, double q, const BidInputs& inputs, const Constraints& constraints);

/// Minimizes the dual exactly (up to floating point) and reconstructs an
/// optimal fractional allocation satisfying complementary slackness.
DualSolution solve_dual(const BidInputs& inputs, const Constraints& constraints, double tol = 1e-6);

/// Allocation implied by (p, q): x_t = 1 on positive reduced cost, 0 on
/// negative, and zero-reduced-cost auctions filled by the best feasible
/// fractional split of the leftover budget and CPC headroom.
Allocation primal_from_duals(double p, double q, const BidInputs& inputs, const Constraints& constraints);

/// bid_t = (v_t + q C c_t) / (p + q). With p + q = 0 every bid is `cap`
/// (defaults to 10 * max wp_t when cap <= 0).
Bids bids_from_duals(double p, double q, const BidInputs& inputs, const Constraints& constraints,
                     double cap = 0);

}  // namespace denoisebid
