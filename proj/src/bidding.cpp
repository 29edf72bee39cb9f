#include "denoisebid/bidding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace denoisebid {

namespace {

// The LP in the form max sum x v  s.t.  sum x wp <= budget,  sum x d <= cpc_rhs,
// 0 <= x <= 1, where d_t = wp_t - C c_t.
struct Lp {
  const std::vector<double>& value;
  const std::vector<double>& price;
  std::vector<double> cpc_coef;
  double budget;
  double cpc_rhs;
};

struct KnapsackSolution {
  std::vector<double> x;
  double p = 0;
  double cpc_excess = 0;  // sum x d - cpc_rhs
};

Lp make_lp(const BidInputs& in, const Constraints& c) {
  Lp lp{in.value, in.winning_price, std::vector<double>(in.size()), c.budget, 0.0};
  for (std::size_t t = 0; t < in.size(); ++t) lp.cpc_coef[t] = in.winning_price[t] - c.target_cpc * in.click[t];
  return lp;
}

// Exact budget-only relaxation at a fixed CPC multiplier: fractional knapsack
// on adjusted values v_t - q d_t, restricted to `items`.
KnapsackSolution knapsack(const Lp& lp, const std::vector<std::size_t>& items, double q,
                          std::vector<std::size_t>& order, std::vector<double>& ratio) {
  KnapsackSolution out;
  out.x.assign(items.size(), 0.0);
  order.clear();
  ratio.resize(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::size_t t = items[i];
    const double adjusted = lp.value[t] - q * lp.cpc_coef[t];
    ratio[i] = adjusted / lp.price[t];
    if (adjusted > 0) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ratio[a] > ratio[b] || (ratio[a] == ratio[b] && a < b);
  });
  double left = lp.budget;
  for (std::size_t i : order) {
    const double w = lp.price[items[i]];
    if (w <= left) {
      out.x[i] = 1.0;
      left -= w;
    } else {
      out.x[i] = std::max(0.0, left) / w;
      out.p = ratio[i];
      break;
    }
  }
  double cpc = 0;
  for (std::size_t i = 0; i < items.size(); ++i) cpc += out.x[i] * lp.cpc_coef[items[i]];
  out.cpc_excess = cpc - lp.cpc_rhs;
  return out;
}

struct LpSolution {
  std::vector<double> x;  // aligned with `items`
  double p = 0;
  double q = 0;
  bool feasible = true;
};

// Minimizes the partial dual h(q) = min_p g(p, q) by bisection on its
// monotone subgradient, then mixes the two one-sided knapsack solutions at
// q* so the CPC constraint holds with complementary slackness.
LpSolution solve_lp(const Lp& lp, const std::vector<std::size_t>& items) {
  std::vector<std::size_t> order;
  std::vector<double> ratio;
  LpSolution out;
  KnapsackSolution at_zero = knapsack(lp, items, 0.0, order, ratio);
  if (at_zero.cpc_excess <= 0) {
    out.x = std::move(at_zero.x);
    out.p = at_zero.p;
    return out;
  }

  // Beyond every v_t / d_t (d_t > 0) only CPC-improving auctions stay
  // profitable; grow from there until the constraint is met.
  double hi = 0;
  for (std::size_t t : items)
    if (lp.cpc_coef[t] > 0) hi = std::max(hi, lp.value[t] / lp.cpc_coef[t]);
  hi = std::max(hi * (1 + 1e-9), std::numeric_limits<double>::min());
  KnapsackSolution upper = knapsack(lp, items, hi, order, ratio);
  while (upper.cpc_excess > 0 && hi < 1e300) {
    hi *= 2;
    upper = knapsack(lp, items, hi, order, ratio);
  }
  if (upper.cpc_excess > 0) {
    out.x = std::move(upper.x);
    out.p = upper.p;
    out.q = hi;
    out.feasible = false;
    return out;
  }

  double lo = 0;
  KnapsackSolution lower = std::move(at_zero);
  while (hi - lo > 4 * std::numeric_limits<double>::epsilon() * hi) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    KnapsackSolution trial = knapsack(lp, items, mid, order, ratio);
    if (trial.cpc_excess > 0) {
      lo = mid;
      lower = std::move(trial);
    } else {
      hi = mid;
      upper = std::move(trial);
    }
  }

  const double lambda = -upper.cpc_excess / (lower.cpc_excess - upper.cpc_excess);
  out.x.resize(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    out.x[i] = std::clamp(lambda * lower.x[i] + (1 - lambda) * upper.x[i], 0.0, 1.0);
  out.q = hi;
  out.p = upper.p;
  return out;
}

Allocation summarize(std::vector<double> x, const BidInputs& in, const Constraints& c, double tol) {
  Allocation a;
  a.x = std::move(x);
  for (std::size_t t = 0; t < in.size(); ++t) {
    a.value += a.x[t] * in.value[t];
    a.spend += a.x[t] * in.winning_price[t];
    a.clicks += a.x[t] * in.click[t];
  }
  const double scale = std::max(1.0, c.budget);
  a.budget_feasible = a.spend <= c.budget + tol * scale;
  a.cpc_feasible = a.spend - c.target_cpc * a.clicks <= tol * scale;
  return a;
}

}  // namespace

void Constraints::validate() const {
  if (!(budget >= 0) || !std::isfinite(budget)) throw std::invalid_argument("constraints: budget must be >= 0");
  if (!(target_cpc >= 0) || !std::isfinite(target_cpc))
    throw std::invalid_argument("constraints: target CPC must be >= 0");
}

void BidInputs::validate() const {
  if (value.size() != size() || click.size() != size())
    throw std::invalid_argument("bid inputs: arrays must have equal length");
  for (std::size_t t = 0; t < size(); ++t) {
    if (!(winning_price[t] > 0) || !std::isfinite(winning_price[t]))
      throw std::invalid_argument("bid inputs: winning prices must be positive");
    if (!(click[t] >= 0 && click[t] <= 1)) throw std::invalid_argument("bid inputs: click must lie in [0, 1]");
    if (!(value[t] >= 0 && value[t] <= click[t] * (1 + 1e-12)))
      throw std::invalid_argument("bid inputs: value must lie in [0, click]");
  }
}

double dual_objective(double p, double q, const BidInputs& inputs, const Constraints& constraints) {
  double g = constraints.budget * p;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const double wp = inputs.winning_price[t];
    g += std::max(0.0, inputs.value[t] - p * wp - q * (wp - constraints.target_cpc * inputs.click[t]));
  }
  return g;
}

DualSolution solve_dual(const BidInputs& inputs, const Constraints& constraints, double tol) {
  inputs.validate();
  constraints.validate();
  const Lp lp = make_lp(inputs, constraints);
  std::vector<std::size_t> all(inputs.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  LpSolution lp_sol = solve_lp(lp, all);

  DualSolution sol;
  sol.p = lp_sol.p;
  sol.q = lp_sol.q;
  sol.allocation = summarize(std::move(lp_sol.x), inputs, constraints, tol);
  sol.primal_value = sol.allocation.value;
  sol.dual_value = dual_objective(sol.p, sol.q, inputs, constraints);
  sol.gap = std::max(0.0, sol.dual_value - sol.primal_value);
  sol.budget_active = sol.p > 0;
  sol.cpc_active = sol.q > 0;
  sol.budget_slackness = std::abs(sol.p * (sol.allocation.spend - constraints.budget));
  sol.cpc_slackness =
      std::abs(sol.q * (sol.allocation.spend - constraints.target_cpc * sol.allocation.clicks));
  return sol;
}

Allocation primal_from_duals(double p, double q, const BidInputs& inputs, const Constraints& constraints) {
  inputs.validate();
  constraints.validate();
  Lp lp = make_lp(inputs, constraints);
  std::vector<double> x(inputs.size(), 0.0);
  std::vector<std::size_t> ties;
  double spend = 0;
  double cpc = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const double wp = inputs.winning_price[t];
    const double reduced = inputs.value[t] - p * wp - q * lp.cpc_coef[t];
    const double scale = std::abs(inputs.value[t]) + p * wp + q * std::abs(lp.cpc_coef[t]);
    if (std::abs(reduced) <= 1e-9 * scale + 1e-15) {
      ties.push_back(t);
    } else if (reduced > 0) {
      x[t] = 1.0;
      spend += wp;
      cpc += lp.cpc_coef[t];
    }
  }
  if (!ties.empty()) {
    lp.budget = constraints.budget - spend;
    lp.cpc_rhs = -cpc;
    if (lp.budget >= 0) {
      const LpSolution sub = solve_lp(lp, ties);
      if (sub.feasible)
        for (std::size_t i = 0; i < ties.size(); ++i) x[ties[i]] = sub.x[i];
    }
  }
  return summarize(std::move(x), inputs, constraints, 1e-6);
}

Bids bids_from_duals(double p, double q, const BidInputs& inputs, const Constraints& constraints, double cap) {
  Bids out;
  out.bids.resize(inputs.size());
  if (p + q <= 0) {
    if (cap <= 0) {
      const double max_wp = inputs.size() == 0
                                ? 1.0
                                : *std::max_element(inputs.winning_price.begin(), inputs.winning_price.end());
      cap = 10 * max_wp;
    }
    std::fill(out.bids.begin(), out.bids.end(), cap);
    out.capped = true;
    return out;
  }
  for (std::size_t t = 0; t < inputs.size(); ++t)
    out.bids[t] = std::max(0.0, (inputs.value[t] + q * constraints.target_cpc * inputs.click[t]) / (p + q));
  return out;
}

}  // namespace denoisebid
