#include "denoisebid/auction_sim.hpp"
#include "denoisebid/strategies.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace denoisebid;

namespace {

Campaign hand_campaign(std::vector<double> wp, std::vector<double> ctr, std::vector<double> cvr, double budget,
                       double target_cpc) {
  Campaign c;
  for (std::size_t t = 0; t < wp.size(); ++t) {
    AuctionRecord r;
    r.wp = wp[t];
    r.ctr_true = r.ctr_hat = ctr[t];
    r.cvr_true = r.cvr_hat = cvr[t];
    c.records.push_back(r);
  }
  c.constraints = {budget, target_cpc};
  return c;
}

Campaign small_synthetic(std::size_t T, std::uint64_t seed) {
  SyntheticParams p;
  p.auctions = T;
  return generate_synthetic_campaign(p, seed);
}

double total_conversions(const Campaign& c) {
  double s = 0;
  for (const auto& r : c.records) s += r.ctr_true * r.cvr_true;
  return s;
}

}  // namespace

TEST_CASE("derive_constraints") {
  const auto c = hand_campaign({10, 20, 30}, {0.1, 0.2, 0.3}, {0.5, 0.5, 0.5}, 0, 0);
  const auto one = derive_constraints(c.records, {1.0, 1.0});
  CHECK(one.budget == doctest::Approx(60));
  CHECK(one.target_cpc == doctest::Approx(100));
  const auto fifth = derive_constraints(c.records, {0.2, 0.2});
  CHECK(fifth.budget == doctest::Approx(12));
  CHECK(fifth.target_cpc == doctest::Approx(20));
  CHECK(campaign_cpc(c.records) == doctest::Approx(100));
  CHECK_THROWS_AS(derive_constraints({}, {0.2, 0.2}), std::invalid_argument);
}

TEST_CASE("synthetic generator") {
  SUBCASE("log-normal prices") {
    SyntheticParams p;
    std::vector<double> all;
    for (std::uint64_t s = 0; s < 200; ++s)
      for (const auto& r : generate_synthetic_campaign(p, s).records) all.push_back(r.wp);
    const double mu = std::log(100.0) - 1.0;
    std::nth_element(all.begin(), all.begin() + all.size() / 2, all.end());
    CHECK(all[all.size() / 2] == doctest::Approx(std::exp(mu)).epsilon(0.02));
    const double mean = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
    CHECK(mean == doctest::Approx(std::exp(mu + 0.5)).epsilon(0.02));
    CHECK(mean >= 60);
    CHECK(mean <= 170);
  }
  SUBCASE("truths follow the mixtures") {
    SyntheticParams p;
    p.auctions = 200000;
    const auto c = generate_synthetic_campaign(p, 5);
    double ctr = 0, cvr = 0;
    for (const auto& r : c.records) {
      ctr += logit(r.ctr_true);
      cvr += logit(r.cvr_true);
      CHECK(r.ctr_hat == r.ctr_true);
      CHECK(r.cvr_hat == r.cvr_true);
    }
    CHECK(ctr / p.auctions == doctest::Approx(0.6 * -3.0 + 0.2 * -2.5 + 0.2 * -1.0).epsilon(0.01));
    CHECK(cvr / p.auctions == doctest::Approx(0.6 * -2.0 + 0.4 * -1.0).epsilon(0.01));
  }
  SUBCASE("zero price spread") {
    SyntheticParams p;
    p.wp_sigma = 0;
    for (const auto& r : generate_synthetic_campaign(p, 3).records) CHECK(r.wp == doctest::Approx(100.0));
  }
  SUBCASE("determinism") {
    const auto a = small_synthetic(500, 42), b = small_synthetic(500, 42), c = small_synthetic(500, 43);
    bool differs = false;
    for (std::size_t t = 0; t < 500; ++t) {
      CHECK(a.records[t].wp == b.records[t].wp);
      CHECK(a.records[t].ctr_true == b.records[t].ctr_true);
      CHECK(a.records[t].cvr_true == b.records[t].cvr_true);
      differs |= a.records[t].wp != c.records[t].wp;
    }
    CHECK(differs);
    CHECK(a.constraints.budget == b.constraints.budget);
  }
  SUBCASE("default constraint factors are 0.2") {
    const auto c = small_synthetic(300, 1);
    const auto expect = derive_constraints(c.records, {0.2, 0.2});
    CHECK(c.constraints.budget == expect.budget);
    CHECK(c.constraints.target_cpc == expect.target_cpc);
  }
}

TEST_CASE("inject_noise") {
  const auto clean = small_synthetic(1000, 9);
  SUBCASE("zero sigma keeps the truths") {
    const auto n = inject_noise(clean, 0, 0, 0, 1);
    for (const auto& r : n.records) {
      CHECK(r.ctr_hat == doctest::Approx(r.ctr_true).epsilon(1e-14));
      CHECK(r.cvr_hat == doctest::Approx(r.cvr_true).epsilon(1e-14));
      CHECK(r.noise_var_logit_ctr == 0);
    }
  }
  SUBCASE("moments") {
    SyntheticParams p;
    p.auctions = 1000000;
    const auto big = generate_synthetic_campaign(p, 2);
    const auto n = inject_noise(big, 1.0, 0.5, 0.0, 3);
    double s1 = 0, s2 = 0, m1 = 0, m2 = 0, cross = 0, sv = 0;
    for (std::size_t t = 0; t < p.auctions; ++t) {
      const double e = logit(n.records[t].ctr_hat) - logit(big.records[t].ctr_true);
      const double f = logit(n.records[t].cvr_hat) - logit(big.records[t].cvr_true);
      m1 += e;
      m2 += f;
      s1 += e * e;
      s2 += f * f;
      cross += e * f;
    }
    const double N = static_cast<double>(p.auctions);
    m1 /= N;
    m2 /= N;
    sv = std::sqrt(s2 / N - m2 * m2);
    const double sd = std::sqrt(s1 / N - m1 * m1);
    CHECK(std::abs(sd - 1.0) < 0.005);
    CHECK(std::abs(sv - 0.5) < 0.005);
    const double corr = (cross / N - m1 * m2) / (sd * sv);
    CHECK(std::abs(corr) < 3 / std::sqrt(N));
    CHECK(n.records[0].noise_var_logit_ctr == 1.0);
    CHECK(n.records[0].noise_var_logit_cvr == 0.25);
  }
  SUBCASE("correlated noise") {
    SyntheticParams p;
    p.auctions = 200000;
    const auto big = generate_synthetic_campaign(p, 4);
    const auto n = inject_noise(big, 0.4, 0.4, 0.6, 5);
    double cross = 0, v1 = 0, v2 = 0;
    for (std::size_t t = 0; t < p.auctions; ++t) {
      const double e = logit(n.records[t].ctr_hat) - logit(big.records[t].ctr_true);
      const double f = logit(n.records[t].cvr_hat) - logit(big.records[t].cvr_true);
      cross += e * f;
      v1 += e * e;
      v2 += f * f;
    }
    CHECK(cross / std::sqrt(v1 * v2) == doctest::Approx(0.6).epsilon(0.02));
    CHECK(n.records[0].noise_cov_logit == doctest::Approx(0.6 * 0.16));
  }
  SUBCASE("huge noise stays representable") {
    const auto n = inject_noise(clean, 40, 40, 0, 7);
    for (const auto& r : n.records) {
      CHECK(std::isfinite(logit(r.ctr_hat)));
      CHECK(std::isfinite(logit(r.cvr_hat)));
    }
  }
  SUBCASE("constraints untouched and errors") {
    const auto n = inject_noise(clean, 1, 1, 0, 1);
    CHECK(n.constraints.budget == clean.constraints.budget);
    CHECK_THROWS_AS(inject_noise(clean, -1, 0, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(inject_noise(clean, 1, 1, 1.0, 1), std::invalid_argument);
  }
}

TEST_CASE("replay") {
  SUBCASE("hand trace with a binding budget") {
    const auto c = hand_campaign({10, 20, 30, 5, 40}, {0.1, 0.2, 0.3, 0.4, 0.5}, {0.5, 0.5, 0.5, 0.5, 0.5}, 50, 100);
    const auto o = replay(c, {15, 25, 10, 100, 100}, 0.2);
    CHECK(o.wins == 3);
    CHECK(o.spend == doctest::Approx(35));
    CHECK(o.expected_clicks == doctest::Approx(0.7));
    CHECK(o.expected_conversions == doctest::Approx(0.35));
    CHECK(o.cpc == doctest::Approx(50));
    CHECK(o.cpc_camp == doctest::Approx(105.0 / 1.5));
    CHECK(o.ratio_cpc == doctest::Approx(50 / 70.0));
    CHECK(o.ratio_r == doctest::Approx(1.75));
    CHECK_FALSE(o.budget_violated);
    CHECK_FALSE(o.cpc_violated);
  }
  SUBCASE("bid equal to the price wins") {
    const auto c = hand_campaign({10}, {0.1}, {0.5}, 100, 1000);
    CHECK(replay(c, {10.0}).wins == 1);
    CHECK(replay(c, {std::nextafter(10.0, 0.0)}).wins == 0);
  }
  SUBCASE("zero bids and infinite bids") {
    const auto c = small_synthetic(400, 2);
    const auto none = replay(c, std::vector<double>(400, 0.0));
    CHECK(none.spend == 0);
    CHECK(none.expected_conversions == 0);
    CHECK(none.cpc == 0);
    Campaign rich = c;
    rich.constraints.budget = 1e12;
    const auto all = replay(rich, std::vector<double>(400, std::numeric_limits<double>::infinity()));
    CHECK(all.wins == 400);
    CHECK(all.expected_conversions == doctest::Approx(total_conversions(c)).epsilon(1e-12));
  }
  SUBCASE("CPC flag") {
    const auto c = hand_campaign({10, 20}, {0.1, 0.1}, {0.5, 0.5}, 100, 120);
    CHECK(replay(c, {10, 20}).cpc_violated);
    CHECK_FALSE(replay(c, {10, 0}).cpc_violated);
  }
  SUBCASE("realized outcomes") {
    auto c = hand_campaign({10, 20}, {0.1, 0.2}, {0.5, 0.5}, 100, 1000);
    c.records[0].click = 1;
    c.records[0].conversion = 1;
    c.records[1].click = 0;
    c.records[1].conversion = 0;
    const auto o = replay(c, {100, 100}, 0, OutcomeMode::Realized);
    CHECK(o.expected_clicks == 1);
    CHECK(o.expected_conversions == 1);
    CHECK(o.cpc == 30);
  }
  SUBCASE("wrong bid count") {
    const auto c = hand_campaign({10}, {0.1}, {0.5}, 100, 1000);
    CHECK_THROWS_AS(replay(c, {}), std::invalid_argument);
  }
}

TEST_CASE("replay invariants under random bids") {
  std::mt19937_64 rng(17);
  std::lognormal_distribution<double> bid(std::log(40.0), 1.5);
  std::uniform_real_distribution<double> u(0.01, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = small_synthetic(200, 100 + trial);
    std::vector<double> bids(200);
    for (double& b : bids) b = bid(rng);
    const auto o = replay(c, bids);
    CHECK(o.spend <= c.constraints.budget);
    const auto again = replay(c, bids);
    CHECK(again.spend == o.spend);
    CHECK(again.expected_conversions == o.expected_conversions);

    // A larger budget agrees with a smaller one until the smaller one first skips.
    double total_wp = 0;
    for (const auto& r : c.records) total_wp += r.wp;
    for (double f : {0.02, 0.05, 0.1, 0.2, 0.5}) {
      Campaign lo = c, hi = c;
      lo.constraints.budget = f * total_wp;
      hi.constraints.budget = 2 * f * total_wp;
      double spend_lo = 0, conv_prefix = 0;
      for (std::size_t t = 0; t < bids.size(); ++t) {
        if (!(bids[t] >= c.records[t].wp)) continue;
        if (spend_lo + c.records[t].wp > lo.constraints.budget) break;
        spend_lo += c.records[t].wp;
        conv_prefix += c.records[t].ctr_true * c.records[t].cvr_true;
      }
      CHECK(replay(hi, bids).expected_conversions >= conv_prefix * (1 - 1e-12));
      CHECK(replay(lo, bids).spend <= lo.constraints.budget);
    }
    // An integral replay obeying both constraints is a feasible LP point.
    c.constraints.target_cpc *= u(rng) * 10;
    const double r_star = oracle_optimum(c);
    const auto fr = replay(c, bids, r_star);
    if (!fr.budget_violated && !fr.cpc_violated) CHECK(fr.ratio_r <= 1 + 1e-9);
  }
}

TEST_CASE("budget monotonicity") {
  SUBCASE("equal prices make conversions monotone in the budget") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> ctr(100), cvr(100), bids(100);
      for (std::size_t t = 0; t < 100; ++t) {
        ctr[t] = 0.01 + 0.3 * u(rng);
        cvr[t] = 0.01 + 0.5 * u(rng);
        bids[t] = 20 * u(rng);
      }
      double prev = -1;
      for (double b = 0; b <= 1100; b += 25) {
        const auto c = hand_campaign(std::vector<double>(100, 10.0), ctr, cvr, b, 1e9);
        const double r = replay(c, bids).expected_conversions;
        CHECK(r >= prev);
        prev = r;
      }
    }
  }
  SUBCASE("skipping lets a larger budget lose conversions") {
    const std::vector<double> wp{10, 6, 6}, ctr{0.1, 0.3, 0.3}, cvr{0.5, 0.5, 0.5}, bids{100, 100, 100};
    const auto small = replay(hand_campaign(wp, ctr, cvr, 9, 1e9), bids);
    const auto large = replay(hand_campaign(wp, ctr, cvr, 12, 1e9), bids);
    CHECK(small.expected_conversions == doctest::Approx(0.15));
    CHECK(large.expected_conversions == doctest::Approx(0.05));
  }
}

TEST_CASE("oracle_optimum") {
  SUBCASE("unconstrained and zero budget") {
    auto c = small_synthetic(100, 6);
    c.constraints = {1e12, 1e12};
    CHECK(oracle_optimum(c) == doctest::Approx(total_conversions(c)).epsilon(1e-12));
    c.constraints.budget = 0;
    CHECK(oracle_optimum(c) == 0);
  }
  SUBCASE("against vertex enumeration") {
    for (std::uint64_t s = 0; s < 60; ++s) {
      const auto c = small_synthetic(10, 300 + s);
      oracle::LpInstance lp;
      for (const auto& r : c.records) {
        lp.wp.push_back(r.wp);
        lp.v.push_back(r.ctr_true * r.cvr_true);
        lp.c.push_back(r.ctr_true);
      }
      lp.B = c.constraints.budget;
      lp.C = c.constraints.target_cpc;
      const double ref = oracle::lp_optimum(lp);
      CHECK(oracle_optimum(c) == doctest::Approx(ref).epsilon(1e-6));
    }
  }
  SUBCASE("the oracle strategy replays within its optimum when feasible") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto c = small_synthetic(1000, 500 + s);
      const auto strat = strategy_oracle(c.records, c.constraints);
      const auto o = replay(c, strat.bids.bids, oracle_optimum(c));
      CHECK_FALSE(o.budget_violated);
      if (!o.cpc_violated) CHECK(o.ratio_r <= 1 + 1e-9);
      CHECK(o.ratio_r > 0.8);
    }
  }
}

TEST_CASE("criteo-style metrics") {
  SimulationOutcome base, ours;
  base.expected_conversions = 10;
  base.cpc = 40;
  ours.expected_conversions = 12;
  ours.cpc = 30;
  const Constraints c{100, 50};
  const auto m = criteo_style_metrics(ours, base, c);
  CHECK(m.conv_uplift == doctest::Approx(0.2));
  CHECK(m.cpc_shift == doctest::Approx(-0.2));
  CHECK(m.uplift_defined);
  const auto same = criteo_style_metrics(base, base, c);
  CHECK(same.conv_uplift == 0);
  CHECK(same.cpc_shift == 0);
  SimulationOutcome empty;
  CHECK_FALSE(criteo_style_metrics(ours, empty, c).uplift_defined);

  SUBCASE("recomputed from a synthetic replay pair") {
    const auto clean = small_synthetic(1000, 12);
    const auto noisy = inject_noise(clean, 1.0, 0, 0, 4);
    const auto nr = strategy_non_robust(noisy.records, noisy.constraints);
    const auto dn = strategy_denoise_ctr_only(noisy.records, default_ctr_prior(), noisy.constraints);
    const auto a = replay(noisy, nr.bids.bids), b = replay(noisy, dn.bids.bids);
    const auto mm = criteo_style_metrics(b, a, noisy.constraints);
    CHECK(mm.conv_uplift ==
          doctest::Approx((b.expected_conversions - a.expected_conversions) / a.expected_conversions));
    CHECK(mm.cpc_shift == doctest::Approx((b.spend / b.expected_clicks - a.spend / a.expected_clicks) /
                                          noisy.constraints.target_cpc));
  }
}

TEST_CASE("metric consistency: ratio_cpc against k_C matches cpc against C") {
  std::mt19937_64 rng(23);
  std::lognormal_distribution<double> bid(std::log(30.0), 1.5);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = small_synthetic(150, 900 + trial);
    std::vector<double> bids(150);
    for (double& b : bids) b = bid(rng);
    const auto o = replay(c, bids);
    if (o.expected_clicks == 0) continue;
    const double k_c = 0.2;
    // Skip outcomes within rounding of the boundary.
    if (std::abs(o.cpc - c.constraints.target_cpc) < 1e-9 * c.constraints.target_cpc) continue;
    CHECK((o.ratio_cpc <= k_c) == (o.cpc <= c.constraints.target_cpc));
    CHECK(o.cpc_violated == (o.cpc > c.constraints.target_cpc));
    ++checked;
  }
  CHECK(checked > 150);
}

TEST_CASE("strategies") {
  const auto clean = small_synthetic(300, 31);
  const auto prior = default_ctr_prior();

  SUBCASE("noiseless collapse") {
    const auto nr = strategy_non_robust(clean.records, clean.constraints);
    const auto dn = strategy_denoise_ctr_only(clean.records, prior, clean.constraints);
    GmmPrior2D joint;
    for (std::size_t i = 0; i < prior.size(); ++i)
      for (std::size_t j = 0; j < default_cvr_prior().size(); ++j) {
        const auto& cv = default_cvr_prior();
        joint.weights.push_back(prior.weights[i] * cv.weights[j]);
        joint.components.push_back(
            {Eigen::Vector2d(prior.components[i].mean, cv.components[j].mean),
             Eigen::Vector2d(prior.components[i].variance, cv.components[j].variance).asDiagonal()});
      }
    const auto dj = strategy_denoise_joint(clean.records, joint, clean.constraints, gh_grid(5));
    for (std::size_t t = 0; t < clean.records.size(); ++t) {
      CHECK(dn.bids.bids[t] == doctest::Approx(nr.bids.bids[t]).epsilon(1e-6));
      CHECK(dj.bids.bids[t] == doctest::Approx(nr.bids.bids[t]).epsilon(1e-6));
    }
    const auto orc = strategy_oracle(clean.records, clean.constraints);
    CHECK(orc.dual.p == nr.dual.p);
    CHECK(orc.dual.q == nr.dual.q);
  }
  SUBCASE("denoised inputs compose the posterior operations") {
    const auto noisy = inject_noise(clean, 0.8, 0.6, 0.0, 2);
    const auto dn = strategy_denoise_ctr_only(noisy.records, prior, noisy.constraints);
    const auto obs = ctr_observations(noisy.records);
    for (std::size_t t = 0; t < noisy.records.size(); ++t) {
      const double e = denoised_ctr(obs[t], prior);
      CHECK(dn.inputs.click[t] == e);
      CHECK(dn.inputs.value[t] == doctest::Approx(e * noisy.records[t].cvr_hat));
      CHECK(dn.inputs.winning_price[t] == noisy.records[t].wp);
    }
    GmmPrior2D one{{1.0}, {{Eigen::Vector2d(-2.5, -1.5), Eigen::Vector2d(0.5, 0.5).asDiagonal()}}};
    const auto grid = gh_grid(5);
    const auto dj = strategy_denoise_joint(noisy.records, one, noisy.constraints, grid);
    const auto jobs = joint_observations(noisy.records);
    for (std::size_t t = 0; t < noisy.records.size(); ++t) {
      CHECK(dj.inputs.click[t] == doctest::Approx(denoised_ctr_joint(jobs[t], one)).epsilon(1e-12));
      CHECK(dj.inputs.value[t] <= dj.inputs.click[t]);
      CHECK(dj.inputs.value[t] ==
            doctest::Approx(std::min(denoised_value_joint(jobs[t], one, grid), dj.inputs.click[t])).epsilon(1e-12));
    }
  }
  SUBCASE("bids follow the dual rule") {
    const auto noisy = inject_noise(clean, 0.5, 0, 0, 3);
    const auto nr = strategy_non_robust(noisy.records, noisy.constraints);
    const auto expect = bids_from_duals(nr.dual.p, nr.dual.q, nr.inputs, noisy.constraints);
    CHECK(nr.bids.bids == expect.bids);
  }
}
