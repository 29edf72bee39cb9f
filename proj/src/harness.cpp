#include "denoisebid/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace denoisebid {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ull;
  for (std::uint64_t p : parts) h = splitmix(h ^ p);
  return h;
}

// Shortest text that parses back to the same double.
std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

void add_flag(std::string& flags, const std::string& flag) {
  if (!flags.empty()) flags += '|';
  flags += flag;
}

// Subsample without replacement, in original order.
template <typename Obs>
std::vector<Obs> subsample(const std::vector<Obs>& obs, std::size_t size, std::uint64_t seed) {
  if (size == 0 || size >= obs.size()) return obs;
  std::vector<std::size_t> idx(obs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, obs.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  std::vector<Obs> out;
  out.reserve(size);
  for (std::size_t i : idx) out.push_back(obs[i]);
  return out;
}

FitConfig fit_config_for(const ExperimentConfig& config, int components, std::uint64_t seed) {
  FitConfig fit = config.fit;
  fit.components = components;
  fit.seed = seed;
  return fit;
}

ResultRow outcome_row(const std::string& id, const std::string& strategy, double sigma_ctr, double sigma_cvr,
                      const SimulationOutcome& o, const StrategyResult& s) {
  ResultRow row;
  row.campaign_id = id;
  row.strategy = strategy;
  row.sigma_ctr = sigma_ctr;
  row.sigma_cvr = sigma_cvr;
  row.r = o.expected_conversions;
  row.r_star = o.r_star;
  row.ratio_r = o.ratio_r;
  row.spend = o.spend;
  row.expected_clicks = o.expected_clicks;
  row.cpc = o.cpc;
  row.cpc_camp = o.cpc_camp;
  row.ratio_cpc = o.ratio_cpc;
  row.dual_p = s.dual.p;
  row.dual_q = s.dual.q;
  row.duality_gap = s.dual.gap;
  if (s.bids.capped) add_flag(row.flags, "bid_cap");
  if (o.budget_violated) add_flag(row.flags, "budget_violated");
  if (o.cpc_violated) add_flag(row.flags, "cpc_violated");
  return row;
}

double parse_number(const std::string& field, const std::string& what, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": invalid " + what + " '" + field + "'");
  }
}

template <typename T>
void read_key(const nlohmann::json& section, const char* key, T& target, std::set<std::string>& known) {
  known.insert(key);
  if (!section.contains(key)) return;
  try {
    target = section.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& section, const std::set<std::string>& known, const std::string& name) {
  for (const auto& [key, _] : section.items())
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + name + "." + key + "'");
}

GmmPrior1D load_prior_1d(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prior file " + path);
  GmmPrior1D p1;
  GmmPrior2D p2;
  try {
    if (read_prior(in, p1, p2) != 1) throw DataError(path + ": expected a 1D prior");
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  return p1;
}

GmmPrior2D load_prior_2d(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prior file " + path);
  GmmPrior1D p1;
  GmmPrior2D p2;
  try {
    if (read_prior(in, p1, p2) != 2) throw DataError(path + ": expected a 2D prior");
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  return p2;
}

unsigned worker_count(const ExperimentConfig& config, std::size_t tasks) {
  unsigned jobs = config.jobs ? config.jobs : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(tasks, 1)));
}

// Runs task(i) for i in [0, n) on a worker pool; results land by index.
template <typename Task>
void parallel_for(std::size_t n, unsigned workers, Task&& task) {
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) task(i);
  };
  if (workers <= 1) {
    body();
    return;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
}

std::vector<ResultRow> failure_rows(const std::string& id, double sigma_ctr, double sigma_cvr,
                                    const std::vector<std::string>& strategies, const std::string& message) {
  std::vector<ResultRow> rows;
  for (const auto& s : strategies) {
    ResultRow row;
    row.campaign_id = id;
    row.strategy = s;
    row.sigma_ctr = sigma_ctr;
    row.sigma_cvr = sigma_cvr;
    std::string clean = message;
    std::replace(clean.begin(), clean.end(), ',', ';');
    row.flags = "error:" + clean;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

Mode parse_mode(const std::string& text) {
  if (text == "ctr_only") return Mode::CtrOnly;
  if (text == "joint") return Mode::Joint;
  if (text == "empirical") return Mode::Empirical;
  throw ConfigError("unknown mode '" + text + "' (expected ctr_only, joint or empirical)");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::CtrOnly: return "ctr_only";
    case Mode::Joint: return "joint";
    case Mode::Empirical: return "empirical";
  }
  return "?";
}

std::vector<double> log_spaced(double lo, double hi, std::size_t points) {
  if (points == 0) return {};
  if (points == 1) return {lo};
  std::vector<double> out(points);
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < points; ++i)
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  return out;
}

std::vector<std::string> ExperimentConfig::effective_strategies() const {
  if (!strategies.empty()) return strategies;
  switch (mode) {
    case Mode::CtrOnly: return {kNonRobust, kDenoiseCtrOnly, kDenoiseCtrOnlyNormal};
    case Mode::Joint: return {kNonRobust, kDenoiseJoint, kDenoiseJointNormal};
    case Mode::Empirical: return {kNonRobust, kDenoiseCtrOnly, kDenoiseJoint};
  }
  return {};
}

std::vector<double> ExperimentConfig::effective_sigma_ctr_grid() const {
  if (!sigma_ctr_grid.empty()) return sigma_ctr_grid;
  return log_spaced(1e-2, 1e1, mode == Mode::Joint ? 5 : 9);
}

void ExperimentConfig::validate() const {
  static const std::set<std::string> known{kOracle,        kNonRobust,           kDenoiseCtrOnly,
                                           kDenoiseCtrOnlyNormal, kDenoiseJoint, kDenoiseJointNormal};
  for (const auto& s : effective_strategies())
    if (!known.contains(s)) throw ConfigError("unknown strategy '" + s + "'");
  if (campaigns == 0) throw ConfigError("campaigns must be >= 1");
  if (auctions == 0) throw ConfigError("auctions must be >= 1");
  if (mode == Mode::Joint && sigma_cvr_grid.empty()) throw ConfigError("sigma_cvr_grid must not be empty");
  for (double s : sigma_ctr_grid)
    if (!(s >= 0)) throw ConfigError("noise sigmas must be >= 0");
  for (double s : sigma_cvr_grid)
    if (!(s >= 0)) throw ConfigError("noise sigmas must be >= 0");
  if (!(std::abs(noise_correlation) < 1)) throw ConfigError("noise correlation must lie in (-1, 1)");
  if (!(factors.budget > 0 && factors.budget <= 1) || !(factors.cpc > 0 && factors.cpc <= 1))
    throw ConfigError("constraint factors must lie in (0, 1]");
  if (prior_components < 1 || joint_prior_components < 1) throw ConfigError("prior components must be >= 1");
  if (quadrature_order < 1 || quadrature_order > kMaxQuadratureOrder)
    throw ConfigError("quadrature order must lie in [1, 20]");
  if (dataset == "synthetic" && fit_subsample > auctions) throw ConfigError("fit subsample exceeds auctions");
  if (!(wp_sigma >= 0)) throw ConfigError("wp_sigma must be >= 0");
  try {
    fit.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  ExperimentConfig c;
  for (const auto& [name, section] : doc.items()) {
    std::set<std::string> known;
    if (name == "strategies") {
      try {
        c.strategies = section.get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: strategies: ") + e.what());
      }
      continue;
    }
    if (!section.is_object()) throw ConfigError("config: section '" + name + "' must be an object");
    if (name == "experiment") {
      std::string mode = to_string(c.mode);
      read_key(section, "mode", mode, known);
      c.mode = parse_mode(mode);
      read_key(section, "dataset", c.dataset, known);
      read_key(section, "campaigns", c.campaigns, known);
      read_key(section, "auctions", c.auctions, known);
      read_key(section, "seed", c.seed, known);
      read_key(section, "out", c.out, known);
      read_key(section, "jobs", c.jobs, known);
    } else if (name == "constraints") {
      read_key(section, "k_budget", c.factors.budget, known);
      read_key(section, "k_cpc", c.factors.cpc, known);
    } else if (name == "noise") {
      read_key(section, "sigma_ctr_grid", c.sigma_ctr_grid, known);
      read_key(section, "sigma_cvr_grid", c.sigma_cvr_grid, known);
      read_key(section, "correlation", c.noise_correlation, known);
    } else if (name == "prior") {
      read_key(section, "components", c.prior_components, known);
      read_key(section, "joint_components", c.joint_prior_components, known);
      read_key(section, "max_iterations", c.fit.max_iterations, known);
      read_key(section, "tolerance", c.fit.loglik_tolerance, known);
      read_key(section, "restarts", c.fit.restarts, known);
      read_key(section, "variance_floor", c.fit.variance_floor, known);
      read_key(section, "subsample", c.fit_subsample, known);
      read_key(section, "shared", c.shared_prior, known);
      read_key(section, "path", c.prior_path, known);
    } else if (name == "posterior") {
      read_key(section, "quadrature_order", c.quadrature_order, known);
    } else if (name == "synthetic") {
      read_key(section, "wp_sigma", c.wp_sigma, known);
    } else {
      throw ConfigError("config: unknown section '" + name + "'");
    }
    reject_unknown(section, known, name);
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Results CSV

static const char* const kResultHeader =
    "campaign_id,strategy,sigma_ctr,sigma_cvr,R,R_star,ratio_R,spend,expected_clicks,cpc,cpc_camp,ratio_cpc,"
    "dual_p,dual_q,duality_gap,conv_uplift,cpc_shift,flags";

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultHeader << '\n';
  for (const auto& r : rows) {
    out << r.campaign_id << ',' << r.strategy;
    for (double v : {r.sigma_ctr, r.sigma_cvr, r.r, r.r_star, r.ratio_r, r.spend, r.expected_clicks, r.cpc,
                     r.cpc_camp, r.ratio_cpc, r.dual_p, r.dual_q, r.duality_gap, r.conv_uplift, r.cpc_shift})
      out << ',' << format_number(v);
    out << ',' << r.flags << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("results: empty input");
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 18) throw DataError("results line " + std::to_string(line_no) + ": expected 18 fields");
    const std::string where = "results line " + std::to_string(line_no);
    ResultRow r;
    r.campaign_id = f[0];
    r.strategy = f[1];
    double* targets[] = {&r.sigma_ctr, &r.sigma_cvr, &r.r,       &r.r_star,       &r.ratio_r,
                         &r.spend,     &r.expected_clicks, &r.cpc, &r.cpc_camp,    &r.ratio_cpc,
                         &r.dual_p,    &r.dual_q,    &r.duality_gap, &r.conv_uplift, &r.cpc_shift};
    for (std::size_t i = 0; i < 15; ++i) *targets[i] = parse_number(f[i + 2], "number", where);
    r.flags = f[17];
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Auction-log CSV

void write_campaign_csv(std::ostream& out, const Campaign& campaign) {
  out << "auction_id,wp,ctr_true,cvr_true,ctr_hat,cvr_hat,var_logit_ctr,var_logit_cvr,cov_logit,click,conversion\n";
  for (std::size_t t = 0; t < campaign.records.size(); ++t) {
    const auto& r = campaign.records[t];
    out << t << ',' << format_number(r.wp) << ',' << format_number(r.ctr_true) << ',' << format_number(r.cvr_true)
        << ',' << format_number(r.ctr_hat) << ',' << format_number(r.cvr_hat) << ','
        << format_number(r.noise_var_logit_ctr) << ',' << format_number(r.noise_var_logit_cvr) << ','
        << format_number(r.noise_cov_logit) << ',' << (r.click ? format_number(*r.click) : "") << ','
        << (r.conversion ? format_number(*r.conversion) : "") << '\n';
  }
}

CampaignFile read_campaign_csv(std::istream& in, const std::string& name, const ConstraintFactors& factors) {
  static const std::vector<std::string> required{"wp", "ctr_hat", "cvr_hat", "var_logit_ctr", "var_logit_cvr"};
  static const std::vector<std::string> known{"auction_id",    "wp",        "ctr_true",  "cvr_true",
                                              "ctr_hat",       "cvr_hat",   "var_logit_ctr", "var_logit_cvr",
                                              "cov_logit",     "click",     "conversion"};
  std::string line;
  if (!std::getline(in, line)) throw DataError(name + ": empty file (header required)");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (std::find(known.begin(), known.end(), header[i]) == known.end())
      throw DataError(name + ":1: unknown column '" + header[i] + "'");
    column[header[i]] = i;
  }
  for (const auto& r : required)
    if (!column.contains(r)) throw DataError(name + ":1: missing required column '" + r + "'");

  CampaignFile file;
  file.campaign.id = fs::path(name).stem().string();
  bool any_missing_truth = false;
  bool all_outcomes = true;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(f.size()));
    auto get = [&](const std::string& col) -> std::optional<double> {
      const auto it = column.find(col);
      if (it == column.end() || f[it->second].empty()) return std::nullopt;
      return parse_number(f[it->second], col, where);
    };
    auto need = [&](const std::string& col) {
      const auto v = get(col);
      if (!v) throw DataError(where + ": missing value for '" + col + "'");
      return *v;
    };
    AuctionRecord r;
    r.wp = need("wp");
    r.ctr_hat = need("ctr_hat");
    r.cvr_hat = need("cvr_hat");
    r.noise_var_logit_ctr = need("var_logit_ctr");
    r.noise_var_logit_cvr = need("var_logit_cvr");
    r.noise_cov_logit = get("cov_logit").value_or(0.0);
    const auto ctr_true = get("ctr_true");
    const auto cvr_true = get("cvr_true");
    if (!ctr_true || !cvr_true) any_missing_truth = true;
    r.ctr_true = ctr_true.value_or(r.ctr_hat);
    r.cvr_true = cvr_true.value_or(r.cvr_hat);
    r.click = get("click");
    r.conversion = get("conversion");
    if (!r.click || !r.conversion) all_outcomes = false;
    try {
      r.validate();
    } catch (const std::invalid_argument& e) {
      throw DataError(where + ": " + e.what());
    }
    file.campaign.records.push_back(r);
  }
  if (file.campaign.records.empty()) throw DataError(name + ": no auction rows");
  file.has_truth = !any_missing_truth;
  file.has_outcomes = all_outcomes;
  file.campaign.constraints = derive_constraints(file.campaign.records, factors);
  return file;
}

CampaignFile read_campaign_csv(const fs::path& path, const ConstraintFactors& factors) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_campaign_csv(in, path.string(), factors);
}

// ---------------------------------------------------------------------------
// Drivers

std::uint64_t campaign_seed(std::uint64_t seed, std::size_t index) { return mix({seed, index, 1}); }

std::uint64_t noise_seed(std::uint64_t seed, std::size_t index, double sigma_ctr, double sigma_cvr) {
  return mix({seed, index, 2, std::bit_cast<std::uint64_t>(sigma_ctr), std::bit_cast<std::uint64_t>(sigma_cvr)});
}

std::uint64_t fit_seed(std::uint64_t seed, std::size_t index) { return mix({seed, index, 3}); }

std::string campaign_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "campaign_%04zu", index);
  return buf;
}

std::vector<std::pair<double, double>> noise_points(const ExperimentConfig& config) {
  std::vector<std::pair<double, double>> points;
  if (config.mode == Mode::Joint) {
    for (double sc : config.effective_sigma_ctr_grid())
      for (double sv : config.sigma_cvr_grid) points.emplace_back(sc, sv);
  } else {
    for (double sc : config.effective_sigma_ctr_grid()) points.emplace_back(sc, 0.0);
  }
  return points;
}

std::vector<ResultRow> evaluate_campaign(const Campaign& noisy, std::size_t index, double sigma_ctr,
                                         double sigma_cvr, double r_star, const ExperimentConfig& config,
                                         OutcomeMode mode, const GmmPrior1D* shared_prior1,
                                         const GmmPrior2D* shared_prior2) {
  const auto strategies = config.effective_strategies();
  const std::uint64_t seed = fit_seed(config.seed, index);
  auto needs = [&](const char* name) { return std::find(strategies.begin(), strategies.end(), name) != strategies.end(); };

  const bool need_1d = needs(kDenoiseCtrOnly) || needs(kDenoiseCtrOnlyNormal);
  const bool need_2d = needs(kDenoiseJoint) || needs(kDenoiseJointNormal);
  std::vector<NoisyObservation1D> obs1;
  std::vector<NoisyObservation2D> obs2;
  if (need_1d) obs1 = subsample(ctr_observations(noisy.records), config.fit_subsample, seed);
  if (need_2d) obs2 = subsample(joint_observations(noisy.records), config.fit_subsample, seed);

  auto fit1 = [&](int k) {
    return xdgmm_fit(std::span<const NoisyObservation1D>(obs1), fit_config_for(config, k, seed)).prior;
  };
  auto fit2 = [&](int k) {
    return xdgmm_fit(std::span<const NoisyObservation2D>(obs2), fit_config_for(config, k, seed)).prior;
  };

  const QuadratureGrid grid = gh_grid(config.quadrature_order);
  std::vector<ResultRow> rows;
  const ResultRow* baseline = nullptr;
  std::vector<SimulationOutcome> outcomes;
  for (const auto& name : strategies) {
    StrategyResult result;
    if (name == kOracle) {
      result = strategy_oracle(noisy.records, noisy.constraints);
    } else if (name == kNonRobust) {
      result = strategy_non_robust(noisy.records, noisy.constraints);
    } else if (name == kDenoiseCtrOnly) {
      result = strategy_denoise_ctr_only(noisy.records, shared_prior1 ? *shared_prior1 : fit1(config.prior_components),
                                         noisy.constraints);
    } else if (name == kDenoiseCtrOnlyNormal) {
      result = strategy_denoise_ctr_only(noisy.records, fit1(1), noisy.constraints);
    } else if (name == kDenoiseJoint) {
      result = strategy_denoise_joint(noisy.records,
                                      shared_prior2 ? *shared_prior2 : fit2(config.joint_prior_components),
                                      noisy.constraints, grid);
    } else if (name == kDenoiseJointNormal) {
      result = strategy_denoise_joint(noisy.records, fit2(1), noisy.constraints, grid);
    } else {
      throw ConfigError("unknown strategy '" + name + "'");
    }
    const SimulationOutcome outcome = replay(noisy, result.bids.bids, r_star, mode);
    outcomes.push_back(outcome);
    rows.push_back(outcome_row(noisy.id, name, sigma_ctr, sigma_cvr, outcome, result));
  }
  for (std::size_t i = 0; i < strategies.size(); ++i)
    if (strategies[i] == kNonRobust) baseline = &rows[i];
  if (baseline) {
    const SimulationOutcome base = outcomes[static_cast<std::size_t>(baseline - rows.data())];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const CriteoMetrics m = criteo_style_metrics(outcomes[i], base, noisy.constraints);
      rows[i].conv_uplift = m.conv_uplift;
      rows[i].cpc_shift = m.cpc_shift;
      if (!m.uplift_defined) add_flag(rows[i].flags, "uplift_undefined");
    }
  }
  return rows;
}

void append_mean_rows(std::vector<ResultRow>& rows) {
  struct Group {
    ResultRow sum;
    std::size_t count = 0;
  };
  std::vector<std::tuple<double, double, std::string>> order;
  std::map<std::tuple<double, double, std::string>, Group> groups;
  for (const auto& r : rows) {
    if (r.campaign_id == kMeanRowId || r.flags.starts_with("error:")) continue;
    const auto key = std::make_tuple(r.sigma_ctr, r.sigma_cvr, r.strategy);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    Group& g = it->second;
    ++g.count;
    ResultRow& s = g.sum;
    s.r += r.r;
    s.r_star += r.r_star;
    s.ratio_r += r.ratio_r;
    s.spend += r.spend;
    s.expected_clicks += r.expected_clicks;
    s.cpc += r.cpc;
    s.cpc_camp += r.cpc_camp;
    s.ratio_cpc += r.ratio_cpc;
    s.dual_p += r.dual_p;
    s.dual_q += r.dual_q;
    s.duality_gap += r.duality_gap;
    s.conv_uplift += r.conv_uplift;
    s.cpc_shift += r.cpc_shift;
  }
  for (const auto& key : order) {
    const Group& g = groups.at(key);
    const double n = static_cast<double>(g.count);
    ResultRow m = g.sum;
    m.campaign_id = kMeanRowId;
    m.strategy = std::get<2>(key);
    m.sigma_ctr = std::get<0>(key);
    m.sigma_cvr = std::get<1>(key);
    for (double* v : {&m.r, &m.r_star, &m.ratio_r, &m.spend, &m.expected_clicks, &m.cpc, &m.cpc_camp, &m.ratio_cpc,
                      &m.dual_p, &m.dual_q, &m.duality_gap, &m.conv_uplift, &m.cpc_shift})
      *v /= n;
    m.flags = "n=" + std::to_string(g.count);
    rows.push_back(std::move(m));
  }
}

std::vector<ResultRow> run_sweep(const ExperimentConfig& config) {
  config.validate();
  if (config.dataset != "synthetic") throw ConfigError("sweep runs on the synthetic dataset; use ingest for CSV");
  const auto points = noise_points(config);
  const auto strategies = config.effective_strategies();

  SyntheticParams params;
  params.auctions = config.auctions;
  params.wp_sigma = config.wp_sigma;
  params.factors = config.factors;

  std::optional<GmmPrior1D> fixed1;
  std::optional<GmmPrior2D> fixed2;
  if (!config.prior_path.empty()) {
    if (config.mode == Mode::Joint)
      fixed2 = load_prior_2d(config.prior_path);
    else
      fixed1 = load_prior_1d(config.prior_path);
  }

  std::vector<std::vector<ResultRow>> per_campaign(config.campaigns);
  const unsigned workers = worker_count(config, config.campaigns);

  if (config.shared_prior && !fixed1 && !fixed2) {
    // Pooled fit per noise point, then per-campaign evaluation.
    std::vector<Campaign> clean(config.campaigns);
    std::vector<double> r_star(config.campaigns);
    parallel_for(config.campaigns, workers, [&](std::size_t i) {
      clean[i] = generate_synthetic_campaign(params, campaign_seed(config.seed, i), campaign_name(i));
      r_star[i] = oracle_optimum(clean[i]);
    });
    for (const auto& [sc, sv] : points) {
      std::vector<Campaign> noisy(config.campaigns);
      std::vector<NoisyObservation1D> pool1;
      std::vector<NoisyObservation2D> pool2;
      for (std::size_t i = 0; i < config.campaigns; ++i) {
        noisy[i] = inject_noise(clean[i], sc, sv, config.noise_correlation, noise_seed(config.seed, i, sc, sv));
        const auto s1 = subsample(ctr_observations(noisy[i].records), config.fit_subsample, fit_seed(config.seed, i));
        const auto s2 =
            subsample(joint_observations(noisy[i].records), config.fit_subsample, fit_seed(config.seed, i));
        pool1.insert(pool1.end(), s1.begin(), s1.end());
        pool2.insert(pool2.end(), s2.begin(), s2.end());
      }
      const GmmPrior1D shared1 = xdgmm_fit(std::span<const NoisyObservation1D>(pool1),
                                           fit_config_for(config, config.prior_components, config.seed))
                                     .prior;
      const GmmPrior2D shared2 = xdgmm_fit(std::span<const NoisyObservation2D>(pool2),
                                           fit_config_for(config, config.joint_prior_components, config.seed))
                                     .prior;
      parallel_for(config.campaigns, workers, [&](std::size_t i) {
        std::vector<ResultRow> rows;
        try {
          rows = evaluate_campaign(noisy[i], i, sc, sv, r_star[i], config, OutcomeMode::Expected, &shared1, &shared2);
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception& e) {
          rows = failure_rows(campaign_name(i), sc, sv, strategies, e.what());
        }
        per_campaign[i].insert(per_campaign[i].end(), rows.begin(), rows.end());
      });
    }
  } else {
    parallel_for(config.campaigns, workers, [&](std::size_t i) {
      auto& out = per_campaign[i];
      Campaign clean;
      double r_star = 0;
      try {
        clean = generate_synthetic_campaign(params, campaign_seed(config.seed, i), campaign_name(i));
        r_star = oracle_optimum(clean);
      } catch (const std::exception& e) {
        for (const auto& [sc, sv] : points) {
          auto rows = failure_rows(campaign_name(i), sc, sv, strategies, e.what());
          out.insert(out.end(), rows.begin(), rows.end());
        }
        return;
      }
      for (const auto& [sc, sv] : points) {
        std::vector<ResultRow> rows;
        try {
          const Campaign noisy =
              inject_noise(clean, sc, sv, config.noise_correlation, noise_seed(config.seed, i, sc, sv));
          rows = evaluate_campaign(noisy, i, sc, sv, r_star, config, OutcomeMode::Expected,
                                   fixed1 ? &*fixed1 : nullptr, fixed2 ? &*fixed2 : nullptr);
        } catch (const std::exception& e) {
          rows = failure_rows(campaign_name(i), sc, sv, strategies, e.what());
        }
        out.insert(out.end(), rows.begin(), rows.end());
      }
    });
  }

  std::vector<ResultRow> rows;
  for (auto& chunk : per_campaign) rows.insert(rows.end(), chunk.begin(), chunk.end());
  append_mean_rows(rows);
  return rows;
}

std::vector<ResultRow> run_ingest(const ExperimentConfig& config) {
  config.validate();
  const fs::path source(config.dataset);
  std::vector<fs::path> files;
  if (fs::is_directory(source)) {
    for (const auto& entry : fs::directory_iterator(source))
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(source)) {
    files.push_back(source);
  } else {
    throw DataError("dataset not found: " + config.dataset);
  }
  if (files.empty()) throw DataError("no .csv files in " + config.dataset);

  // Read everything up front so schema errors abort before any evaluation.
  std::vector<CampaignFile> campaigns;
  for (const auto& f : files) campaigns.push_back(read_campaign_csv(f, config.factors));

  std::optional<GmmPrior1D> fixed1;
  std::optional<GmmPrior2D> fixed2;
  if (!config.prior_path.empty()) {
    GmmPrior1D p1;
    GmmPrior2D p2;
    std::ifstream in(config.prior_path);
    if (!in) throw DataError("cannot open prior file " + config.prior_path);
    try {
      if (read_prior(in, p1, p2) == 1)
        fixed1 = p1;
      else
        fixed2 = p2;
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
  }

  const auto strategies = config.effective_strategies();
  std::vector<std::vector<ResultRow>> per_campaign(campaigns.size());
  parallel_for(campaigns.size(), worker_count(config, campaigns.size()), [&](std::size_t i) {
    const CampaignFile& file = campaigns[i];
    const auto& recs = file.campaign.records;
    double var_ctr = 0, var_cvr = 0;
    for (const auto& r : recs) {
      var_ctr += r.noise_var_logit_ctr;
      var_cvr += r.noise_var_logit_cvr;
    }
    const double sc = std::sqrt(var_ctr / static_cast<double>(recs.size()));
    const double sv = std::sqrt(var_cvr / static_cast<double>(recs.size()));
    const OutcomeMode mode =
        (!file.has_truth && file.has_outcomes) ? OutcomeMode::Realized : OutcomeMode::Expected;
    try {
      const double r_star = oracle_optimum(file.campaign);
      auto rows = evaluate_campaign(file.campaign, i, sc, sv, r_star, config, mode, fixed1 ? &*fixed1 : nullptr,
                                    fixed2 ? &*fixed2 : nullptr);
      for (auto& row : rows) {
        if (!file.has_truth) add_flag(row.flags, "no_truth");
        if (mode == OutcomeMode::Realized) add_flag(row.flags, "realized");
      }
      per_campaign[i] = std::move(rows);
    } catch (const std::exception& e) {
      per_campaign[i] = failure_rows(file.campaign.id, sc, sv, strategies, e.what());
    }
  });
  std::vector<ResultRow> rows;
  for (auto& chunk : per_campaign) rows.insert(rows.end(), chunk.begin(), chunk.end());
  append_mean_rows(rows);
  return rows;
}

std::vector<fs::path> run_generate(const ExperimentConfig& config, const fs::path& dir, double inject_sigma_ctr,
                                   double inject_sigma_cvr) {
  config.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  SyntheticParams params;
  params.auctions = config.auctions;
  params.wp_sigma = config.wp_sigma;
  params.factors = config.factors;
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < config.campaigns; ++i) {
    Campaign c = generate_synthetic_campaign(params, campaign_seed(config.seed, i), campaign_name(i));
    if (inject_sigma_ctr > 0 || inject_sigma_cvr > 0)
      c = inject_noise(c, inject_sigma_ctr, inject_sigma_cvr, config.noise_correlation,
                       noise_seed(config.seed, i, inject_sigma_ctr, inject_sigma_cvr));
    const fs::path path = dir / (campaign_name(i) + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_campaign_csv(out, c);
    if (!out) throw DataError("write failed for " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace denoisebid
