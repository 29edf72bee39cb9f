// Experiment orchestration: synthetic generation, noise sweeps, ingestion of
// externally produced predictions, and tidy CSV results.
#pragma once

#include "denoisebid/strategies.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace denoisebid {

/// Invalid configuration or command line (exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or missing input data (exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Mode { CtrOnly, Joint, Empirical };

Mode parse_mode(const std::string& text);
std::string to_string(Mode mode);

/// Known strategy names.
inline constexpr const char* kOracle = "oracle";
inline constexpr const char* kNonRobust = "non_robust";
inline constexpr const char* kDenoiseCtrOnly = "denoise_ctr_only";
inline constexpr const char* kDenoiseCtrOnlyNormal = "denoise_ctr_only_normal";
inline constexpr const char* kDenoiseJoint = "denoise_joint";
inline constexpr const char* kDenoiseJointNormal = "denoise_joint_normal";

std::vector<double> log_spaced(double lo, double hi, std::size_t points);

struct ExperimentConfig {
  Mode mode = Mode::CtrOnly;
  /// "synthetic", or a CSV file / directory of CSV files.
  std::string dataset = "synthetic";
  std::size_t campaigns = 200;
  std::size_t auctions = 1000;
  double wp_sigma = 1.0;
  ConstraintFactors factors;
  /// Empty: 9 log-spaced points in [1e-2, 1e1], or 5 in joint mode.
  std::vector<double> sigma_ctr_grid;
  std::vector<double> sigma_cvr_grid = log_spaced(1e-2, 1e1, 5);
  double noise_correlation = 0;
  int prior_components = 3;
  int joint_prior_components = 3;
  FitConfig fit;
  std::size_t fit_subsample = 400;
  bool shared_prior = false;
  int quadrature_order = 5;
  std::vector<std::string> strategies;  // empty: defaults for the mode
  std::uint64_t seed = 2026;
  std::string out;
  unsigned jobs = 0;  // 0: hardware concurrency
  /// Optional serialized prior used instead of per-campaign fitting.
  std::string prior_path;

  [[nodiscard]] std::vector<std::string> effective_strategies() const;
  [[nodiscard]] std::vector<double> effective_sigma_ctr_grid() const;
  /// Throws ConfigError.
  void validate() const;
};

/// Reads the JSON config document (sections: experiment, constraints,
/// noise, prior, posterior, synthetic, strategies) over the defaults.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json(const std::string& text);

struct ResultRow {
  std::string campaign_id;
  std::string strategy;
  double sigma_ctr = 0;
  double sigma_cvr = 0;
  double r = 0;
  double r_star = 0;
  double ratio_r = 0;
  double spend = 0;
  double expected_clicks = 0;
  double cpc = 0;
  double cpc_camp = 0;
  double ratio_cpc = 0;
  double dual_p = 0;
  double dual_q = 0;
  double duality_gap = 0;
  double conv_uplift = 0;
  double cpc_shift = 0;
  std::string flags;
};

inline constexpr const char* kMeanRowId = "__mean__";

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(std::istream& in);

/// Auction-log CSV (header required, columns located by name):
/// auction_id, wp, ctr_true, cvr_true, ctr_hat, cvr_hat, var_logit_ctr,
/// var_logit_cvr, cov_logit, click, conversion. Truth and outcome columns
/// may be empty.
void write_campaign_csv(std::ostream& out, const Campaign& campaign);

struct CampaignFile {
  Campaign campaign;
  bool has_truth = true;
  bool has_outcomes = false;
};

/// Throws DataError naming the offending line.
CampaignFile read_campaign_csv(std::istream& in, const std::string& name, const ConstraintFactors& factors);
CampaignFile read_campaign_csv(const std::filesystem::path& path, const ConstraintFactors& factors);

/// Seeds derived from the run seed so every path through the harness sees
/// the same campaigns, noise and fit subsamples.
std::uint64_t campaign_seed(std::uint64_t seed, std::size_t index);
std::uint64_t noise_seed(std::uint64_t seed, std::size_t index, double sigma_ctr, double sigma_cvr);
std::uint64_t fit_seed(std::uint64_t seed, std::size_t index);

std::string campaign_name(std::size_t index);

/// Noise points visited by a sweep: (sigma_ctr, 0) in CTR-only mode, the
/// full grid product in joint mode.
std::vector<std::pair<double, double>> noise_points(const ExperimentConfig& config);

/// Runs every configured strategy on one (already noisy) campaign.
/// `shared_prior1` / `shared_prior2` replace per-campaign fitting when set.
std::vector<ResultRow> evaluate_campaign(const Campaign& noisy, std::size_t index, double sigma_ctr,
                                         double sigma_cvr, double r_star, const ExperimentConfig& config,
                                         OutcomeMode mode = OutcomeMode::Expected,
                                         const GmmPrior1D* shared_prior1 = nullptr,
                                         const GmmPrior2D* shared_prior2 = nullptr);

/// Per-campaign rows followed by "__mean__" rows per (noise point, strategy).
std::vector<ResultRow> run_sweep(const ExperimentConfig& config);

/// Evaluates campaigns read from `config.dataset` (file or directory).
std::vector<ResultRow> run_ingest(const ExperimentConfig& config);

/// Writes `campaigns` CSV files into `dir`; noise is injected when either
/// sigma is positive. Returns the written paths.
std::vector<std::filesystem::path> run_generate(const ExperimentConfig& config, const std::filesystem::path& dir,
                                                double inject_sigma_ctr = 0, double inject_sigma_cvr = 0);

/// Appends mean rows for every (sigma_ctr, sigma_cvr, strategy) group.
void append_mean_rows(std::vector<ResultRow>& rows);

}  // namespace denoisebid
