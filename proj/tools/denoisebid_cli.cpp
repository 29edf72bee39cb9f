#include "denoisebid/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

using namespace denoisebid;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::string> dataset;
  std::vector<double> sigma_ctr_grid;
  std::vector<double> sigma_cvr_grid;
  std::optional<double> k_budget;
  std::optional<double> k_cpc;
  std::vector<std::string> strategies;
  std::optional<int> quadrature_order;
  std::optional<unsigned> jobs;
  std::optional<std::size_t> campaigns;
  std::optional<std::size_t> auctions;
  std::optional<int> components;
  std::optional<std::size_t> subsample;
  std::optional<std::string> prior;
  bool shared_prior = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--out", o.out, "Output path");
  cmd->add_option("--mode", o.mode, "ctr_only | joint | empirical");
  cmd->add_option("--k-budget", o.k_budget, "Budget factor k_B");
  cmd->add_option("--k-cpc", o.k_cpc, "CPC factor k_C");
  cmd->add_option("--campaigns", o.campaigns, "Number of synthetic campaigns");
  cmd->add_option("--auctions", o.auctions, "Auctions per synthetic campaign");
  cmd->add_option("--jobs", o.jobs, "Worker threads (0: all cores)");
}

void add_evaluation(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--sigma-ctr-grid", o.sigma_ctr_grid, "CTR logit noise sigmas")->delimiter(',');
  cmd->add_option("--sigma-cvr-grid", o.sigma_cvr_grid, "CVR logit noise sigmas")->delimiter(',');
  cmd->add_option("--strategies", o.strategies, "Strategies to run")->delimiter(',');
  cmd->add_option("--quadrature-order", o.quadrature_order, "Gauss-Hermite order per axis");
  cmd->add_option("--components", o.components, "Prior mixture components");
  cmd->add_option("--subsample", o.subsample, "Auctions per campaign used for prior fitting");
  cmd->add_option("--prior", o.prior, "Serialized prior to use instead of fitting");
  cmd->add_flag("--shared-prior", o.shared_prior, "Fit one prior on pooled subsamples per noise point");
}

ExperimentConfig build_config(const Overrides& o, bool generating = false) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.mode) c.mode = parse_mode(*o.mode);
  if (o.dataset) c.dataset = *o.dataset;
  if (!o.sigma_ctr_grid.empty()) c.sigma_ctr_grid = o.sigma_ctr_grid;
  if (!o.sigma_cvr_grid.empty()) c.sigma_cvr_grid = o.sigma_cvr_grid;
  if (o.k_budget) c.factors.budget = *o.k_budget;
  if (o.k_cpc) c.factors.cpc = *o.k_cpc;
  if (!o.strategies.empty()) c.strategies = o.strategies;
  if (o.quadrature_order) c.quadrature_order = *o.quadrature_order;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.campaigns) c.campaigns = *o.campaigns;
  if (o.auctions) c.auctions = *o.auctions;
  if (o.components) c.prior_components = c.joint_prior_components = *o.components;
  if (o.subsample) c.fit_subsample = *o.subsample;
  if (o.prior) c.prior_path = *o.prior;
  if (o.shared_prior) c.shared_prior = true;
  // Writing data never fits a prior.
  if (generating) c.fit_subsample = std::min(c.fit_subsample, c.auctions);
  c.validate();
  return c;
}

void emit_results(const ExperimentConfig& c, const std::vector<ResultRow>& rows) {
  if (c.out.empty() || c.out == "-") {
    write_results_csv(std::cout, rows);
    return;
  }
  std::ofstream out(c.out, std::ios::binary);
  if (!out) throw DataError("cannot write " + c.out);
  write_results_csv(out, rows);
  if (!out) throw DataError("write failed for " + c.out);
}

void report_failures(const std::vector<ResultRow>& rows) {
  std::size_t failed = 0;
  for (const auto& r : rows)
    if (r.flags.starts_with("error:")) ++failed;
  if (failed) std::cerr << "warning: " << failed << " result rows flagged with errors\n";
}

int fit_prior(const Overrides& o, const std::string& input) {
  ExperimentConfig c = build_config(o);
  const CampaignFile file = read_campaign_csv(std::filesystem::path(input), c.factors);
  FitConfig fit = c.fit;
  fit.seed = c.seed;
  std::ofstream file_out;
  std::ostream* out = &std::cout;
  if (!c.out.empty() && c.out != "-") {
    file_out.open(c.out, std::ios::binary);
    if (!file_out) throw DataError("cannot write " + c.out);
    out = &file_out;
  }
  if (c.mode == Mode::CtrOnly) {
    fit.components = c.prior_components;
    const auto obs = ctr_observations(file.campaign.records);
    const auto result = xdgmm_fit(std::span<const NoisyObservation1D>(obs), fit);
    write_prior(*out, result.prior);
    std::cerr << "fit: " << result.diagnostics.iterations << " iterations, loglik "
              << result.diagnostics.final_loglik << (result.diagnostics.converged ? "" : " (not converged)") << '\n';
  } else {
    fit.components = c.joint_prior_components;
    const auto obs = joint_observations(file.campaign.records);
    const auto result = xdgmm_fit(std::span<const NoisyObservation2D>(obs), fit);
    write_prior(*out, result.prior);
    std::cerr << "fit: " << result.diagnostics.iterations << " iterations, loglik "
              << result.diagnostics.final_loglik << (result.diagnostics.converged ? "" : " (not converged)") << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autobidding under noisy CTR/CVR predictions"};
  app.require_subcommand(1);

  Overrides o;
  std::string generate_dir = "data";
  double inject_ctr = 0;
  double inject_cvr = 0;
  std::string dataset;
  std::string fit_input;

  auto* generate = app.add_subcommand("generate", "Write synthetic campaign CSVs");
  add_common(generate, o);
  generate->add_option("--inject-sigma-ctr", inject_ctr, "Inject CTR logit noise of this sigma");
  generate->add_option("--inject-sigma-cvr", inject_cvr, "Inject CVR logit noise of this sigma");

  auto* sweep = app.add_subcommand("sweep", "Noise sweep over synthetic campaigns");
  add_common(sweep, o);
  add_evaluation(sweep, o);

  auto* ingest = app.add_subcommand("ingest", "Evaluate strategies on auction-log CSVs");
  add_common(ingest, o);
  add_evaluation(ingest, o);
  ingest->add_option("dataset", dataset, "CSV file or directory")->required();

  auto* fit = app.add_subcommand("fit-prior", "Fit a prior on one auction-log CSV and serialize it");
  add_common(fit, o);
  add_evaluation(fit, o);
  fit->add_option("input", fit_input, "Auction-log CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (generate->parsed()) {
      const ExperimentConfig c = build_config(o, true);
      const std::string dir = c.out.empty() ? generate_dir : c.out;
      const auto files = run_generate(c, dir, inject_ctr, inject_cvr);
      std::cerr << "wrote " << files.size() << " campaign files to " << dir << '\n';
    } else if (sweep->parsed()) {
      const ExperimentConfig c = build_config(o);
      const auto rows = run_sweep(c);
      emit_results(c, rows);
      report_failures(rows);
    } else if (ingest->parsed()) {
      o.dataset = dataset;
      ExperimentConfig c = build_config(o);
      if (!o.mode && o.config_path.empty()) c.mode = Mode::Empirical;
      const auto rows = run_ingest(c);
      emit_results(c, rows);
      report_failures(rows);
    } else if (fit->parsed()) {
      return fit_prior(o, fit_input);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
