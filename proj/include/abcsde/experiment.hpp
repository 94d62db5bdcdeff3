#pragma once

#include "abcsde/abc_mcmc.hpp"
#include "abcsde/diagnostics.hpp"
#include "abcsde/io.hpp"
#include "abcsde/models.hpp"
#include "abcsde/pmcmc.hpp"
#include "abcsde/summaries.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace abcsde
{

/// Invalid experiment configuration; the message names the field path.
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A stage input that an earlier stage should have written.
class MissingInput : public DataError
{
public:
  MissingInput(const std::filesystem::path& path, const std::string& producer);
};

struct ExperimentConfig
{
  Json raw; // effective configuration, echoed into manifests

  std::string model_id;
  TheophyllineSetup theophylline;
  AutoregulationSetup autoregulation;
  LinearGaussianSetup linear_gaussian;

  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";

  // data
  std::string data_mode = "generate"; // generate | load
  std::filesystem::path data_path;    // load mode
  std::uint64_t data_seed = 1;
  std::map<std::string, double> truth; // natural-scale overrides
  std::optional<double> noise_sd;      // network data; default: model error sd

  // bandwidth
  double delta_start = 0.2;
  std::optional<double> delta_step_sd;

  // pilot / summaries
  Eigen::Index pilot_draws = 1000;
  FitMethod fit_method = FitMethod::Ols;
  int lasso_folds = 10;

  std::string kernel_weights = "inverse-variance"; // | identity

  // abc
  SamplerVariant variant = SamplerVariant::EarlyRejection;
  std::uint64_t iterations = 10000;
  std::uint64_t burn_in = 0;
  std::uint64_t thin = 1;
  std::uint64_t adaptation_start = 500;
  bool freeze_adaptation = false;
  bool start_from_prior = false;

  // diagnose
  std::optional<double> delta_star;
  int band_points = 50;
  std::vector<std::pair<std::string, std::string>> ratios;

  // pmcmc
  Eigen::Index particles = 100;
  std::uint64_t pmcmc_iterations = 10000;
  std::uint64_t pmcmc_burn_in = 0;
  std::uint64_t pmcmc_thin = 1;
};

ExperimentConfig parse_config(const Json& raw, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

StateSpaceModel build_model(const ExperimentConfig& config);

/// Transformed-scale truth for the configured model, with overrides applied.
VectorXd configured_truth(const ExperimentConfig& config, const StateSpaceModel& model);

/// Synthetic dataset on the model schedule and mask: exact transitions for
/// the linear models, the Gillespie SSA for the network.
ObservationSet generate_dataset(const ExperimentConfig& config, const StateSpaceModel& model,
                                Json* sidecar = nullptr);

struct StagePaths
{
  std::filesystem::path dir;
  std::filesystem::path data_csv() const { return dir / "data.csv"; }
  std::filesystem::path data_json() const { return dir / "data.json"; }
  std::filesystem::path pilot_parameters() const { return dir / "pilot_parameters.csv"; }
  std::filesystem::path pilot_observations() const { return dir / "pilot_observations.csv"; }
  std::filesystem::path projector() const { return dir / "projector.json"; }
  std::filesystem::path chain() const { return dir / "chain.csv"; }
  std::filesystem::path timing() const { return dir / "timing.json"; }
  std::filesystem::path pmcmc_chain() const { return dir / "pmcmc_chain.csv"; }
  std::filesystem::path summary_json() const { return dir / "summary.json"; }
  std::filesystem::path summary_csv() const { return dir / "summary.csv"; }
  std::filesystem::path pmcmc_summary_json() const { return dir / "pmcmc_summary.json"; }
  std::filesystem::path band_curve() const { return dir / "band_curve.csv"; }
  std::filesystem::path bench() const { return dir / "bench.json"; }
  std::filesystem::path manifest(const std::string& stage) const { return dir / ("manifest_" + stage + ".json"); }
};

/// Observed data for the run: the generated file, or the configured CSV.
ObservationSet load_observations(const ExperimentConfig& config, const StateSpaceModel& model);

void cmd_generate(const ExperimentConfig& config, std::ostream& log);
void cmd_train(const ExperimentConfig& config, std::ostream& log);
AbcResult cmd_abc(const ExperimentConfig& config, std::ostream& log);
PmcmcResult cmd_pmcmc(const ExperimentConfig& config, std::ostream& log);
PosteriorSummary cmd_diagnose(const ExperimentConfig& config, std::ostream& log);
Json cmd_bench(const ExperimentConfig& config, std::ostream& log);

/// Sampler built from the configured model, projector and data.
struct AbcSetup
{
  StateSpaceModel model;
  SummaryProjector projector;
  UniformEllipsoidKernel kernel;
  VectorXd observed_summary;
  AbcOptions options;
};
AbcSetup prepare_abc(const ExperimentConfig& config);

} // namespace abcsde
