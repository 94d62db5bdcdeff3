#pragma once

#include "abcsde/models.hpp"
#include "abcsde/random.hpp"
#include "abcsde/summaries.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace abcsde
{

// ---------------------------------------------------------------------------
// Uniform ellipsoid kernel
// ---------------------------------------------------------------------------

/// c = V_p |A|^{1/p}, V_p = pi^{-1} [Gamma(p/2) p/2]^{2/p}, so that the region
/// {z : z^T A z < c} has unit volume. A is diagonal, given by its entries.
double kernel_volume_constant(const VectorXd& diagonal);

/// K(z) = 1 iff z^T A z < c, with z = (s_sim - s_obs) / delta.
class UniformEllipsoidKernel
{
public:
  UniformEllipsoidKernel() = default;
  explicit UniformEllipsoidKernel(VectorXd diagonal);

  const VectorXd& weights() const { return weights_; }
  double volume_constant() const { return c_; }
  Eigen::Index dimension() const { return weights_.size(); }

  bool evaluate(const VectorXd& s_sim, const VectorXd& s_obs, double delta) const;

private:
  VectorXd weights_;
  double c_ = 0;
};

// ---------------------------------------------------------------------------
// Adaptive Gaussian random walk (Haario et al.)
// ---------------------------------------------------------------------------

struct AdaptationOptions
{
  std::uint64_t start = 500;   // t0: seed covariance up to this many points
  double epsilon = 1e-8;
  double scale = 0;            // 0: 2.4^2 / dim
};

class AdaptiveProposal
{
public:
  AdaptiveProposal() = default;
  AdaptiveProposal(MatrixXd seed_covariance, AdaptationOptions options);

  /// Rank-1 update of the running mean and covariance with one chain state.
  void update(const VectorXd& point);
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::uint64_t count() const { return count_; }
  const VectorXd& mean() const { return mean_; }
  /// Sample covariance of the history (zero before two points).
  MatrixXd sample_covariance() const;
  /// Seed covariance up to t0, s (Cov + eps I) afterwards; rows and columns
  /// of coordinates with zero seed variance are held at zero.
  const MatrixXd& covariance() const;
  double scale() const { return scale_; }

  VectorXd propose(const VectorXd& current, Rng& rng) const;
  /// Gaussian increments are symmetric, so the log proposal ratio is zero.
  double log_proposal_ratio(const VectorXd&, const VectorXd&) const { return 0.0; }

private:
  void refresh() const;

  MatrixXd seed_covariance_;
  AdaptationOptions options_;
  std::vector<Eigen::Index> free_;
  double scale_ = 1;
  bool frozen_ = false;
  std::uint64_t count_ = 0;
  VectorXd mean_;
  MatrixXd scatter_;
  mutable bool dirty_ = true;
  mutable MatrixXd covariance_;
  mutable MatrixXd cholesky_;
};

// ---------------------------------------------------------------------------
// ABC-MCMC
// ---------------------------------------------------------------------------

enum class SamplerVariant
{
  Standard,        // simulate on every iteration
  EarlyRejection,  // skip simulation when omega exceeds the prior/proposal ratio
};

std::string to_string(SamplerVariant variant);
SamplerVariant sampler_variant_from_string(const std::string& name);

struct ChainRecord
{
  std::uint64_t iteration = 0;
  VectorXd theta;
  double delta = 0;
  VectorXd summary;
  bool accepted = false;
  /// omega exceeded the prior/proposal ratio, so the proposal was rejected
  /// whatever the kernel value. Recorded by both variants; only the
  /// early-rejection variant skips the simulation.
  bool early_rejected = false;
  double log_prior_ratio = 0;

  friend bool operator==(const ChainRecord&, const ChainRecord&) = default;
};

struct AbcOptions
{
  SamplerVariant variant = SamplerVariant::EarlyRejection;
  std::uint64_t iterations = 0;
  std::uint64_t burn_in = 0;
  std::uint64_t thin = 1;
  std::uint64_t seed = 1;
  std::uint64_t chain_id = 0;

  double delta_start = 0.2;
  std::optional<double> delta_step_sd;   // default: bandwidth prior mean / 5
  std::optional<VectorXd> theta_start;   // default: prior means
  bool sample_start_from_prior = false;
  std::uint64_t max_start_attempts = 100000;

  std::optional<MatrixXd> initial_covariance; // default: diag((0.1 prior sd)^2)
  AdaptationOptions adaptation;
  bool freeze_adaptation_after_burn_in = false;
};

struct PhaseTiming
{
  double proposal = 0;
  double simulation = 0;
  double summary = 0;
  double kernel = 0;
  double total = 0;
};

struct AbcResult
{
  std::vector<ChainRecord> records; // retained (burn-in and thinning applied)
  std::uint64_t iterations = 0;
  std::uint64_t accepted = 0;
  std::uint64_t early_rejected = 0;
  std::uint64_t simulations = 0;
  std::uint64_t simulation_failures = 0;
  std::uint64_t start_attempts = 0;
  PhaseTiming timing;

  double acceptance_rate() const;
  double early_rejection_rate() const;
};

/// True when iteration r is kept: r > burn_in and (r - burn_in) % thin == 0;
/// the initial state (r = 0) is kept only without burn-in.
bool is_retained(std::uint64_t iteration, std::uint64_t burn_in, std::uint64_t thin);

class AbcSampler
{
public:
  using RecordSink = std::function<void(const ChainRecord&)>;

  AbcSampler(const StateSpaceModel& model, const SummaryProjector& projector,
             UniformEllipsoidKernel kernel, VectorXd observed_summary, AbcOptions options);

  /// Start state whose kernel value is 1, re-simulating
  /// (and re-drawing theta when sampling from the prior) as needed.
  ChainRecord initialize();

  ChainRecord step_standard(const ChainRecord& current, std::uint64_t iteration);
  ChainRecord step_early_rejection(const ChainRecord& current, std::uint64_t iteration);
  ChainRecord step(const ChainRecord& current, std::uint64_t iteration);

  /// Runs the full chain. Retained records go to `sink` when given, and into
  /// the result otherwise.
  AbcResult run(const RecordSink& sink = {});

  const AdaptiveProposal& proposal() const { return proposal_; }
  const AbcOptions& options() const { return options_; }
  const UniformEllipsoidKernel& kernel() const { return kernel_; }
  double delta_step_sd() const { return delta_step_sd_; }

private:
  struct Proposed
  {
    VectorXd theta;
    double delta = 0;
    double log_ratio = 0;
    double omega = 0;
  };

  Proposed propose(const ChainRecord& current, std::uint64_t iteration);
  /// Simulates and projects; false when the simulation diverged.
  bool simulate_summary(const VectorXd& theta, std::uint64_t iteration, VectorXd& summary);
  ChainRecord rejected(const ChainRecord& current, std::uint64_t iteration, const Proposed& prop,
                       bool early) const;
  double current_log_prior(const ChainRecord& current) const;

  const StateSpaceModel& model_;
  const SummaryProjector& projector_;
  UniformEllipsoidKernel kernel_;
  VectorXd observed_summary_;
  AbcOptions options_;
  AdaptiveProposal proposal_;
  double delta_step_sd_ = 0;

  VectorXd eta_;
  PhaseTiming timing_;
  std::uint64_t simulations_ = 0;
  std::uint64_t failures_ = 0;
  std::uint64_t start_attempts_ = 0;
};

} // namespace abcsde
