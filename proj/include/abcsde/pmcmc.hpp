#pragma once

#include "abcsde/abc_mcmc.hpp"
#include "abcsde/models.hpp"
#include "abcsde/random.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace abcsde
{

/// K weighted particles; states are stored column-wise (d x K).
struct ParticleSystem
{
  MatrixXd states;
  VectorXd weights;
  double log_likelihood = 0;

  Eigen::Index size() const { return states.cols(); }
};

/// u_k = (k + U_k) / K, k = 0..K-1, mapped through the inverse cumulative
/// weight function. Weights need not be normalised exactly.
void stratified_resample(const VectorXd& weights, Rng& noise, std::vector<Eigen::Index>& indices);
std::vector<Eigen::Index> stratified_resample(const VectorXd& weights, Rng& noise);

/// Bootstrap-filter estimate of log p(y | theta). Particles move by
/// Euler-Maruyama on the model grid; observation times must be grid points.
/// Returns -inf when every weight underflows.
double bootstrap_pf_loglik(const StateSpaceModel& model, const VectorXd& theta,
                           const ObservationSet& data, Eigen::Index particles, Rng& noise);

/// Exact log-likelihood for dX = mu dt + sigma dW, X(0) = x0 known,
/// y_i = X(t_i) + N(0, sigma_eps^2), by the Kalman recursion.
double random_walk_exact_loglik(double mu, double sigma, double sigma_eps, double x0,
                                const std::vector<double>& times, const std::vector<double>& y);

struct PmcmcOptions
{
  std::uint64_t iterations = 0;
  std::uint64_t burn_in = 0;
  std::uint64_t thin = 1;
  std::uint64_t seed = 1;
  std::uint64_t chain_id = 0;
  Eigen::Index particles = 100;

  std::optional<VectorXd> theta_start;        // default: prior means
  std::optional<MatrixXd> initial_covariance; // default: diag((0.1 prior sd)^2)
  AdaptationOptions adaptation;
  bool freeze_adaptation_after_burn_in = false;
  std::uint64_t max_start_attempts = 1000;
};

struct PmcmcRecord
{
  std::uint64_t iteration = 0;
  VectorXd theta;
  double log_likelihood = 0;
  bool accepted = false;
};

struct PmcmcResult
{
  std::vector<PmcmcRecord> records;
  std::uint64_t iterations = 0;
  std::uint64_t accepted = 0;
  std::uint64_t filter_runs = 0;
  double seconds = 0;

  double acceptance_rate() const;
};

/// Pseudo-marginal Metropolis-Hastings: the filter estimate for the current
/// state is stored and never recomputed.
PmcmcResult pmmh_run(const StateSpaceModel& model, const ObservationSet& data,
                     const PmcmcOptions& options,
                     const std::function<void(const PmcmcRecord&)>& sink = {});

} // namespace abcsde
