#pragma once

#include "abcsde/random.hpp"
#include "abcsde/sde.hpp"

#include <Eigen/Dense>

#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace abcsde
{

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Parameters and priors
// ---------------------------------------------------------------------------

enum class Transform
{
  Log,
  Identity,
};

/// Where a sampled parameter is consumed.
enum class ParameterRole
{
  Sde,          // component of psi
  ErrorSd,      // measurement-error standard deviation
  InitialState, // component of x0
};

/// Gaussian prior on the transformed scale. sd == 0 is a point mass.
struct GaussianPrior
{
  double mean = 0;
  double sd = 1;
};

struct ParameterDef
{
  std::string name;
  Transform transform = Transform::Log;
  GaussianPrior prior;
  ParameterRole role = ParameterRole::Sde;
  Eigen::Index role_index = 0; // psi index or x0 coordinate
};

/// Truncated exponential on (0, max] with (untruncated) mean `mean`.
struct BandwidthPrior
{
  double mean = 0.07;
  double max = 0.25;
};

struct ParameterSpec
{
  std::vector<ParameterDef> parameters;
  BandwidthPrior bandwidth;

  Eigen::Index size() const { return static_cast<Eigen::Index>(parameters.size()); }
  std::vector<std::string> names() const;
  VectorXd prior_means() const;
  VectorXd prior_sds() const;

  /// Back-transform of a transformed-scale vector.
  VectorXd to_natural(const VectorXd& theta) const;
  VectorXd to_transformed(const VectorXd& natural) const;
};

double gaussian_log_density(double x, const GaussianPrior& prior);
double log_prior_theta(const VectorXd& theta, const ParameterSpec& spec);
double log_prior_bandwidth(double delta, const BandwidthPrior& prior);
/// log pi(theta) + log pi(delta); -inf outside the support.
double log_prior(const VectorXd& theta, double delta, const ParameterSpec& spec);

VectorXd sample_prior(const ParameterSpec& spec, Rng& rng);
double sample_bandwidth(const BandwidthPrior& prior, Rng& rng);
double bandwidth_cdf(double delta, const BandwidthPrior& prior);
double normal_cdf(double x, const GaussianPrior& prior);

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// Observed coordinate indices (0-based) per observation time.
using ObservationMask = std::vector<std::vector<Eigen::Index>>;

ObservationMask full_mask(std::size_t times, Eigen::Index dimension);
ObservationMask constant_mask(std::size_t times, std::vector<Eigen::Index> observed);
std::size_t mask_size(const ObservationMask& mask);

struct ObservationSet
{
  std::vector<double> times;
  ObservationMask mask;
  std::vector<VectorXd> values; // values[i].size() == mask[i].size()

  /// eta(y): time-major, coordinate-minor.
  VectorXd flattened() const;
  std::size_t flattened_size() const { return mask_size(mask); }
  void validate() const;
};

/// y = masked(x) + eps with eps ~ N(0, sigma_eps^2) i.i.d. per observed coordinate.
ObservationSet apply_error_model(const MatrixXd& x_at_obs, const std::vector<double>& times,
                                 double sigma_eps, const ObservationMask& mask, Rng& noise);

/// Flattened variant used inside samplers; writes eta(y) into `eta`.
void apply_error_model_flat(const MatrixXd& x_at_obs, double sigma_eps,
                            const ObservationMask& mask, Rng& noise, VectorXd& eta);

// ---------------------------------------------------------------------------
// Concrete SDEs
// ---------------------------------------------------------------------------

struct DriftDiffusion
{
  VectorXd drift;
  MatrixXd diffusion;
};

/// psi = (Ke, Ka, Cl, sigma) on natural scale.
DriftDiffusion theophylline_drift_diffusion(double x, double t, const VectorXd& psi, double dose);
SdeModel<double> theophylline_sde(double dose);

/// psi = (mu, sigma): dX = mu dt + sigma dW.
SdeModel<double> drifted_random_walk_sde();

struct ReactionNetwork
{
  using PropensityFn = std::function<void(const VectorXd& x, const VectorXd& c, VectorXd& h)>;

  std::vector<std::string> species;
  Eigen::MatrixXi stoichiometry; // species x reactions
  PropensityFn propensities;
  VectorXd rates;
  double conserved_total = 0; // k

  Eigen::Index species_count() const { return stoichiometry.rows(); }
  Eigen::Index reaction_count() const { return stoichiometry.cols(); }
  VectorXd evaluate(const VectorXd& x) const;
};

/// Reduced auto-regulation network, state (RNA, P, P2, DNA), DNA.P2 = k - DNA.
ReactionNetwork autoregulation_network(double k, const VectorXd& rates);
/// Unreduced network, state (RNA, P, P2, DNA.P2, DNA).
ReactionNetwork autoregulation_network_full(double k, const VectorXd& rates);
/// Maps a reduced state to the unreduced one via DNA.P2 = k - DNA.
VectorXd expand_autoregulation_state(const VectorXd& reduced, double k);

/// h = (c1 DNA P2, c2 (k - DNA), c3 DNA, c4 RNA, c5 P(P-1)/2, c6 P2, c7 RNA, c8 P).
/// Generic in the arithmetic type so it can be checked with exact rationals;
/// x, c and h only need operator[].
template <typename Scalar, typename State, typename Rates, typename Out>
void autoregulation_propensities_generic(const State& x, const Rates& c, const Scalar& k, Out& h)
{
  const Scalar rna = x[0], p = x[1], p2 = x[2], dna = x[3];
  h[0] = c[0] * dna * p2;
  h[1] = c[1] * (k - dna);
  h[2] = c[2] * dna;
  h[3] = c[3] * rna;
  h[4] = c[4] * p * (p - Scalar(1)) / Scalar(2);
  h[5] = c[5] * p2;
  h[6] = c[6] * rna;
  h[7] = c[7] * p;
}

void autoregulation_propensities(const VectorXd& x, const VectorXd& c, double k, VectorXd& h);

/// Chemical Langevin drift S h and diffusion S sqrt(diag(|h|)).
DriftDiffusion cle_drift_diffusion(const VectorXd& x, const VectorXd& c, double k);
SdeModel<double> autoregulation_cle(double k);

// ---------------------------------------------------------------------------
// State-space model stack
// ---------------------------------------------------------------------------

/// Natural-scale quantities a transformed parameter vector maps to.
struct ResolvedParameters
{
  VectorXd psi;
  VectorXd x0;
  double error_sd = 0;
};

/// Latent SDE + schedule + mask + error model + parameterisation.
class StateSpaceModel
{
public:
  std::string id;
  ParameterSpec spec;
  SdeModel<double> sde;
  TimeGrid<double> grid;
  ObservationMask mask;
  VectorXd psi_defaults;   // natural psi for components not sampled
  VectorXd initial_state;  // x0 for components not sampled
  double error_sd = 0;     // used when no ErrorSd parameter is sampled

  ResolvedParameters resolve(const VectorXd& theta) const;
  std::size_t observation_size() const { return mask_size(mask); }

  /// Latent Euler-Maruyama path for theta.
  TrajectorySet<double> simulate_latent(const VectorXd& theta, Rng& simulation) const;

  /// eta(y_sim) for theta. Throws SimulationFailure on divergence.
  void simulate_observations(const VectorXd& theta, Rng& simulation, Rng& error,
                             VectorXd& eta) const;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Built-in experiment setups
// ---------------------------------------------------------------------------

struct TheophyllineSetup
{
  double dose = 4.0;
  std::vector<double> times{0.25, 0.5, 1.0, 2.0, 3.5, 5.0, 7.0, 9.0, 12.0};
  int substeps = 20;
  double x0 = 0.0;
  std::vector<GaussianPrior> priors{{-2.7, 0.6}, {0.14, 0.4}, {-3.0, 0.8}, {-1.1, 0.3}, {-1.25, 0.2}};
  BandwidthPrior bandwidth{0.07, 0.25};
};

/// theta = (log Ke, log Ka, log Cl, log sigma, log sigma_eps).
StateSpaceModel make_theophylline_model(const TheophyllineSetup& setup = {});
/// Transformed-scale values used to generate the synthetic dataset.
VectorXd theophylline_true_theta();

struct AutoregulationSetup
{
  double k = 10.0;
  VectorXd x0 = (VectorXd(4) << 8, 8, 8, 5).finished();
  double t_end = 49.0;
  double stepsize = 0.1;
  bool observe_dna = true;
  /// Measurement-error sd: fixed value, or sampled when `error_prior` is set.
  double error_sd = 0.0;
  bool estimate_error_sd = false;
  GaussianPrior error_prior{1.4, 0.25};
  bool estimate_dna0 = false;
  GaussianPrior dna0_prior{1.8, 0.16};
  std::vector<GaussianPrior> rate_priors{{-2.6, 0.25}, {-0.6, 0.4}, {-1.5, 0.4}, {-1.8, 0.4},
                                         {-2.4, 0.2},  {-1.0, 0.4}, {-1.85, 0.3}, {-1.8, 0.3}};
  BandwidthPrior bandwidth{0.07, 0.3};
};

/// theta = (log c1, ..., log c8[, log DNA0][, log sigma_eps]).
StateSpaceModel make_autoregulation_model(const AutoregulationSetup& setup = {});
VectorXd autoregulation_true_rates();

struct LinearGaussianSetup
{
  std::vector<double> times{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  int substeps = 5;
  double x0 = 0.0;
  std::vector<GaussianPrior> priors{{0.0, 1.0}, {-0.5, 0.5}, {-0.5, 0.5}};
  BandwidthPrior bandwidth{0.2, 1.0};
};

/// theta = (mu, log sigma, log sigma_eps) for dX = mu dt + sigma dW, y = X + eps.
StateSpaceModel make_linear_gaussian_model(const LinearGaussianSetup& setup = {});
VectorXd linear_gaussian_true_theta();

} // namespace abcsde
