#include "abcsde/models.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace abcsde
{

// ---------------------------------------------------------------------------
// Parameters and priors

std::vector<std::string> ParameterSpec::names() const
{
  std::vector<std::string> out;
  out.reserve(parameters.size());
  for (const auto& p : parameters)
    out.push_back(p.name);
  return out;
}

VectorXd ParameterSpec::prior_means() const
{
  VectorXd out(size());
  for (Eigen::Index i = 0; i < size(); ++i)
    out(i) = parameters[static_cast<std::size_t>(i)].prior.mean;
  return out;
}

VectorXd ParameterSpec::prior_sds() const
{
  VectorXd out(size());
  for (Eigen::Index i = 0; i < size(); ++i)
    out(i) = parameters[static_cast<std::size_t>(i)].prior.sd;
  return out;
}

VectorXd ParameterSpec::to_natural(const VectorXd& theta) const
{
  VectorXd out(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    out(i) = parameters[static_cast<std::size_t>(i)].transform == Transform::Log ? std::exp(theta(i))
                                                                                 : theta(i);
  return out;
}

VectorXd ParameterSpec::to_transformed(const VectorXd& natural) const
{
  VectorXd out(natural.size());
  for (Eigen::Index i = 0; i < natural.size(); ++i)
    out(i) = parameters[static_cast<std::size_t>(i)].transform == Transform::Log ? std::log(natural(i))
                                                                                 : natural(i);
  return out;
}

double gaussian_log_density(double x, const GaussianPrior& prior)
{
  if (prior.sd == 0)
    return x == prior.mean ? 0.0 : kNegInf;
  const double z = (x - prior.mean) / prior.sd;
  return -0.5 * z * z - std::log(prior.sd * std::sqrt(2.0 * std::numbers::pi));
}

double log_prior_theta(const VectorXd& theta, const ParameterSpec& spec)
{
  double total = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    total += gaussian_log_density(theta(i), spec.parameters[static_cast<std::size_t>(i)].prior);
  return total;
}

double log_prior_bandwidth(double delta, const BandwidthPrior& prior)
{
  if (!(delta > 0) || delta > prior.max)
    return kNegInf;
  // (1/lambda) exp(-delta/lambda) / (1 - exp(-max/lambda))
  return -std::log(prior.mean) - delta / prior.mean - std::log(-std::expm1(-prior.max / prior.mean));
}

double log_prior(const VectorXd& theta, double delta, const ParameterSpec& spec)
{
  const double lb = log_prior_bandwidth(delta, spec.bandwidth);
  if (lb == kNegInf)
    return kNegInf;
  return log_prior_theta(theta, spec) + lb;
}

VectorXd sample_prior(const ParameterSpec& spec, Rng& rng)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd out(spec.size());
  for (Eigen::Index i = 0; i < spec.size(); ++i)
  {
    const auto& prior = spec.parameters[static_cast<std::size_t>(i)].prior;
    out(i) = prior.mean + prior.sd * normal(rng);
  }
  return out;
}

double sample_bandwidth(const BandwidthPrior& prior, Rng& rng)
{
  const double u = uniform01(rng);
  return -prior.mean * std::log1p(u * std::expm1(-prior.max / prior.mean));
}

double bandwidth_cdf(double delta, const BandwidthPrior& prior)
{
  if (delta <= 0)
    return 0.0;
  if (delta >= prior.max)
    return 1.0;
  return std::expm1(-delta / prior.mean) / std::expm1(-prior.max / prior.mean);
}

double normal_cdf(double x, const GaussianPrior& prior)
{
  if (prior.sd == 0)
    return x < prior.mean ? 0.0 : 1.0;
  return 0.5 * std::erfc(-(x - prior.mean) / (prior.sd * std::numbers::sqrt2));
}

// ---------------------------------------------------------------------------
// Observations

ObservationMask full_mask(std::size_t times, Eigen::Index dimension)
{
  std::vector<Eigen::Index> all(static_cast<std::size_t>(dimension));
  for (Eigen::Index j = 0; j < dimension; ++j)
    all[static_cast<std::size_t>(j)] = j;
  return ObservationMask(times, all);
}

ObservationMask constant_mask(std::size_t times, std::vector<Eigen::Index> observed)
{
  return ObservationMask(times, std::move(observed));
}

std::size_t mask_size(const ObservationMask& mask)
{
  std::size_t total = 0;
  for (const auto& m : mask)
    total += m.size();
  return total;
}

VectorXd ObservationSet::flattened() const
{
  VectorXd out(static_cast<Eigen::Index>(flattened_size()));
  Eigen::Index pos = 0;
  for (const auto& v : values)
  {
    out.segment(pos, v.size()) = v;
    pos += v.size();
  }
  return out;
}

void ObservationSet::validate() const
{
  if (times.size() != mask.size() || times.size() != values.size())
    throw std::invalid_argument("ObservationSet: times, mask and values differ in length");
  for (std::size_t i = 0; i < times.size(); ++i)
  {
    if (static_cast<std::size_t>(values[i].size()) != mask[i].size())
      throw std::invalid_argument("ObservationSet: mask size does not match value length at row " +
                                  std::to_string(i));
    if (i > 0 && !(times[i] > times[i - 1]))
      throw std::invalid_argument("ObservationSet: times must be strictly increasing");
  }
}

ObservationSet apply_error_model(const MatrixXd& x_at_obs, const std::vector<double>& times,
                                 double sigma_eps, const ObservationMask& mask, Rng& noise)
{
  if (sigma_eps < 0)
    throw std::invalid_argument("apply_error_model: negative error sd");
  if (static_cast<std::size_t>(x_at_obs.rows()) != mask.size() || times.size() != mask.size())
    throw std::invalid_argument("apply_error_model: schedule and mask lengths differ");

  ObservationSet out;
  out.times = times;
  out.mask = mask;
  VectorXd flat;
  apply_error_model_flat(x_at_obs, sigma_eps, mask, noise, flat);
  Eigen::Index pos = 0;
  for (const auto& m : mask)
  {
    const auto len = static_cast<Eigen::Index>(m.size());
    out.values.emplace_back(flat.segment(pos, len));
    pos += len;
  }
  return out;
}

void apply_error_model_flat(const MatrixXd& x_at_obs, double sigma_eps,
                            const ObservationMask& mask, Rng& noise, VectorXd& eta)
{
  eta.resize(static_cast<Eigen::Index>(mask_size(mask)));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    for (Eigen::Index j : mask[i])
    {
      double y = x_at_obs(static_cast<Eigen::Index>(i), j);
      if (sigma_eps > 0)
        y += sigma_eps * normal(noise);
      eta(pos++) = y;
    }
}

// ---------------------------------------------------------------------------
// Concrete SDEs

DriftDiffusion theophylline_drift_diffusion(double x, double t, const VectorXd& psi, double dose)
{
  const double ke = psi(0), ka = psi(1), cl = psi(2), sigma = psi(3);
  DriftDiffusion out;
  out.drift = VectorXd::Constant(1, dose * ka * ke / cl * std::exp(-ka * t) - ke * x);
  out.diffusion = MatrixXd::Constant(1, 1, sigma);
  return out;
}

SdeModel<double> theophylline_sde(double dose)
{
  SdeModel<double> model;
  model.dimension = 1;
  model.noise_dimension = 1;
  model.drift = [dose](const VectorXd& x, double t, const VectorXd& psi, VectorXd& drift) {
    const double ke = psi(0), ka = psi(1), cl = psi(2);
    drift(0) = dose * ka * ke / cl * std::exp(-ka * t) - ke * x(0);
  };
  model.diffusion = [](const VectorXd&, double, const VectorXd& psi, MatrixXd& diffusion) {
    diffusion(0, 0) = psi(3);
  };
  return model;
}

SdeModel<double> drifted_random_walk_sde()
{
  SdeModel<double> model;
  model.dimension = 1;
  model.noise_dimension = 1;
  model.drift = [](const VectorXd&, double, const VectorXd& psi, VectorXd& drift) {
    drift(0) = psi(0);
  };
  model.diffusion = [](const VectorXd&, double, const VectorXd& psi, MatrixXd& diffusion) {
    diffusion(0, 0) = psi(1);
  };
  return model;
}

VectorXd ReactionNetwork::evaluate(const VectorXd& x) const
{
  VectorXd h(reaction_count());
  propensities(x, rates, h);
  return h;
}

namespace
{
template <typename State, typename Out>
void propensities_impl(const State& x, const VectorXd& c, double k, Out& h)
{
  autoregulation_propensities_generic<double>(x, c, k, h);
}
} // namespace

void autoregulation_propensities(const VectorXd& x, const VectorXd& c, double k, VectorXd& h)
{
  h.resize(8);
  propensities_impl(x, c, k, h);
}

namespace
{
// Columns follow R1..R8:
//   R1 DNA + P2 -> DNA.P2   R2 DNA.P2 -> DNA + P2   R3 DNA -> DNA + RNA
//   R4 RNA -> RNA + P       R5 2P -> P2             R6 P2 -> 2P
//   R7 RNA -> 0             R8 P -> 0
Eigen::MatrixXi reduced_stoichiometry()
{
  Eigen::MatrixXi s(4, 8);
  s << 0, 0, 1, 0, 0, 0, -1, 0,   //
      0, 0, 0, 1, -2, 2, 0, -1,   //
      -1, 1, 0, 0, 1, -1, 0, 0,   //
      -1, 1, 0, 0, 0, 0, 0, 0;
  return s;
}

Eigen::MatrixXi full_stoichiometry()
{
  Eigen::MatrixXi s(5, 8);
  s << 0, 0, 1, 0, 0, 0, -1, 0,   //
      0, 0, 0, 1, -2, 2, 0, -1,   //
      -1, 1, 0, 0, 1, -1, 0, 0,   //
      1, -1, 0, 0, 0, 0, 0, 0,    //
      -1, 1, 0, 0, 0, 0, 0, 0;
  return s;
}
} // namespace

ReactionNetwork autoregulation_network(double k, const VectorXd& rates)
{
  ReactionNetwork net;
  net.species = {"RNA", "P", "P2", "DNA"};
  net.stoichiometry = reduced_stoichiometry();
  net.rates = rates;
  net.conserved_total = k;
  net.propensities = [k](const VectorXd& x, const VectorXd& c, VectorXd& h) {
    autoregulation_propensities(x, c, k, h);
  };
  return net;
}

ReactionNetwork autoregulation_network_full(double k, const VectorXd& rates)
{
  ReactionNetwork net;
  net.species = {"RNA", "P", "P2", "DNA.P2", "DNA"};
  net.stoichiometry = full_stoichiometry();
  net.rates = rates;
  net.conserved_total = k;
  net.propensities = [](const VectorXd& x, const VectorXd& c, VectorXd& h) {
    const double rna = x(0), p = x(1), p2 = x(2), dna_p2 = x(3), dna = x(4);
    h(0) = c(0) * dna * p2;
    h(1) = c(1) * dna_p2;
    h(2) = c(2) * dna;
    h(3) = c(3) * rna;
    h(4) = c(4) * p * (p - 1.0) / 2.0;
    h(5) = c(5) * p2;
    h(6) = c(6) * rna;
    h(7) = c(7) * p;
  };
  return net;
}

VectorXd expand_autoregulation_state(const VectorXd& reduced, double k)
{
  VectorXd full(5);
  full << reduced(0), reduced(1), reduced(2), k - reduced(3), reduced(3);
  return full;
}

DriftDiffusion cle_drift_diffusion(const VectorXd& x, const VectorXd& c, double k)
{
  static const MatrixXd s = reduced_stoichiometry().cast<double>();
  VectorXd h(8);
  autoregulation_propensities(x, c, k, h);
  DriftDiffusion out;
  out.drift = s * h;
  out.diffusion = s * h.cwiseAbs().cwiseSqrt().asDiagonal();
  return out;
}

SdeModel<double> autoregulation_cle(double k)
{
  const Eigen::Matrix<double, 4, 8> s = reduced_stoichiometry().cast<double>();
  SdeModel<double> model;
  model.dimension = 4;
  model.noise_dimension = 8;
  model.drift = [s, k](const VectorXd& x, double, const VectorXd& c, VectorXd& drift) {
    Eigen::Matrix<double, 8, 1> h;
    propensities_impl(x, c, k, h);
    drift.noalias() = s * h;
  };
  // |h| under the root keeps the noise real when the path turns negative.
  model.diffusion = [s, k](const VectorXd& x, double, const VectorXd& c, MatrixXd& diffusion) {
    Eigen::Matrix<double, 8, 1> h;
    propensities_impl(x, c, k, h);
    diffusion.noalias() = s * h.cwiseAbs().cwiseSqrt().asDiagonal();
  };
  return model;
}

// ---------------------------------------------------------------------------
// State-space model stack

ResolvedParameters StateSpaceModel::resolve(const VectorXd& theta) const
{
  ResolvedParameters out;
  out.psi = psi_defaults;
  out.x0 = initial_state;
  out.error_sd = error_sd;
  for (Eigen::Index i = 0; i < theta.size(); ++i)
  {
    const auto& def = spec.parameters[static_cast<std::size_t>(i)];
    const double value = def.transform == Transform::Log ? std::exp(theta(i)) : theta(i);
    switch (def.role)
    {
    case ParameterRole::Sde:
      out.psi(def.role_index) = value;
      break;
    case ParameterRole::ErrorSd:
      out.error_sd = value;
      break;
    case ParameterRole::InitialState:
      out.x0(def.role_index) = value;
      break;
    }
  }
  return out;
}

TrajectorySet<double> StateSpaceModel::simulate_latent(const VectorXd& theta, Rng& simulation) const
{
  const auto resolved = resolve(theta);
  return euler_maruyama(sde, resolved.psi, resolved.x0, grid, simulation);
}

void StateSpaceModel::simulate_observations(const VectorXd& theta, Rng& simulation, Rng& error,
                                            VectorXd& eta) const
{
  const auto resolved = resolve(theta);
  const auto path = euler_maruyama(sde, resolved.psi, resolved.x0, grid, simulation);
  apply_error_model_flat(path.at_observations, resolved.error_sd, mask, error, eta);
}

void StateSpaceModel::validate() const
{
  if (mask.size() != grid.observation_count())
    throw std::invalid_argument("StateSpaceModel: mask length differs from the observation schedule");
  for (const auto& m : mask)
    for (Eigen::Index j : m)
      if (j < 0 || j >= sde.dimension)
        throw std::invalid_argument("StateSpaceModel: mask refers to a coordinate outside the state");
  if (initial_state.size() != sde.dimension)
    throw std::invalid_argument("StateSpaceModel: initial state has wrong dimension");
  for (const auto& def : spec.parameters)
  {
    if (def.role == ParameterRole::Sde && (def.role_index < 0 || def.role_index >= psi_defaults.size()))
      throw std::invalid_argument("StateSpaceModel: parameter '" + def.name + "' has no psi slot");
    if (def.role == ParameterRole::InitialState &&
        (def.role_index < 0 || def.role_index >= sde.dimension))
      throw std::invalid_argument("StateSpaceModel: parameter '" + def.name + "' has no x0 slot");
  }
}

// ---------------------------------------------------------------------------
// Built-in setups

StateSpaceModel make_theophylline_model(const TheophyllineSetup& setup)
{
  StateSpaceModel m;
  m.id = "theophylline";
  const char* names[] = {"log_Ke", "log_Ka", "log_Cl", "log_sigma", "log_sigma_eps"};
  for (int i = 0; i < 5; ++i)
  {
    ParameterDef def;
    def.name = names[i];
    def.transform = Transform::Log;
    def.prior = setup.priors.at(static_cast<std::size_t>(i));
    def.role = i < 4 ? ParameterRole::Sde : ParameterRole::ErrorSd;
    def.role_index = i < 4 ? i : 0;
    m.spec.parameters.push_back(def);
  }
  m.spec.bandwidth = setup.bandwidth;
  m.sde = theophylline_sde(setup.dose);
  m.grid = TimeGrid<double>::with_substeps(0.0, setup.times, setup.substeps);
  m.mask = full_mask(setup.times.size(), 1);
  m.psi_defaults = VectorXd::Zero(4);
  m.initial_state = VectorXd::Constant(1, setup.x0);
  m.validate();
  return m;
}

VectorXd theophylline_true_theta()
{
  VectorXd theta(5);
  theta << -2.52, 0.40, -3.22, std::log(std::sqrt(0.2)), std::log(std::sqrt(0.1));
  return theta;
}

StateSpaceModel make_autoregulation_model(const AutoregulationSetup& setup)
{
  StateSpaceModel m;
  m.id = "autoregulation";
  for (int i = 0; i < 8; ++i)
  {
    ParameterDef def;
    def.name = "log_c" + std::to_string(i + 1);
    def.transform = Transform::Log;
    def.prior = setup.rate_priors.at(static_cast<std::size_t>(i));
    def.role = ParameterRole::Sde;
    def.role_index = i;
    m.spec.parameters.push_back(def);
  }
  if (setup.estimate_dna0)
    m.spec.parameters.push_back({"log_DNA0", Transform::Log, setup.dna0_prior,
                                 ParameterRole::InitialState, 3});
  if (setup.estimate_error_sd)
    m.spec.parameters.push_back({"log_sigma_eps", Transform::Log, setup.error_prior,
                                 ParameterRole::ErrorSd, 0});
  m.spec.bandwidth = setup.bandwidth;

  std::vector<double> times;
  for (int t = 0; t <= static_cast<int>(std::lround(setup.t_end)); ++t)
    times.push_back(static_cast<double>(t));
  m.sde = autoregulation_cle(setup.k);
  m.grid = TimeGrid<double>::with_stepsize(0.0, times, setup.stepsize);
  m.mask = setup.observe_dna ? full_mask(times.size(), 4) : constant_mask(times.size(), {0, 1, 2});
  m.psi_defaults = autoregulation_true_rates();
  m.initial_state = setup.x0;
  m.error_sd = setup.error_sd;
  m.validate();
  return m;
}

VectorXd autoregulation_true_rates()
{
  VectorXd c(8);
  c << 0.1, 0.7, 0.35, 0.2, 0.1, 0.9, 0.3, 0.1;
  return c;
}

StateSpaceModel make_linear_gaussian_model(const LinearGaussianSetup& setup)
{
  StateSpaceModel m;
  m.id = "linear-gaussian-toy";
  m.spec.parameters.push_back({"mu", Transform::Identity, setup.priors.at(0), ParameterRole::Sde, 0});
  m.spec.parameters.push_back({"log_sigma", Transform::Log, setup.priors.at(1), ParameterRole::Sde, 1});
  m.spec.parameters.push_back(
      {"log_sigma_eps", Transform::Log, setup.priors.at(2), ParameterRole::ErrorSd, 0});
  m.spec.bandwidth = setup.bandwidth;
  m.sde = drifted_random_walk_sde();
  m.grid = TimeGrid<double>::with_substeps(0.0, setup.times, setup.substeps);
  m.mask = full_mask(setup.times.size(), 1);
  m.psi_defaults = VectorXd::Zero(2);
  m.initial_state = VectorXd::Constant(1, setup.x0);
  m.validate();
  return m;
}

VectorXd linear_gaussian_true_theta()
{
  VectorXd theta(3);
  theta << 0.5, std::log(0.6), std::log(0.5);
  return theta;
}

} // namespace abcsde
