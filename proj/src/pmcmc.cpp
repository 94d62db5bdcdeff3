#include "abcsde/pmcmc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace abcsde
{

void stratified_resample(const VectorXd& weights, Rng& noise, std::vector<Eigen::Index>& indices)
{
  const Eigen::Index k = weights.size();
  indices.resize(static_cast<std::size_t>(k));
  if (k == 0)
    return;
  const double total = weights.sum();
  const double inv_k = 1.0 / static_cast<double>(k);
  double cumulative = weights(0) / total;
  Eigen::Index i = 0;
  for (Eigen::Index s = 0; s < k; ++s)
  {
    const double u = (static_cast<double>(s) + uniform01(noise)) * inv_k;
    while (u >= cumulative && i + 1 < k)
      cumulative += weights(++i) / total;
    indices[static_cast<std::size_t>(s)] = i;
  }
}

std::vector<Eigen::Index> stratified_resample(const VectorXd& weights, Rng& noise)
{
  std::vector<Eigen::Index> out;
  stratified_resample(weights, noise, out);
  return out;
}

namespace
{

void check_data(const StateSpaceModel& model, const ObservationSet& data)
{
  const auto& times = model.grid.observation_times();
  if (data.times.size() != times.size())
    throw std::invalid_argument("bootstrap filter: data has " + std::to_string(data.times.size()) +
                                " observation times, model schedule has " +
                                std::to_string(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(data.times[i] - times[i]) > 1e-9 * std::max(1.0, std::abs(times[i])))
      throw std::invalid_argument("bootstrap filter: data time " + std::to_string(data.times[i]) +
                                  " differs from the model schedule");
  if (data.mask != model.mask)
    throw std::invalid_argument("bootstrap filter: data mask differs from the model mask");
  if (!model.grid.observations_on_grid())
    throw std::invalid_argument("bootstrap filter: observation times must lie on the integration grid");
}

} // namespace

double bootstrap_pf_loglik(const StateSpaceModel& model, const VectorXd& theta,
                           const ObservationSet& data, Eigen::Index particles, Rng& noise)
{
  if (particles < 2)
    throw std::invalid_argument("bootstrap filter: at least 2 particles are required");
  check_data(model, data);
  const auto resolved = model.resolve(theta);
  if (!(resolved.error_sd > 0))
    throw std::invalid_argument("bootstrap filter: measurement-error sd must be positive");

  const auto d = model.sde.dimension;
  const auto& fine = model.grid.fine_times();
  const auto& anchors = model.grid.anchors();
  const double sd = resolved.error_sd;
  const double log_norm = -0.5 * std::log(2 * std::numbers::pi) - std::log(sd);

  ParticleSystem ps;
  ps.states = resolved.x0.replicate(1, particles);
  ps.weights = VectorXd::Constant(particles, 1.0 / static_cast<double>(particles));
  VectorXd log_w(particles);
  MatrixXd scratch(d, particles);
  std::vector<Eigen::Index> ancestors;
  std::vector<bool> alive(static_cast<std::size_t>(particles), true);
  EulerWorkspace<double> ws(model.sde);
  VectorXd x(d);

  std::size_t position = 0;
  for (std::size_t i = 0; i < anchors.size(); ++i)
  {
    const std::size_t target = anchors[i].lower;
    for (Eigen::Index k = 0; k < particles; ++k)
    {
      if (!alive[static_cast<std::size_t>(k)])
        continue;
      x = ps.states.col(k);
      try
      {
        euler_maruyama_advance(model.sde, resolved.psi, fine, position, target, x, noise, ws);
        ps.states.col(k) = x;
      }
      catch (const SimulationFailure&)
      {
        alive[static_cast<std::size_t>(k)] = false;
      }
    }
    position = target;

    const auto& coords = data.mask[i];
    const VectorXd& y = data.values[i];
    double max_lw = kNegInf;
    for (Eigen::Index k = 0; k < particles; ++k)
    {
      double lw = kNegInf;
      if (alive[static_cast<std::size_t>(k)])
      {
        lw = 0;
        for (std::size_t j = 0; j < coords.size(); ++j)
        {
          const double z = (y(static_cast<Eigen::Index>(j)) - ps.states(coords[j], k)) / sd;
          lw += log_norm - 0.5 * z * z;
        }
      }
      log_w(k) = lw;
      max_lw = std::max(max_lw, lw);
    }
    if (!std::isfinite(max_lw))
      return kNegInf;

    ps.weights = (log_w.array() - max_lw).exp();
    const double sum = ps.weights.sum();
    ps.log_likelihood += max_lw + std::log(sum / static_cast<double>(particles));
    ps.weights /= sum;

    stratified_resample(ps.weights, noise, ancestors);
    for (Eigen::Index k = 0; k < particles; ++k)
      scratch.col(k) = ps.states.col(ancestors[static_cast<std::size_t>(k)]);
    ps.states.swap(scratch);
    std::fill(alive.begin(), alive.end(), true);
    ps.weights.setConstant(1.0 / static_cast<double>(particles));
  }
  return ps.log_likelihood;
}

double random_walk_exact_loglik(double mu, double sigma, double sigma_eps, double x0,
                                const std::vector<double>& times, const std::vector<double>& y)
{
  if (times.size() != y.size())
    throw std::invalid_argument("random_walk_exact_loglik: times and values differ in length");
  double mean = x0;
  double var = 0;
  double t = 0;
  double ll = 0;
  const double r = sigma_eps * sigma_eps;
  for (std::size_t i = 0; i < times.size(); ++i)
  {
    const double dt = times[i] - t;
    mean += mu * dt;
    var += sigma * sigma * dt;
    const double s = var + r;
    const double e = y[i] - mean;
    ll += -0.5 * (std::log(2 * std::numbers::pi * s) + e * e / s);
    const double gain = var / s;
    mean += gain * e;
    var *= 1 - gain;
    t = times[i];
  }
  return ll;
}

double PmcmcResult::acceptance_rate() const
{
  return iterations ? static_cast<double>(accepted) / static_cast<double>(iterations) : 0.0;
}

PmcmcResult pmmh_run(const StateSpaceModel& model, const ObservationSet& data,
                     const PmcmcOptions& options,
                     const std::function<void(const PmcmcRecord&)>& sink)
{
  const auto started = std::chrono::steady_clock::now();
  const auto& spec = model.spec;
  MatrixXd seed_cov = options.initial_covariance.value_or(
      MatrixXd((0.1 * spec.prior_sds()).array().square().matrix().asDiagonal()));
  if (seed_cov.rows() != spec.size())
    throw std::invalid_argument("pmmh_run: initial covariance has wrong dimension");
  AdaptiveProposal proposal(seed_cov, options.adaptation);

  PmcmcResult result;
  auto emit = [&](const PmcmcRecord& rec) {
    if (!is_retained(rec.iteration, options.burn_in, options.thin))
      return;
    if (sink)
      sink(rec);
    else
      result.records.push_back(rec);
  };

  auto log_prior_theta_only = [&](const VectorXd& theta) { return log_prior_theta(theta, spec); };

  PmcmcRecord current;
  current.theta = options.theta_start.value_or(spec.prior_means());
  if (current.theta.size() != spec.size())
    throw std::invalid_argument("pmmh_run: theta_start has wrong dimension");
  current.log_likelihood = kNegInf;
  for (std::uint64_t attempt = 0; attempt < options.max_start_attempts; ++attempt)
  {
    Rng rng = substream(options.seed, options.chain_id, attempt, StreamPurpose::Initialization);
    ++result.filter_runs;
    current.log_likelihood = bootstrap_pf_loglik(model, current.theta, data, options.particles, rng);
    if (std::isfinite(current.log_likelihood))
      break;
  }
  if (!std::isfinite(current.log_likelihood))
    throw std::runtime_error("pmmh_run: likelihood estimate at the starting value is zero; "
                             "use more particles or a different theta_start");
  current.accepted = true;
  double current_lp = log_prior_theta_only(current.theta);
  proposal.update(current.theta);
  emit(current);

  for (std::uint64_t r = 1; r <= options.iterations; ++r)
  {
    if (options.freeze_adaptation_after_burn_in && r > options.burn_in)
      proposal.freeze();
    Rng prop_rng = substream(options.seed, options.chain_id, r, StreamPurpose::Proposal);
    const VectorXd theta = proposal.propose(current.theta, prop_rng);
    Rng acc_rng = substream(options.seed, options.chain_id, r, StreamPurpose::Acceptance);
    const double log_omega = std::log(uniform01(acc_rng));

    PmcmcRecord next = current;
    next.iteration = r;
    next.accepted = false;
    const double lp = log_prior_theta_only(theta);
    if (lp != kNegInf)
    {
      Rng sim = substream(options.seed, options.chain_id, r, StreamPurpose::Simulation);
      ++result.filter_runs;
      const double ll = bootstrap_pf_loglik(model, theta, data, options.particles, sim);
      if (ll != kNegInf && log_omega < lp + ll - current_lp - current.log_likelihood)
      {
        next.theta = theta;
        next.log_likelihood = ll;
        next.accepted = true;
        current_lp = lp;
        ++result.accepted;
      }
    }
    proposal.update(next.theta);
    emit(next);
    current = std::move(next);
  }
  result.iterations = options.iterations;
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

} // namespace abcsde
