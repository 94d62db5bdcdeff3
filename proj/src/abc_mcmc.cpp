#include "abcsde/abc_mcmc.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace abcsde
{

namespace
{
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
  return std::chrono::duration<double>(Clock::now() - start).count();
}
} // namespace

// ---------------------------------------------------------------------------
// Kernel

double kernel_volume_constant(const VectorXd& diagonal)
{
  const auto p = diagonal.size();
  if (p < 1)
    throw std::invalid_argument("kernel_volume_constant: dimension must be at least 1");
  if ((diagonal.array() <= 0).any() || !diagonal.allFinite())
    throw std::invalid_argument("kernel_volume_constant: weighting matrix must be positive diagonal");
  const double half = 0.5 * static_cast<double>(p);
  const double log_vp = -std::log(std::numbers::pi) + (2.0 / static_cast<double>(p)) * (std::lgamma(half) + std::log(half));
  const double log_det = diagonal.array().log().sum();
  return std::exp(log_vp + log_det / static_cast<double>(p));
}

UniformEllipsoidKernel::UniformEllipsoidKernel(VectorXd diagonal)
    : weights_(std::move(diagonal)), c_(kernel_volume_constant(weights_))
{
}

bool UniformEllipsoidKernel::evaluate(const VectorXd& s_sim, const VectorXd& s_obs, double delta) const
{
  if (!(delta > 0))
    return false;
  double quad = 0;
  for (Eigen::Index j = 0; j < weights_.size(); ++j)
  {
    const double z = (s_sim(j) - s_obs(j)) / delta;
    quad += weights_(j) * z * z;
  }
  return quad < c_;
}

// ---------------------------------------------------------------------------
// Adaptive proposal

AdaptiveProposal::AdaptiveProposal(MatrixXd seed_covariance, AdaptationOptions options)
    : seed_covariance_(std::move(seed_covariance)), options_(options)
{
  const auto dim = seed_covariance_.rows();
  if (dim < 1 || seed_covariance_.cols() != dim)
    throw std::invalid_argument("AdaptiveProposal: seed covariance must be square and non-empty");
  // coordinates with zero seed variance (point-mass priors) never move
  for (Eigen::Index i = 0; i < dim; ++i)
    if (seed_covariance_.row(i).cwiseAbs().maxCoeff() > 0)
      free_.push_back(i);
  if (free_.empty())
    free_.push_back(0);
  scale_ = options_.scale > 0 ? options_.scale : 2.4 * 2.4 / static_cast<double>(free_.size());
  mean_ = VectorXd::Zero(dim);
  scatter_ = MatrixXd::Zero(dim, dim);
}

void AdaptiveProposal::update(const VectorXd& point)
{
  if (frozen_)
    return;
  ++count_;
  const VectorXd delta = point - mean_;
  mean_ += delta / static_cast<double>(count_);
  scatter_.noalias() += delta * (point - mean_).transpose();
  if (count_ > options_.start)
    dirty_ = true;
}

MatrixXd AdaptiveProposal::sample_covariance() const
{
  if (count_ < 2)
    return MatrixXd::Zero(mean_.size(), mean_.size());
  return scatter_ / static_cast<double>(count_ - 1);
}

void AdaptiveProposal::refresh() const
{
  if (!dirty_)
    return;
  const auto dim = mean_.size();
  if (count_ > options_.start)
  {
    MatrixXd cov = sample_covariance();
    cov = 0.5 * (cov + cov.transpose());
    covariance_ = scale_ * (cov + options_.epsilon * MatrixXd::Identity(dim, dim));
  }
  else
  {
    covariance_ = seed_covariance_;
  }
  const auto n_free = static_cast<Eigen::Index>(free_.size());
  if (n_free < dim)
  {
    const MatrixXd sub = covariance_(free_, free_);
    covariance_.setZero();
    covariance_(free_, free_) = sub;
  }
  Eigen::LLT<MatrixXd> llt(covariance_(free_, free_));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("AdaptiveProposal: proposal covariance is not positive definite");
  cholesky_ = MatrixXd::Zero(dim, dim);
  cholesky_(free_, free_) = llt.matrixL().toDenseMatrix();
  dirty_ = false;
}

const MatrixXd& AdaptiveProposal::covariance() const
{
  refresh();
  return covariance_;
}

VectorXd AdaptiveProposal::propose(const VectorXd& current, Rng& rng) const
{
  refresh();
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd z(current.size());
  for (Eigen::Index i = 0; i < z.size(); ++i)
    z(i) = normal(rng);
  return current + cholesky_.triangularView<Eigen::Lower>() * z;
}

// ---------------------------------------------------------------------------
// Sampler

std::string to_string(SamplerVariant variant)
{
  return variant == SamplerVariant::Standard ? "standard" : "early-rejection";
}

SamplerVariant sampler_variant_from_string(const std::string& name)
{
  if (name == "standard")
    return SamplerVariant::Standard;
  if (name == "early-rejection")
    return SamplerVariant::EarlyRejection;
  throw std::invalid_argument("unknown sampler variant '" + name +
                              "' (expected standard or early-rejection)");
}

double AbcResult::acceptance_rate() const
{
  return iterations ? static_cast<double>(accepted) / static_cast<double>(iterations) : 0.0;
}

double AbcResult::early_rejection_rate() const
{
  return iterations ? static_cast<double>(early_rejected) / static_cast<double>(iterations) : 0.0;
}

bool is_retained(std::uint64_t iteration, std::uint64_t burn_in, std::uint64_t thin)
{
  if (thin == 0)
    thin = 1;
  if (iteration == 0)
    return burn_in == 0;
  return iteration > burn_in && (iteration - burn_in) % thin == 0;
}

AbcSampler::AbcSampler(const StateSpaceModel& model, const SummaryProjector& projector,
                       UniformEllipsoidKernel kernel, VectorXd observed_summary, AbcOptions options)
    : model_(model), projector_(projector), kernel_(std::move(kernel)),
      observed_summary_(std::move(observed_summary)), options_(std::move(options))
{
  const auto p = model_.spec.size();
  if (projector_.summary_size() != kernel_.dimension() || observed_summary_.size() != kernel_.dimension())
    throw std::invalid_argument("AbcSampler: summary, projector and kernel dimensions differ");
  if (projector_.input_size() != static_cast<Eigen::Index>(model_.observation_size()))
    throw std::invalid_argument("AbcSampler: projector input size differs from the observation size");
  if (!(options_.delta_start > 0) || options_.delta_start > model_.spec.bandwidth.max)
    throw std::invalid_argument("AbcSampler: delta_start must lie in (0, delta_max]");

  MatrixXd seed_cov;
  if (options_.initial_covariance)
    seed_cov = *options_.initial_covariance;
  else
    seed_cov = (0.1 * model_.spec.prior_sds()).array().square().matrix().asDiagonal();
  if (seed_cov.rows() != p)
    throw std::invalid_argument("AbcSampler: initial covariance has wrong dimension");
  proposal_ = AdaptiveProposal(seed_cov, options_.adaptation);
  delta_step_sd_ = options_.delta_step_sd.value_or(model_.spec.bandwidth.mean / 5.0);
  if (delta_step_sd_ < 0)
    throw std::invalid_argument("AbcSampler: delta step sd must be non-negative");
}

double AbcSampler::current_log_prior(const ChainRecord& current) const
{
  return log_prior(current.theta, current.delta, model_.spec);
}

bool AbcSampler::simulate_summary(const VectorXd& theta, std::uint64_t iteration, VectorXd& summary)
{
  Rng sim = substream(options_.seed, options_.chain_id, iteration, StreamPurpose::Simulation);
  Rng err = substream(options_.seed, options_.chain_id, iteration, StreamPurpose::ErrorModel);
  ++simulations_;
  auto t0 = Clock::now();
  try
  {
    model_.simulate_observations(theta, sim, err, eta_);
  }
  catch (const SimulationFailure&)
  {
    timing_.simulation += seconds_since(t0);
    ++failures_;
    return false;
  }
  timing_.simulation += seconds_since(t0);
  t0 = Clock::now();
  projector_.project_into(eta_, summary);
  timing_.summary += seconds_since(t0);
  return true;
}

ChainRecord AbcSampler::initialize()
{
  ChainRecord rec;
  rec.iteration = 0;
  rec.delta = options_.delta_start;
  rec.accepted = true;

  VectorXd theta = options_.theta_start.value_or(model_.spec.prior_means());
  if (theta.size() != model_.spec.size())
    throw std::invalid_argument("AbcSampler: theta_start has wrong dimension");

  VectorXd summary;
  for (std::uint64_t attempt = 0; attempt < options_.max_start_attempts; ++attempt)
  {
    ++start_attempts_;
    Rng rng = substream(options_.seed, options_.chain_id, attempt, StreamPurpose::Initialization);
    if (options_.sample_start_from_prior)
      theta = sample_prior(model_.spec, rng);
    if (log_prior(theta, rec.delta, model_.spec) == kNegInf)
      continue;
    try
    {
      model_.simulate_observations(theta, rng, rng, eta_);
    }
    catch (const SimulationFailure&)
    {
      continue;
    }
    projector_.project_into(eta_, summary);
    if (kernel_.evaluate(summary, observed_summary_, rec.delta))
    {
      rec.theta = theta;
      rec.summary = summary;
      return rec;
    }
  }
  throw std::runtime_error("AbcSampler: no starting state with kernel value 1 after " +
                           std::to_string(options_.max_start_attempts) +
                           " attempts at delta_start=" + std::to_string(options_.delta_start) +
                           "; use a larger delta_start");
}

AbcSampler::Proposed AbcSampler::propose(const ChainRecord& current, std::uint64_t iteration)
{
  const auto t0 = Clock::now();
  Proposed prop;
  Rng rng = substream(options_.seed, options_.chain_id, iteration, StreamPurpose::Proposal);
  prop.theta = proposal_.propose(current.theta, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  prop.delta = current.delta + delta_step_sd_ * normal(rng);

  Rng acceptance = substream(options_.seed, options_.chain_id, iteration, StreamPurpose::Acceptance);
  prop.omega = uniform01(acceptance);

  const double lp_new = log_prior(prop.theta, prop.delta, model_.spec);
  prop.log_ratio = lp_new == kNegInf
                       ? kNegInf
                       : lp_new - current_log_prior(current) +
                             proposal_.log_proposal_ratio(prop.theta, current.theta);
  timing_.proposal += seconds_since(t0);
  return prop;
}

ChainRecord AbcSampler::rejected(const ChainRecord& current, std::uint64_t iteration,
                                 const Proposed& prop, bool early) const
{
  ChainRecord rec = current;
  rec.iteration = iteration;
  rec.accepted = false;
  rec.early_rejected = early;
  rec.log_prior_ratio = prop.log_ratio;
  return rec;
}

namespace
{
// omega > ratio, evaluated identically by both variants.
bool exceeds_ratio(double omega, double log_ratio)
{
  if (log_ratio >= 0)
    return false;
  return omega > std::exp(log_ratio);
}
} // namespace

ChainRecord AbcSampler::step_standard(const ChainRecord& current, std::uint64_t iteration)
{
  const Proposed prop = propose(current, iteration);
  VectorXd summary;
  const bool simulated = simulate_summary(prop.theta, iteration, summary);

  auto t0 = Clock::now();
  const bool kernel_one = simulated && kernel_.evaluate(summary, observed_summary_, prop.delta);
  timing_.kernel += seconds_since(t0);

  const bool prior_reject = exceeds_ratio(prop.omega, prop.log_ratio);
  // omega <= ratio * K' with K' in {0, 1}
  if (!kernel_one || prior_reject)
    return rejected(current, iteration, prop, prior_reject);

  ChainRecord rec;
  rec.iteration = iteration;
  rec.theta = prop.theta;
  rec.delta = prop.delta;
  rec.summary = std::move(summary);
  rec.accepted = true;
  rec.log_prior_ratio = prop.log_ratio;
  return rec;
}

ChainRecord AbcSampler::step_early_rejection(const ChainRecord& current, std::uint64_t iteration)
{
  const Proposed prop = propose(current, iteration);
  if (exceeds_ratio(prop.omega, prop.log_ratio))
    return rejected(current, iteration, prop, true);

  VectorXd summary;
  if (!simulate_summary(prop.theta, iteration, summary))
    return rejected(current, iteration, prop, false);

  auto t0 = Clock::now();
  const bool kernel_one = kernel_.evaluate(summary, observed_summary_, prop.delta);
  timing_.kernel += seconds_since(t0);
  if (!kernel_one)
    return rejected(current, iteration, prop, false);

  ChainRecord rec;
  rec.iteration = iteration;
  rec.theta = prop.theta;
  rec.delta = prop.delta;
  rec.summary = std::move(summary);
  rec.accepted = true;
  rec.log_prior_ratio = prop.log_ratio;
  return rec;
}

ChainRecord AbcSampler::step(const ChainRecord& current, std::uint64_t iteration)
{
  return options_.variant == SamplerVariant::Standard ? step_standard(current, iteration)
                                                      : step_early_rejection(current, iteration);
}

AbcResult AbcSampler::run(const RecordSink& sink)
{
  const auto started = Clock::now();
  timing_ = {};
  simulations_ = 0;
  failures_ = 0;
  start_attempts_ = 0;

  AbcResult result;
  auto emit = [&](const ChainRecord& rec) {
    if (!is_retained(rec.iteration, options_.burn_in, options_.thin))
      return;
    if (sink)
      sink(rec);
    else
      result.records.push_back(rec);
  };

  ChainRecord current = initialize();
  proposal_.update(current.theta);
  emit(current);

  for (std::uint64_t r = 1; r <= options_.iterations; ++r)
  {
    if (options_.freeze_adaptation_after_burn_in && r > options_.burn_in)
      proposal_.freeze();
    ChainRecord next = step(current, r);
    if (next.accepted)
      ++result.accepted;
    if (next.early_rejected)
      ++result.early_rejected;
    proposal_.update(next.theta);
    emit(next);
    current = std::move(next);
  }

  result.iterations = options_.iterations;
  result.simulations = simulations_;
  result.simulation_failures = failures_;
  result.start_attempts = start_attempts_;
  result.timing = timing_;
  result.timing.total = seconds_since(started);
  return result;
}

} // namespace abcsde
