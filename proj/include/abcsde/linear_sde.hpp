#pragma once

#include "abcsde/sde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abcsde
{

/// dX = (dose * ka * ke / cl * exp(-ka t) - ke X) dt + sigma dW, on natural scale.
struct LinearPkParameters
{
  double ke = 0;
  double ka = 0;
  double cl = 0;
  double dose = 0;
  double sigma = 0;
};

struct GaussianMoments
{
  double mean = 0;
  double variance = 0;
};

/// Relative gap |ke - ka| / max(ke, ka) below which the confluent limit is used.
inline constexpr double kConfluentThreshold = 1e-8;

/// Exact transition moments of the linear PK SDE from X(t_start) = x_start to
/// time t_start + elapsed. The forcing term depends on absolute time, hence
/// the explicit start time.
inline GaussianMoments exact_linear_transition(const LinearPkParameters& p, double x_start,
                                               double t_start, double elapsed)
{
  if (elapsed < 0)
    throw std::domain_error("exact_linear_transition: negative elapsed time");
  if (!(p.ke > 0))
    throw std::domain_error("exact_linear_transition: ke must be positive");

  const double t_end = t_start + elapsed;
  const double decay = std::exp(-p.ke * elapsed);
  const double forcing = p.dose * p.ka * p.ke / p.cl;

  double driven = 0;
  if (std::abs(p.ke - p.ka) < kConfluentThreshold * std::max(p.ke, p.ka))
    driven = forcing * std::exp(-p.ka * t_start) * decay * elapsed;
  else
    driven = forcing * (std::exp(-p.ka * t_end) - decay * std::exp(-p.ka * t_start)) / (p.ke - p.ka);

  GaussianMoments out;
  out.mean = x_start * decay + driven;
  out.variance = p.sigma * p.sigma * (-std::expm1(-2.0 * p.ke * elapsed)) / (2.0 * p.ke);
  return out;
}

/// Moments of X(t) given X(0) = x0.
inline GaussianMoments exact_linear_mean_var(const LinearPkParameters& p, double x0, double t)
{
  if (t < 0)
    throw std::domain_error("exact_linear_mean_var: negative time");
  return exact_linear_transition(p, x0, 0.0, t);
}

/// Exact draw of the path at the grid start and at every observation time.
/// The fine grid is ignored; `times` of the result are the knots.
template <typename Engine>
TrajectorySet<double> exact_linear_simulate(const LinearPkParameters& p, double x0,
                                            const TimeGrid<double>& grid, Engine& noise)
{
  const auto& obs = grid.observation_times();
  TrajectorySet<double> out;
  out.times.push_back(grid.start());
  for (double t : obs)
    if (t > out.times.back())
      out.times.push_back(t);

  out.states.resize(static_cast<Eigen::Index>(out.times.size()), 1);
  out.states(0, 0) = x0;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 1; k < out.times.size(); ++k)
  {
    const auto prev = out.states(static_cast<Eigen::Index>(k - 1), 0);
    const auto m = exact_linear_transition(p, prev, out.times[k - 1], out.times[k] - out.times[k - 1]);
    out.states(static_cast<Eigen::Index>(k), 0) = m.mean + std::sqrt(m.variance) * normal(noise);
  }

  out.at_observations.resize(static_cast<Eigen::Index>(obs.size()), 1);
  for (std::size_t i = 0; i < obs.size(); ++i)
  {
    const auto it = std::lower_bound(out.times.begin(), out.times.end(), obs[i]);
    out.at_observations(static_cast<Eigen::Index>(i), 0) =
        out.states(static_cast<Eigen::Index>(it - out.times.begin()), 0);
  }
  return out;
}

} // namespace abcsde
