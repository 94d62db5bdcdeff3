#pragma once

#include "abcsde/models.hpp"
#include "abcsde/random.hpp"

#include <Eigen/Dense>

#include <vector>

namespace abcsde
{

/// Piecewise-constant path of a Markov jump process on [start_time, end_time].
struct JumpPath
{
  double start_time = 0;
  double end_time = 0;
  Eigen::VectorXi initial_state;
  std::vector<double> event_times;         // strictly increasing
  std::vector<Eigen::VectorXi> states;     // state just after each event
  std::vector<Eigen::Index> reactions;     // reaction fired at each event

  std::size_t event_count() const { return event_times.size(); }
  /// Right-continuous lookup: the state holding at time t.
  const Eigen::VectorXi& state_at(double t) const;
};

/// Gillespie's direct method. Stops at end_time or when the total
/// propensity vanishes (the path then stays constant).
JumpPath gillespie_simulate(const ReactionNetwork& net, const Eigen::VectorXi& x0, double end_time,
                            Rng& noise, double start_time = 0.0);

/// States at the given times, one row per time. Throws std::domain_error for
/// a query outside the simulated horizon.
Eigen::MatrixXi sample_at_times(const JumpPath& path, const std::vector<double>& times);

} // namespace abcsde
