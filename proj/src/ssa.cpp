#include "abcsde/ssa.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abcsde
{

const Eigen::VectorXi& JumpPath::state_at(double t) const
{
  if (t < start_time || t > end_time)
    throw std::domain_error("JumpPath: query time outside the simulated horizon");
  const auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
  if (it == event_times.begin())
    return initial_state;
  return states[static_cast<std::size_t>(it - event_times.begin()) - 1];
}

JumpPath gillespie_simulate(const ReactionNetwork& net, const Eigen::VectorXi& x0, double end_time,
                            Rng& noise, double start_time)
{
  if (x0.size() != net.species_count())
    throw std::invalid_argument("gillespie_simulate: initial state has wrong dimension");
  if ((x0.array() < 0).any())
    throw std::invalid_argument("gillespie_simulate: initial state must be non-negative");
  if (!(end_time > start_time))
    throw std::invalid_argument("gillespie_simulate: end time must exceed start time");

  JumpPath path;
  path.start_time = start_time;
  path.end_time = end_time;
  path.initial_state = x0;

  Eigen::VectorXi x = x0;
  VectorXd xd = x.cast<double>();
  VectorXd h(net.reaction_count());
  double t = start_time;

  while (true)
  {
    net.propensities(xd, net.rates, h);
    const double total = h.sum();
    if (!(total > 0))
      break;
    t += -std::log(uniform01(noise)) / total;
    if (t > end_time)
      break;

    const double target = uniform01(noise) * total;
    double cumulative = 0;
    Eigen::Index reaction = net.reaction_count() - 1;
    for (Eigen::Index r = 0; r < net.reaction_count(); ++r)
    {
      cumulative += h(r);
      if (target < cumulative)
      {
        reaction = r;
        break;
      }
    }
    // Guard against rounding landing on a zero-propensity tail reaction.
    while (h(reaction) <= 0 && reaction > 0)
      --reaction;

    x += net.stoichiometry.col(reaction);
    xd = x.cast<double>();
    path.event_times.push_back(t);
    path.states.push_back(x);
    path.reactions.push_back(reaction);
  }
  return path;
}

Eigen::MatrixXi sample_at_times(const JumpPath& path, const std::vector<double>& times)
{
  Eigen::MatrixXi out(static_cast<Eigen::Index>(times.size()), path.initial_state.size());
  for (std::size_t i = 0; i < times.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = path.state_at(times[i]).transpose();
  return out;
}

} // namespace abcsde
