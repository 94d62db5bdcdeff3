#pragma once

#include "abcsde/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace abcsde
{

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VectorXd = Vector<double>;
using MatrixXd = Matrix<double>;

/// Raised when a trajectory leaves the finite reals. Samplers map this to a
/// rejected proposal.
class SimulationFailure : public std::runtime_error
{
public:
  SimulationFailure(std::size_t step, double time, const std::string& state)
      : std::runtime_error(describe(step, time, state)), step_(step), time_(time)
  {
  }

  std::size_t step() const noexcept { return step_; }
  double time() const noexcept { return time_; }

private:
  static std::string describe(std::size_t step, double time, const std::string& state)
  {
    std::ostringstream os;
    os << "non-finite SDE coefficients or state at fine step " << step << " (t=" << time
       << "), state = [" << state << "]";
    return os.str();
  }

  std::size_t step_;
  double time_;
};

/// dX_t = mu(X_t, t, psi) dt + sigma(X_t, t, psi) dW_t with X in R^d, W in R^m.
/// Evaluators write into caller-owned storage so the integrator allocates
/// nothing per step.
template <typename Scalar>
struct SdeModel
{
  using DriftFn = std::function<void(const Vector<Scalar>& x, Scalar t, const Vector<Scalar>& psi,
                                     Vector<Scalar>& drift)>;
  using DiffusionFn = std::function<void(const Vector<Scalar>& x, Scalar t,
                                         const Vector<Scalar>& psi, Matrix<Scalar>& diffusion)>;

  Eigen::Index dimension = 1;
  Eigen::Index noise_dimension = 1;
  DriftFn drift;
  DiffusionFn diffusion;
};

/// Observation times plus the fine integration grid that brackets them.
template <typename Scalar>
class TimeGrid
{
public:
  /// Observation value i is (1 - weight) * X[lower] + weight * X[lower + 1].
  struct Anchor
  {
    std::size_t lower = 0;
    Scalar weight = 0;
  };

  TimeGrid() = default;

  /// Every interval between consecutive knots ({start} and the observation
  /// times) is split into `substeps` equal sub-intervals.
  static TimeGrid with_substeps(Scalar start, std::vector<Scalar> observation_times, int substeps)
  {
    if (substeps < 1)
      throw std::invalid_argument("TimeGrid: substeps must be positive");
    TimeGrid grid(start, std::move(observation_times));

    std::vector<Scalar> knots{start};
    for (Scalar t : grid.observation_times_)
      if (t > knots.back())
        knots.push_back(t);

    grid.fine_times_.push_back(start);
    for (std::size_t k = 0; k + 1 < knots.size(); ++k)
    {
      const Scalar a = knots[k];
      const Scalar b = knots[k + 1];
      for (int s = 1; s < substeps; ++s)
        grid.fine_times_.push_back(a + (b - a) * static_cast<Scalar>(s) / static_cast<Scalar>(substeps));
      grid.fine_times_.push_back(b);
    }
    grid.build_anchors();
    return grid;
  }

  /// Uniform grid start + k h; the final step is shortened to end exactly on
  /// the last observation time.
  static TimeGrid with_stepsize(Scalar start, std::vector<Scalar> observation_times, Scalar h)
  {
    if (!(h > 0))
      throw std::invalid_argument("TimeGrid: stepsize must be positive");
    TimeGrid grid(start, std::move(observation_times));
    const Scalar end = grid.observation_times_.back();
    const auto steps = static_cast<std::size_t>(std::ceil((end - start) / h - Scalar(1e-9)));
    for (std::size_t k = 0; k < steps; ++k)
      grid.fine_times_.push_back(start + static_cast<Scalar>(k) * h);
    grid.fine_times_.push_back(end);
    grid.build_anchors();
    return grid;
  }

  Scalar start() const { return fine_times_.front(); }
  const std::vector<Scalar>& fine_times() const { return fine_times_; }
  const std::vector<Scalar>& observation_times() const { return observation_times_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  std::size_t observation_count() const { return observation_times_.size(); }

  /// True when each observation time coincides with a fine-grid point.
  bool observations_on_grid() const
  {
    for (const auto& a : anchors_)
      if (a.weight != Scalar(0))
        return false;
    return true;
  }

private:
  TimeGrid(Scalar start, std::vector<Scalar> observation_times)
      : observation_times_(std::move(observation_times))
  {
    if (observation_times_.empty())
      throw std::invalid_argument("TimeGrid: at least one observation time is required");
    if (observation_times_.front() < start)
      throw std::invalid_argument("TimeGrid: observation before the simulation start time");
    for (std::size_t i = 1; i < observation_times_.size(); ++i)
      if (!(observation_times_[i] > observation_times_[i - 1]))
        throw std::invalid_argument("TimeGrid: observation times must be strictly increasing");
  }

  void build_anchors()
  {
    anchors_.clear();
    std::size_t k = 0;
    for (Scalar t : observation_times_)
    {
      while (k + 1 < fine_times_.size() && fine_times_[k + 1] <= t)
        ++k;
      const Scalar lo = fine_times_[k];
      if (k + 1 == fine_times_.size())
      {
        anchors_.push_back({k, Scalar(0)});
        continue;
      }
      const Scalar hi = fine_times_[k + 1];
      const Scalar snap = Scalar(1e-9) * (hi - lo);
      if (t - lo <= snap)
        anchors_.push_back({k, Scalar(0)});
      else if (hi - t <= snap)
        anchors_.push_back({k + 1, Scalar(0)});
      else
        anchors_.push_back({k, (t - lo) / (hi - lo)});
    }
  }

  std::vector<Scalar> observation_times_;
  std::vector<Scalar> fine_times_;
  std::vector<Anchor> anchors_;
};

template <typename Scalar>
struct TrajectorySet
{
  std::vector<Scalar> times;        // fine grid
  Matrix<Scalar> states;            // fine-grid length x d
  Matrix<Scalar> at_observations;   // (n + 1) x d

  /// (x_{0,1}, ..., x_{0,d}, ..., x_{n,d}), time-major.
  Vector<Scalar> flattened() const
  {
    Vector<Scalar> out(at_observations.size());
    Eigen::Index pos = 0;
    for (Eigen::Index i = 0; i < at_observations.rows(); ++i)
      for (Eigen::Index j = 0; j < at_observations.cols(); ++j)
        out(pos++) = at_observations(i, j);
    return out;
  }
};

/// Linear interpolation of fine-grid states onto the observation times.
template <typename Scalar>
Matrix<Scalar> interpolate_to_observations(const TimeGrid<Scalar>& grid, const Matrix<Scalar>& states)
{
  const auto& anchors = grid.anchors();
  Matrix<Scalar> out(static_cast<Eigen::Index>(anchors.size()), states.cols());
  for (std::size_t i = 0; i < anchors.size(); ++i)
  {
    const auto row = static_cast<Eigen::Index>(i);
    const auto lo = static_cast<Eigen::Index>(anchors[i].lower);
    const Scalar w = anchors[i].weight;
    if (w == Scalar(0))
      out.row(row) = states.row(lo);
    else
      out.row(row) = (Scalar(1) - w) * states.row(lo) + w * states.row(lo + 1);
  }
  return out;
}

namespace detail
{
template <typename Scalar>
std::string format_state(const Vector<Scalar>& x)
{
  std::ostringstream os;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    os << (i ? ", " : "") << x(i);
  return os.str();
}
} // namespace detail

/// Scratch storage for one Euler-Maruyama path.
template <typename Scalar>
struct EulerWorkspace
{
  explicit EulerWorkspace(const SdeModel<Scalar>& model)
      : drift(model.dimension), diffusion(model.dimension, model.noise_dimension),
        dw(model.noise_dimension)
  {
  }

  Vector<Scalar> drift;
  Matrix<Scalar> diffusion;
  Vector<Scalar> dw;
  std::normal_distribution<Scalar> normal{Scalar(0), Scalar(1)};
};

/// Advances x in place along fine_times[begin] -> fine_times[end]:
///   X_{k+1} = X_k + mu(X_k, t_k) dt_k + sigma(X_k, t_k) dW_k,  dW_k ~ N(0, dt_k I_m).
/// Throws SimulationFailure as soon as coefficients or state are non-finite.
template <typename Scalar, typename Engine, typename StepVisitor>
void euler_maruyama_advance(const SdeModel<Scalar>& model, const Vector<Scalar>& psi,
                            const std::vector<Scalar>& fine_times, std::size_t begin,
                            std::size_t end, Vector<Scalar>& x, Engine& noise,
                            EulerWorkspace<Scalar>& ws, StepVisitor&& on_step)
{
  for (std::size_t k = begin; k < end; ++k)
  {
    const Scalar t = fine_times[k];
    const Scalar dt = fine_times[k + 1] - t;
    model.drift(x, t, psi, ws.drift);
    model.diffusion(x, t, psi, ws.diffusion);
    if (!ws.drift.allFinite() || !ws.diffusion.allFinite())
      throw SimulationFailure(k, static_cast<double>(t), detail::format_state(x));

    const Scalar sqrt_dt = std::sqrt(dt);
    for (Eigen::Index j = 0; j < ws.dw.size(); ++j)
      ws.dw(j) = sqrt_dt * ws.normal(noise);

    x += dt * ws.drift;
    x.noalias() += ws.diffusion * ws.dw;
    if (!x.allFinite())
      throw SimulationFailure(k + 1, static_cast<double>(fine_times[k + 1]), detail::format_state(x));
    on_step(k + 1, x);
  }
}

template <typename Scalar, typename Engine>
void euler_maruyama_advance(const SdeModel<Scalar>& model, const Vector<Scalar>& psi,
                            const std::vector<Scalar>& fine_times, std::size_t begin,
                            std::size_t end, Vector<Scalar>& x, Engine& noise,
                            EulerWorkspace<Scalar>& ws)
{
  euler_maruyama_advance(model, psi, fine_times, begin, end, x, noise, ws,
                         [](std::size_t, const Vector<Scalar>&) {});
}

/// Full Euler-Maruyama path on the grid, with observation-time values filled
/// in by linear interpolation.
template <typename Scalar, typename Engine>
TrajectorySet<Scalar> euler_maruyama(const SdeModel<Scalar>& model, const Vector<Scalar>& psi,
                                     const std::type_identity_t<Vector<Scalar>>& x0, const TimeGrid<Scalar>& grid,
                                     Engine& noise)
{
  if (x0.size() != model.dimension)
    throw std::invalid_argument("euler_maruyama: initial state has wrong dimension");

  const auto& times = grid.fine_times();
  TrajectorySet<Scalar> out;
  out.times = times;
  out.states.resize(static_cast<Eigen::Index>(times.size()), model.dimension);
  out.states.row(0) = x0.transpose();

  Vector<Scalar> x = x0;
  EulerWorkspace<Scalar> ws(model);
  euler_maruyama_advance(model, psi, times, 0, times.size() - 1, x, noise, ws,
                         [&](std::size_t k, const Vector<Scalar>& state) {
                           out.states.row(static_cast<Eigen::Index>(k)) = state.transpose();
                         });

  out.at_observations = interpolate_to_observations(grid, out.states);
  return out;
}

} // namespace abcsde
