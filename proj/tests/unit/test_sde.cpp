#include "abcsde/linear_sde.hpp"
#include "abcsde/models.hpp"
#include "abcsde/random.hpp"
#include "abcsde/sde.hpp"

#include <doctest.h>

#include <cmath>

using namespace abcsde;

namespace
{
SdeModel<double> scalar_model(double a, double b)
{
  // dX = a X dt + b X dW  (b = 0: linear ODE)
  SdeModel<double> m;
  m.drift = [a](const VectorXd& x, double, const VectorXd&, VectorXd& out) { out(0) = a * x(0); };
  m.diffusion = [b](const VectorXd& x, double, const VectorXd&, MatrixXd& out) { out(0, 0) = b * x(0); };
  return m;
}

LinearPkParameters theophylline_pk()
{
  return {0.08, 1.492, 0.04, 4.0, std::sqrt(0.2)};
}

// RMS gap at time T between Euler-Maruyama with n and 2n steps driven by the
// same Brownian path (coarse increments are sums of fine ones).
double coupled_gap(const SdeModel<double>& model, const VectorXd& psi, double x0, double T, int n,
                   int paths, std::uint64_t seed)
{
  double sum = 0;
  VectorXd xc(1), xf(1), drift(1);
  MatrixXd diff(1, 1);
  for (int p = 0; p < paths; ++p)
  {
    Rng rng = substream(seed, 0, static_cast<std::uint64_t>(p), StreamPurpose::Test);
    xc(0) = x0;
    xf(0) = x0;
    const double hc = T / n, hf = hc / 2;
    for (int k = 0; k < n; ++k)
    {
      const double t = k * hc;
      const double dw1 = std::sqrt(hf) * standard_normal(rng);
      const double dw2 = std::sqrt(hf) * standard_normal(rng);
      model.drift(xf, t, psi, drift);
      model.diffusion(xf, t, psi, diff);
      xf(0) += drift(0) * hf + diff(0, 0) * dw1;
      model.drift(xf, t + hf, psi, drift);
      model.diffusion(xf, t + hf, psi, diff);
      xf(0) += drift(0) * hf + diff(0, 0) * dw2;
      model.drift(xc, t, psi, drift);
      model.diffusion(xc, t, psi, diff);
      xc(0) += drift(0) * hc + diff(0, 0) * (dw1 + dw2);
    }
    sum += (xc(0) - xf(0)) * (xc(0) - xf(0));
  }
  return std::sqrt(sum / paths);
}
} // namespace

TEST_SUITE("sde_core")
{
  TEST_CASE("ODE limit: dX = -X dt approaches exp(-t)")
  {
    const auto model = scalar_model(-1.0, 0.0);
    const auto grid = TimeGrid<double>::with_substeps(0.0, {1.0}, 1000);
    Rng rng = substream(1, 0, 0, StreamPurpose::Test);
    const auto path = euler_maruyama(model, VectorXd(), VectorXd::Ones(1), grid, rng);
    CHECK(std::abs(path.at_observations(0, 0) - std::exp(-1.0)) < 1e-2);
    CHECK(path.states.rows() == 1001);
  }

  TEST_CASE("zero dynamics keep the initial state")
  {
    const auto model = scalar_model(0.0, 0.0);
    const auto grid = TimeGrid<double>::with_substeps(0.0, {0.5, 1.0, 2.0}, 7);
    Rng rng = substream(1, 0, 0, StreamPurpose::Test);
    const auto path = euler_maruyama(model, VectorXd(), VectorXd::Constant(1, 3.25), grid, rng);
    CHECK((path.states.array() == 3.25).all());
    CHECK((path.at_observations.array() == 3.25).all());
  }

  TEST_CASE("observation times on the grid are copied bit-for-bit")
  {
    const auto model = theophylline_sde(4.0);
    VectorXd psi(4);
    psi << 0.08, 1.492, 0.04, std::sqrt(0.2);
    const auto grid = TimeGrid<double>::with_substeps(0.0, {0.25, 0.5, 1, 2, 3.5, 5, 7, 9, 12}, 20);
    CHECK(grid.observations_on_grid());
    Rng rng = substream(3, 0, 0, StreamPurpose::Test);
    const auto path = euler_maruyama(model, psi, VectorXd::Zero(1), grid, rng);
    for (std::size_t i = 0; i < grid.anchors().size(); ++i)
      CHECK(path.at_observations(static_cast<Eigen::Index>(i), 0) ==
            path.states(static_cast<Eigen::Index>(grid.anchors()[i].lower), 0));
    CHECK(path.flattened().size() == 9);
  }

  TEST_CASE("off-grid observation times are linearly interpolated")
  {
    const auto grid = TimeGrid<double>::with_stepsize(0.0, {0.25, 1.0}, 0.5);
    CHECK_FALSE(grid.observations_on_grid());
    MatrixXd states(3, 2);
    states << 0, 10, 2, 20, 4, 40;
    const auto at = interpolate_to_observations(grid, states);
    CHECK(at(0, 0) == doctest::Approx(1.0));
    CHECK(at(0, 1) == doctest::Approx(15.0));
    CHECK(at(1, 0) == 4.0);
  }

  TEST_CASE("stepsize grid ends exactly on the last observation")
  {
    std::vector<double> times;
    for (int t = 0; t <= 49; ++t)
      times.push_back(t);
    const auto grid = TimeGrid<double>::with_stepsize(0.0, times, 0.1);
    CHECK(grid.fine_times().back() == 49.0);
    CHECK(grid.fine_times().size() == 491);
    CHECK(grid.observations_on_grid());
  }

  TEST_CASE("identical streams give identical trajectories")
  {
    const auto model = theophylline_sde(4.0);
    VectorXd psi(4);
    psi << 0.08, 1.492, 0.04, std::sqrt(0.2);
    const auto grid = TimeGrid<double>::with_substeps(0.0, {1, 2, 3}, 10);
    Rng a = substream(9, 1, 2, StreamPurpose::Simulation);
    Rng b = substream(9, 1, 2, StreamPurpose::Simulation);
    CHECK(euler_maruyama(model, psi, VectorXd::Zero(1), grid, a).states ==
          euler_maruyama(model, psi, VectorXd::Zero(1), grid, b).states);
  }

  TEST_CASE("non-finite coefficients raise a simulation failure")
  {
    const auto model = scalar_model(1e300, 0.0);
    const auto grid = TimeGrid<double>::with_substeps(0.0, {1.0}, 10);
    Rng rng = substream(1, 0, 0, StreamPurpose::Test);
    CHECK_THROWS_AS(euler_maruyama(model, VectorXd(), VectorXd::Constant(1, 1e300), grid, rng),
                    SimulationFailure);
  }

  TEST_CASE("exact moments: trivial cases")
  {
    auto p = theophylline_pk();
    const auto m0 = exact_linear_mean_var(p, 1.7, 0.0);
    CHECK(m0.mean == 1.7);
    CHECK(m0.variance == 0.0);
    p.dose = 0;
    for (double t : {0.5, 3.0, 12.0})
      CHECK(exact_linear_mean_var(p, 0.0, t).mean == 0.0);
    CHECK_THROWS_AS(exact_linear_mean_var(theophylline_pk(), 0.0, -1.0), std::domain_error);
  }

  TEST_CASE("exact moments: integrating-factor closed form")
  {
    const auto p = theophylline_pk();
    const double t = 12;
    const auto m = exact_linear_mean_var(p, 0.5, t);
    const double a = p.dose * p.ka * p.ke / p.cl;
    const double mean = 0.5 * std::exp(-p.ke * t) + a / (p.ke - p.ka) * (std::exp(-p.ka * t) - std::exp(-p.ke * t));
    CHECK(m.mean == doctest::Approx(mean).epsilon(1e-13));
    CHECK(m.variance == doctest::Approx(0.2 * (1 - std::exp(-2 * p.ke * t)) / (2 * p.ke)).epsilon(1e-13));
  }

  TEST_CASE("confluent limit is continuous")
  {
    auto p = theophylline_pk();
    p.ka = p.ke;
    const auto limit = exact_linear_mean_var(p, 0.3, 5.0);
    p.ka = p.ke * (1 + 1e-6);
    const auto near = exact_linear_mean_var(p, 0.3, 5.0);
    CHECK(limit.mean == doctest::Approx(near.mean).epsilon(1e-5));
    // x0 e^{-ke t} + dose ka ke / cl * t e^{-ke t}
    const double expected = 0.3 * std::exp(-0.4) + 4 * 0.08 * 0.08 / 0.04 * 5 * std::exp(-0.4);
    p.ka = p.ke;
    CHECK(exact_linear_mean_var(p, 0.3, 5.0).mean == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("transition composes: two half steps equal one full step in distribution")
  {
    const auto p = theophylline_pk();
    const auto full = exact_linear_transition(p, 0.7, 1.0, 4.0);
    const auto h1 = exact_linear_transition(p, 0.7, 1.0, 2.0);
    const auto h2 = exact_linear_transition(p, h1.mean, 3.0, 2.0);
    CHECK(h2.mean == doctest::Approx(full.mean).epsilon(1e-12));
    const double decay = std::exp(-p.ke * 2.0);
    CHECK(h2.variance + decay * decay * h1.variance == doctest::Approx(full.variance).epsilon(1e-12));
  }

  TEST_CASE("Euler-Maruyama Monte Carlo matches the exact moments at t = 12")
  {
    // Brute-force oracle: 10^5 paths, 2000 steps would be slow; 2*10^4 paths
    // at 2000 steps keep the discretisation bias far below 3 SE.
    const auto p = theophylline_pk();
    const auto model = theophylline_sde(p.dose);
    VectorXd psi(4);
    psi << p.ke, p.ka, p.cl, p.sigma;
    const auto grid = TimeGrid<double>::with_substeps(0.0, {12.0}, 2000);
    const int paths = 20000;
    double s = 0, s2 = 0;
    EulerWorkspace<double> ws(model);
    for (int i = 0; i < paths; ++i)
    {
      Rng rng = substream(5, 0, static_cast<std::uint64_t>(i), StreamPurpose::Test);
      VectorXd x = VectorXd::Zero(1);
      euler_maruyama_advance(model, psi, grid.fine_times(), 0, grid.fine_times().size() - 1, x, rng, ws);
      s += x(0);
      s2 += x(0) * x(0);
    }
    const double mean = s / paths;
    const double var = s2 / paths - mean * mean;
    const auto exact = exact_linear_mean_var(p, 0.0, 12.0);
    CHECK(std::abs(mean - exact.mean) < 3 * std::sqrt(exact.variance / paths));
    // var of the sample variance ~ 2 sigma^4 / n for Gaussian data
    CHECK(std::abs(var - exact.variance) < 3 * exact.variance * std::sqrt(2.0 / paths));
  }

  TEST_CASE("Euler-Maruyama mean at t = 1 within 3 SE of the exact mean (10^4 paths)")
  {
    const auto p = theophylline_pk();
    const auto model = theophylline_sde(p.dose);
    VectorXd psi(4);
    psi << p.ke, p.ka, p.cl, p.sigma;
    const auto grid = TimeGrid<double>::with_substeps(0.0, {1.0}, 2000);
    double s = 0;
    for (int i = 0; i < 10000; ++i)
    {
      Rng rng = substream(1, 0, static_cast<std::uint64_t>(i), StreamPurpose::Test);
      s += euler_maruyama(model, psi, VectorXd::Zero(1), grid, rng).at_observations(0, 0);
    }
    const auto exact = exact_linear_mean_var(p, 0.0, 1.0);
    CHECK(std::abs(s / 10000 - exact.mean) < 3 * std::sqrt(exact.variance / 10000));
  }

  TEST_CASE("exact simulation: sigma = 0 reproduces the mean formula")
  {
    auto p = theophylline_pk();
    p.sigma = 0;
    const std::vector<double> times{0.25, 0.5, 1, 2, 3.5, 5, 7, 9, 12};
    const auto grid = TimeGrid<double>::with_substeps(0.0, times, 20);
    Rng rng = substream(1, 0, 0, StreamPurpose::Test);
    const auto path = exact_linear_simulate(p, 0.0, grid, rng);
    for (std::size_t i = 0; i < times.size(); ++i)
      CHECK(path.at_observations(static_cast<Eigen::Index>(i), 0) ==
            doctest::Approx(exact_linear_mean_var(p, 0.0, times[i]).mean).epsilon(1e-13));
  }

  TEST_CASE("exact simulation: empirical transition variance")
  {
    const auto p = theophylline_pk();
    const auto grid = TimeGrid<double>::with_substeps(0.0, {2.0, 3.5}, 1);
    const int reps = 20000;
    std::vector<double> resid;
    double s = 0, s2 = 0;
    for (int i = 0; i < reps; ++i)
    {
      Rng rng = substream(8, 0, static_cast<std::uint64_t>(i), StreamPurpose::Test);
      const auto path = exact_linear_simulate(p, 0.0, grid, rng);
      const double x1 = path.at_observations(0, 0), x2 = path.at_observations(1, 0);
      const double r = x2 - exact_linear_transition(p, x1, 2.0, 1.5).mean;
      s += r;
      s2 += r * r;
    }
    const double var = s2 / reps - (s / reps) * (s / reps);
    const double expected = 0.2 * (1 - std::exp(-2 * p.ke * 1.5)) / (2 * p.ke);
    CHECK(std::abs(var - expected) < 3 * expected * std::sqrt(2.0 / reps));
  }

  TEST_CASE("strong convergence: additive noise gives order one")
  {
    // For additive noise Euler-Maruyama coincides with Milstein, so halving h
    // halves the RMS gap (ratio ~ 2) rather than the generic sqrt(2).
    const auto p = theophylline_pk();
    const auto model = theophylline_sde(p.dose);
    VectorXd psi(4);
    psi << p.ke, p.ka, p.cl, p.sigma;
    const double g1 = coupled_gap(model, psi, 0.0, 12.0, 120, 10000, 21);
    const double g2 = coupled_gap(model, psi, 0.0, 12.0, 240, 10000, 21);
    const double ratio = g1 / g2;
    MESSAGE("additive-noise gap ratio " << ratio);
    CHECK(g2 < g1);
    CHECK(ratio > 1.7);
    CHECK(ratio < 2.3);
  }

  TEST_CASE("strong convergence: multiplicative noise gives order one half")
  {
    const auto model = scalar_model(0.05, 1.0);
    const double g1 = coupled_gap(model, VectorXd(), 1.0, 1.0, 32, 10000, 22);
    const double g2 = coupled_gap(model, VectorXd(), 1.0, 1.0, 64, 10000, 22);
    const double ratio = g1 / g2;
    MESSAGE("multiplicative-noise gap ratio " << ratio);
    CHECK(ratio > 1.2);
    CHECK(ratio < 1.7);
  }
}
