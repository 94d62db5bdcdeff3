#include "abcsde/models.hpp"
#include "abcsde/sde.hpp"
#include "abcsde/ssa.hpp"

#include <doctest.h>

#include <cmath>

using namespace abcsde;

namespace
{
ReactionNetwork single_species(int change, bool per_molecule, double rate)
{
  ReactionNetwork net;
  net.species = {"X"};
  net.stoichiometry = Eigen::MatrixXi::Constant(1, 1, change);
  net.rates = VectorXd::Constant(1, rate);
  net.propensities = [per_molecule](const VectorXd& x, const VectorXd& c, VectorXd& h) {
    h.resize(1);
    h(0) = per_molecule ? c(0) * x(0) : c(0);
  };
  return net;
}
} // namespace

TEST_SUITE("ssa")
{
  TEST_CASE("constant-rate birth gives Poisson counts")
  {
    const auto net = single_species(+1, false, 2.5);
    const double t = 3.0;
    const int runs = 10000;
    double s = 0;
    for (int i = 0; i < runs; ++i)
    {
      Rng rng = substream(1, 0, static_cast<std::uint64_t>(i), StreamPurpose::Test);
      s += gillespie_simulate(net, Eigen::VectorXi::Zero(1), t, rng).state_at(t)(0);
    }
    const double mean = 2.5 * t;
    CHECK(std::abs(s / runs - mean) < 3 * std::sqrt(mean / runs));
  }

  TEST_CASE("linear death process mean")
  {
    const auto net = single_species(-1, true, 0.3);
    const int n0 = 50, runs = 10000;
    const double t = 2.0, p = std::exp(-0.3 * t);
    double s = 0;
    for (int i = 0; i < runs; ++i)
    {
      Rng rng = substream(2, 0, static_cast<std::uint64_t>(i), StreamPurpose::Test);
      s += gillespie_simulate(net, Eigen::VectorXi::Constant(1, n0), t, rng).state_at(t)(0);
    }
    CHECK(std::abs(s / runs - n0 * p) < 3 * std::sqrt(n0 * p * (1 - p) / runs));
  }

  TEST_CASE("zero rates: the path stays at the initial state")
  {
    const auto net = autoregulation_network_full(10.0, VectorXd::Zero(8));
    Eigen::VectorXi x0(5);
    x0 << 8, 8, 8, 5, 5;
    Rng rng = substream(1, 0, 0, StreamPurpose::Test);
    const auto path = gillespie_simulate(net, x0, 49.0, rng);
    CHECK(path.event_count() == 0);
    const auto at = sample_at_times(path, {0, 10, 49});
    for (int i = 0; i < 3; ++i)
      CHECK(at.row(i).transpose() == x0);
  }

  TEST_CASE("right-continuous lookup and horizon checks")
  {
    const auto net = single_species(+1, false, 1.0);
    Rng rng = substream(3, 0, 0, StreamPurpose::Test);
    const auto path = gillespie_simulate(net, Eigen::VectorXi::Zero(1), 10.0, rng);
    REQUIRE(path.event_count() > 1);
    CHECK(path.state_at(path.event_times[0])(0) == 1);
    CHECK(path.state_at(path.event_times[0] * 0.5)(0) == 0);
    CHECK(path.state_at(0.0)(0) == 0);
    CHECK_THROWS_AS(path.state_at(10.5), std::domain_error);
    CHECK_THROWS_AS(sample_at_times(path, {-1.0}), std::domain_error);
  }

  TEST_CASE("every transition is a stoichiometry column; conservation holds")
  {
    const auto net = autoregulation_network_full(10.0, autoregulation_true_rates());
    Eigen::VectorXi x0(5);
    x0 << 8, 8, 8, 5, 5;
    Rng rng = substream(4, 0, 0, StreamPurpose::Test);
    const auto path = gillespie_simulate(net, x0, 49.0, rng);
    REQUIRE(path.event_count() > 100);
    Eigen::VectorXi prev = x0;
    for (std::size_t e = 0; e < path.event_count(); ++e)
    {
      const Eigen::VectorXi step = path.states[e] - prev;
      CHECK(step == net.stoichiometry.col(path.reactions[e]));
      CHECK(path.states[e](3) + path.states[e](4) == 10);
      CHECK((path.states[e].array() >= 0).all());
      if (e)
        CHECK(path.event_times[e] > path.event_times[e - 1]);
      prev = path.states[e];
    }
  }

  TEST_CASE("CLE means agree with SSA means at t = 10")
  {
    const VectorXd c = autoregulation_true_rates();
    const auto net = autoregulation_network_full(10.0, c);
    const auto cle = autoregulation_cle(10.0);
    const auto grid = TimeGrid<double>::with_stepsize(0.0, {10.0}, 0.1);
    Eigen::VectorXi x0(5);
    x0 << 8, 8, 8, 5, 5;
    const VectorXd x0r = (VectorXd(4) << 8, 8, 8, 5).finished();
    const int runs = 10000;
    VectorXd ssa_mean = VectorXd::Zero(3), cle_mean = VectorXd::Zero(3);
    for (int i = 0; i < runs; ++i)
    {
      Rng a = substream(5, 0, static_cast<std::uint64_t>(i), StreamPurpose::Test);
      ssa_mean += gillespie_simulate(net, x0, 10.0, a).state_at(10.0).head(3).cast<double>();
      Rng b = substream(6, 0, static_cast<std::uint64_t>(i), StreamPurpose::Test);
      cle_mean += euler_maruyama(cle, c, x0r, grid, b).at_observations.row(0).head(3).transpose();
    }
    ssa_mean /= runs;
    cle_mean /= runs;
    MESSAGE("SSA means " << ssa_mean.transpose() << ", CLE means " << cle_mean.transpose());
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(cle_mean(j) / ssa_mean(j) - 1) < 0.10);
  }
}
