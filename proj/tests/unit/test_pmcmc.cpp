#include "abcsde/models.hpp"
#include "abcsde/pmcmc.hpp"
#include "abcsde/random.hpp"

#include <doctest.h>

#include <cmath>

using namespace abcsde;

namespace
{
ObservationSet toy_data(const StateSpaceModel& model, const VectorXd& theta, std::uint64_t seed)
{
  Rng sim = substream(seed, 0, 0, StreamPurpose::DataGeneration);
  Rng err = substream(seed, 0, 1, StreamPurpose::DataGeneration);
  VectorXd eta;
  model.simulate_observations(theta, sim, err, eta);
  ObservationSet data;
  data.times = model.grid.observation_times();
  data.mask = model.mask;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    data.values.push_back(VectorXd::Constant(1, eta(i)));
  return data;
}

double exact_toy_loglik(const StateSpaceModel& model, const VectorXd& theta, const ObservationSet& data)
{
  const auto r = model.resolve(theta);
  std::vector<double> y;
  for (const auto& v : data.values)
    y.push_back(v(0));
  return random_walk_exact_loglik(r.psi(0), r.psi(1), r.error_sd, r.x0(0), data.times, y);
}
} // namespace

TEST_SUITE("pmcmc")
{
  TEST_CASE("stratified resampling: uniform and degenerate weights")
  {
    Rng rng = substream(1, 0, 0, StreamPurpose::Test);
    for (int rep = 0; rep < 100; ++rep)
    {
      const auto idx = stratified_resample(VectorXd::Constant(4, 0.25), rng);
      CHECK(idx == std::vector<Eigen::Index>{0, 1, 2, 3});
    }
    const auto deg = stratified_resample((VectorXd(4) << 0, 0, 1, 0).finished(), rng);
    CHECK(deg == std::vector<Eigen::Index>{2, 2, 2, 2});
    // unnormalised weights are fine
    const auto scaled = stratified_resample(VectorXd::Constant(4, 7.0), rng);
    CHECK(scaled == std::vector<Eigen::Index>{0, 1, 2, 3});
  }

  TEST_CASE("stratified resampling: expected copy counts are K w")
  {
    VectorXd w(10);
    w << 0.05, 0.2, 0.15, 0.1, 0.1, 0.02, 0.08, 0.12, 0.03, 0.15;
    const Eigen::Index k = w.size();
    const int reps = 100000;
    VectorXd counts = VectorXd::Zero(k);
    Rng rng = substream(2, 0, 0, StreamPurpose::Test);
    std::vector<Eigen::Index> idx;
    for (int r = 0; r < reps; ++r)
    {
      stratified_resample(w, rng, idx);
      REQUIRE(idx.size() == static_cast<std::size_t>(k));
      for (auto i : idx)
        counts(i) += 1;
    }
    const VectorXd freq = counts / static_cast<double>(reps * k);
    for (Eigen::Index j = 0; j < k; ++j)
      CHECK(std::abs(freq(j) - w(j)) < 0.01 * w(j) + 1e-4);
  }

  TEST_CASE("Kalman likelihood: single observation closed form")
  {
    // y ~ N(x0 + mu t, sigma^2 t + sigma_eps^2)
    const double mu = 0.3, sigma = 0.7, se = 0.4, x0 = 1.0, t = 2.0, y = 2.1;
    const double v = sigma * sigma * t + se * se;
    const double m = x0 + mu * t;
    const double expected = -0.5 * std::log(2 * M_PI * v) - 0.5 * (y - m) * (y - m) / v;
    CHECK(random_walk_exact_loglik(mu, sigma, se, x0, {t}, {y}) == doctest::Approx(expected).epsilon(1e-13));
  }

  TEST_CASE("bootstrap filter is unbiased for the likelihood")
  {
    const auto model = make_linear_gaussian_model();
    const VectorXd theta = linear_gaussian_true_theta();
    const auto data = toy_data(model, theta, 3);
    const double exact = exact_toy_loglik(model, theta, data);
    const int reps = 300;
    VectorXd ratio(reps);
    for (int r = 0; r < reps; ++r)
    {
      Rng rng = substream(4, 0, static_cast<std::uint64_t>(r), StreamPurpose::Test);
      ratio(r) = std::exp(bootstrap_pf_loglik(model, theta, data, 200, rng) - exact);
    }
    const double mean = ratio.mean();
    const double se = std::sqrt((ratio.array() - mean).square().sum() / (reps - 1) / reps);
    MESSAGE("mean likelihood ratio " << mean << " (se " << se << ")");
    CHECK(std::abs(mean - 1) < 3 * se);
  }

  TEST_CASE("bootstrap filter: uninformative observations give the exact likelihood")
  {
    const auto model = make_linear_gaussian_model();
    VectorXd theta = linear_gaussian_true_theta();
    theta(2) = std::log(1e3);
    const auto data = toy_data(model, theta, 5);
    Rng rng = substream(6, 0, 0, StreamPurpose::Test);
    const double pf = bootstrap_pf_loglik(model, theta, data, 50, rng);
    CHECK(pf == doctest::Approx(exact_toy_loglik(model, theta, data)).epsilon(1e-5));
  }

  TEST_CASE("bootstrap filter: argument checks and determinism")
  {
    const auto model = make_linear_gaussian_model();
    const VectorXd theta = linear_gaussian_true_theta();
    auto data = toy_data(model, theta, 7);
    Rng a = substream(8, 0, 0, StreamPurpose::Test);
    Rng b = substream(8, 0, 0, StreamPurpose::Test);
    CHECK(bootstrap_pf_loglik(model, theta, data, 100, a) == bootstrap_pf_loglik(model, theta, data, 100, b));
    CHECK_THROWS_AS(bootstrap_pf_loglik(model, theta, data, 1, a), std::invalid_argument);
    auto shifted = data;
    shifted.times[3] += 0.1;
    CHECK_THROWS(bootstrap_pf_loglik(model, theta, shifted, 100, a));
    // a far-off observation drives every weight to zero
    data.values[0](0) = 1e200;
    CHECK(bootstrap_pf_loglik(model, theta, data, 100, a) == kNegInf);
  }

  TEST_CASE("PMMH: zero iterations and reproducibility")
  {
    const auto model = make_linear_gaussian_model();
    const auto data = toy_data(model, linear_gaussian_true_theta(), 9);
    PmcmcOptions opt;
    opt.particles = 50;
    const auto zero = pmmh_run(model, data, opt);
    CHECK(zero.records.size() == 1);
    CHECK(zero.iterations == 0);
    CHECK(zero.filter_runs >= 1);

    opt.iterations = 400;
    opt.burn_in = 100;
    opt.thin = 3;
    const auto a = pmmh_run(model, data, opt);
    std::vector<PmcmcRecord> streamed;
    const auto b = pmmh_run(model, data, opt, [&](const PmcmcRecord& r) { streamed.push_back(r); });
    CHECK(a.records.size() == 100);
    CHECK(b.records.empty());
    REQUIRE(streamed.size() == a.records.size());
    for (std::size_t i = 0; i < streamed.size(); ++i)
    {
      CHECK(streamed[i].theta == a.records[i].theta);
      CHECK(streamed[i].log_likelihood == a.records[i].log_likelihood);
    }
    CHECK(a.acceptance_rate() > 0);
    CHECK(a.acceptance_rate() < 1);
    // rejected iterations keep the stored estimate
    for (std::size_t i = 1; i < a.records.size(); ++i)
      if (a.records[i].theta == a.records[i - 1].theta)
        CHECK(a.records[i].log_likelihood == a.records[i - 1].log_likelihood);
  }

  TEST_CASE("PMMH posterior mean of the drift is near the conjugate answer")
  {
    // With sigma and sigma_eps fixed by point-mass priors the drift posterior
    // is Gaussian; its mean follows from the Kalman likelihood by quadrature.
    LinearGaussianSetup setup;
    setup.priors = {{0.0, 1.0}, {std::log(0.6), 0.0}, {std::log(0.5), 0.0}};
    const auto model = make_linear_gaussian_model(setup);
    const auto data = toy_data(model, linear_gaussian_true_theta(), 10);

    double z = 0, m1 = 0;
    for (int i = 0; i <= 4000; ++i)
    {
      const double mu = -2 + 4.0 * i / 4000;
      VectorXd th = linear_gaussian_true_theta();
      th(0) = mu;
      const double w = std::exp(exact_toy_loglik(model, th, data) - 0.5 * mu * mu);
      z += w;
      m1 += w * mu;
    }
    const double target = m1 / z;

    PmcmcOptions opt;
    opt.particles = 100;
    opt.iterations = 6000;
    opt.burn_in = 1000;
    opt.seed = 11;
    const auto res = pmmh_run(model, data, opt);
    double mean = 0;
    for (const auto& r : res.records)
      mean += r.theta(0);
    mean /= static_cast<double>(res.records.size());
    MESSAGE("PMMH mean " << mean << ", quadrature " << target);
    CHECK(std::abs(mean - target) < 0.05);
  }
}
