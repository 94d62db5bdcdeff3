#include "abcsde/abc_mcmc.hpp"
#include "abcsde/diagnostics.hpp"
#include "abcsde/models.hpp"
#include "abcsde/random.hpp"
#include "abcsde/summaries.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace abcsde;

namespace
{
// x0 = theta, no dynamics, one observation with unit-sd error: y = theta + eps.
StateSpaceModel point_model(GaussianPrior prior, BandwidthPrior bandwidth)
{
  StateSpaceModel m;
  m.id = "point";
  m.spec.parameters = {{"theta", Transform::Identity, prior, ParameterRole::InitialState, 0}};
  m.spec.bandwidth = bandwidth;
  m.sde.dimension = 1;
  m.sde.noise_dimension = 1;
  m.sde.drift = [](const VectorXd& x, double, const VectorXd&, VectorXd& f) { f.setZero(x.size()); };
  m.sde.diffusion = [](const VectorXd&, double, const VectorXd&, MatrixXd& g) { g.setZero(1, 1); };
  m.grid = TimeGrid<double>::with_substeps(0.0, {1.0}, 1);
  m.mask = full_mask(1, 1);
  m.psi_defaults = VectorXd::Zero(1);
  m.initial_state = VectorXd::Zero(1);
  m.error_sd = 1.0;
  m.validate();
  return m;
}

SummaryProjector identity_projector()
{
  SummaryProjector p;
  p.intercepts = VectorXd::Zero(1);
  p.coefficients = MatrixXd::Identity(1, 1);
  p.residual_sds = VectorXd::Ones(1);
  return p;
}

double normal_cdf01(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

struct TheophyllineFixture
{
  StateSpaceModel model = make_theophylline_model();
  SummaryProjector projector;
  VectorXd observed;

  TheophyllineFixture()
  {
    projector = train_projector(generate_pilot(model, {3000, 9}), FitMethod::Ols);
    Rng sim = substream(2024, 0, 0, StreamPurpose::DataGeneration);
    Rng err = substream(2024, 0, 1, StreamPurpose::DataGeneration);
    VectorXd eta;
    model.simulate_observations(theophylline_true_theta(), sim, err, eta);
    observed = projector.project(eta);
  }

  AbcSampler sampler(AbcOptions opt) const
  {
    return AbcSampler(model, projector, UniformEllipsoidKernel(projector.inverse_variance_weights()),
                      observed, std::move(opt));
  }
};
} // namespace

TEST_SUITE("abc_mcmc")
{
  TEST_CASE("kernel volume constants in closed form")
  {
    CHECK(kernel_volume_constant(VectorXd::Ones(1)) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(kernel_volume_constant(VectorXd::Ones(2)) == doctest::Approx(1 / std::numbers::pi).epsilon(1e-14));
    // V_3 = pi^-1 (Gamma(3/2) 3/2)^(2/3) = pi^-1 (3 sqrt(pi) / 4)^(2/3)
    const double v3 = std::pow(3 * std::sqrt(std::numbers::pi) / 4, 2.0 / 3) / std::numbers::pi;
    CHECK(kernel_volume_constant(VectorXd::Ones(3)) == doctest::Approx(v3).epsilon(1e-14));
    // |A|^(1/p) scaling
    const VectorXd a = (VectorXd(2) << 4, 9).finished();
    CHECK(kernel_volume_constant(a) == doctest::Approx(6 / std::numbers::pi).epsilon(1e-14));
  }

  TEST_CASE("kernel threshold is strict and scales with delta")
  {
    const UniformEllipsoidKernel k(VectorXd::Ones(1)); // |z| < 1/2
    const VectorXd obs = VectorXd::Zero(1);
    CHECK(k.evaluate(VectorXd::Constant(1, 0.4), obs, 1.0));
    CHECK_FALSE(k.evaluate(VectorXd::Constant(1, 0.5), obs, 1.0));
    CHECK(k.evaluate(VectorXd::Constant(1, 0.5), obs, 1.01));
    CHECK(k.evaluate(obs, obs, 1e-12));
    CHECK_FALSE(k.evaluate(obs, obs, 0.0));
    CHECK_FALSE(k.evaluate(VectorXd::Constant(1, 1e-3), obs, 1e-9));
    CHECK(k.evaluate(VectorXd::Constant(1, 1e6), obs, 1e7));
  }

  TEST_CASE("kernel region has unit volume (Monte Carlo)")
  {
    Rng rng = substream(1, 0, 0, StreamPurpose::Test);
    for (int p : {1, 2, 5, 8})
    {
      VectorXd a(p);
      for (int i = 0; i < p; ++i)
        a(i) = 0.2 + 3 * uniform01(rng);
      const UniformEllipsoidKernel k(a);
      const VectorXd half = (k.volume_constant() / a.array()).sqrt().matrix();
      const double box = (2 * half).prod();
      const int n = 400000;
      int hits = 0;
      VectorXd z(p);
      const VectorXd zero = VectorXd::Zero(p);
      for (int s = 0; s < n; ++s)
      {
        for (int i = 0; i < p; ++i)
          z(i) = (2 * uniform01(rng) - 1) * half(i);
        hits += k.evaluate(z, zero, 1.0);
      }
      const double frac = static_cast<double>(hits) / n;
      const double volume = box * frac;
      const double se = box * std::sqrt(frac * (1 - frac) / n);
      CAPTURE(p);
      CHECK(std::abs(volume - 1) <= 4 * se + 1e-12);
    }
  }

  TEST_CASE("retention rule")
  {
    auto count = [](std::uint64_t n, std::uint64_t b, std::uint64_t t) {
      std::uint64_t c = 0;
      for (std::uint64_t r = 0; r <= n; ++r)
        c += is_retained(r, b, t);
      return c;
    };
    CHECK(count(300000, 12500, 50) == 5750);
    CHECK(count(10, 0, 1) == 11);
    CHECK(count(10, 0, 3) == 4);
    CHECK(count(10, 10, 1) == 0);
    CHECK_FALSE(is_retained(0, 5, 1));
    CHECK(is_retained(6, 5, 1));
  }

  TEST_CASE("sampler variant names round-trip")
  {
    for (auto v : {SamplerVariant::Standard, SamplerVariant::EarlyRejection})
      CHECK(sampler_variant_from_string(to_string(v)) == v);
    CHECK_THROWS(sampler_variant_from_string("fast"));
  }

  TEST_CASE("adaptive proposal: seed covariance before t0, then s (Cov + eps I)")
  {
    const MatrixXd seed = (VectorXd(2) << 0.04, 0.09).finished().asDiagonal();
    AdaptiveProposal prop(seed, {500, 1e-8, 0});
    CHECK(prop.scale() == doctest::Approx(2.4 * 2.4 / 2));
    const VectorXd c = (VectorXd(2) << 1, -2).finished();
    for (int i = 0; i < 500; ++i)
      prop.update(c);
    CHECK(prop.covariance() == seed);
    prop.update(c);
    const MatrixXd expected = prop.scale() * 1e-8 * MatrixXd::Identity(2, 2);
    CHECK((prop.covariance() - expected).cwiseAbs().maxCoeff() < 1e-20);

    prop.freeze();
    prop.update(VectorXd::Constant(2, 100));
    CHECK(prop.count() == 501);
  }

  TEST_CASE("adaptive proposal holds zero-variance coordinates fixed")
  {
    const MatrixXd seed = (VectorXd(3) << 0.04, 0.0, 0.09).finished().asDiagonal();
    AdaptiveProposal prop(seed, {10, 1e-8, 0});
    CHECK(prop.scale() == doctest::Approx(2.4 * 2.4 / 2));
    Rng rng = substream(2, 0, 0, StreamPurpose::Test);
    VectorXd x = (VectorXd(3) << 0, 5, 0).finished();
    for (int i = 0; i < 50; ++i)
    {
      x = prop.propose(x, rng);
      CHECK(x(1) == 5.0);
      prop.update(x);
    }
    CHECK(prop.covariance()(1, 1) == 0.0);
    CHECK(prop.covariance()(0, 0) > 0.0);
  }

  TEST_CASE("adaptive proposal learns the covariance of iid draws")
  {
    MatrixXd sigma(2, 2);
    sigma << 2.0, 0.6, 0.6, 0.5;
    const MatrixXd l = sigma.llt().matrixL();
    AdaptiveProposal prop(MatrixXd::Identity(2, 2), {});
    Rng rng = substream(3, 0, 0, StreamPurpose::Test);
    for (int i = 0; i < 100000; ++i)
    {
      VectorXd z(2);
      z << standard_normal(rng), standard_normal(rng);
      prop.update(l * z);
    }
    const MatrixXd target = prop.scale() * sigma;
    CHECK((prop.covariance() - target).cwiseAbs().maxCoeff() < 0.05 * target.cwiseAbs().maxCoeff());

    // proposal increments have that covariance too
    MatrixXd acc = MatrixXd::Zero(2, 2);
    const VectorXd x = VectorXd::Zero(2);
    const int n = 100000;
    for (int i = 0; i < n; ++i)
    {
      const VectorXd d = prop.propose(x, rng);
      acc += d * d.transpose();
    }
    acc /= n;
    CHECK((acc - prop.covariance()).cwiseAbs().maxCoeff() < 0.05 * target.cwiseAbs().maxCoeff());
  }

  TEST_CASE("argument validation")
  {
    const auto m = point_model({0, 1}, {0.5, 2.0});
    const auto proj = identity_projector();
    const UniformEllipsoidKernel k(VectorXd::Ones(1));
    AbcOptions opt;
    opt.delta_start = 3.0; // above delta_max
    CHECK_THROWS_AS(AbcSampler(m, proj, k, VectorXd::Zero(1), opt), std::invalid_argument);
    opt.delta_start = 0.0;
    CHECK_THROWS_AS(AbcSampler(m, proj, k, VectorXd::Zero(1), opt), std::invalid_argument);
    opt.delta_start = 1.0;
    CHECK_THROWS_AS(AbcSampler(m, proj, k, VectorXd::Zero(2), opt), std::invalid_argument);
    CHECK_NOTHROW(AbcSampler(m, proj, k, VectorXd::Zero(1), opt));
  }

  TEST_CASE("start state has kernel value 1; hopeless start reports delta_start")
  {
    const auto m = point_model({0, 1}, {0.5, 2.0});
    const auto proj = identity_projector();
    const UniformEllipsoidKernel k(VectorXd::Ones(1));
    AbcOptions opt;
    opt.delta_start = 1.0;
    AbcSampler ok(m, proj, k, VectorXd::Constant(1, 0.3), opt);
    const auto rec = ok.initialize();
    CHECK(k.evaluate(rec.summary, VectorXd::Constant(1, 0.3), 1.0));

    opt.delta_start = 1e-9;
    opt.max_start_attempts = 50;
    AbcSampler bad(m, proj, k, VectorXd::Constant(1, 0.3), opt);
    CHECK_THROWS_WITH_AS(bad.initialize(), doctest::Contains("delta_start"), std::runtime_error);
  }

  TEST_CASE("zero iterations yield only the start state")
  {
    const auto m = point_model({0, 1}, {0.5, 2.0});
    const auto proj = identity_projector();
    AbcOptions opt;
    opt.delta_start = 1.0;
    AbcSampler s(m, proj, UniformEllipsoidKernel(VectorXd::Ones(1)), VectorXd::Zero(1), opt);
    const auto res = s.run();
    CHECK(res.records.size() == 1);
    CHECK(res.iterations == 0);
    CHECK(res.simulations == 0);
    CHECK(res.acceptance_rate() == 0);
  }

  TEST_CASE("bandwidth proposals outside (0, delta_max] are rejected without simulation")
  {
    const auto m = point_model({0, 1}, {0.5, 2.0});
    const auto proj = identity_projector();
    AbcOptions opt;
    opt.delta_start = 2.0;
    opt.delta_step_sd = 1e6; // every proposal leaves the support
    opt.iterations = 500;
    for (auto v : {SamplerVariant::EarlyRejection, SamplerVariant::Standard})
    {
      opt.variant = v;
      AbcSampler s(m, proj, UniformEllipsoidKernel(VectorXd::Ones(1)), VectorXd::Zero(1), opt);
      const auto res = s.run();
      CHECK(res.accepted == 0);
      CHECK(res.early_rejected == 500);
      CHECK(res.simulations == (v == SamplerVariant::Standard ? 500u : 0u));
      for (std::size_t i = 1; i < res.records.size(); ++i)
      {
        // rejected records repeat the previous state
        CHECK(res.records[i].theta == res.records[0].theta);
        CHECK(res.records[i].delta == 2.0);
        CHECK(res.records[i].summary == res.records[0].summary);
        CHECK(res.records[i].log_prior_ratio == kNegInf);
      }
    }
  }

  TEST_CASE("flat prior and fixed bandwidth: ratio 1, nothing rejected early")
  {
    const auto m = point_model({0, 1e12}, {0.5, 2.0});
    const auto proj = identity_projector();
    AbcOptions opt;
    opt.delta_start = 1.0;
    opt.delta_step_sd = 0.0;
    opt.iterations = 2000;
    opt.initial_covariance = MatrixXd::Identity(1, 1);
    AbcSampler s(m, proj, UniformEllipsoidKernel(VectorXd::Ones(1)), VectorXd::Zero(1), opt);
    const auto res = s.run();
    CHECK(res.early_rejected == 0);
    CHECK(res.simulations == 2000);
    CHECK(res.accepted > 0);
    for (const auto& r : res.records)
    {
      CHECK(std::abs(r.log_prior_ratio) < 1e-12);
      CHECK(r.delta == 1.0);
    }
  }

  TEST_CASE("both variants produce bit-identical chains")
  {
    const TheophyllineFixture fx;
    AbcOptions opt;
    opt.iterations = 3000;
    opt.seed = 5;
    opt.adaptation.start = 200;
    opt.variant = SamplerVariant::Standard;
    const auto a = fx.sampler(opt).run();
    opt.variant = SamplerVariant::EarlyRejection;
    const auto b = fx.sampler(opt).run();
    REQUIRE(a.records.size() == 3001);
    CHECK(a.records == b.records);
    CHECK(a.accepted == b.accepted);
    CHECK(a.early_rejected == b.early_rejected);
    CHECK(a.accepted > 0);
    CHECK(a.early_rejected > 0);
    CHECK(a.simulations == 3000);
    CHECK(b.simulations == 3000 - b.early_rejected);

    // a different seed changes the chain
    opt.seed = 6;
    const auto c = fx.sampler(opt).run();
    CHECK_FALSE(c.records == b.records);
  }

  TEST_CASE("chain targets the ABC posterior (quadrature oracle)")
  {
    // theta ~ N(0,1), y = theta + N(0,1), |y - s| < delta / 2 with delta fixed:
    // pi(theta) ∝ phi(theta) [Phi(s + delta/2 - theta) - Phi(s - delta/2 - theta)]
    const double s_obs = 1.0, delta = 1.0;
    double z = 0, m1 = 0, m2 = 0;
    const int nq = 20000;
    const double lo = -10, hi = 10, h = (hi - lo) / nq;
    for (int i = 0; i <= nq; ++i)
    {
      const double t = lo + i * h;
      const double w = (i == 0 || i == nq ? 0.5 : 1.0) * std::exp(-0.5 * t * t) *
                       (normal_cdf01(s_obs + delta / 2 - t) - normal_cdf01(s_obs - delta / 2 - t));
      z += w;
      m1 += w * t;
      m2 += w * t * t;
    }
    const double mean = m1 / z, var = m2 / z - mean * mean;

    const auto m = point_model({0, 1}, {0.5, 2.0});
    const auto proj = identity_projector();
    AbcOptions opt;
    opt.delta_start = delta;
    opt.delta_step_sd = 0.0;
    opt.iterations = 200000;
    opt.burn_in = 1000;
    opt.seed = 17;
    AbcSampler s(m, proj, UniformEllipsoidKernel(VectorXd::Ones(1)), VectorXd::Constant(1, s_obs), opt);
    const auto res = s.run();
    const auto draws = to_draws(res.records);
    const VectorXd x = draws.theta.col(0);
    const double cm = x.mean();
    const double cv = (x.array() - cm).square().sum() / (x.size() - 1);
    const double n_eff = ess(x).value;
    const double se = std::sqrt(var / n_eff);
    MESSAGE("oracle mean " << mean << " var " << var << "; chain mean " << cm << " var " << cv
                           << " ess " << n_eff);
    CHECK(std::abs(cm - mean) < 3 * se);
    CHECK(std::abs(cv / var - 1) < 0.05);
  }
}
