#include "abcsde/summaries.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace abcsde
{

PilotSet generate_pilot(const StateSpaceModel& model, const PilotOptions& options)
{
  if (options.draws < 0)
    throw std::invalid_argument("generate_pilot: negative draw count");

  const auto p = model.spec.size();
  const auto q = static_cast<Eigen::Index>(model.observation_size());
  PilotSet pilot;
  pilot.seed = options.seed;
  pilot.parameters.resize(options.draws, p);
  pilot.observations.resize(options.draws, q);

  VectorXd eta(q);
  for (Eigen::Index i = 0; i < options.draws; ++i)
  {
    const auto row = static_cast<std::uint64_t>(i);
    bool done = false;
    std::string last_error;
    for (int attempt = 0; attempt <= options.max_retries && !done; ++attempt)
    {
      const auto chain = static_cast<std::uint64_t>(attempt);
      Rng prior_rng = substream(options.seed, chain, row, StreamPurpose::Pilot);
      Rng sim_rng = substream(options.seed, chain, row, StreamPurpose::Simulation);
      Rng err_rng = substream(options.seed, chain, row, StreamPurpose::ErrorModel);
      const VectorXd theta = sample_prior(model.spec, prior_rng);
      try
      {
        model.simulate_observations(theta, sim_rng, err_rng, eta);
        pilot.parameters.row(i) = theta.transpose();
        pilot.observations.row(i) = eta.transpose();
        done = true;
      }
      catch (const SimulationFailure& e)
      {
        last_error = e.what();
      }
    }
    if (!done)
    {
      std::ostringstream os;
      os << "generate_pilot: row " << i << " failed " << options.max_retries + 1
         << " consecutive simulations; last failure: " << last_error;
      throw std::runtime_error(os.str());
    }
  }
  return pilot;
}

// ---------------------------------------------------------------------------
// Least squares

namespace
{
struct CenteredDesign
{
  VectorXd means;
  MatrixXd centered;
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod;
};

CenteredDesign decompose(const MatrixXd& design)
{
  CenteredDesign out;
  out.means = design.colwise().mean().transpose();
  out.centered = design.rowwise() - out.means.transpose();
  // Threshold relative to the largest pivot, as in rank-revealing QR practice.
  out.cod.setThreshold(1e-12);
  out.cod.compute(out.centered);
  return out;
}

RegressionFit solve_ols(const CenteredDesign& d, const VectorXd& response)
{
  const auto n = response.size();
  const double mean_y = response.mean();
  const VectorXd yc = response.array() - mean_y;

  RegressionFit fit;
  fit.coefficients = d.cod.solve(yc);
  fit.intercept = mean_y - fit.coefficients.dot(d.means);
  fit.rank = d.cod.rank();
  fit.rank_deficient = fit.rank < d.centered.cols();
  const double rss = (yc - d.centered * fit.coefficients).squaredNorm();
  const auto dof = std::max<Eigen::Index>(n - fit.rank - 1, 1);
  fit.residual_sd = std::sqrt(rss / static_cast<double>(dof));
  return fit;
}

void require_fit_size(const PilotSet& pilot)
{
  if (pilot.size() < 2)
    throw std::invalid_argument("regression needs at least two pilot rows");
}
} // namespace

RegressionFit fit_ols(const PilotSet& pilot, Eigen::Index j)
{
  require_fit_size(pilot);
  const auto d = decompose(pilot.observations);
  return solve_ols(d, pilot.parameters.col(j));
}

std::vector<RegressionFit> fit_ols_all(const PilotSet& pilot)
{
  require_fit_size(pilot);
  const auto d = decompose(pilot.observations);
  std::vector<RegressionFit> fits;
  for (Eigen::Index j = 0; j < pilot.parameters.cols(); ++j)
    fits.push_back(solve_ols(d, pilot.parameters.col(j)));
  return fits;
}

// ---------------------------------------------------------------------------
// Lasso

LassoSolver::LassoSolver(const MatrixXd& design) : rows_(design.rows())
{
  if (rows_ < 2)
    throw std::invalid_argument("LassoSolver: need at least two rows");
  means_ = design.colwise().mean().transpose();
  design_ = design.rowwise() - means_.transpose();
  const double n = static_cast<double>(rows_);
  scales_ = (design_.colwise().squaredNorm().transpose() / n).cwiseSqrt();
  const double largest = scales_.size() ? scales_.maxCoeff() : 0.0;
  VectorXd inv(scales_.size());
  for (Eigen::Index k = 0; k < scales_.size(); ++k)
  {
    if (scales_(k) <= 1e-12 * std::max(largest, 1.0))
      scales_(k) = 0;
    inv(k) = scales_(k) > 0 ? 1.0 / scales_(k) : 0.0;
  }
  gram_.noalias() = design_.transpose() * design_;
  gram_ = inv.asDiagonal() * (gram_ / n) * inv.asDiagonal();
}

double LassoSolver::lambda_max(const VectorXd& response) const
{
  const double n = static_cast<double>(rows_);
  const VectorXd yc = response.array() - response.mean();
  double out = 0;
  const VectorXd xty = design_.transpose() * yc / n;
  for (Eigen::Index k = 0; k < xty.size(); ++k)
    if (scales_(k) > 0)
      out = std::max(out, std::abs(xty(k) / scales_(k)));
  return out;
}

std::vector<double> LassoSolver::default_grid(const VectorXd& response,
                                              const LassoOptions& options) const
{
  const double top = lambda_max(response);
  std::vector<double> grid;
  const int m = std::max(options.grid_size, 2);
  for (int i = 0; i < m; ++i)
    grid.push_back(top * std::pow(options.lambda_min_ratio, static_cast<double>(i) / (m - 1)));
  return grid;
}

LassoPath LassoSolver::path(const VectorXd& response, const std::vector<double>& lambdas,
                            const LassoOptions& options) const
{
  if (response.size() != rows_)
    throw std::invalid_argument("LassoSolver: response length differs from design rows");
  const auto q = predictors();
  const double n = static_cast<double>(rows_);
  const double mean_y = response.mean();
  const VectorXd yc = response.array() - mean_y;
  const double var_y = yc.squaredNorm() / n;
  const double threshold = options.tolerance * std::max(var_y, 1e-300);

  VectorXd c = design_.transpose() * yc / n;
  for (Eigen::Index k = 0; k < q; ++k)
    c(k) = scales_(k) > 0 ? c(k) / scales_(k) : 0.0;

  VectorXd beta = VectorXd::Zero(q); // standardised scale
  VectorXd grad = c;                 // c - G beta

  auto update = [&](Eigen::Index k, double lambda) {
    const double gkk = gram_(k, k);
    const double z = grad(k) + gkk * beta(k);
    const double shrunk = std::abs(z) <= lambda ? 0.0 : (z > 0 ? z - lambda : z + lambda);
    const double next = shrunk / gkk;
    const double delta = next - beta(k);
    if (delta != 0)
    {
      grad.noalias() -= gram_.col(k) * delta;
      beta(k) = next;
    }
    return gkk * delta * delta;
  };

  LassoPath out;
  for (double lambda : lambdas)
  {
    int passes = 0;
    bool converged = false;
    while (passes < options.max_passes)
    {
      double worst = 0;
      for (Eigen::Index k = 0; k < q; ++k)
        if (scales_(k) > 0)
          worst = std::max(worst, update(k, lambda));
      ++passes;
      if (worst < threshold)
      {
        converged = true;
        break;
      }
      // Sweep the active set to convergence before the next full pass.
      while (passes < options.max_passes)
      {
        double active_worst = 0;
        for (Eigen::Index k = 0; k < q; ++k)
          if (beta(k) != 0)
            active_worst = std::max(active_worst, update(k, lambda));
        ++passes;
        if (active_worst < threshold)
          break;
      }
    }

    VectorXd original(q);
    for (Eigen::Index k = 0; k < q; ++k)
      original(k) = scales_(k) > 0 ? beta(k) / scales_(k) : 0.0;
    out.lambdas.push_back(lambda);
    out.coefficients.push_back(original);
    out.intercepts.push_back(mean_y - original.dot(means_));
    out.training_mse.push_back(std::max(0.0, var_y - 2.0 * beta.dot(c) + beta.dot(gram_ * beta)));
    out.converged.push_back(converged);
  }
  return out;
}

namespace
{
std::vector<int> assign_folds(Eigen::Index rows, int folds, std::uint64_t seed)
{
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng = substream(seed, 0, 0, StreamPurpose::CrossValidation);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(static_cast<std::size_t>(rows));
  for (std::size_t i = 0; i < order.size(); ++i)
    fold[static_cast<std::size_t>(order[i])] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return fold;
}

MatrixXd select_rows(const MatrixXd& m, const std::vector<int>& fold, int f, bool keep)
{
  Eigen::Index count = 0;
  for (int g : fold)
    count += ((g == f) == keep);
  MatrixXd out(count, m.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if ((fold[static_cast<std::size_t>(i)] == f) == keep)
      out.row(r++) = m.row(i);
  return out;
}
} // namespace

std::vector<RegressionFit> fit_lasso_cv_all(const PilotSet& pilot, const LassoOptions& options)
{
  require_fit_size(pilot);
  if (options.folds < 2)
    throw std::invalid_argument("fit_lasso_cv: at least two folds are required");
  if (pilot.size() < options.folds)
    throw std::invalid_argument("fit_lasso_cv: fewer pilot rows than folds");

  const auto p = pilot.parameters.cols();
  const LassoSolver full(pilot.observations);

  std::vector<std::vector<double>> grids(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j)
    grids[static_cast<std::size_t>(j)] =
        options.lambda_grid.empty() ? full.default_grid(pilot.parameters.col(j), options)
                                    : options.lambda_grid;

  // cv_error[j][l]: summed held-out squared error; failed[j][l]: any fold diverged.
  std::vector<std::vector<double>> cv_error(static_cast<std::size_t>(p));
  std::vector<std::vector<bool>> failed(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j)
  {
    cv_error[static_cast<std::size_t>(j)].assign(grids[static_cast<std::size_t>(j)].size(), 0.0);
    failed[static_cast<std::size_t>(j)].assign(grids[static_cast<std::size_t>(j)].size(), false);
  }

  const auto fold = assign_folds(pilot.size(), options.folds, options.seed);
  for (int f = 0; f < options.folds; ++f)
  {
    const MatrixXd train_x = select_rows(pilot.observations, fold, f, false);
    const MatrixXd test_x = select_rows(pilot.observations, fold, f, true);
    const MatrixXd train_y = select_rows(pilot.parameters, fold, f, false);
    const MatrixXd test_y = select_rows(pilot.parameters, fold, f, true);
    const LassoSolver solver(train_x);
    for (Eigen::Index j = 0; j < p; ++j)
    {
      const auto& grid = grids[static_cast<std::size_t>(j)];
      const auto path = solver.path(train_y.col(j), grid, options);
      for (std::size_t l = 0; l < grid.size(); ++l)
      {
        if (!path.converged[l])
          failed[static_cast<std::size_t>(j)][l] = true;
        const VectorXd pred = (test_x * path.coefficients[l]).array() + path.intercepts[l];
        cv_error[static_cast<std::size_t>(j)][l] += (test_y.col(j) - pred).squaredNorm();
      }
    }
  }

  std::vector<RegressionFit> fits;
  for (Eigen::Index j = 0; j < p; ++j)
  {
    const auto& grid = grids[static_cast<std::size_t>(j)];
    const auto& err = cv_error[static_cast<std::size_t>(j)];
    const auto& bad = failed[static_cast<std::size_t>(j)];
    std::size_t best = grid.size();
    std::size_t skipped = 0;
    for (std::size_t l = 0; l < grid.size(); ++l)
    {
      if (bad[l])
      {
        ++skipped;
        std::cerr << "warning: lasso did not converge at lambda=" << grid[l] << " for parameter "
                  << j << "; skipping\n";
        continue;
      }
      if (best == grid.size() || err[l] < err[best])
        best = l;
    }
    if (best == grid.size())
      throw std::runtime_error("fit_lasso_cv: no lambda on the grid converged for parameter " +
                               std::to_string(j));

    const std::vector<double> prefix(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(best) + 1);
    const auto path = full.path(pilot.parameters.col(j), prefix, options);
    RegressionFit fit;
    fit.intercept = path.intercepts.back();
    fit.coefficients = path.coefficients.back();
    fit.lambda = grid[best];
    fit.skipped_lambdas = skipped;
    fit.rank = (fit.coefficients.array() != 0).count();
    const double n = static_cast<double>(pilot.size());
    const auto dof = std::max<double>(n - static_cast<double>(fit.rank) - 1.0, 1.0);
    fit.residual_sd = std::sqrt(path.training_mse.back() * n / dof);
    fits.push_back(std::move(fit));
  }
  return fits;
}

RegressionFit fit_lasso_cv(const PilotSet& pilot, Eigen::Index j, const LassoOptions& options)
{
  PilotSet single;
  single.parameters = pilot.parameters.col(j);
  single.observations = pilot.observations;
  single.seed = pilot.seed;
  return fit_lasso_cv_all(single, options).front();
}

// ---------------------------------------------------------------------------
// Projector

std::string to_string(FitMethod method)
{
  return method == FitMethod::Ols ? "ols" : "lasso";
}

FitMethod fit_method_from_string(const std::string& name)
{
  if (name == "ols")
    return FitMethod::Ols;
  if (name == "lasso")
    return FitMethod::Lasso;
  throw std::invalid_argument("unknown fit method '" + name + "' (expected ols or lasso)");
}

VectorXd SummaryProjector::project(const VectorXd& eta) const
{
  VectorXd out;
  project_into(eta, out);
  return out;
}

void SummaryProjector::project_into(const VectorXd& eta, VectorXd& summary) const
{
  if (eta.size() != coefficients.cols())
    throw std::invalid_argument("SummaryProjector: observation vector has length " +
                                std::to_string(eta.size()) + ", expected " +
                                std::to_string(coefficients.cols()));
  summary = intercepts;
  summary.noalias() += coefficients * eta;
}

VectorXd SummaryProjector::inverse_variance_weights() const
{
  return residual_sds.array().square().inverse();
}

SummaryProjector train_projector(const PilotSet& pilot, FitMethod method, const LassoOptions& lasso)
{
  const auto fits = method == FitMethod::Ols ? fit_ols_all(pilot) : fit_lasso_cv_all(pilot, lasso);
  SummaryProjector proj;
  proj.method = method;
  proj.seed = pilot.seed;
  const auto p = static_cast<Eigen::Index>(fits.size());
  proj.intercepts.resize(p);
  proj.coefficients.resize(p, pilot.observations.cols());
  proj.residual_sds.resize(p);
  for (Eigen::Index j = 0; j < p; ++j)
  {
    const auto& fit = fits[static_cast<std::size_t>(j)];
    if (!fit.coefficients.allFinite() || !std::isfinite(fit.intercept))
      throw std::runtime_error("train_projector: non-finite coefficients for parameter " +
                               std::to_string(j));
    proj.intercepts(j) = fit.intercept;
    proj.coefficients.row(j) = fit.coefficients.transpose();
    proj.residual_sds(j) = fit.residual_sd;
    proj.lambdas.push_back(fit.lambda);
    proj.ranks.push_back(fit.rank);
  }
  return proj;
}

} // namespace abcsde
