#pragma once

#include "abcsde/models.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace abcsde
{

/// Parameter draws paired row-by-row with flattened artificial data.
struct PilotSet
{
  MatrixXd parameters;   // N x p, transformed scale
  MatrixXd observations; // N x q
  std::uint64_t seed = 0;

  Eigen::Index size() const { return parameters.rows(); }
};

struct PilotOptions
{
  Eigen::Index draws = 0;
  std::uint64_t seed = 1;
  int max_retries = 100; // redraws per row after a simulation failure
};

/// theta^(i) ~ prior, y^(i) ~ model(theta^(i)), flattened on the model's schedule and mask.
PilotSet generate_pilot(const StateSpaceModel& model, const PilotOptions& options);

struct RegressionFit
{
  double intercept = 0;
  VectorXd coefficients;
  double residual_sd = 0;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
  double lambda = 0;          // 0 for least squares
  std::size_t skipped_lambdas = 0;
};

/// Least squares of theta_j on [1 | H] through a complete orthogonal
/// decomposition of the centred design; minimum-norm slopes when H is rank
/// deficient.
RegressionFit fit_ols(const PilotSet& pilot, Eigen::Index j);
/// All p regressions sharing one decomposition.
std::vector<RegressionFit> fit_ols_all(const PilotSet& pilot);

struct LassoOptions
{
  int folds = 10;
  std::vector<double> lambda_grid; // empty: geometric grid from lambda_max
  int grid_size = 100;
  double lambda_min_ratio = 1e-4;
  double tolerance = 1e-7;         // on max_k G_kk dBeta_k^2 / var(y)
  int max_passes = 10000;
  std::uint64_t seed = 1;          // fold assignment
};

/// Coefficients along a lambda path, on the original predictor scale.
struct LassoPath
{
  std::vector<double> lambdas;
  std::vector<double> intercepts;
  std::vector<VectorXd> coefficients;
  std::vector<double> training_mse;
  std::vector<bool> converged;
};

/// Standardised-design lasso solver by cyclic coordinate descent with
/// covariance updates. The Gram matrix is shared by every response.
class LassoSolver
{
public:
  LassoSolver() = default;
  explicit LassoSolver(const MatrixXd& design);

  Eigen::Index predictors() const { return means_.size(); }
  /// Smallest lambda at which every slope is zero.
  double lambda_max(const VectorXd& response) const;
  std::vector<double> default_grid(const VectorXd& response, const LassoOptions& options) const;
  LassoPath path(const VectorXd& response, const std::vector<double>& lambdas,
                 const LassoOptions& options) const;

private:
  Eigen::Index rows_ = 0;
  VectorXd means_;
  VectorXd scales_;   // population sd; 0 marks a constant column
  MatrixXd gram_;     // standardised Z^T Z / n
  MatrixXd design_;   // raw design, kept for X^T y
};

/// K-fold cross-validated lasso for one response column of the pilot.
RegressionFit fit_lasso_cv(const PilotSet& pilot, Eigen::Index j, const LassoOptions& options = {});
std::vector<RegressionFit> fit_lasso_cv_all(const PilotSet& pilot, const LassoOptions& options = {});

enum class FitMethod
{
  Ols,
  Lasso,
};

std::string to_string(FitMethod method);
FitMethod fit_method_from_string(const std::string& name);

/// S_j(eta) = beta_0^(j) + beta^(j) . eta for every parameter j.
struct SummaryProjector
{
  FitMethod method = FitMethod::Ols;
  VectorXd intercepts;     // p
  MatrixXd coefficients;   // p x q
  VectorXd residual_sds;   // p
  std::vector<double> lambdas;
  std::vector<Eigen::Index> ranks;
  std::uint64_t seed = 0;

  Eigen::Index summary_size() const { return intercepts.size(); }
  Eigen::Index input_size() const { return coefficients.cols(); }

  VectorXd project(const VectorXd& eta) const;
  void project_into(const VectorXd& eta, VectorXd& summary) const;
  /// diag(1 / sd_j^2) entries for the kernel weighting matrix.
  VectorXd inverse_variance_weights() const;
};

SummaryProjector train_projector(const PilotSet& pilot, FitMethod method,
                                 const LassoOptions& lasso = {});

} // namespace abcsde
