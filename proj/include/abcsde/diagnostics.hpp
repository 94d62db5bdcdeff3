#pragma once

#include "abcsde/abc_mcmc.hpp"
#include "abcsde/models.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace abcsde
{

/// Retained chain in column form: theta on the transformed scale.
struct ChainDraws
{
  std::vector<std::uint64_t> iterations;
  MatrixXd theta;   // n x p
  VectorXd delta;   // n; empty for chains without a bandwidth

  Eigen::Index size() const { return theta.rows(); }
};

ChainDraws to_draws(const std::vector<ChainRecord>& records);

/// Raised when a bandwidth threshold keeps no draws.
class EmptySelection : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Records with delta < delta_star, in order.
ChainDraws filter_by_bandwidth(const ChainDraws& chain, double delta_star);

/// "Ke" for "log_Ke"; other names unchanged.
std::string natural_name(const ParameterDef& def);

/// One row of the bandwidth-band curve: statistics of the natural-scale
/// draws with delta_r < delta. Empty grid points have count 0 and NaN stats.
struct BandRow
{
  double delta = 0;
  std::string param;
  double mean = 0;
  double lo = 0;    // mean - 2 sd (draw sd)
  double hi = 0;    // mean + 2 sd
  std::size_t count = 0;
  double sd = 0;
  double se = 0;    // sd / sqrt(count)
};

std::vector<BandRow> bandwidth_band_curve(const ChainDraws& chain, const ParameterSpec& spec,
                                          const std::vector<double>& grid);
/// `points` equally spaced values ending at `upper`.
std::vector<double> default_band_grid(double upper, int points = 50);

struct EssResult
{
  double value = 0;
  bool degenerate = false; // zero variance: value = N by convention
};

/// N / (1 + 2 sum rho_k), truncated by Geyer's initial monotone sequence and
/// clipped to [1, N].
EssResult ess(const VectorXd& series);

/// Linear interpolation between order statistics (h = (n - 1) p).
double quantile_sorted(const std::vector<double>& sorted, double p);
double quantile(std::vector<double> values, double p);

struct ParameterSummary
{
  std::string name;
  double mean = 0;
  double lo = 0;  // 2.5%
  double hi = 0;  // 97.5%
  double ess = 0;
  double ess_fraction = 0;
  bool ess_degenerate = false;
};

/// Ratio of two natural-scale parameters, averaged per draw.
struct RatioSummary
{
  std::string name;
  double mean = 0;
  double lo = 0;
  double hi = 0;
};

struct PosteriorSummary
{
  std::vector<ParameterSummary> parameters;
  std::vector<RatioSummary> ratios;
  std::size_t retained = 0;
  double delta_star = 0; // 0: no bandwidth filter
};

/// Summaries of `chain` as given; filter by bandwidth first. `delta_star` is
/// only recorded in the result.
PosteriorSummary posterior_summary(const ChainDraws& chain, const ParameterSpec& spec,
                                   const std::vector<std::pair<Eigen::Index, Eigen::Index>>& ratios = {},
                                   double delta_star = 0);

} // namespace abcsde
