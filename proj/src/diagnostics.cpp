#include "abcsde/diagnostics.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

namespace abcsde
{

namespace
{
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

VectorXd natural_column(const ChainDraws& chain, const ParameterSpec& spec, Eigen::Index j)
{
  const auto& def = spec.parameters[static_cast<std::size_t>(j)];
  VectorXd col = chain.theta.col(j);
  if (def.transform == Transform::Log)
    col = col.array().exp();
  return col;
}
} // namespace

ChainDraws to_draws(const std::vector<ChainRecord>& records)
{
  ChainDraws out;
  const auto n = static_cast<Eigen::Index>(records.size());
  const Eigen::Index p = n ? records.front().theta.size() : 0;
  out.iterations.reserve(records.size());
  out.theta.resize(n, p);
  out.delta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const auto& rec = records[static_cast<std::size_t>(i)];
    out.iterations.push_back(rec.iteration);
    out.theta.row(i) = rec.theta.transpose();
    out.delta(i) = rec.delta;
  }
  return out;
}

ChainDraws filter_by_bandwidth(const ChainDraws& chain, double delta_star)
{
  if (!(delta_star > 0))
    throw std::invalid_argument("filter_by_bandwidth: delta* must be positive");
  if (chain.delta.size() != chain.size())
    throw std::invalid_argument("filter_by_bandwidth: chain has no bandwidth column");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < chain.size(); ++i)
    if (chain.delta(i) < delta_star)
      keep.push_back(i);
  if (keep.empty())
  {
    const double min_delta = chain.size() ? chain.delta.minCoeff() : kNaN;
    throw EmptySelection("no draws with delta < " + std::to_string(delta_star) +
                         " (smallest delta in the chain is " + std::to_string(min_delta) +
                         "); choose a larger delta*");
  }
  ChainDraws out;
  const auto n = static_cast<Eigen::Index>(keep.size());
  out.theta.resize(n, chain.theta.cols());
  out.delta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const auto src = keep[static_cast<std::size_t>(i)];
    out.iterations.push_back(chain.iterations[static_cast<std::size_t>(src)]);
    out.theta.row(i) = chain.theta.row(src);
    out.delta(i) = chain.delta(src);
  }
  return out;
}

std::string natural_name(const ParameterDef& def)
{
  if (def.transform == Transform::Log && def.name.rfind("log_", 0) == 0)
    return def.name.substr(4);
  return def.name;
}

std::vector<double> default_band_grid(double upper, int points)
{
  std::vector<double> grid;
  for (int i = 1; i <= points; ++i)
    grid.push_back(upper * static_cast<double>(i) / static_cast<double>(points));
  return grid;
}

std::vector<BandRow> bandwidth_band_curve(const ChainDraws& chain, const ParameterSpec& spec,
                                          const std::vector<double>& grid)
{
  if (chain.size() == 0)
    throw std::invalid_argument("bandwidth_band_curve: empty chain");
  if (chain.delta.size() != chain.size())
    throw std::invalid_argument("bandwidth_band_curve: chain has no bandwidth column");

  // Sort once by delta, then accumulate running sums across the sorted grid.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(chain.size()));
  for (Eigen::Index i = 0; i < chain.size(); ++i)
    order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return chain.delta(a) < chain.delta(b); });
  std::vector<std::size_t> grid_order(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g)
    grid_order[g] = g;
  std::stable_sort(grid_order.begin(), grid_order.end(),
                   [&](std::size_t a, std::size_t b) { return grid[a] < grid[b]; });

  const auto p = chain.theta.cols();
  MatrixXd natural(chain.size(), p);
  for (Eigen::Index j = 0; j < p; ++j)
    natural.col(j) = natural_column(chain, spec, j);

  std::vector<std::vector<BandRow>> by_grid(grid.size());
  // Welford accumulators per parameter.
  VectorXd mean = VectorXd::Zero(p);
  VectorXd m2 = VectorXd::Zero(p);
  std::size_t count = 0;
  std::size_t next = 0;
  for (std::size_t g : grid_order)
  {
    while (next < order.size() && chain.delta(order[next]) < grid[g])
    {
      ++count;
      const auto row = order[next++];
      for (Eigen::Index j = 0; j < p; ++j)
      {
        const double d = natural(row, j) - mean(j);
        mean(j) += d / static_cast<double>(count);
        m2(j) += d * (natural(row, j) - mean(j));
      }
    }
    for (Eigen::Index j = 0; j < p; ++j)
    {
      BandRow r;
      r.delta = grid[g];
      r.param = natural_name(spec.parameters[static_cast<std::size_t>(j)]);
      r.count = count;
      if (count == 0)
      {
        r.mean = r.lo = r.hi = r.sd = r.se = kNaN;
      }
      else
      {
        r.mean = mean(j);
        r.sd = count > 1 ? std::sqrt(m2(j) / static_cast<double>(count - 1)) : 0.0;
        r.se = r.sd / std::sqrt(static_cast<double>(count));
        r.lo = r.mean - 2 * r.sd;
        r.hi = r.mean + 2 * r.sd;
      }
      by_grid[g].push_back(r);
    }
  }
  std::vector<BandRow> rows;
  for (auto& block : by_grid)
    rows.insert(rows.end(), block.begin(), block.end());
  return rows;
}

EssResult ess(const VectorXd& series)
{
  const auto n = series.size();
  if (n < 10)
    throw std::invalid_argument("ess: series must have at least 10 values");
  const double mean = series.mean();
  const VectorXd centred = series.array() - mean;
  const double gamma0 = centred.squaredNorm() / static_cast<double>(n);
  if (!(gamma0 > 0) || gamma0 <= 1e-300)
    return {static_cast<double>(n), true};

  // Autocovariances by FFT with zero padding to avoid wrap-around.
  std::size_t m = 1;
  while (m < 2 * static_cast<std::size_t>(n))
    m <<= 1;
  std::vector<double> padded(m, 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    padded[static_cast<std::size_t>(i)] = centred(i);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, padded);
  for (auto& c : spectrum)
    c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> acov;
  fft.inv(acov, spectrum);
  auto rho = [&](Eigen::Index k) {
    return acov[static_cast<std::size_t>(k)] / static_cast<double>(n) / gamma0;
  };

  // Initial monotone sequence on pair sums Gamma_m = rho(2m) + rho(2m + 1).
  double tau = -1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k + 1 < n; k += 2)
  {
    double pair = rho(k) + rho(k + 1);
    if (pair <= 0)
      break;
    pair = std::min(pair, previous);
    tau += 2 * pair;
    previous = pair;
  }
  const double value = std::clamp(static_cast<double>(n) / tau, 1.0, static_cast<double>(n));
  return {value, false};
}

double quantile_sorted(const std::vector<double>& sorted, double p)
{
  if (sorted.empty())
    throw std::invalid_argument("quantile: no values");
  if (p < 0 || p > 1)
    throw std::invalid_argument("quantile: probability outside [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> values, double p)
{
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, p);
}

PosteriorSummary posterior_summary(const ChainDraws& chain, const ParameterSpec& spec,
                                   const std::vector<std::pair<Eigen::Index, Eigen::Index>>& ratios,
                                   double delta_star)
{
  if (chain.size() == 0)
    throw std::invalid_argument("posterior_summary: empty chain");
  if (chain.theta.cols() != spec.size())
    throw std::invalid_argument("posterior_summary: chain width differs from the parameter count");

  PosteriorSummary out;
  out.retained = static_cast<std::size_t>(chain.size());
  out.delta_star = delta_star;
  const auto n = chain.size();

  auto interval = [](const VectorXd& v, double& lo, double& hi) {
    std::vector<double> sorted(v.data(), v.data() + v.size());
    std::sort(sorted.begin(), sorted.end());
    lo = quantile_sorted(sorted, 0.025);
    hi = quantile_sorted(sorted, 0.975);
  };

  std::vector<VectorXd> natural;
  for (Eigen::Index j = 0; j < spec.size(); ++j)
  {
    natural.push_back(natural_column(chain, spec, j));
    ParameterSummary s;
    s.name = natural_name(spec.parameters[static_cast<std::size_t>(j)]);
    s.mean = natural.back().mean();
    interval(natural.back(), s.lo, s.hi);
    if (n >= 10)
    {
      const auto e = ess(natural.back());
      s.ess = e.value;
      s.ess_degenerate = e.degenerate;
    }
    else
    {
      s.ess = static_cast<double>(n);
      s.ess_degenerate = true;
    }
    s.ess_fraction = s.ess / static_cast<double>(n);
    out.parameters.push_back(s);
  }

  for (const auto& [a, b] : ratios)
  {
    if (a < 0 || b < 0 || a >= spec.size() || b >= spec.size())
      throw std::invalid_argument("posterior_summary: ratio refers to an unknown parameter");
    const VectorXd r = natural[static_cast<std::size_t>(a)].array() /
                       natural[static_cast<std::size_t>(b)].array();
    RatioSummary s;
    s.name = out.parameters[static_cast<std::size_t>(a)].name + "/" +
             out.parameters[static_cast<std::size_t>(b)].name;
    s.mean = r.mean();
    interval(r, s.lo, s.hi);
    out.ratios.push_back(s);
  }
  return out;
}

} // namespace abcsde
