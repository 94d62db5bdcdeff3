#include "abcsde/experiment.hpp"

#include "abcsde/linear_sde.hpp"
#include "abcsde/random.hpp"
#include "abcsde/ssa.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

namespace abcsde
{

namespace fs = std::filesystem;

namespace
{
constexpr const char* kVersion = "abcsde 0.1.0";

// ---------------------------------------------------------------------------
// Field-path aware JSON access

class Section
{
public:
  Section(const Json* node, std::string path) : node_(node), path_(std::move(path)) {}

  Section child(const std::string& key, const std::set<std::string>& allowed) const
  {
    const Json* c = find(key);
    if (c && !c->is_object())
      fail(key, "must be an object");
    Section s(c, join(key));
    s.check_keys(allowed);
    return s;
  }

  void check_keys(const std::set<std::string>& allowed) const
  {
    if (!node_)
      return;
    for (auto it = node_->begin(); it != node_->end(); ++it)
      if (!allowed.count(it.key()))
        throw ConfigError("config field '" + join(it.key()) + "': unknown field");
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  std::optional<double> number(const std::string& key) const
  {
    const Json* v = find(key);
    if (!v)
      return std::nullopt;
    if (!v->is_number())
      fail(key, "must be a number");
    return v->get<double>();
  }

  double positive(const std::string& key, double fallback) const
  {
    const auto v = number(key).value_or(fallback);
    if (!(v > 0) || !std::isfinite(v))
      fail(key, "must be positive");
    return v;
  }

  double non_negative(const std::string& key, double fallback) const
  {
    const auto v = number(key).value_or(fallback);
    if (!(v >= 0) || !std::isfinite(v))
      fail(key, "must be non-negative");
    return v;
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback, bool allow_zero = true) const
  {
    const Json* v = find(key);
    if (!v)
    {
      if (!allow_zero && fallback == 0)
        fail(key, "is required");
      return fallback;
    }
    if (!v->is_number_integer() || v->get<std::int64_t>() < 0)
      fail(key, "must be a non-negative integer");
    const auto n = v->get<std::uint64_t>();
    if (!allow_zero && n == 0)
      fail(key, "must be positive");
    return n;
  }

  bool boolean(const std::string& key, bool fallback) const
  {
    const Json* v = find(key);
    if (!v)
      return fallback;
    if (!v->is_boolean())
      fail(key, "must be true or false");
    return v->get<bool>();
  }

  std::optional<std::string> string(const std::string& key) const
  {
    const Json* v = find(key);
    if (!v)
      return std::nullopt;
    if (!v->is_string())
      fail(key, "must be a string");
    return v->get<std::string>();
  }

  std::string choice(const std::string& key, const std::string& fallback,
                     const std::set<std::string>& options) const
  {
    const auto v = string(key).value_or(fallback);
    if (!options.count(v))
    {
      std::string list;
      for (const auto& o : options)
        list += (list.empty() ? "" : " | ") + o;
      fail(key, "must be one of " + list + " (got '" + v + "')");
    }
    return v;
  }

  std::optional<std::vector<double>> numbers(const std::string& key) const
  {
    const Json* v = find(key);
    if (!v)
      return std::nullopt;
    if (!v->is_array() || v->empty())
      fail(key, "must be a non-empty array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i)
    {
      if (!(*v)[i].is_number())
        fail(key + "[" + std::to_string(i) + "]", "must be a number");
      out.push_back((*v)[i].get<double>());
    }
    return out;
  }

  std::optional<std::vector<GaussianPrior>> priors(const std::string& key, std::size_t expected) const
  {
    const Json* v = find(key);
    if (!v)
      return std::nullopt;
    if (!v->is_array() || v->size() != expected)
      fail(key, "must be an array of " + std::to_string(expected) + " {mean, sd} objects");
    std::vector<GaussianPrior> out;
    for (std::size_t i = 0; i < v->size(); ++i)
      out.push_back(prior_at(&(*v)[i], key + "[" + std::to_string(i) + "]"));
    return out;
  }

  std::optional<GaussianPrior> prior(const std::string& key) const
  {
    const Json* v = find(key);
    if (!v)
      return std::nullopt;
    return prior_at(v, key);
  }

  const Json* find(const std::string& key) const
  {
    if (!node_ || !node_->contains(key))
      return nullptr;
    const Json& v = (*node_)[key];
    return v.is_null() ? nullptr : &v;
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const
  {
    throw ConfigError("config field '" + join(key) + "': " + what);
  }

private:
  GaussianPrior prior_at(const Json* v, const std::string& key) const
  {
    if (!v->is_object() || !v->contains("mean") || !v->contains("sd") || !(*v)["mean"].is_number() ||
        !(*v)["sd"].is_number())
      fail(key, "must be an object with numeric 'mean' and 'sd'");
    GaussianPrior p{(*v)["mean"].get<double>(), (*v)["sd"].get<double>()};
    if (p.sd < 0)
      fail(key + ".sd", "must be non-negative");
    return p;
  }

  const Json* node_;
  std::string path_;
};

std::vector<std::string> truth_keys(const std::string& model_id)
{
  if (model_id == "theophylline")
    return {"Ke", "Ka", "Cl", "sigma", "sigma_eps"};
  if (model_id == "autoregulation")
    return {"c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "DNA0"};
  return {"mu", "sigma", "sigma_eps"};
}

void write_manifest(const ExperimentConfig& config, const std::string& stage, const Json& extra,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs)
{
  const StagePaths paths{config.output_dir};
  Json m;
  m["stage"] = stage;
  m["version"] = kVersion;
  m["seed"] = config.seed;
  m["config_hash"] = fnv1a_hex(config.raw.dump());
  m["config"] = config.raw;
  Json in = Json::array();
  for (const auto& p : inputs)
    in.push_back(p.filename().string());
  Json out = Json::array();
  for (const auto& p : outputs)
    out.push_back(p.filename().string());
  m["inputs"] = in;
  m["outputs"] = out;
  for (auto it = extra.begin(); it != extra.end(); ++it)
    m[it.key()] = it.value();
  write_json(paths.manifest(stage), m);
}

Json priors_json(const ParameterSpec& spec)
{
  Json a = Json::array();
  for (const auto& p : spec.parameters)
    a.push_back({{"name", p.name},
                 {"transform", p.transform == Transform::Log ? "log" : "identity"},
                 {"mean", p.prior.mean},
                 {"sd", p.prior.sd}});
  return {{"theta", a}, {"bandwidth", {{"mean", spec.bandwidth.mean}, {"max", spec.bandwidth.max}}}};
}

void require(const fs::path& path, const std::string& producer)
{
  if (!fs::exists(path))
    throw MissingInput(path, producer);
}

Eigen::Index parameter_by_natural_name(const ParameterSpec& spec, const std::string& name,
                                       const std::string& field)
{
  for (std::size_t j = 0; j < spec.parameters.size(); ++j)
    if (natural_name(spec.parameters[j]) == name)
      return static_cast<Eigen::Index>(j);
  throw ConfigError("config field '" + field + "': unknown parameter '" + name + "'");
}

void check_schedule(const ObservationSet& data, const StateSpaceModel& model, const std::string& source)
{
  const auto& times = model.grid.observation_times();
  if (data.times.size() != times.size())
    throw DataError(source + ": " + std::to_string(data.times.size()) +
                    " observation times, the model schedule has " + std::to_string(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(data.times[i] - times[i]) > 1e-9 * std::max(1.0, std::abs(times[i])))
      throw DataError(source + ": time " + format_number(data.times[i]) + " in row " +
                      std::to_string(i + 2) + " differs from the model schedule (" +
                      format_number(times[i]) + ")");
  if (data.mask != model.mask)
    throw DataError(source + ": observed coordinates differ from the model's observation mask");
}
} // namespace

MissingInput::MissingInput(const fs::path& path, const std::string& producer)
    : DataError("missing input " + path.string() + "; run the '" + producer + "' command first")
{
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig parse_config(const Json& raw, const fs::path& base_dir)
{
  if (!raw.is_object())
    throw ConfigError("config: top level must be an object");
  ExperimentConfig c;
  c.raw = raw;
  const Section root(&raw, "");
  root.check_keys({"model", "seed", "output_dir", "data", "bandwidth", "pilot", "kernel", "abc",
                   "diagnose", "pmcmc"});

  if (!root.has("model"))
    throw ConfigError("config field 'model': is required");
  const Section model = root.child("model", {"id", "dose", "times", "substeps", "x0", "priors", "k",
                                             "t_end", "stepsize", "observe_dna", "error_sd",
                                             "estimate_error_sd", "estimate_dna0", "error_prior",
                                             "dna0_prior"});
  c.model_id = model.choice("id", "", {"theophylline", "autoregulation", "linear-gaussian-toy"});

  auto check_times = [&](const std::vector<double>& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
      if (!(t[i] > (i ? t[i - 1] : 0.0)))
        model.fail("times", "must be positive and strictly increasing");
  };
  auto substeps = [&](int fallback) {
    const auto s = model.count("substeps", static_cast<std::uint64_t>(fallback), false);
    return static_cast<int>(s);
  };

  BandwidthPrior* bandwidth = nullptr;
  if (c.model_id == "theophylline")
  {
    model.check_keys({"id", "dose", "times", "substeps", "x0", "priors"});
    auto& s = c.theophylline;
    s.dose = model.positive("dose", s.dose);
    if (auto t = model.numbers("times"))
    {
      check_times(*t);
      s.times = *t;
    }
    s.substeps = substeps(s.substeps);
    s.x0 = model.number("x0").value_or(s.x0);
    if (auto p = model.priors("priors", 5))
      s.priors = *p;
    bandwidth = &s.bandwidth;
  }
  else if (c.model_id == "autoregulation")
  {
    model.check_keys({"id", "k", "x0", "t_end", "stepsize", "observe_dna", "error_sd",
                      "estimate_error_sd", "estimate_dna0", "priors", "error_prior", "dna0_prior"});
    auto& s = c.autoregulation;
    s.k = model.positive("k", s.k);
    if (auto x = model.numbers("x0"))
    {
      if (x->size() != 4)
        model.fail("x0", "must have 4 entries (RNA, P, P2, DNA)");
      s.x0 = Eigen::Map<const VectorXd>(x->data(), 4);
    }
    s.t_end = model.positive("t_end", s.t_end);
    s.stepsize = model.positive("stepsize", s.stepsize);
    s.observe_dna = model.boolean("observe_dna", s.observe_dna);
    s.error_sd = model.non_negative("error_sd", s.error_sd);
    s.estimate_error_sd = model.boolean("estimate_error_sd", s.estimate_error_sd);
    s.estimate_dna0 = model.boolean("estimate_dna0", s.estimate_dna0);
    if (auto p = model.priors("priors", 8))
      s.rate_priors = *p;
    if (auto p = model.prior("error_prior"))
      s.error_prior = *p;
    if (auto p = model.prior("dna0_prior"))
      s.dna0_prior = *p;
    bandwidth = &s.bandwidth;
  }
  else
  {
    model.check_keys({"id", "times", "substeps", "x0", "priors"});
    auto& s = c.linear_gaussian;
    if (auto t = model.numbers("times"))
    {
      check_times(*t);
      s.times = *t;
    }
    s.substeps = substeps(s.substeps);
    s.x0 = model.number("x0").value_or(s.x0);
    if (auto p = model.priors("priors", 3))
      s.priors = *p;
    bandwidth = &s.bandwidth;
  }

  c.seed = root.count("seed", c.seed);
  if (auto dir = root.string("output_dir"))
    c.output_dir = base_dir.empty() || fs::path(*dir).is_absolute() ? fs::path(*dir) : base_dir / *dir;
  else
    c.output_dir = base_dir.empty() ? fs::path("out") : base_dir / "out";

  const Section data = root.child("data", {"mode", "path", "seed", "truth", "noise_sd"});
  c.data_mode = data.choice("mode", "generate", {"generate", "load"});
  if (auto p = data.string("path"))
    c.data_path = base_dir.empty() || fs::path(*p).is_absolute() ? fs::path(*p) : base_dir / *p;
  if (c.data_mode == "load" && c.data_path.empty())
    data.fail("path", "is required when data.mode is 'load'");
  c.data_seed = data.count("seed", c.seed);
  if (const Json* truth = data.find("truth"))
  {
    if (!truth->is_object())
      data.fail("truth", "must be an object of natural-scale values");
    const auto keys = truth_keys(c.model_id);
    for (auto it = truth->begin(); it != truth->end(); ++it)
    {
      if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
        data.fail("truth." + it.key(), "is not a parameter of the " + c.model_id + " model");
      if (!it.value().is_number())
        data.fail("truth." + it.key(), "must be a number");
      c.truth[it.key()] = it.value().get<double>();
    }
  }
  if (data.has("noise_sd"))
    c.noise_sd = data.non_negative("noise_sd", 0);

  const Section bw = root.child("bandwidth", {"mean", "max", "start", "step_sd"});
  bandwidth->mean = bw.positive("mean", bandwidth->mean);
  bandwidth->max = bw.positive("max", bandwidth->max);
  c.delta_start = bw.positive("start", std::min(c.delta_start, bandwidth->max));
  if (c.delta_start > bandwidth->max)
    bw.fail("start", "must not exceed bandwidth.max");
  if (bw.has("step_sd"))
    c.delta_step_sd = bw.non_negative("step_sd", 0);

  const Section pilot = root.child("pilot", {"draws", "method", "folds"});
  c.pilot_draws = static_cast<Eigen::Index>(pilot.count("draws", 1000, false));
  c.fit_method = fit_method_from_string(pilot.choice("method", "ols", {"ols", "lasso"}));
  c.lasso_folds = static_cast<int>(pilot.count("folds", 10, false));
  if (c.lasso_folds < 2)
    pilot.fail("folds", "must be at least 2");

  const Section kernel = root.child("kernel", {"weights"});
  c.kernel_weights = kernel.choice("weights", c.kernel_weights, {"inverse-variance", "identity"});

  const Section abc = root.child("abc", {"variant", "iterations", "burn_in", "thin", "adaptation_start",
                                         "freeze_adaptation", "start"});
  c.variant = sampler_variant_from_string(
      abc.choice("variant", "early-rejection", {"standard", "early-rejection"}));
  c.iterations = abc.count("iterations", c.iterations);
  c.burn_in = abc.count("burn_in", c.burn_in);
  c.thin = abc.count("thin", c.thin, false);
  c.adaptation_start = abc.count("adaptation_start", c.adaptation_start);
  c.freeze_adaptation = abc.boolean("freeze_adaptation", c.freeze_adaptation);
  c.start_from_prior = abc.choice("start", "prior-mean", {"prior-mean", "prior-sample"}) == "prior-sample";

  const Section diag = root.child("diagnose", {"delta_star", "band_points", "ratios"});
  if (diag.has("delta_star"))
    c.delta_star = diag.positive("delta_star", 1);
  c.band_points = static_cast<int>(diag.count("band_points", 50, false));
  if (const Json* ratios = diag.find("ratios"))
  {
    if (!ratios->is_array())
      diag.fail("ratios", "must be an array of [numerator, denominator] name pairs");
    for (std::size_t i = 0; i < ratios->size(); ++i)
    {
      const auto& r = (*ratios)[i];
      if (!r.is_array() || r.size() != 2 || !r[0].is_string() || !r[1].is_string())
        diag.fail("ratios[" + std::to_string(i) + "]", "must be a [numerator, denominator] name pair");
      c.ratios.emplace_back(r[0].get<std::string>(), r[1].get<std::string>());
    }
  }

  const Section pm = root.child("pmcmc", {"particles", "iterations", "burn_in", "thin"});
  c.particles = static_cast<Eigen::Index>(pm.count("particles", 100, false));
  if (c.particles < 2)
    pm.fail("particles", "must be at least 2");
  c.pmcmc_iterations = pm.count("iterations", c.pmcmc_iterations);
  c.pmcmc_burn_in = pm.count("burn_in", c.pmcmc_burn_in);
  c.pmcmc_thin = pm.count("thin", c.pmcmc_thin, false);

  // Ratio names must resolve against the model.
  const auto spec = build_model(c).spec;
  for (std::size_t i = 0; i < c.ratios.size(); ++i)
  {
    parameter_by_natural_name(spec, c.ratios[i].first, "diagnose.ratios[" + std::to_string(i) + "]");
    parameter_by_natural_name(spec, c.ratios[i].second, "diagnose.ratios[" + std::to_string(i) + "]");
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file " + path.string());
  Json raw;
  try
  {
    raw = Json::parse(in);
  }
  catch (const nlohmann::json::exception& e)
  {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return parse_config(raw, path.parent_path());
}

StateSpaceModel build_model(const ExperimentConfig& config)
{
  if (config.model_id == "theophylline")
    return make_theophylline_model(config.theophylline);
  if (config.model_id == "autoregulation")
    return make_autoregulation_model(config.autoregulation);
  if (config.model_id == "linear-gaussian-toy")
    return make_linear_gaussian_model(config.linear_gaussian);
  throw ConfigError("config field 'model.id': unknown model '" + config.model_id + "'");
}

VectorXd configured_truth(const ExperimentConfig& config, const StateSpaceModel& model)
{
  std::map<std::string, double> natural;
  if (config.model_id == "theophylline")
  {
    const VectorXd t = theophylline_true_theta().array().exp();
    const char* names[] = {"Ke", "Ka", "Cl", "sigma", "sigma_eps"};
    for (int i = 0; i < 5; ++i)
      natural[names[i]] = t(i);
  }
  else if (config.model_id == "autoregulation")
  {
    const VectorXd c = autoregulation_true_rates();
    for (int i = 0; i < 8; ++i)
      natural["c" + std::to_string(i + 1)] = c(i);
    natural["DNA0"] = config.autoregulation.x0(3);
    natural["sigma_eps"] = config.noise_sd.value_or(config.autoregulation.error_sd);
  }
  else
  {
    const VectorXd t = linear_gaussian_true_theta();
    natural["mu"] = t(0);
    natural["sigma"] = std::exp(t(1));
    natural["sigma_eps"] = std::exp(t(2));
  }
  for (const auto& [k, v] : config.truth)
    natural[k] = v;

  VectorXd out(model.spec.size());
  for (Eigen::Index j = 0; j < model.spec.size(); ++j)
  {
    const auto& def = model.spec.parameters[static_cast<std::size_t>(j)];
    const double v = natural.at(natural_name(def));
    if (def.transform == Transform::Log && !(v > 0))
      throw ConfigError("config field 'data.truth." + natural_name(def) + "': must be positive");
    out(j) = def.transform == Transform::Log ? std::log(v) : v;
  }
  return out;
}

ObservationSet generate_dataset(const ExperimentConfig& config, const StateSpaceModel& model,
                                Json* sidecar)
{
  Rng path_rng = substream(config.data_seed, 0, 0, StreamPurpose::DataGeneration);
  Rng noise_rng = substream(config.data_seed, 0, 1, StreamPurpose::DataGeneration);
  const auto& times = model.grid.observation_times();
  Json truth;
  MatrixXd latent;
  double noise_sd = 0;
  std::string generator;

  if (config.model_id == "theophylline")
  {
    const VectorXd theta = configured_truth(config, model);
    const VectorXd nat = theta.array().exp();
    LinearPkParameters p{nat(0), nat(1), nat(2), config.theophylline.dose, nat(3)};
    latent = exact_linear_simulate(p, config.theophylline.x0, model.grid, path_rng).at_observations;
    noise_sd = nat(4);
    generator = "exact-transition";
    truth = {{"Ke", nat(0)}, {"Ka", nat(1)}, {"Cl", nat(2)}, {"sigma", nat(3)}, {"sigma_eps", nat(4)}};
  }
  else if (config.model_id == "linear-gaussian-toy")
  {
    const VectorXd theta = configured_truth(config, model);
    const double mu = theta(0), sigma = std::exp(theta(1));
    noise_sd = std::exp(theta(2));
    latent.resize(static_cast<Eigen::Index>(times.size()), 1);
    double x = config.linear_gaussian.x0, t = 0;
    for (std::size_t i = 0; i < times.size(); ++i)
    {
      const double dt = times[i] - t;
      x += mu * dt + sigma * std::sqrt(dt) * standard_normal(path_rng);
      latent(static_cast<Eigen::Index>(i), 0) = x;
      t = times[i];
    }
    generator = "exact-transition";
    truth = {{"mu", mu}, {"sigma", sigma}, {"sigma_eps", noise_sd}};
  }
  else
  {
    const auto& s = config.autoregulation;
    VectorXd rates = autoregulation_true_rates();
    for (int i = 0; i < 8; ++i)
    {
      const auto it = config.truth.find("c" + std::to_string(i + 1));
      if (it != config.truth.end())
        rates(i) = it->second;
    }
    VectorXd x0 = s.x0;
    if (auto it = config.truth.find("DNA0"); it != config.truth.end())
      x0(3) = it->second;
    const VectorXd full = expand_autoregulation_state(x0, s.k);
    Eigen::VectorXi full_int(full.size());
    for (Eigen::Index i = 0; i < full.size(); ++i)
    {
      full_int(i) = static_cast<int>(std::lround(full(i)));
      if (full_int(i) < 0 || std::abs(full(i) - full_int(i)) > 1e-9)
        throw ConfigError("config field 'model.x0': SSA needs non-negative integer counts with DNA <= k");
    }
    const auto net = autoregulation_network_full(s.k, rates);
    const auto path = gillespie_simulate(net, full_int, times.back(), path_rng);
    const Eigen::MatrixXi at = sample_at_times(path, times);
    latent.resize(at.rows(), 4);
    latent.col(0) = at.col(0).cast<double>();
    latent.col(1) = at.col(1).cast<double>();
    latent.col(2) = at.col(2).cast<double>();
    latent.col(3) = at.col(4).cast<double>();
    noise_sd = config.noise_sd.value_or(s.error_sd);
    generator = "gillespie-ssa";
    for (int i = 0; i < 8; ++i)
      truth["c" + std::to_string(i + 1)] = rates(i);
    truth["DNA0"] = x0(3);
    truth["sigma_eps"] = noise_sd;
  }

  auto data = apply_error_model(latent, times, noise_sd, model.mask, noise_rng);
  if (sidecar)
  {
    Json mask = Json::array();
    for (const auto& m : model.mask)
      mask.push_back(m);
    *sidecar = {{"model", config.model_id}, {"seed", config.data_seed}, {"generator", generator},
                {"truth", truth},           {"noise_sd", noise_sd},     {"times", times},
                {"mask", mask}};
  }
  return data;
}

ObservationSet load_observations(const ExperimentConfig& config, const StateSpaceModel& model)
{
  const StagePaths paths{config.output_dir};
  fs::path source;
  if (config.data_mode == "load")
  {
    source = config.data_path;
    if (!fs::exists(source))
      throw DataError("data file " + source.string() + " (data.path) does not exist");
  }
  else
  {
    source = paths.data_csv();
    require(source, "generate");
  }
  auto data = read_dataset(source);
  check_schedule(data, model, source.string());
  return data;
}

// ---------------------------------------------------------------------------
// Stages

void cmd_generate(const ExperimentConfig& config, std::ostream& log)
{
  if (config.data_mode != "generate")
    throw ConfigError("config field 'data.mode': the generate command needs mode 'generate'");
  const auto model = build_model(config);
  const StagePaths paths{config.output_dir};
  Json sidecar;
  const auto data = generate_dataset(config, model, &sidecar);
  write_dataset(paths.data_csv(), data, model.sde.dimension);
  write_json(paths.data_json(), sidecar);
  write_manifest(config, "generate", {{"data_seed", config.data_seed}}, {},
                 {paths.data_csv(), paths.data_json()});
  log << "generated " << data.times.size() << " observation times for " << config.model_id << " -> "
      << paths.data_csv().string() << '\n';
}

void cmd_train(const ExperimentConfig& config, std::ostream& log)
{
  const auto model = build_model(config);
  const StagePaths paths{config.output_dir};
  const auto started = std::chrono::steady_clock::now();
  const auto pilot = generate_pilot(model, {config.pilot_draws, config.seed});
  LassoOptions lasso;
  lasso.folds = config.lasso_folds;
  lasso.seed = config.seed;
  const auto projector = train_projector(pilot, config.fit_method, lasso);
  const auto names = model.spec.names();
  write_pilot(paths.pilot_parameters(), paths.pilot_observations(), pilot, names);
  write_json(paths.projector(), projector_to_json(projector, names));
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_manifest(config, "train",
                 {{"pilot_draws", config.pilot_draws}, {"method", to_string(config.fit_method)},
                  {"seconds", seconds}},
                 {}, {paths.pilot_parameters(), paths.pilot_observations(), paths.projector()});
  log << "trained " << to_string(config.fit_method) << " summaries on " << pilot.size()
      << " pilot draws in " << std::fixed << std::setprecision(2) << seconds << " s -> "
      << paths.projector().string() << '\n';
}

AbcSetup prepare_abc(const ExperimentConfig& config)
{
  const StagePaths paths{config.output_dir};
  AbcSetup s;
  s.model = build_model(config);
  require(paths.projector(), "train");
  s.projector = projector_from_json(read_json(paths.projector()));
  if (s.projector.summary_size() != s.model.spec.size() ||
      s.projector.input_size() != static_cast<Eigen::Index>(s.model.observation_size()))
    throw DataError(paths.projector().string() + " does not match the configured model; re-run 'train'");
  const auto data = load_observations(config, s.model);
  s.observed_summary = s.projector.project(data.flattened());
  const VectorXd weights = config.kernel_weights == "identity"
                               ? VectorXd::Ones(s.projector.summary_size())
                               : s.projector.inverse_variance_weights();
  s.kernel = UniformEllipsoidKernel(weights);

  s.options.variant = config.variant;
  s.options.iterations = config.iterations;
  s.options.burn_in = config.burn_in;
  s.options.thin = config.thin;
  s.options.seed = config.seed;
  s.options.delta_start = config.delta_start;
  s.options.delta_step_sd = config.delta_step_sd;
  s.options.sample_start_from_prior = config.start_from_prior;
  s.options.adaptation.start = config.adaptation_start;
  s.options.freeze_adaptation_after_burn_in = config.freeze_adaptation;
  return s;
}

namespace
{
Json abc_manifest_fields(const AbcSetup& s, const ExperimentConfig& config)
{
  return {{"variant", to_string(s.options.variant)},
          {"iterations", s.options.iterations},
          {"burn_in", s.options.burn_in},
          {"thin", s.options.thin},
          {"kernel", {{"weights", config.kernel_weights},
                      {"diagonal", std::vector<double>(s.kernel.weights().data(),
                                                       s.kernel.weights().data() + s.kernel.dimension())},
                      {"volume_constant", s.kernel.volume_constant()}}},
          {"priors", priors_json(s.model.spec)},
          {"parameters", s.model.spec.names()}};
}
} // namespace

namespace
{
// Chains are streamed here and renamed on completion, so a failed run never
// leaves a truncated chain behind for later stages.
fs::path partial_path(const fs::path& path)
{
  return fs::path(path).concat(".partial");
}
} // namespace

AbcResult cmd_abc(const ExperimentConfig& config, std::ostream& log)
{
  const StagePaths paths{config.output_dir};
  auto s = prepare_abc(config);
  AbcSampler sampler(s.model, s.projector, s.kernel, s.observed_summary, s.options);
  AbcResult result;
  {
    CsvWriter chain(partial_path(paths.chain()));
    chain.row(abc_chain_header(s.model.spec.size()));
    result = sampler.run([&](const ChainRecord& rec) { chain.row(abc_chain_row(rec)); });
  }
  fs::rename(partial_path(paths.chain()), paths.chain());
  write_json(paths.timing(), timing_to_json(result));
  write_manifest(config, "abc", abc_manifest_fields(s, config),
                 {paths.projector(), config.data_mode == "load" ? config.data_path : paths.data_csv()},
                 {paths.chain(), paths.timing()});
  log << std::fixed << std::setprecision(4) << "variant " << to_string(s.options.variant)
      << ", iterations " << result.iterations << '\n'
      << "acceptance rate " << result.acceptance_rate() << '\n'
      << "early-rejection rate " << result.early_rejection_rate() << '\n'
      << "simulations " << result.simulations << " (failures " << result.simulation_failures << ")\n"
      << "wall-clock seconds " << result.timing.total << " (simulation " << result.timing.simulation
      << ")\n";
  return result;
}

PmcmcResult cmd_pmcmc(const ExperimentConfig& config, std::ostream& log)
{
  const StagePaths paths{config.output_dir};
  const auto model = build_model(config);
  const auto data = load_observations(config, model);
  PmcmcOptions opt;
  opt.iterations = config.pmcmc_iterations;
  opt.burn_in = config.pmcmc_burn_in;
  opt.thin = config.pmcmc_thin;
  opt.seed = config.seed;
  opt.particles = config.particles;
  opt.adaptation.start = config.adaptation_start;
  opt.freeze_adaptation_after_burn_in = config.freeze_adaptation;
  PmcmcResult result;
  {
    CsvWriter chain(partial_path(paths.pmcmc_chain()));
    chain.row(pmcmc_chain_header(model.spec.size()));
    result = pmmh_run(model, data, opt, [&](const PmcmcRecord& r) { chain.row(pmcmc_chain_row(r)); });
  }
  fs::rename(partial_path(paths.pmcmc_chain()), paths.pmcmc_chain());
  write_manifest(config, "pmcmc",
                 {{"particles", opt.particles},
                  {"iterations", opt.iterations},
                  {"burn_in", opt.burn_in},
                  {"thin", opt.thin},
                  {"acceptance_rate", result.acceptance_rate()},
                  {"seconds", result.seconds},
                  {"priors", priors_json(model.spec)},
                  {"parameters", model.spec.names()}},
                 {config.data_mode == "load" ? config.data_path : paths.data_csv()}, {paths.pmcmc_chain()});
  log << std::fixed << std::setprecision(4) << "particles " << opt.particles << ", iterations "
      << result.iterations << '\n'
      << "acceptance rate " << result.acceptance_rate() << '\n'
      << "wall-clock seconds " << result.seconds << '\n';
  return result;
}

PosteriorSummary cmd_diagnose(const ExperimentConfig& config, std::ostream& log)
{
  const StagePaths paths{config.output_dir};
  const auto model = build_model(config);
  require(paths.chain(), "abc");
  const auto chain = read_chain(paths.chain());
  if (chain.theta.cols() != model.spec.size() || chain.delta.size() != chain.size())
    throw DataError(paths.chain().string() + " does not match the configured model; re-run 'abc'");
  if (chain.size() == 0)
    throw DataError(paths.chain().string() + " has no retained draws");

  const auto grid = default_band_grid(model.spec.bandwidth.max, config.band_points);
  write_band_curve(paths.band_curve(), bandwidth_band_curve(chain, model.spec, grid));
  log << "band curve -> " << paths.band_curve().string() << '\n';
  if (!config.delta_star)
    throw ConfigError("config field 'diagnose.delta_star': is required; choose it from " +
                      paths.band_curve().string());

  std::vector<std::pair<Eigen::Index, Eigen::Index>> ratios;
  for (const auto& [a, b] : config.ratios)
    ratios.emplace_back(parameter_by_natural_name(model.spec, a, "diagnose.ratios"),
                        parameter_by_natural_name(model.spec, b, "diagnose.ratios"));

  const auto filtered = filter_by_bandwidth(chain, *config.delta_star);
  const auto summary = posterior_summary(filtered, model.spec, ratios, *config.delta_star);
  write_json(paths.summary_json(), summary_to_json(summary));
  write_summary_csv(paths.summary_csv(), summary);
  std::vector<fs::path> inputs{paths.chain()};
  std::vector<fs::path> outputs{paths.band_curve(), paths.summary_json(), paths.summary_csv()};

  if (fs::exists(paths.pmcmc_chain()))
  {
    const auto pm = read_chain(paths.pmcmc_chain());
    if (pm.size() > 0 && pm.theta.cols() == model.spec.size())
    {
      write_json(paths.pmcmc_summary_json(), summary_to_json(posterior_summary(pm, model.spec, ratios)));
      inputs.push_back(paths.pmcmc_chain());
      outputs.push_back(paths.pmcmc_summary_json());
    }
  }
  write_manifest(config, "diagnose", {{"delta_star", *config.delta_star}, {"band_points", config.band_points}},
                 inputs, outputs);

  log << "delta* " << *config.delta_star << ": " << summary.retained << " of " << chain.size()
      << " draws retained\n";
  log << std::setprecision(5);
  for (const auto& p : summary.parameters)
    log << "  " << p.name << " mean " << p.mean << " 95% [" << p.lo << ", " << p.hi << "] ESS " << p.ess
        << '\n';
  for (const auto& r : summary.ratios)
    log << "  " << r.name << " mean " << r.mean << " 95% [" << r.lo << ", " << r.hi << "]\n";
  return summary;
}

Json cmd_bench(const ExperimentConfig& config, std::ostream& log)
{
  const StagePaths paths{config.output_dir};
  auto s = prepare_abc(config);
  AbcResult results[2];
  const SamplerVariant variants[2] = {SamplerVariant::Standard, SamplerVariant::EarlyRejection};
  for (int v = 0; v < 2; ++v)
  {
    auto options = s.options;
    options.variant = variants[v];
    AbcSampler sampler(s.model, s.projector, s.kernel, s.observed_summary, options);
    results[v] = sampler.run();
    log << to_string(variants[v]) << ": " << std::fixed << std::setprecision(3) << results[v].timing.total
        << " s, acceptance " << std::setprecision(4) << results[v].acceptance_rate() << ", early rejections "
        << results[v].early_rejection_rate() << '\n';
  }
  const double t_std = results[0].timing.total;
  const double t_er = results[1].timing.total;
  const double speedup = t_std > 0 ? 100.0 * (t_std - t_er) / t_std : 0.0;
  const bool identical = results[0].records == results[1].records;
  Json out = {{"iterations", config.iterations},
              {"standard_seconds", t_std},
              {"early_rejection_seconds", t_er},
              {"speedup_percent", speedup},
              {"acceptance_rate", results[1].acceptance_rate()},
              {"early_rejection_rate", results[1].early_rejection_rate()},
              {"standard_simulations", results[0].simulations},
              {"early_rejection_simulations", results[1].simulations},
              {"chains_identical", identical}};
  write_json(paths.bench(), out);
  write_manifest(config, "bench", abc_manifest_fields(s, config), {paths.projector()}, {paths.bench()});
  log << "speedup " << std::setprecision(1) << speedup << "% (wall-clock reduction of early rejection)\n"
      << "chains identical: " << (identical ? "yes" : "no") << '\n';
  return out;
}

} // namespace abcsde
