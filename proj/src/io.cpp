#include "abcsde/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace abcsde
{

namespace fs = std::filesystem;

std::string format_number(double value)
{
  if (std::isnan(value))
    return "";
  if (std::isinf(value))
    return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string csv_escape(const std::string& field)
{
  if (field.find_first_of(",\"\r\n") == std::string::npos)
    return field;
  std::string out = "\"";
  for (char c : field)
  {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + '"';
}

CsvWriter::CsvWriter(const fs::path& path) : path_(path)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  out_.open(path, std::ios::binary);
  if (!out_)
    throw std::runtime_error("cannot write " + path.string());
}

void CsvWriter::row(const std::vector<std::string>& fields)
{
  for (std::size_t i = 0; i < fields.size(); ++i)
  {
    if (i)
      out_ << ',';
    out_ << csv_escape(fields[i]);
  }
  out_ << "\r\n";
  if (!out_)
    throw std::runtime_error("write failed for " + path_.string());
}

std::size_t CsvTable::column(const std::string& name) const
{
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name)
      return i;
  throw DataError("CSV has no column '" + name + "'");
}

CsvTable read_csv(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i)
  {
    const char c = text[i];
    if (quoted)
    {
      if (c == '"')
      {
        if (i + 1 < text.size() && text[i + 1] == '"')
        {
          field += '"';
          ++i;
        }
        else
          quoted = false;
      }
      else
        field += c;
      continue;
    }
    if (c == '"' && !field_started)
    {
      quoted = true;
      field_started = true;
    }
    else if (c == ',')
    {
      record.push_back(std::move(field));
      field.clear();
      field_started = false;
    }
    else if (c == '\r' || c == '\n')
    {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n')
        ++i;
      record.push_back(std::move(field));
      field.clear();
      field_started = false;
      records.push_back(std::move(record));
      record.clear();
    }
    else
    {
      field += c;
      field_started = true;
    }
  }
  if (quoted)
    throw DataError(path.string() + ": unterminated quoted field");
  if (field_started || !record.empty())
  {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  if (records.empty())
    throw DataError(path.string() + ": empty CSV file");

  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r)
  {
    if (records[r].size() == 1 && records[r][0].empty())
      continue; // blank line
    if (records[r].size() != table.header.size())
      throw DataError(path.string() + ": row " + std::to_string(r + 1) + " has " +
                      std::to_string(records[r].size()) + " fields, header has " +
                      std::to_string(table.header.size()));
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

double parse_number(const std::string& field, const std::string& context)
{
  if (field.empty())
    return std::numeric_limits<double>::quiet_NaN();
  if (field == "inf")
    return std::numeric_limits<double>::infinity();
  if (field == "-inf")
    return -std::numeric_limits<double>::infinity();
  double value = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw DataError(context + ": '" + field + "' is not a number");
  return value;
}

namespace
{
std::uint64_t parse_count(const std::string& field, const std::string& context)
{
  std::uint64_t value = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw DataError(context + ": '" + field + "' is not a non-negative integer");
  return value;
}

std::string flag(bool b) { return b ? "1" : "0"; }
} // namespace

// ---------------------------------------------------------------------------
// Chains

std::vector<std::string> abc_chain_header(Eigen::Index p)
{
  std::vector<std::string> h{"iter", "accepted", "early_rejected", "delta"};
  for (Eigen::Index j = 1; j <= p; ++j)
    h.push_back("theta_" + std::to_string(j));
  for (Eigen::Index j = 1; j <= p; ++j)
    h.push_back("S_" + std::to_string(j));
  return h;
}

std::vector<std::string> abc_chain_row(const ChainRecord& rec)
{
  std::vector<std::string> row{std::to_string(rec.iteration), flag(rec.accepted),
                               flag(rec.early_rejected), format_number(rec.delta)};
  for (Eigen::Index j = 0; j < rec.theta.size(); ++j)
    row.push_back(format_number(rec.theta(j)));
  for (Eigen::Index j = 0; j < rec.summary.size(); ++j)
    row.push_back(format_number(rec.summary(j)));
  return row;
}

void write_abc_chain(const fs::path& path, const std::vector<ChainRecord>& records)
{
  CsvWriter w(path);
  w.row(abc_chain_header(records.empty() ? 0 : records.front().theta.size()));
  for (const auto& r : records)
    w.row(abc_chain_row(r));
}

std::vector<std::string> pmcmc_chain_header(Eigen::Index p)
{
  std::vector<std::string> h{"iter", "accepted", "early_rejected"};
  for (Eigen::Index j = 1; j <= p; ++j)
    h.push_back("theta_" + std::to_string(j));
  return h;
}

std::vector<std::string> pmcmc_chain_row(const PmcmcRecord& rec)
{
  std::vector<std::string> row{std::to_string(rec.iteration), flag(rec.accepted), "0"};
  for (Eigen::Index j = 0; j < rec.theta.size(); ++j)
    row.push_back(format_number(rec.theta(j)));
  return row;
}

void write_pmcmc_chain(const fs::path& path, const std::vector<PmcmcRecord>& records)
{
  CsvWriter w(path);
  w.row(pmcmc_chain_header(records.empty() ? 0 : records.front().theta.size()));
  for (const auto& r : records)
    w.row(pmcmc_chain_row(r));
}

ChainDraws read_chain(const fs::path& path)
{
  const auto table = read_csv(path);
  const auto iter_col = table.column("iter");
  std::vector<std::size_t> theta_cols;
  for (std::size_t j = 1;; ++j)
  {
    const std::string name = "theta_" + std::to_string(j);
    bool found = false;
    for (std::size_t c = 0; c < table.header.size(); ++c)
      if (table.header[c] == name)
      {
        theta_cols.push_back(c);
        found = true;
      }
    if (!found)
      break;
  }
  if (theta_cols.empty())
    throw DataError(path.string() + ": no theta_1 column");
  bool has_delta = false;
  for (const auto& h : table.header)
    has_delta = has_delta || h == "delta";

  ChainDraws out;
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  out.theta.resize(n, static_cast<Eigen::Index>(theta_cols.size()));
  if (has_delta)
    out.delta.resize(n);
  const auto delta_col = has_delta ? table.column("delta") : 0;
  for (Eigen::Index i = 0; i < n; ++i)
  {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    const std::string ctx = path.string() + " row " + std::to_string(i + 2);
    out.iterations.push_back(parse_count(row[iter_col], ctx));
    for (std::size_t j = 0; j < theta_cols.size(); ++j)
      out.theta(i, static_cast<Eigen::Index>(j)) = parse_number(row[theta_cols[j]], ctx);
    if (has_delta)
      out.delta(i) = parse_number(row[delta_col], ctx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

void write_dataset(const fs::path& path, const ObservationSet& data, Eigen::Index dimension)
{
  data.validate();
  std::set<Eigen::Index> observed;
  for (const auto& m : data.mask)
    observed.insert(m.begin(), m.end());
  std::vector<std::string> header{"time"};
  for (Eigen::Index j : observed)
  {
    if (j >= dimension)
      throw std::invalid_argument("write_dataset: mask coordinate outside the state");
    header.push_back("species_" + std::to_string(j + 1));
  }
  CsvWriter w(path);
  w.row(header);
  for (std::size_t i = 0; i < data.times.size(); ++i)
  {
    std::vector<std::string> row{format_number(data.times[i])};
    for (Eigen::Index j : observed)
    {
      std::string cell;
      for (std::size_t k = 0; k < data.mask[i].size(); ++k)
        if (data.mask[i][k] == j)
          cell = format_number(data.values[i](static_cast<Eigen::Index>(k)));
      row.push_back(cell);
    }
    w.row(row);
  }
}

ObservationSet read_dataset(const fs::path& path)
{
  const auto table = read_csv(path);
  if (table.header.empty() || table.header[0] != "time")
    throw DataError(path.string() + ": first column must be 'time'");
  std::vector<Eigen::Index> coords;
  for (std::size_t c = 1; c < table.header.size(); ++c)
  {
    const auto& h = table.header[c];
    if (h.rfind("species_", 0) != 0)
      throw DataError(path.string() + ": unexpected column '" + h + "'");
    const auto idx = parse_count(h.substr(8), path.string() + " header");
    if (idx < 1)
      throw DataError(path.string() + ": species columns are numbered from 1");
    coords.push_back(static_cast<Eigen::Index>(idx - 1));
  }
  ObservationSet data;
  for (std::size_t r = 0; r < table.rows.size(); ++r)
  {
    const auto& row = table.rows[r];
    const std::string ctx = path.string() + " row " + std::to_string(r + 2);
    const double t = parse_number(row[0], ctx);
    if (std::isnan(t))
      throw DataError(ctx + ": missing time");
    data.times.push_back(t);
    std::vector<Eigen::Index> m;
    std::vector<double> v;
    for (std::size_t c = 0; c < coords.size(); ++c)
    {
      const double x = parse_number(row[c + 1], ctx);
      if (std::isnan(x))
        continue;
      m.push_back(coords[c]);
      v.push_back(x);
    }
    data.mask.push_back(m);
    data.values.push_back(Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  try
  {
    data.validate();
  }
  catch (const std::exception& e)
  {
    throw DataError(path.string() + ": " + e.what());
  }
  return data;
}

void write_trajectory(const fs::path& path, const std::vector<double>& times, const MatrixXd& states)
{
  CsvWriter w(path);
  std::vector<std::string> header{"time"};
  for (Eigen::Index j = 1; j <= states.cols(); ++j)
    header.push_back("x_" + std::to_string(j));
  w.row(header);
  for (std::size_t i = 0; i < times.size(); ++i)
  {
    std::vector<std::string> row{format_number(times[i])};
    for (Eigen::Index j = 0; j < states.cols(); ++j)
      row.push_back(format_number(states(static_cast<Eigen::Index>(i), j)));
    w.row(row);
  }
}

// ---------------------------------------------------------------------------
// Pilot and projector

void write_pilot(const fs::path& parameters_csv, const fs::path& observations_csv, const PilotSet& pilot,
                 const std::vector<std::string>& names)
{
  {
    CsvWriter w(parameters_csv);
    w.row(names);
    for (Eigen::Index i = 0; i < pilot.size(); ++i)
    {
      std::vector<std::string> row;
      for (Eigen::Index j = 0; j < pilot.parameters.cols(); ++j)
        row.push_back(format_number(pilot.parameters(i, j)));
      w.row(row);
    }
  }
  CsvWriter w(observations_csv);
  std::vector<std::string> header;
  for (Eigen::Index j = 1; j <= pilot.observations.cols(); ++j)
    header.push_back("eta_" + std::to_string(j));
  w.row(header);
  for (Eigen::Index i = 0; i < pilot.size(); ++i)
  {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < pilot.observations.cols(); ++j)
      row.push_back(format_number(pilot.observations(i, j)));
    w.row(row);
  }
}

namespace
{
MatrixXd table_matrix(const CsvTable& t, const fs::path& path)
{
  MatrixXd m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.header.size(); ++j)
    {
      const double v = parse_number(t.rows[i][j], path.string() + " row " + std::to_string(i + 2));
      if (!std::isfinite(v))
        throw DataError(path.string() + " row " + std::to_string(i + 2) + ": non-finite value");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  return m;
}
} // namespace

PilotSet read_pilot(const fs::path& parameters_csv, const fs::path& observations_csv)
{
  PilotSet pilot;
  pilot.parameters = table_matrix(read_csv(parameters_csv), parameters_csv);
  pilot.observations = table_matrix(read_csv(observations_csv), observations_csv);
  if (pilot.parameters.rows() != pilot.observations.rows())
    throw DataError("pilot parameter and observation files have different row counts");
  return pilot;
}

namespace
{
Json vector_json(const VectorXd& v)
{
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    a.push_back(v(i));
  return a;
}

VectorXd json_vector(const Json& a, const std::string& what)
{
  if (!a.is_array())
    throw DataError("projector field '" + what + "' must be an array");
  VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
  {
    if (!a[i].is_number())
      throw DataError("projector field '" + what + "' must hold numbers");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}
} // namespace

Json projector_to_json(const SummaryProjector& projector, const std::vector<std::string>& names)
{
  Json j;
  j["method"] = to_string(projector.method);
  j["seed"] = projector.seed;
  j["parameters"] = names;
  j["intercepts"] = vector_json(projector.intercepts);
  j["residual_sds"] = vector_json(projector.residual_sds);
  j["lambdas"] = projector.lambdas;
  j["ranks"] = projector.ranks;
  Json coeffs = Json::array();
  for (Eigen::Index r = 0; r < projector.coefficients.rows(); ++r)
    coeffs.push_back(vector_json(projector.coefficients.row(r).transpose()));
  j["coefficients"] = coeffs;
  return j;
}

SummaryProjector projector_from_json(const Json& j)
{
  SummaryProjector p;
  try
  {
    p.method = fit_method_from_string(j.at("method").get<std::string>());
    p.seed = j.at("seed").get<std::uint64_t>();
    p.intercepts = json_vector(j.at("intercepts"), "intercepts");
    p.residual_sds = json_vector(j.at("residual_sds"), "residual_sds");
    p.lambdas = j.at("lambdas").get<std::vector<double>>();
    p.ranks = j.at("ranks").get<std::vector<Eigen::Index>>();
    const auto& coeffs = j.at("coefficients");
    const auto rows = static_cast<Eigen::Index>(coeffs.size());
    if (rows != p.intercepts.size() || rows != p.residual_sds.size())
      throw DataError("projector: intercepts, residual_sds and coefficients differ in length");
    for (Eigen::Index r = 0; r < rows; ++r)
    {
      const VectorXd row = json_vector(coeffs[static_cast<std::size_t>(r)], "coefficients");
      if (r == 0)
        p.coefficients.resize(rows, row.size());
      if (row.size() != p.coefficients.cols())
        throw DataError("projector: coefficient rows differ in length");
      p.coefficients.row(r) = row.transpose();
    }
  }
  catch (const nlohmann::json::exception& e)
  {
    throw DataError(std::string("projector: ") + e.what());
  }
  catch (const std::invalid_argument& e)
  {
    throw DataError(std::string("projector: ") + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Diagnostics output

void write_band_curve(const fs::path& path, const std::vector<BandRow>& rows)
{
  CsvWriter w(path);
  w.row({"delta", "param", "mean", "lo", "hi", "count", "sd", "se"});
  for (const auto& r : rows)
    w.row({format_number(r.delta), r.param, format_number(r.mean), format_number(r.lo),
           format_number(r.hi), std::to_string(r.count), format_number(r.sd), format_number(r.se)});
}

Json summary_to_json(const PosteriorSummary& summary)
{
  Json j;
  j["retained"] = summary.retained;
  j["delta_star"] = summary.delta_star;
  Json params = Json::array();
  for (const auto& p : summary.parameters)
    params.push_back({{"name", p.name},
                      {"mean", p.mean},
                      {"lo", p.lo},
                      {"hi", p.hi},
                      {"ess", p.ess},
                      {"ess_fraction", p.ess_fraction},
                      {"ess_degenerate", p.ess_degenerate}});
  j["parameters"] = params;
  Json ratios = Json::array();
  for (const auto& r : summary.ratios)
    ratios.push_back({{"name", r.name}, {"mean", r.mean}, {"lo", r.lo}, {"hi", r.hi}});
  j["ratios"] = ratios;
  return j;
}

void write_summary_csv(const fs::path& path, const PosteriorSummary& summary)
{
  CsvWriter w(path);
  w.row({"param", "mean", "lo", "hi", "ess", "ess_fraction", "retained", "delta_star"});
  const auto retained = std::to_string(summary.retained);
  const auto ds = format_number(summary.delta_star);
  for (const auto& p : summary.parameters)
    w.row({p.name, format_number(p.mean), format_number(p.lo), format_number(p.hi),
           format_number(p.ess), format_number(p.ess_fraction), retained, ds});
  for (const auto& r : summary.ratios)
    w.row({r.name, format_number(r.mean), format_number(r.lo), format_number(r.hi), "", "", retained, ds});
}

Json timing_to_json(const AbcResult& result)
{
  Json j;
  j["iterations"] = result.iterations;
  j["accepted"] = result.accepted;
  j["early_rejected"] = result.early_rejected;
  j["acceptance_rate"] = result.acceptance_rate();
  j["early_rejection_rate"] = result.early_rejection_rate();
  j["simulations"] = result.simulations;
  j["simulation_failures"] = result.simulation_failures;
  j["start_attempts"] = result.start_attempts;
  j["seconds"] = {{"total", result.timing.total},
                  {"proposal", result.timing.proposal},
                  {"simulation", result.timing.simulation},
                  {"summary", result.timing.summary},
                  {"kernel", result.timing.kernel}};
  return j;
}

Json read_json(const fs::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open " + path.string());
  try
  {
    return Json::parse(in);
  }
  catch (const nlohmann::json::exception& e)
  {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string fnv1a_hex(const std::string& text)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text)
  {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace abcsde
