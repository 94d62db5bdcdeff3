#pragma once

#include "abcsde/abc_mcmc.hpp"
#include "abcsde/diagnostics.hpp"
#include "abcsde/models.hpp"
#include "abcsde/pmcmc.hpp"
#include "abcsde/summaries.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace abcsde
{

using Json = nlohmann::ordered_json;

/// Malformed or inconsistent input files.
class DataError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

/// Shortest representation that reads back to the same double; NaN as empty.
std::string format_number(double value);
std::string csv_escape(const std::string& field);

class CsvWriter
{
public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(const std::vector<std::string>& fields);
  void flush() { out_.flush(); }

private:
  std::ofstream out_;
  std::filesystem::path path_;
};

struct CsvTable
{
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const; // throws DataError
};

CsvTable read_csv(const std::filesystem::path& path);
/// Empty field -> NaN; otherwise must parse fully.
double parse_number(const std::string& field, const std::string& context);

// ---------------------------------------------------------------------------
// Chains

std::vector<std::string> abc_chain_header(Eigen::Index p);
std::vector<std::string> abc_chain_row(const ChainRecord& rec);
void write_abc_chain(const std::filesystem::path& path, const std::vector<ChainRecord>& records);
std::vector<std::string> pmcmc_chain_header(Eigen::Index p);
std::vector<std::string> pmcmc_chain_row(const PmcmcRecord& rec);
void write_pmcmc_chain(const std::filesystem::path& path, const std::vector<PmcmcRecord>& records);
/// Reads either chain schema; delta is empty when the file has no delta column.
ChainDraws read_chain(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Datasets: `time,species_j,...` with empty cells for unobserved coordinates.

void write_dataset(const std::filesystem::path& path, const ObservationSet& data, Eigen::Index dimension);
ObservationSet read_dataset(const std::filesystem::path& path);

void write_trajectory(const std::filesystem::path& path, const std::vector<double>& times,
                      const MatrixXd& states);

// ---------------------------------------------------------------------------
// Pilot set and projector

void write_pilot(const std::filesystem::path& parameters_csv, const std::filesystem::path& observations_csv,
                 const PilotSet& pilot, const std::vector<std::string>& names);
PilotSet read_pilot(const std::filesystem::path& parameters_csv, const std::filesystem::path& observations_csv);

Json projector_to_json(const SummaryProjector& projector, const std::vector<std::string>& names);
SummaryProjector projector_from_json(const Json& j);

// ---------------------------------------------------------------------------
// Diagnostics output

void write_band_curve(const std::filesystem::path& path, const std::vector<BandRow>& rows);
Json summary_to_json(const PosteriorSummary& summary);
void write_summary_csv(const std::filesystem::path& path, const PosteriorSummary& summary);
Json timing_to_json(const AbcResult& result);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

/// 64-bit FNV-1a of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

} // namespace abcsde
