#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hetdet/glm.hpp"
#include "hetdet/inference.hpp"
#include "hetdet/power_analysis.hpp"
#include "hetdet/simlab.hpp"

// Dataset ingestion (CSV blocks described by a JSON manifest), run
// configuration, and report serialization. Reports follow the versioned
// "hetdetect-report/1" schema in both JSON and flat CSV form; serialization
// is byte-stable for identical inputs.

namespace hetdet {

inline constexpr const char* report_schema = "hetdetect-report/1";

std::string tool_version();

// --- CSV -------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;  // cells as raw text
};

// RFC-4180 style: quoted fields, embedded separators/newlines, CRLF or LF
CsvTable read_csv(const std::string& path);

// --- manifest and block loading ---------------------------------------------

struct ManifestEntry {
  std::int64_t id = 0;
  std::string path;  // resolved relative to the manifest file
};

struct BlockManifest {
  std::string response;
  std::vector<std::string> features;  // order defines coordinates 1..p
  std::vector<ManifestEntry> blocks;
};

BlockManifest load_manifest(const std::string& path);

std::vector<BlockData<double>> load_blocks(const BlockManifest& manifest);

// --- commands ----------------------------------------------------------------

struct TestCommandConfig {
  std::string blocks_path;
  ModelKind model = ModelKind::logistic;
  double alpha = 0.05;
  double gamma = 2.0 / 3.0;
  WeightPreset weight = WeightPreset::theory;
  std::optional<std::uint64_t> shuffle_seed;  // absent -> prefix split
};

struct TestCommandResult {
  TestCommandConfig config;
  BlockManifest manifest;
  std::vector<std::int64_t> block_ids;
  std::vector<Eigen::Index> block_sizes;
  double weight_value = 0.0;
  HeterogeneityReport<double> report;
  std::vector<std::string> warnings;
};

TestCommandResult run_test_command(const TestCommandConfig& config);

// --- serialization -----------------------------------------------------------

enum class ReportFormat { json, csv };

std::string render_test_report(const TestCommandResult& result,
                               ReportFormat format);
std::string render_sim_report(const SimResult& result, ReportFormat format);
std::string render_coverage_report(const CoverageTable& table,
                                   ReportFormat format);

struct PowerCalcResult {
  LocalAlternative alt;
  double sigma_minus = 0.0;
  double sigma_plus = 0.0;
  double boundary = 0.0;
  double snr_wald_value = 0.0;
  SnrEct snr_ect_value;
  RegimeVerdict verdict;
};

std::string render_power_report(const PowerCalcResult& result,
                                ReportFormat format);

struct GammaOptResult {
  double n = 0.0;
  double mu = 0.0;
  std::int64_t K = 0;
  double step = 0.01;
  GammaRecommendation recommendation;
};

std::string render_gamma_report(const GammaOptResult& result,
                                ReportFormat format);

// SimConfig <-> JSON (used by --config files and the config echo)
SimConfig parse_sim_config(const std::string& json_text);
SimConfig load_sim_config(const std::string& path);

// parse a rendered simulate report back into (command, SimResult)
SimResult parse_sim_report(const std::string& json_text);

// write text to a file, or stdout when path is empty
void write_output(const std::string& text, const std::string& path);

}  // namespace hetdet
