#include "hetdet/io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>

#include <json.hpp>

namespace hetdet {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

#ifndef HETDETECT_VERSION
#define HETDETECT_VERSION "0.0.0"
#endif

std::string tool_version() { return "hetdetect " HETDETECT_VERSION; }

// --- CSV -------------------------------------------------------------------

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!fs::exists(path)) throw FileNotFound("no such file: " + path);
    throw IoError("cannot open " + path);
  }
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        in_quotes = false;
        ++i;
        continue;
      }
      field += c;
      ++i;
      continue;
    }
    switch (c) {
      case '"':
        if (field.empty()) in_quotes = true;
        else field += c;
        ++i;
        break;
      case ',':
        end_field();
        ++i;
        break;
      case '\r':
        end_record();
        i += (i + 1 < text.size() && text[i + 1] == '\n') ? 2 : 1;
        break;
      case '\n':
        end_record();
        ++i;
        break;
      default:
        field += c;
        ++i;
        break;
    }
  }
  if (in_quotes)
    throw SchemaMismatch(path + ": unterminated quoted field");
  if (!field.empty() || !record.empty()) end_record();

  // drop blank lines (single empty cell)
  records.erase(std::remove_if(records.begin(), records.end(),
                               [](const std::vector<std::string>& r) {
                                 return r.size() == 1 && r[0].empty();
                               }),
                records.end());

  if (records.empty())
    throw SchemaMismatch(path + ": missing header row");

  CsvTable table;
  table.columns = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.columns.size())
      throw SchemaMismatch(path + ": row " + std::to_string(r + 1) + " has " +
                           std::to_string(records[r].size()) +
                           " cells, header has " +
                           std::to_string(table.columns.size()));
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

namespace {

double parse_cell(const std::string& raw, const std::string& context,
                  long file_row, const std::string& column) {
  std::size_t lo = 0;
  std::size_t hi = raw.size();
  while (lo < hi && std::isspace(static_cast<unsigned char>(raw[lo]))) ++lo;
  while (hi > lo && std::isspace(static_cast<unsigned char>(raw[hi - 1]))) --hi;
  double value = 0.0;
  const char* begin = raw.data() + lo;
  const char* end = raw.data() + hi;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (lo == hi || ec != std::errc{} || ptr != end)
    throw NonNumericCell(context + ": row " + std::to_string(file_row) +
                             ", column '" + column + "': '" + raw +
                             "' is not numeric",
                         file_row, column);
  return value;
}

std::size_t find_column(const CsvTable& table, const std::string& name,
                        const std::string& context) {
  std::size_t hits = 0;
  std::size_t index = 0;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (table.columns[c] == name) {
      ++hits;
      index = c;
    }
  }
  if (hits == 0)
    throw SchemaMismatch(context + ": missing column '" + name + "'");
  if (hits > 1)
    throw SchemaMismatch(context + ": column '" + name + "' appears " +
                         std::to_string(hits) + " times");
  return index;
}

ordered_json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!fs::exists(path)) throw FileNotFound("no such file: " + path);
    throw IoError("cannot open " + path);
  }
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(path + ": invalid JSON: " + e.what());
  }
}

}  // namespace

// --- manifest ----------------------------------------------------------------

BlockManifest load_manifest(const std::string& path) {
  const ordered_json doc = read_json_file(path);
  const std::string context = "manifest " + path;
  if (!doc.is_object())
    throw SchemaMismatch(context + ": top level must be an object");
  for (const auto& key : {"response", "features", "blocks"})
    if (!doc.contains(key))
      throw SchemaMismatch(context + ": missing key '" + std::string(key) + "'");
  if (!doc["response"].is_string())
    throw SchemaMismatch(context + ": 'response' must be a string");
  if (!doc["features"].is_array() || doc["features"].empty())
    throw SchemaMismatch(context + ": 'features' must be a non-empty array");
  if (!doc["blocks"].is_array() || doc["blocks"].empty())
    throw SchemaMismatch(context + ": 'blocks' must be a non-empty array");

  BlockManifest manifest;
  manifest.response = doc["response"].get<std::string>();
  for (const auto& f : doc["features"]) {
    if (!f.is_string())
      throw SchemaMismatch(context + ": feature names must be strings");
    manifest.features.push_back(f.get<std::string>());
  }
  {
    auto sorted = manifest.features;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw SchemaMismatch(context + ": duplicate feature name");
  }
  if (std::find(manifest.features.begin(), manifest.features.end(),
                manifest.response) != manifest.features.end())
    throw SchemaMismatch(context + ": response column listed as a feature");

  const fs::path base = fs::path(path).parent_path();
  std::vector<std::int64_t> seen;
  for (const auto& entry : doc["blocks"]) {
    if (!entry.is_object() || !entry.contains("id") ||
        !entry.contains("path") || !entry["id"].is_number_integer() ||
        !entry["path"].is_string())
      throw SchemaMismatch(context +
                           ": each block needs integer 'id' and string 'path'");
    ManifestEntry me;
    me.id = entry["id"].get<std::int64_t>();
    me.path = (base / entry["path"].get<std::string>()).string();
    if (std::find(seen.begin(), seen.end(), me.id) != seen.end())
      throw SchemaMismatch(context + ": duplicate block id " +
                           std::to_string(me.id));
    seen.push_back(me.id);
    manifest.blocks.push_back(std::move(me));
  }
  return manifest;
}

std::vector<BlockData<double>> load_blocks(const BlockManifest& manifest) {
  std::vector<BlockData<double>> blocks;
  blocks.reserve(manifest.blocks.size());
  for (const auto& entry : manifest.blocks) {
    const CsvTable table = read_csv(entry.path);
    const std::string context =
        "block " + std::to_string(entry.id) + " (" + entry.path + ")";
    if (table.rows.empty())
      throw EmptyBlock(context + ": no data rows");

    const std::size_t y_col = find_column(table, manifest.response, context);
    std::vector<std::size_t> x_cols;
    x_cols.reserve(manifest.features.size());
    for (const auto& f : manifest.features)
      x_cols.push_back(find_column(table, f, context));

    BlockData<double> block;
    block.block_id = entry.id;
    const auto n = static_cast<Eigen::Index>(table.rows.size());
    const auto p = static_cast<Eigen::Index>(x_cols.size());
    block.design.resize(n, p);
    block.response.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& row = table.rows[static_cast<std::size_t>(i)];
      const long file_row = static_cast<long>(i) + 2;  // header is row 1
      block.response[i] =
          parse_cell(row[y_col], context, file_row, manifest.response);
      for (Eigen::Index j = 0; j < p; ++j)
        block.design(i, j) =
            parse_cell(row[x_cols[static_cast<std::size_t>(j)]], context,
                       file_row, manifest.features[static_cast<std::size_t>(j)]);
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

// --- test command --------------------------------------------------------------

TestCommandResult run_test_command(const TestCommandConfig& config) {
  if (!(config.alpha > 0.0 && config.alpha < 1.0))
    throw ConfigError("alpha must lie in (0, 1)");
  if (!(config.gamma > 0.0 && config.gamma < 1.0))
    throw ConfigError("gamma must lie in (0, 1)");

  TestCommandResult out;
  out.config = config;
  out.manifest = load_manifest(config.blocks_path);
  auto blocks = load_blocks(out.manifest);

  const auto k = static_cast<std::int64_t>(blocks.size());
  if (k < 2)
    throw KTooSmall("manifest lists " + std::to_string(k) +
                    " block(s); heterogeneity testing needs at least 2");

  if (config.model == ModelKind::logistic) {
    for (const auto& block : blocks) {
      for (Eigen::Index i = 0; i < block.rows(); ++i) {
        const double y = block.response[i];
        if (y != 0.0 && y != 1.0)
          throw NonBinaryResponse(
              "block " + std::to_string(block.block_id) + ": row " +
              std::to_string(i + 2) + ": response value " +
              std::to_string(y) + " is not 0 or 1");
      }
    }
  }

  Eigen::Index n_min = blocks.front().rows();
  for (const auto& block : blocks) {
    out.block_ids.push_back(block.block_id);
    out.block_sizes.push_back(block.rows());
    n_min = std::min(n_min, block.rows());
  }

  const LossModel<double> model{config.model};
  const SplitMode mode =
      config.shuffle_seed ? SplitMode::shuffle : SplitMode::prefix;
  const std::uint64_t shuffle_seed = config.shuffle_seed.value_or(0);

  std::vector<LocalFit<double>> full, first, second;
  full.reserve(blocks.size());
  first.reserve(blocks.size());
  second.reserve(blocks.size());
  for (const auto& block : blocks) {
    full.push_back(fit_block(block, model));
    auto parts = split_block(block, config.gamma, mode, shuffle_seed);
    first.push_back(fit_block(parts.first, model));
    second.push_back(fit_block(parts.second, model));
  }

  out.weight_value =
      combined_weight(static_cast<double>(n_min), k, config.weight);

  const auto p = static_cast<int>(out.manifest.features.size());
  std::vector<DimensionOutcomes<double>> outcomes;
  outcomes.reserve(static_cast<std::size_t>(p));
  bool small_sample = false;
  for (int j = 0; j < p; ++j) {
    DimensionOutcomes<double> o;
    o.dim = j + 1;
    o.wald = wald_statistic(slice_dimension(full, j), n_min);
    o.ect = ect_statistic(first, second, j, config.gamma);
    o.combined = combined_statistic(o.wald, o.ect, out.weight_value);
    small_sample = small_sample || o.wald.small_sample_warning;
    outcomes.push_back(std::move(o));
  }
  out.report = decide(outcomes, config.alpha);
  if (small_sample)
    out.warnings.push_back(
        "wald asymptotics assume K much smaller than the block sizes; here K = " +
        std::to_string(k) + " >= n_min = " + std::to_string(n_min));
  return out;
}

// --- serialization helpers ------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += '"';
  return out;
}

class CsvReport {
 public:
  void row(const std::string& entity, const std::string& dim,
           const std::string& metric, const std::string& value) {
    body_ += csv_escape(entity) + ',' + csv_escape(dim) + ',' +
             csv_escape(metric) + ',' + csv_escape(value) + '\n';
  }
  void row(const std::string& entity, const std::string& dim,
           const std::string& metric, double value) {
    row(entity, dim, metric, fmt_double(value));
  }
  std::string str() const {
    return "entity,dim,metric,value\n" + body_;
  }

 private:
  std::string body_;
};

ordered_json tool_block() {
  return ordered_json{{"name", "hetdetect"},
                      {"version", std::string(HETDETECT_VERSION)}};
}

ordered_json sim_config_json(const SimConfig& cfg) {
  ordered_json j;
  j["K"] = cfg.K;
  j["n"] = cfg.n;
  j["p"] = cfg.p;
  j["model"] = model_name(cfg.model);
  j["null_model"] = cfg.null_model;
  j["beta"] = cfg.hetero.beta;
  j["hetero_dim"] = cfg.hetero.hetero_dim;
  j["base_value"] = cfg.hetero.base_value;
  j["shift_scale"] = cfg.hetero.shift_scale;
  j["alpha"] = cfg.alpha;
  j["B"] = cfg.replicates;
  j["seed"] = cfg.seed;
  j["gamma"] = cfg.gamma;
  j["weight"] = weight_name(cfg.weight);
  j["calibration"] = calibration_name(cfg.calibration);
  j["pareto_eta"] = cfg.pareto.eta;
  j["pareto_zeta"] = cfg.pareto.zeta;
  return j;
}

void config_to_csv(CsvReport& csv, const ordered_json& cfg) {
  for (const auto& [key, value] : cfg.items()) {
    if (value.is_string())
      csv.row("config", "", key, value.get<std::string>());
    else if (value.is_boolean())
      csv.row("config", "", key, value.get<bool>() ? "true" : "false");
    else if (value.is_number_unsigned())
      csv.row("config", "", key, std::to_string(value.get<std::uint64_t>()));
    else if (value.is_number_integer())
      csv.row("config", "", key, std::to_string(value.get<std::int64_t>()));
    else if (value.is_null())
      csv.row("config", "", key, "");
    else
      csv.row("config", "", key, value.get<double>());
  }
}

ordered_json family_json(const FamilyResult& fam) {
  ordered_json j;
  j["fwer"] = fam.fwer;
  if (std::isnan(fam.power))
    j["power"] = nullptr;
  else
    j["power"] = fam.power;
  j["critical_values"] = fam.critical_values;
  return j;
}

constexpr const char* family_names[family_count] = {"wald", "ect", "combined"};

ModelKind parse_model(const std::string& name) {
  if (name == "linear") return ModelKind::linear;
  if (name == "logistic") return ModelKind::logistic;
  throw ConfigError("unknown model '" + name + "' (expected linear|logistic)");
}

WeightPreset parse_weight(const std::string& name) {
  if (name == "theory") return WeightPreset::theory;
  if (name == "simulation") return WeightPreset::simulation;
  throw ConfigError("unknown weight preset '" + name +
                    "' (expected theory|simulation)");
}

CalibrationMode parse_calibration(const std::string& name) {
  if (name == "nominal") return CalibrationMode::nominal;
  if (name == "empirical" || name == "empirical-critical-values")
    return CalibrationMode::empirical;
  throw ConfigError("unknown calibration mode '" + name +
                    "' (expected nominal|empirical-critical-values)");
}

}  // namespace

// --- test report -----------------------------------------------------------------

std::string render_test_report(const TestCommandResult& result,
                               ReportFormat format) {
  const auto& cfg = result.config;
  const auto& rep = result.report;
  const auto p = static_cast<int>(result.manifest.features.size());

  Eigen::Index n_min = 0;
  Eigen::Index n_total = 0;
  for (std::size_t i = 0; i < result.block_sizes.size(); ++i) {
    const Eigen::Index sz = result.block_sizes[i];
    n_min = i == 0 ? sz : std::min(n_min, sz);
    n_total += sz;
  }

  if (format == ReportFormat::json) {
    ordered_json j;
    j["schema"] = report_schema;
    j["tool"] = tool_block();
    j["command"] = "test";
    ordered_json jc;
    jc["blocks"] = cfg.blocks_path;
    jc["model"] = model_name(cfg.model);
    jc["alpha"] = cfg.alpha;
    jc["gamma"] = cfg.gamma;
    jc["weight"] = weight_name(cfg.weight);
    jc["split"] = cfg.shuffle_seed ? "shuffle" : "prefix";
    if (cfg.shuffle_seed)
      jc["shuffle_seed"] = *cfg.shuffle_seed;
    else
      jc["shuffle_seed"] = nullptr;
    j["config"] = jc;
    ordered_json jd;
    jd["K"] = result.block_ids.size();
    jd["p"] = p;
    jd["n_min"] = n_min;
    jd["n_total"] = n_total;
    jd["block_ids"] = result.block_ids;
    jd["block_sizes"] = result.block_sizes;
    jd["response"] = result.manifest.response;
    jd["features"] = result.manifest.features;
    j["data"] = jd;
    j["weight_value"] = result.weight_value;
    j["per_test_alpha"] = rep.per_test_alpha;
    j["threshold"] = rep.threshold;
    j["dimensions"] = ordered_json::array();
    for (const auto& o : rep.per_dim) {
      ordered_json od;
      od["dim"] = o.dim;
      od["feature"] = result.manifest.features[static_cast<std::size_t>(o.dim - 1)];
      od["wald"] = ordered_json{{"statistic", o.wald.statistic},
                                {"p_value", o.wald.p_value},
                                {"quad_form", o.wald.quad_form},
                                {"df_equiv", o.wald.df_equiv},
                                {"small_sample_warning",
                                 o.wald.small_sample_warning}};
      od["ect"] = ordered_json{{"statistic", o.ect.statistic},
                               {"p_value", o.ect.p_value},
                               {"k_max", o.ect.k_max},
                               {"k_min", o.ect.k_min},
                               {"gamma", o.ect.gamma}};
      od["combined"] = ordered_json{{"statistic", o.combined.statistic},
                                    {"p_value", o.combined.p_value},
                                    {"weight", o.combined.weight}};
      j["dimensions"].push_back(od);
    }
    j["extremes"] = ordered_json::array();
    for (const auto& o : rep.per_dim)
      j["extremes"].push_back(ordered_json{
          {"dim", o.dim},
          {"feature",
           result.manifest.features[static_cast<std::size_t>(o.dim - 1)]},
          {"k_max", o.ect.k_max},
          {"k_min", o.ect.k_min}});
    ordered_json jr;
    for (const auto* fam : family_names) jr[fam] = rep.rejected.at(fam);
    j["rejected"] = jr;
    j["warnings"] = result.warnings;
    return j.dump(2) + "\n";
  }

  CsvReport csv;
  csv.row("tool", "", "version", std::string(HETDETECT_VERSION));
  csv.row("config", "", "blocks", cfg.blocks_path);
  csv.row("config", "", "model", model_name(cfg.model));
  csv.row("config", "", "alpha", cfg.alpha);
  csv.row("config", "", "gamma", cfg.gamma);
  csv.row("config", "", "weight", weight_name(cfg.weight));
  csv.row("config", "", "split", cfg.shuffle_seed ? "shuffle" : "prefix");
  if (cfg.shuffle_seed)
    csv.row("config", "", "shuffle_seed", std::to_string(*cfg.shuffle_seed));
  csv.row("data", "", "K", std::to_string(result.block_ids.size()));
  csv.row("data", "", "p", std::to_string(p));
  csv.row("data", "", "n_min", std::to_string(n_min));
  csv.row("data", "", "n_total", std::to_string(n_total));
  csv.row("decision", "", "per_test_alpha", rep.per_test_alpha);
  csv.row("decision", "", "threshold", rep.threshold);
  csv.row("decision", "", "weight_value", result.weight_value);
  for (const auto& o : rep.per_dim) {
    const std::string dim = std::to_string(o.dim);
    csv.row("wald", dim, "statistic", o.wald.statistic);
    csv.row("wald", dim, "p_value", o.wald.p_value);
    csv.row("wald", dim, "quad_form", o.wald.quad_form);
    csv.row("ect", dim, "statistic", o.ect.statistic);
    csv.row("ect", dim, "p_value", o.ect.p_value);
    csv.row("ect", dim, "k_max", std::to_string(o.ect.k_max));
    csv.row("ect", dim, "k_min", std::to_string(o.ect.k_min));
    csv.row("combined", dim, "statistic", o.combined.statistic);
    csv.row("combined", dim, "p_value", o.combined.p_value);
  }
  for (const auto* fam : family_names) {
    const auto& dims = rep.rejected.at(fam);
    for (const auto& o : rep.per_dim) {
      const bool rej =
          std::find(dims.begin(), dims.end(), o.dim) != dims.end();
      csv.row(fam, std::to_string(o.dim), "reject", rej ? "1" : "0");
    }
  }
  return csv.str();
}

// --- simulate / coverage reports ---------------------------------------------------

std::string render_sim_report(const SimResult& result, ReportFormat format) {
  if (format == ReportFormat::json) {
    ordered_json j;
    j["schema"] = report_schema;
    j["tool"] = tool_block();
    j["command"] = "simulate";
    j["config"] = sim_config_json(result.config);
    ordered_json jr;
    jr["requested"] = result.requested;
    jr["used"] = result.used;
    jr["discarded"] = result.discarded;
    jr["discard_reasons"] = result.discard_reasons;
    jr["hetero_replicates"] = result.hetero_replicates;
    ordered_json jf;
    jf["wald"] = family_json(result.wald);
    jf["ect"] = family_json(result.ect);
    jf["combined"] = family_json(result.combined);
    jr["families"] = jf;
    j["result"] = jr;
    return j.dump(2) + "\n";
  }

  CsvReport csv;
  csv.row("tool", "", "version", std::string(HETDETECT_VERSION));
  config_to_csv(csv, sim_config_json(result.config));
  csv.row("replicates", "", "requested", std::to_string(result.requested));
  csv.row("replicates", "", "used", std::to_string(result.used));
  csv.row("replicates", "", "discarded", std::to_string(result.discarded));
  csv.row("replicates", "", "hetero_replicates",
          std::to_string(result.hetero_replicates));
  for (const auto& [reason, count] : result.discard_reasons)
    csv.row("discard", "", reason, std::to_string(count));
  const FamilyResult* families[family_count] = {&result.wald, &result.ect,
                                                &result.combined};
  for (int f = 0; f < family_count; ++f) {
    csv.row(family_names[f], "", "fwer", families[f]->fwer);
    csv.row(family_names[f], "", "power", families[f]->power);
    for (std::size_t j = 0; j < families[f]->critical_values.size(); ++j)
      csv.row(family_names[f], std::to_string(j + 1), "critical_value",
              families[f]->critical_values[j]);
  }
  return csv.str();
}

std::string render_coverage_report(const CoverageTable& table,
                                   ReportFormat format) {
  if (format == ReportFormat::json) {
    ordered_json j;
    j["schema"] = report_schema;
    j["tool"] = tool_block();
    j["command"] = "coverage";
    j["config"] = sim_config_json(table.config);
    ordered_json jr;
    jr["requested"] = table.requested;
    jr["used"] = table.used;
    jr["discarded"] = table.discarded;
    jr["discard_reasons"] = table.discard_reasons;
    jr["levels"] = table.levels;
    jr["wald"] = table.wald;
    jr["combined"] = table.combined;
    j["result"] = jr;
    return j.dump(2) + "\n";
  }

  CsvReport csv;
  csv.row("tool", "", "version", std::string(HETDETECT_VERSION));
  config_to_csv(csv, sim_config_json(table.config));
  csv.row("replicates", "", "requested", std::to_string(table.requested));
  csv.row("replicates", "", "used", std::to_string(table.used));
  csv.row("replicates", "", "discarded", std::to_string(table.discarded));
  for (const auto& [reason, count] : table.discard_reasons)
    csv.row("discard", "", reason, std::to_string(count));
  for (std::size_t i = 0; i < table.levels.size(); ++i) {
    const std::string level = fmt_double(table.levels[i]);
    csv.row("wald", "", "coverage@" + level, table.wald[i]);
    csv.row("combined", "", "coverage@" + level, table.combined[i]);
  }
  return csv.str();
}

// --- power-calc / gamma-opt reports ---------------------------------------------

std::string render_power_report(const PowerCalcResult& result,
                                ReportFormat format) {
  if (format == ReportFormat::json) {
    ordered_json j;
    j["schema"] = report_schema;
    j["tool"] = tool_block();
    j["command"] = "power-calc";
    j["config"] = ordered_json{{"K", result.alt.K},
                               {"n", result.alt.n},
                               {"beta", result.alt.beta},
                               {"c", result.alt.c},
                               {"sigma", result.alt.sigma},
                               {"gamma", result.alt.gamma},
                               {"sigma_minus", result.sigma_minus},
                               {"sigma_plus", result.sigma_plus}};
    ordered_json jr;
    jr["detection_boundary"] = result.boundary;
    jr["snr_wald"] = result.snr_wald_value;
    jr["snr_ect"] = ordered_json{{"value", result.snr_ect_value.value},
                                 {"valid", result.snr_ect_value.valid}};
    jr["regimes"] = ordered_json{{"wald", regime_name(result.verdict.wald)},
                                 {"ect", regime_name(result.verdict.ect)},
                                 {"combined",
                                  regime_name(result.verdict.combined)}};
    j["result"] = jr;
    return j.dump(2) + "\n";
  }

  CsvReport csv;
  csv.row("tool", "", "version", std::string(HETDETECT_VERSION));
  csv.row("config", "", "K", std::to_string(result.alt.K));
  csv.row("config", "", "n", std::to_string(result.alt.n));
  csv.row("config", "", "beta", result.alt.beta);
  csv.row("config", "", "c", result.alt.c);
  csv.row("config", "", "sigma", result.alt.sigma);
  csv.row("config", "", "gamma", result.alt.gamma);
  csv.row("config", "", "sigma_minus", result.sigma_minus);
  csv.row("config", "", "sigma_plus", result.sigma_plus);
  csv.row("power", "", "detection_boundary", result.boundary);
  csv.row("power", "", "snr_wald", result.snr_wald_value);
  csv.row("power", "", "snr_ect", result.snr_ect_value.value);
  csv.row("power", "", "snr_ect_valid", result.snr_ect_value.valid ? "1" : "0");
  csv.row("regime", "", "wald", regime_name(result.verdict.wald));
  csv.row("regime", "", "ect", regime_name(result.verdict.ect));
  csv.row("regime", "", "combined", regime_name(result.verdict.combined));
  return csv.str();
}

std::string render_gamma_report(const GammaOptResult& result,
                                ReportFormat format) {
  if (format == ReportFormat::json) {
    ordered_json j;
    j["schema"] = report_schema;
    j["tool"] = tool_block();
    j["command"] = "gamma-opt";
    j["config"] = ordered_json{{"n", result.n},
                               {"mu", result.mu},
                               {"K", result.K},
                               {"step", result.step}};
    j["result"] = ordered_json{{"gamma", result.recommendation.gamma},
                               {"log_error", result.recommendation.log_error}};
    return j.dump(2) + "\n";
  }

  CsvReport csv;
  csv.row("tool", "", "version", std::string(HETDETECT_VERSION));
  csv.row("config", "", "n", result.n);
  csv.row("config", "", "mu", result.mu);
  csv.row("config", "", "K", std::to_string(result.K));
  csv.row("config", "", "step", result.step);
  csv.row("gamma", "", "recommended", result.recommendation.gamma);
  csv.row("gamma", "", "log_error", result.recommendation.log_error);
  return csv.str();
}

// --- SimConfig parsing -------------------------------------------------------------

namespace {

SimConfig sim_config_from_json(const ordered_json& doc,
                               const std::string& context) {
  if (!doc.is_object())
    throw SchemaMismatch(context + ": config must be a JSON object");
  static const std::vector<std::string> known = {
      "K", "n", "p", "model", "null_model", "beta", "hetero_dim",
      "base_value", "shift_scale", "alpha", "B", "seed", "gamma",
      "weight", "calibration", "pareto_eta", "pareto_zeta"};
  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw SchemaMismatch(context + ": unknown config key '" + key + "'");
  }

  SimConfig cfg;
  try {
    if (doc.contains("K")) cfg.K = doc["K"].get<std::int64_t>();
    if (doc.contains("n")) cfg.n = doc["n"].get<std::int64_t>();
    if (doc.contains("p")) cfg.p = doc["p"].get<int>();
    if (doc.contains("model"))
      cfg.model = parse_model(doc["model"].get<std::string>());
    if (doc.contains("null_model"))
      cfg.null_model = doc["null_model"].get<bool>();
    if (doc.contains("beta")) cfg.hetero.beta = doc["beta"].get<double>();
    if (doc.contains("hetero_dim"))
      cfg.hetero.hetero_dim = doc["hetero_dim"].get<int>();
    if (doc.contains("base_value"))
      cfg.hetero.base_value = doc["base_value"].get<double>();
    if (doc.contains("shift_scale"))
      cfg.hetero.shift_scale = doc["shift_scale"].get<double>();
    if (doc.contains("alpha")) cfg.alpha = doc["alpha"].get<double>();
    if (doc.contains("B")) cfg.replicates = doc["B"].get<int>();
    if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("gamma")) cfg.gamma = doc["gamma"].get<double>();
    if (doc.contains("weight"))
      cfg.weight = parse_weight(doc["weight"].get<std::string>());
    if (doc.contains("calibration"))
      cfg.calibration =
          parse_calibration(doc["calibration"].get<std::string>());
    if (doc.contains("pareto_eta"))
      cfg.pareto.eta = doc["pareto_eta"].get<double>();
    if (doc.contains("pareto_zeta"))
      cfg.pareto.zeta = doc["pareto_zeta"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(context + ": bad config value: " + e.what());
  }
  return cfg;
}

}  // namespace

SimConfig parse_sim_config(const std::string& json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("config: invalid JSON: ") + e.what());
  }
  return sim_config_from_json(doc, "config");
}

SimConfig load_sim_config(const std::string& path) {
  return sim_config_from_json(read_json_file(path), "config " + path);
}

SimResult parse_sim_report(const std::string& json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("report: invalid JSON: ") + e.what());
  }
  try {
    if (doc.at("schema").get<std::string>() != report_schema)
      throw SchemaMismatch("report: unknown schema");
    SimResult result;
    result.config = sim_config_from_json(doc.at("config"), "report config");
    const auto& jr = doc.at("result");
    result.requested = jr.at("requested").get<int>();
    result.used = jr.at("used").get<int>();
    result.discarded = jr.at("discarded").get<int>();
    for (const auto& [reason, count] : jr.at("discard_reasons").items())
      result.discard_reasons[reason] = count.get<int>();
    result.hetero_replicates = jr.at("hetero_replicates").get<int>();
    FamilyResult* families[family_count] = {&result.wald, &result.ect,
                                            &result.combined};
    for (int f = 0; f < family_count; ++f) {
      const auto& jf = jr.at("families").at(family_names[f]);
      families[f]->fwer = jf.at("fwer").get<double>();
      families[f]->power =
          jf.at("power").is_null()
              ? std::numeric_limits<double>::quiet_NaN()
              : jf.at("power").get<double>();
      families[f]->critical_values =
          jf.at("critical_values").get<std::vector<double>>();
    }
    return result;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("report: missing field: ") + e.what());
  }
}

void write_output(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open output file " + path);
  out << text;
  if (!out) throw IoError("failed writing output file " + path);
}

}  // namespace hetdet
