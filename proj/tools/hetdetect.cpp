#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hetdet/hetdet.hpp"
#include "hetdet/io.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

hetdet::ModelKind to_model(const std::string& name) {
  return name == "linear" ? hetdet::ModelKind::linear
                          : hetdet::ModelKind::logistic;
}

hetdet::WeightPreset to_weight(const std::string& name) {
  return name == "theory" ? hetdet::WeightPreset::theory
                          : hetdet::WeightPreset::simulation;
}

hetdet::ReportFormat to_format(const std::string& name) {
  return name == "csv" ? hetdet::ReportFormat::csv
                       : hetdet::ReportFormat::json;
}

int threads_from_env() {
  const char* env = std::getenv("HETDETECT_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  const long value = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || value < 0)
    throw hetdet::ConfigError("HETDETECT_THREADS must be a non-negative "
                              "integer, got '" +
                              std::string(env) + "'");
  return static_cast<int>(value);
}

void log_elapsed(const std::string& command, double elapsed) {
  std::cerr << "hetdetect: " << command << " finished, elapsed_seconds="
            << elapsed << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heterogeneity tests for parameters estimated on distributed "
               "data blocks"};
  app.set_version_flag("--version", hetdet::tool_version());
  app.require_subcommand(1);

  const std::vector<std::string> models = {"linear", "logistic"};
  const std::vector<std::string> weights = {"theory", "simulation"};
  const std::vector<std::string> formats = {"json", "csv"};

  // test
  std::string t_blocks, t_model = "logistic", t_weight = "theory";
  std::string t_out, t_format = "json";
  double t_alpha = 0.05, t_gamma = 2.0 / 3.0;
  std::uint64_t t_shuffle = 0;
  auto* test = app.add_subcommand(
      "test", "run the Wald, extreme contrast, and combined tests on CSV "
              "blocks listed in a manifest");
  test->add_option("--blocks", t_blocks, "JSON manifest describing the blocks")
      ->required();
  test->add_option("--model", t_model, "regression model")
      ->check(CLI::IsMember(models))
      ->capture_default_str();
  test->add_option("--alpha", t_alpha, "family-wise level")
      ->capture_default_str();
  test->add_option("--gamma", t_gamma, "contrast split fraction")
      ->capture_default_str();
  test->add_option("--weight", t_weight, "combined-statistic weight preset")
      ->check(CLI::IsMember(weights))
      ->capture_default_str();
  auto* t_shuffle_opt = test->add_option(
      "--shuffle-seed", t_shuffle,
      "shuffle rows with this seed before splitting (default: prefix split)");
  test->add_option("--out", t_out, "output path (default: stdout)");
  test->add_option("--format", t_format, "output format")
      ->check(CLI::IsMember(formats))
      ->capture_default_str();

  // simulate / coverage share their option set
  struct SimFlags {
    std::string config_path, model = "linear", weight = "theory";
    std::string out, format = "json";
    double alpha = 0.05, gamma = 2.0 / 3.0;
    std::uint64_t seed = 1;
    int threads = 0;
    CLI::Option* model_opt = nullptr;
    CLI::Option* alpha_opt = nullptr;
    CLI::Option* gamma_opt = nullptr;
    CLI::Option* weight_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* threads_opt = nullptr;
  };
  auto add_sim_flags = [&](CLI::App* cmd, SimFlags& f) {
    cmd->add_option("--config", f.config_path,
                    "experiment configuration JSON file");
    f.model_opt = cmd->add_option("--model", f.model, "regression model")
                      ->check(CLI::IsMember(models));
    f.alpha_opt = cmd->add_option("--alpha", f.alpha, "family-wise level");
    f.gamma_opt =
        cmd->add_option("--gamma", f.gamma, "contrast split fraction");
    f.weight_opt =
        cmd->add_option("--weight", f.weight, "combined weight preset")
            ->check(CLI::IsMember(weights));
    f.seed_opt = cmd->add_option("--seed", f.seed, "master seed");
    f.threads_opt = cmd->add_option(
        "--threads", f.threads,
        "worker threads (0 = auto; env HETDETECT_THREADS as fallback)");
    cmd->add_option("--out", f.out, "output path (default: stdout)");
    cmd->add_option("--format", f.format, "output format")
        ->check(CLI::IsMember(formats));
  };

  SimFlags sf;
  auto* simulate = app.add_subcommand(
      "simulate", "Monte Carlo size/power experiment over synthetic blocks");
  add_sim_flags(simulate, sf);

  SimFlags cf;
  std::vector<double> c_levels = {0.95, 0.9, 0.1, 0.05};
  auto* coverage = app.add_subcommand(
      "coverage", "null coverage of the Wald and combined statistics against "
                  "normal quantiles");
  add_sim_flags(coverage, cf);
  coverage->add_option("--level", c_levels, "nominal level(s) to tabulate")
      ->capture_default_str();

  // power-calc
  std::int64_t p_K = 0, p_n = 500;
  double p_beta = 0.0, p_c = 0.0, p_sigma = 1.0, p_gamma = 2.0 / 3.0;
  double p_sigma_minus = 0.0, p_sigma_plus = 0.0;
  std::string p_out, p_format = "json";
  auto* power = app.add_subcommand(
      "power-calc", "asymptotic detection boundary, SNR approximations, and "
                    "consistency regimes for a local alternative");
  power->add_option("--K", p_K, "number of blocks")->required();
  power->add_option("--beta", p_beta, "sparsity level in (0,1)")->required();
  power->add_option("--c", p_c, "signal strength constant")->required();
  power->add_option("--n", p_n, "per-block sample size (contextual)")
      ->capture_default_str();
  power->add_option("--sigma", p_sigma, "per-coordinate SD")
      ->capture_default_str();
  auto* p_sm = power->add_option("--sigma-minus", p_sigma_minus,
                                 "lower SD envelope (default: --sigma)");
  auto* p_sp = power->add_option("--sigma-plus", p_sigma_plus,
                                 "upper SD envelope (default: --sigma)");
  power->add_option("--gamma", p_gamma, "contrast split fraction")
      ->capture_default_str();
  power->add_option("--out", p_out, "output path (default: stdout)");
  power->add_option("--format", p_format, "output format")
      ->check(CLI::IsMember(formats))
      ->capture_default_str();

  // gamma-opt
  double g_n = 0.0, g_mu = 0.0, g_step = 0.01;
  std::int64_t g_K = 0;
  std::string g_out, g_format = "json";
  auto* gopt = app.add_subcommand(
      "gamma-opt", "recommend a split fraction by minimizing the selection "
                   "error bound");
  gopt->add_option("--n", g_n, "per-block sample size")->required();
  gopt->add_option("--mu", g_mu, "standardized shift magnitude")->required();
  gopt->add_option("--K", g_K, "number of blocks")->required();
  gopt->add_option("--step", g_step, "grid resolution")->capture_default_str();
  gopt->add_option("--out", g_out, "output path (default: stdout)");
  gopt->add_option("--format", g_format, "output format")
      ->check(CLI::IsMember(formats))
      ->capture_default_str();

  try {
    app.parse(argc, argv);

    if (*test) {
      const auto t0 = Clock::now();
      hetdet::TestCommandConfig cfg;
      cfg.blocks_path = t_blocks;
      cfg.model = to_model(t_model);
      cfg.alpha = t_alpha;
      cfg.gamma = t_gamma;
      cfg.weight = to_weight(t_weight);
      if (t_shuffle_opt->count() > 0) cfg.shuffle_seed = t_shuffle;
      const auto result = hetdet::run_test_command(cfg);
      hetdet::write_output(
          hetdet::render_test_report(result, to_format(t_format)), t_out);
      log_elapsed("test", seconds_since(t0));
      return 0;
    }

    auto build_sim_config = [&](const SimFlags& f) {
      hetdet::SimConfig cfg;
      if (!f.config_path.empty()) cfg = hetdet::load_sim_config(f.config_path);
      if (f.model_opt->count() > 0) cfg.model = to_model(f.model);
      if (f.alpha_opt->count() > 0) cfg.alpha = f.alpha;
      if (f.gamma_opt->count() > 0) cfg.gamma = f.gamma;
      if (f.weight_opt->count() > 0) cfg.weight = to_weight(f.weight);
      if (f.seed_opt->count() > 0) cfg.seed = f.seed;
      return cfg;
    };
    auto resolve_threads = [&](const SimFlags& f) {
      return f.threads_opt->count() > 0 ? f.threads : threads_from_env();
    };

    if (*simulate) {
      const auto cfg = build_sim_config(sf);
      const auto result = hetdet::run_experiment(cfg, resolve_threads(sf));
      hetdet::write_output(
          hetdet::render_sim_report(result, to_format(sf.format)), sf.out);
      log_elapsed("simulate", result.elapsed_seconds);
      return 0;
    }

    if (*coverage) {
      const auto cfg = build_sim_config(cf);
      const auto table =
          hetdet::coverage_table(cfg, c_levels, resolve_threads(cf));
      hetdet::write_output(
          hetdet::render_coverage_report(table, to_format(cf.format)), cf.out);
      log_elapsed("coverage", table.elapsed_seconds);
      return 0;
    }

    if (*power) {
      const auto t0 = Clock::now();
      hetdet::PowerCalcResult result;
      result.alt = hetdet::LocalAlternative{p_K, p_n, p_beta, p_c, p_sigma,
                                            p_gamma};
      result.sigma_minus = p_sm->count() > 0 ? p_sigma_minus : p_sigma;
      result.sigma_plus = p_sp->count() > 0 ? p_sigma_plus : p_sigma;
      result.boundary = hetdet::detection_boundary(p_beta);
      result.snr_wald_value = hetdet::snr_wald(result.alt);
      result.snr_ect_value = hetdet::snr_ect(result.alt);
      result.verdict = hetdet::classify_regime(result.alt, result.sigma_minus,
                                               result.sigma_plus);
      hetdet::write_output(
          hetdet::render_power_report(result, to_format(p_format)), p_out);
      log_elapsed("power-calc", seconds_since(t0));
      return 0;
    }

    if (*gopt) {
      const auto t0 = Clock::now();
      hetdet::GammaOptResult result;
      result.n = g_n;
      result.mu = g_mu;
      result.K = g_K;
      result.step = g_step;
      result.recommendation =
          hetdet::gamma_recommendation(g_n, g_mu, g_K, g_step);
      hetdet::write_output(
          hetdet::render_gamma_report(result, to_format(g_format)), g_out);
      log_elapsed("gamma-opt", seconds_since(t0));
      return 0;
    }

    std::cerr << "hetdetect: no subcommand selected\n";
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const hetdet::Error& e) {
    std::cerr << "hetdetect: error [" << e.code() << "]: " << e.what() << "\n";
    return hetdet::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "hetdetect: unexpected error: " << e.what() << "\n";
    return 4;
  }
}
