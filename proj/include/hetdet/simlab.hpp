#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "hetdet/errors.hpp"
#include "hetdet/glm.hpp"
#include "hetdet/inference.hpp"
#include "hetdet/normal.hpp"
#include "hetdet/rng.hpp"

// Monte Carlo lab: Pareto designs, sparse per-coordinate heterogeneity
// injection, and a replicated experiment harness measuring FWER, power, and
// null coverage of the three tests, with optional empirical critical-value
// calibration. Replicates are independent work items; every random draw is
// keyed by (seed, phase, replicate, block), so results are bit-identical
// across runs and across thread counts.

namespace hetdet {

struct ParetoSpec {
  double eta = 4.1;   // shape, > 0
  double zeta = 2.0;  // scale (support starts here), > 0

  double mean() const { return eta * zeta / (eta - 1.0); }  // needs eta > 1

  friend bool operator==(const ParetoSpec&, const ParetoSpec&) = default;
};

// inverse-CDF transform of u in (0,1]
inline double pareto_from_uniform(const ParetoSpec& spec, double u) {
  return spec.zeta * std::pow(u, -1.0 / spec.eta);
}

inline double pareto_sample(const ParetoSpec& spec, CounterRng& rng) {
  return pareto_from_uniform(spec, rng.uniform01());
}

struct HeterogeneitySpec {
  double beta = 0.5;        // sparsity level in (0, 1]
  int hetero_dim = 0;       // 1-based coordinate that may shift; 0 -> last
  double base_value = 1.0;
  double shift_scale = 4.5;

  int resolved_dim(int p) const { return hetero_dim == 0 ? p : hetero_dim; }

  friend bool operator==(const HeterogeneitySpec&,
                         const HeterogeneitySpec&) = default;
};

struct ParamSet {
  Eigen::MatrixXd thetas;      // p x K, one column per block
  int hetero_dim = 0;          // 1-based
  double shift = 0.0;          // applied shift magnitude
  int shifted_count = 0;
  bool hetero_present = false; // true iff >= 2 distinct realized values
};

inline ParamSet homogeneous_params(int p, std::int64_t k, double base_value) {
  ParamSet out;
  out.thetas = Eigen::MatrixXd::Constant(p, k, base_value);
  return out;
}

// Each block independently receives base + shift with probability K^{-beta}
// on the chosen coordinate. The set of truly heterogeneous coordinates is
// {hetero_dim} only when at least two distinct values are realized; all-zero
// or all-shifted draws leave the coordinate homogeneous in truth.
inline ParamSet gen_params(const HeterogeneitySpec& spec, std::int64_t k,
                           std::int64_t n, int p, CounterRng rng) {
  if (!(spec.beta > 0.0 && spec.beta <= 1.0))
    throw DomainError("gen_params: beta must lie in (0, 1]");
  if (p < 1 || k < 1 || n < 1)
    throw DomainError("gen_params: need p, K, n >= 1");
  const int dim = spec.resolved_dim(p);
  if (dim < 1 || dim > p)
    throw DomainError("gen_params: hetero_dim out of range");

  ParamSet out = homogeneous_params(p, k, spec.base_value);
  out.hetero_dim = dim;
  const double kd = static_cast<double>(k);
  const double prob = std::pow(kd, -spec.beta);
  out.shift = spec.shift_scale * std::pow(kd, (spec.beta - 0.5) / 2.0) /
              std::sqrt(static_cast<double>(n));
  for (std::int64_t j = 0; j < k; ++j) {
    if (rng.bernoulli(prob)) {
      out.thetas(dim - 1, j) += out.shift;
      ++out.shifted_count;
    }
  }
  out.hetero_present = out.shifted_count > 0 &&
                       out.shifted_count < static_cast<int>(k);
  return out;
}

// Covariates are i.i.d. Pareto per coordinate. Linear responses add centered
// Pareto noise (draw minus the exact mean); logistic responses are Bernoulli
// with success probability sigmoid(x' theta).
inline BlockData<double> gen_block(const Eigen::VectorXd& theta,
                                   ModelKind model, std::int64_t n,
                                   const ParetoSpec& pareto, CounterRng rng) {
  if (n < 1) throw DomainError("gen_block: need n >= 1");
  const auto p = theta.size();
  BlockData<double> block;
  block.design.resize(n, p);
  block.response.resize(n);
  const double noise_center = pareto.mean();
  for (std::int64_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j)
      block.design(i, j) = pareto_sample(pareto, rng);
    const double eta = block.design.row(i).dot(theta);
    if (model == ModelKind::linear)
      block.response[i] = eta + (pareto_sample(pareto, rng) - noise_center);
    else
      block.response[i] =
          rng.bernoulli(detail::sigmoid(eta)) ? 1.0 : 0.0;
  }
  return block;
}

enum class CalibrationMode { nominal, empirical };

inline const char* calibration_name(CalibrationMode mode) {
  return mode == CalibrationMode::nominal ? "nominal"
                                          : "empirical-critical-values";
}

struct SimConfig {
  std::int64_t K = 10;
  std::int64_t n = 500;
  int p = 3;
  ModelKind model = ModelKind::linear;
  bool null_model = true;      // no coordinate shifts anywhere
  HeterogeneitySpec hetero;    // used when null_model is false
  double alpha = 0.05;
  int replicates = 500;        // B
  std::uint64_t seed = 1;
  double gamma = 2.0 / 3.0;
  WeightPreset weight = WeightPreset::theory;
  CalibrationMode calibration = CalibrationMode::nominal;
  ParetoSpec pareto;

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

struct FamilyResult {
  double fwer = 0.0;  // fraction of usable replicates with a false rejection
  double power = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> critical_values;  // per coordinate, as applied

  friend bool operator==(const FamilyResult& a, const FamilyResult& b) {
    const bool power_same =
        (std::isnan(a.power) && std::isnan(b.power)) || a.power == b.power;
    return a.fwer == b.fwer && power_same &&
           a.critical_values == b.critical_values;
  }
};

struct SimResult {
  SimConfig config;
  int requested = 0;
  int used = 0;
  int discarded = 0;
  std::map<std::string, int> discard_reasons;
  int hetero_replicates = 0;  // usable replicates whose truth set is nonempty
  FamilyResult wald, ect, combined;
  double elapsed_seconds = 0.0;  // not serialized; reports stay byte-stable

  friend bool operator==(const SimResult& a, const SimResult& b) {
    return a.config == b.config && a.requested == b.requested &&
           a.used == b.used && a.discarded == b.discarded &&
           a.discard_reasons == b.discard_reasons &&
           a.hetero_replicates == b.hetero_replicates && a.wald == b.wald &&
           a.ect == b.ect && a.combined == b.combined;
  }
};

constexpr int family_count = 3;  // wald, ect, combined in that order

namespace detail {

struct RepOutcome {
  bool used = false;
  std::string discard_reason;
  bool hetero_present = false;
  Eigen::MatrixXd stats;  // family_count x p
};

inline void validate_config(const SimConfig& cfg) {
  if (cfg.K < 2) throw KTooSmall("simulation needs K >= 2 blocks");
  if (cfg.n < 1 || cfg.p < 1)
    throw ConfigError("simulation needs n >= 1 and p >= 1");
  if (cfg.replicates < 1) throw ConfigError("replicate count must be >= 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw ConfigError("alpha must lie in (0, 1)");
  if (!(cfg.gamma > 0.0 && cfg.gamma < 1.0))
    throw ConfigError("gamma must lie in (0, 1)");
  if (!cfg.null_model && !(cfg.hetero.beta > 0.0 && cfg.hetero.beta <= 1.0))
    throw ConfigError("beta must lie in (0, 1]");
  if (!(cfg.pareto.eta > 1.0) || !(cfg.pareto.zeta > 0.0))
    throw ConfigError("pareto spec needs eta > 1 and zeta > 0");
  // fail fast: the split is the same arithmetic for every block
  const auto first_n = static_cast<std::int64_t>(
      std::floor((1.0 - cfg.gamma) * static_cast<double>(cfg.n) + 1e-9));
  if (first_n < cfg.p || cfg.n - first_n < cfg.p)
    throw SplitTooSmall("n = " + std::to_string(cfg.n) + " with gamma = " +
                        std::to_string(cfg.gamma) +
                        " leaves a split part smaller than p = " +
                        std::to_string(cfg.p));
}

inline RepOutcome one_replicate(const SimConfig& cfg, bool force_null,
                                CounterRng rep_rng) {
  RepOutcome out;
  out.stats.setConstant(family_count, cfg.p,
                        std::numeric_limits<double>::quiet_NaN());
  try {
    ParamSet params =
        (cfg.null_model || force_null)
            ? homogeneous_params(cfg.p, cfg.K, cfg.hetero.base_value)
            : gen_params(cfg.hetero, cfg.K, cfg.n, cfg.p, rep_rng.split(0));

    const LossModel<double> model{cfg.model};
    std::vector<LocalFit<double>> full, first, second;
    full.reserve(cfg.K);
    first.reserve(cfg.K);
    second.reserve(cfg.K);
    for (std::int64_t k = 0; k < cfg.K; ++k) {
      BlockData<double> block =
          gen_block(params.thetas.col(k), cfg.model, cfg.n, cfg.pareto,
                    rep_rng.split(static_cast<std::uint64_t>(k) + 1));
      block.block_id = k + 1;
      full.push_back(fit_block(block, model));
      auto parts = split_block(block, cfg.gamma, SplitMode::prefix);
      first.push_back(fit_block(parts.first, model));
      second.push_back(fit_block(parts.second, model));
    }

    const double r = combined_weight(static_cast<double>(cfg.n), cfg.K,
                                     cfg.weight);
    for (int j = 0; j < cfg.p; ++j) {
      const auto slice = slice_dimension(full, j);
      const auto wald = wald_statistic(slice, cfg.n);
      const auto ect = ect_statistic(first, second, j, cfg.gamma);
      const auto comb = combined_statistic(wald, ect, r);
      out.stats(0, j) = wald.statistic;
      out.stats(1, j) = ect.statistic;
      out.stats(2, j) = comb.statistic;
    }
    out.hetero_present = params.hetero_present;
    out.used = true;
  } catch (const Error& e) {
    out.used = false;
    out.discard_reason = e.code();
  }
  return out;
}

inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Replicate r of phase `phase` always uses the stream seed.split(phase)
// .split(r) no matter which worker picks it up; outcomes land in a slot
// indexed by r and every aggregation below walks them in order.
inline std::vector<RepOutcome> run_phase(const SimConfig& cfg,
                                         std::uint64_t phase, bool force_null,
                                         int threads) {
  const CounterRng phase_rng = CounterRng(cfg.seed).split(phase);
  std::vector<RepOutcome> outcomes(static_cast<std::size_t>(cfg.replicates));
  std::atomic<int> next{0};
  auto work = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= cfg.replicates) return;
      outcomes[static_cast<std::size_t>(r)] = one_replicate(
          cfg, force_null, phase_rng.split(static_cast<std::uint64_t>(r)));
    }
  };
  const int nthreads = std::min(resolve_threads(threads), cfg.replicates);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nthreads - 1));
  for (int t = 0; t < nthreads - 1; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return outcomes;
}

// empirical (1 - alpha / p)-quantile per family and coordinate: the
// ceil(B (1 - alpha/p))-th order statistic of the usable null statistics
inline Eigen::MatrixXd empirical_criticals(
    const std::vector<RepOutcome>& null_outcomes, const SimConfig& cfg) {
  Eigen::MatrixXd crit(family_count, cfg.p);
  const double level = 1.0 - cfg.alpha / cfg.p;
  for (int f = 0; f < family_count; ++f) {
    for (int j = 0; j < cfg.p; ++j) {
      std::vector<double> stats;
      stats.reserve(null_outcomes.size());
      for (const auto& rep : null_outcomes)
        if (rep.used) stats.push_back(rep.stats(f, j));
      if (stats.empty())
        throw NonConvergence(
            "empirical calibration: no usable null replicates");
      std::sort(stats.begin(), stats.end());
      const auto b = static_cast<double>(stats.size());
      auto idx = static_cast<std::size_t>(std::ceil(b * level));
      idx = std::min(std::max<std::size_t>(idx, 1), stats.size());
      crit(f, j) = stats[idx - 1];
    }
  }
  return crit;
}

}  // namespace hetdet::detail

// Aggregate coverage helper: fraction of statistics at or below the normal
// quantile of each nominal level.
inline std::vector<double> coverage_from_stats(const std::vector<double>& stats,
                                               const std::vector<double>& levels) {
  std::vector<double> out;
  out.reserve(levels.size());
  for (const double tau : levels) {
    const double q = norm_quantile(tau);
    std::int64_t hits = 0;
    for (const double s : stats) hits += s <= q;
    out.push_back(stats.empty()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(hits) /
                            static_cast<double>(stats.size()));
  }
  return out;
}

// Full experiment: optional null calibration phase (phase 0), then the main
// phase (phase 1). FWER counts rejections of truly homogeneous coordinates;
// power conditions on replicates whose realized truth set is nonempty.
inline SimResult run_experiment(const SimConfig& cfg, int threads = 0) {
  detail::validate_config(cfg);
  const auto t0 = std::chrono::steady_clock::now();

  SimResult result;
  result.config = cfg;
  result.requested = cfg.replicates;

  Eigen::MatrixXd crit(family_count, cfg.p);
  if (cfg.calibration == CalibrationMode::empirical) {
    const auto null_outcomes = detail::run_phase(cfg, 0, true, threads);
    crit = detail::empirical_criticals(null_outcomes, cfg);
  } else {
    crit.setConstant(norm_quantile(1.0 - cfg.alpha / cfg.p));
  }
  FamilyResult* families[family_count] = {&result.wald, &result.ect,
                                          &result.combined};
  for (int f = 0; f < family_count; ++f) {
    families[f]->critical_values.assign(
        crit.row(f).begin(), crit.row(f).end());
  }

  const auto outcomes = detail::run_phase(cfg, 1, false, threads);

  int false_rej[family_count] = {0, 0, 0};
  int hetero_rej[family_count] = {0, 0, 0};
  for (const auto& rep : outcomes) {
    if (!rep.used) {
      ++result.discarded;
      ++result.discard_reasons[rep.discard_reason];
      continue;
    }
    ++result.used;
    if (rep.hetero_present) ++result.hetero_replicates;
    // 0 means every coordinate is truly null in this replicate
    const int hetero_j =
        rep.hetero_present ? cfg.hetero.resolved_dim(cfg.p) : 0;
    for (int f = 0; f < family_count; ++f) {
      bool any_false = false;
      bool hetero_hit = false;
      for (int j = 0; j < cfg.p; ++j) {
        const bool reject = rep.stats(f, j) > crit(f, j);
        if (!reject) continue;
        if (j + 1 == hetero_j)
          hetero_hit = true;
        else
          any_false = true;
      }
      false_rej[f] += any_false;
      hetero_rej[f] += hetero_hit;
    }
  }

  for (int f = 0; f < family_count; ++f) {
    if (result.used > 0)
      families[f]->fwer =
          static_cast<double>(false_rej[f]) / result.used;
    if (result.hetero_replicates > 0)
      families[f]->power = static_cast<double>(hetero_rej[f]) /
                           result.hetero_replicates;
  }

  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

struct CoverageTable {
  SimConfig config;
  std::vector<double> levels;
  std::vector<double> wald;      // empirical coverage per level
  std::vector<double> combined;  // empirical coverage per level
  int requested = 0;
  int used = 0;
  int discarded = 0;
  std::map<std::string, int> discard_reasons;
  double elapsed_seconds = 0.0;  // not serialized

  friend bool operator==(const CoverageTable& a, const CoverageTable& b) {
    return a.config == b.config && a.levels == b.levels && a.wald == b.wald &&
           a.combined == b.combined && a.requested == b.requested &&
           a.used == b.used && a.discarded == b.discarded &&
           a.discard_reasons == b.discard_reasons;
  }
};

// Null coverage of the first coordinate's W and TW against normal quantiles.
inline CoverageTable coverage_table(const SimConfig& cfg,
                                    const std::vector<double>& levels,
                                    int threads = 0) {
  if (!cfg.null_model)
    throw ConfigError("coverage_table requires a null-model configuration");
  detail::validate_config(cfg);
  for (const double tau : levels)
    if (!(tau > 0.0 && tau < 1.0))
      throw ConfigError("coverage levels must lie in (0, 1)");
  const auto t0 = std::chrono::steady_clock::now();

  CoverageTable table;
  table.config = cfg;
  table.levels = levels;
  table.requested = cfg.replicates;

  const auto outcomes = detail::run_phase(cfg, 1, true, threads);
  std::vector<double> wald_stats, combined_stats;
  wald_stats.reserve(outcomes.size());
  combined_stats.reserve(outcomes.size());
  for (const auto& rep : outcomes) {
    if (!rep.used) {
      ++table.discarded;
      ++table.discard_reasons[rep.discard_reason];
      continue;
    }
    ++table.used;
    wald_stats.push_back(rep.stats(0, 0));
    combined_stats.push_back(rep.stats(2, 0));
  }
  table.wald = coverage_from_stats(wald_stats, levels);
  table.combined = coverage_from_stats(combined_stats, levels);
  table.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return table;
}

}  // namespace hetdet
