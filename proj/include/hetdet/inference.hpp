#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "hetdet/errors.hpp"
#include "hetdet/glm.hpp"
#include "hetdet/normal.hpp"
#include "hetdet/rng.hpp"

// The three heterogeneity tests on one coordinate across K blocks:
//   - re-normalized Wald statistic W, asymptotically N(0,1) as K grows,
//   - extreme contrast statistic T from a two-way sample split,
//   - the weighted combination TW = (W r + T) / sqrt(r^2 + 1),
// plus Bonferroni decisions across coordinates. All p-values are one-sided
// upper tails.

namespace hetdet {

template <typename Scalar = double>
struct DimensionSlice {
  int dim = 0;                 // 1-based coordinate label used in reports
  VectorX<Scalar> estimates;   // per-block estimates of this coordinate
  VectorX<Scalar> variances;   // per-block lambda_k^2 = sigma_hat_k^2 / n_k
};

// Extract coordinate `dim0` (0-based) of every block fit. Variances are the
// sandwich diagonal divided by the block size, i.e. the variance of the
// coordinate estimate itself.
template <typename Scalar>
DimensionSlice<Scalar> slice_dimension(const std::vector<LocalFit<Scalar>>& fits,
                                       Eigen::Index dim0) {
  if (dim0 < 0) throw DomainError("slice_dimension: coordinate must be >= 0");
  DimensionSlice<Scalar> slice;
  slice.dim = static_cast<int>(dim0) + 1;
  const auto k = static_cast<Eigen::Index>(fits.size());
  slice.estimates.resize(k);
  slice.variances.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& fit = fits[static_cast<std::size_t>(i)];
    if (!fit.converged || fit.theta_hat.size() <= dim0)
      throw MissingFit("block " + std::to_string(fit.block_id) +
                       ": no converged estimate for coordinate " +
                       std::to_string(dim0 + 1));
    slice.estimates[i] = fit.theta_hat[dim0];
    slice.variances[i] = fit.cov_hat(dim0, dim0) / Scalar(fit.n_used);
  }
  return slice;
}

namespace detail {

template <typename Scalar>
void check_slice(const VectorX<Scalar>& variances) {
  if (variances.size() < 2)
    throw KTooSmall("need at least 2 blocks, got " +
                    std::to_string(variances.size()));
  if (!(variances.array() > Scalar(0)).all())
    throw NonPositiveVariance(
        "a block carries a non-positive estimate variance (degenerate fit)");
}

}  // namespace detail

// Off-diagonal weight of the contrast quadratic form (closed form for a
// diagonal variance matrix): r_{k1,k2} = (1/l2_{k1})(1/l2_{k2}) / sum_l 1/l2_l.
// The corresponding dense matrix entry is the negative of this magnitude.
template <typename Scalar>
Scalar pairwise_weight(const VectorX<Scalar>& variances, Eigen::Index k1,
                       Eigen::Index k2) {
  detail::check_slice(variances);
  if (k1 < 0 || k2 < 0 || k1 >= variances.size() || k2 >= variances.size())
    throw DomainError("pairwise_weight: block index out of range");
  const Scalar total = variances.cwiseInverse().sum();
  return (Scalar(1) / variances[k1]) * (Scalar(1) / variances[k2]) / total;
}

template <typename Scalar = double>
struct WaldOutcome {
  Scalar statistic = Scalar(0);   // (quad_form - (K-1)) / sqrt(2K-2)
  Scalar p_value = Scalar(1);
  Scalar quad_form = Scalar(0);
  Eigen::Index df_equiv = 0;      // K - 1
  bool small_sample_warning = false;  // K >= n_min (asymptotics need K << n)
};

// O(K) evaluation through the weighted-mean identity: the contrast quadratic
// form equals sum_k w_k (est_k - mean_w)^2 with w_k = 1 / variance_k.
template <typename Scalar>
WaldOutcome<Scalar> wald_statistic(const DimensionSlice<Scalar>& slice,
                                   Eigen::Index n_min = 0) {
  detail::check_slice(slice.variances);
  if (slice.estimates.size() != slice.variances.size())
    throw SchemaMismatch("slice estimate and variance lengths differ");
  const Eigen::Index k = slice.estimates.size();

  const VectorX<Scalar> w = slice.variances.cwiseInverse();
  const Scalar wsum = w.sum();
  const Scalar mean_w = w.dot(slice.estimates) / wsum;
  const Scalar quad =
      (w.array() * (slice.estimates.array() - mean_w).square()).sum();

  WaldOutcome<Scalar> out;
  out.quad_form = quad;
  out.df_equiv = k - 1;
  out.statistic = (quad - Scalar(k - 1)) / std::sqrt(Scalar(2 * (k - 1)));
  out.p_value = norm_sf(out.statistic);
  out.small_sample_warning = n_min > 0 && k >= n_min;
  return out;
}

enum class SplitMode { prefix, shuffle };

// First part takes floor((1-gamma) n) observations, second part the rest.
// The tiny nudge absorbs the binary representation of fractions like 2/3 so
// that e.g. n = 9, gamma = 2/3 lands on exactly 3 | 6.
template <typename Scalar>
std::pair<BlockData<Scalar>, BlockData<Scalar>> split_block(
    const BlockData<Scalar>& data, double gamma,
    SplitMode mode = SplitMode::prefix, std::uint64_t shuffle_seed = 0) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw DomainError("split fraction gamma must lie in (0, 1)");
  const Eigen::Index n = data.rows();
  const Eigen::Index p = data.dims();
  const auto first_n = static_cast<Eigen::Index>(
      std::floor((1.0 - gamma) * static_cast<double>(n) + 1e-9));
  const Eigen::Index second_n = n - first_n;
  if (n < 2 || first_n < p || second_n < p || first_n < 1 || second_n < 1)
    throw SplitTooSmall("block " + std::to_string(data.block_id) + ": split " +
                        std::to_string(first_n) + " | " +
                        std::to_string(second_n) + " of n = " +
                        std::to_string(n) +
                        " leaves a part smaller than p = " + std::to_string(p));

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  if (mode == SplitMode::shuffle) {
    // permutation is a pure function of (shuffle_seed, block_id)
    CounterRng rng = CounterRng(shuffle_seed)
                         .split(static_cast<std::uint64_t>(data.block_id));
    for (Eigen::Index i = n - 1; i > 0; --i) {
      const auto j = static_cast<Eigen::Index>(
          rng.below(static_cast<std::uint64_t>(i) + 1));
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(j)]);
    }
  }

  BlockData<Scalar> first;
  BlockData<Scalar> second;
  first.block_id = data.block_id;
  second.block_id = data.block_id;
  first.design.resize(first_n, p);
  first.response.resize(first_n);
  second.design.resize(second_n, p);
  second.response.resize(second_n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = order[static_cast<std::size_t>(i)];
    if (i < first_n) {
      first.design.row(i) = data.design.row(src);
      first.response[i] = data.response[src];
    } else {
      second.design.row(i - first_n) = data.design.row(src);
      second.response[i - first_n] = data.response[src];
    }
  }
  return {std::move(first), std::move(second)};
}

template <typename Scalar = double>
struct EctOutcome {
  Scalar statistic = Scalar(0);
  Scalar p_value = Scalar(1);
  std::int64_t k_max = 0;  // block label selected as maximum
  std::int64_t k_min = 0;  // block label selected as minimum
  double gamma = 0.0;      // split fraction used
};

// Selection uses only first-split estimates (ties -> smallest list position,
// and if every estimate ties, the minimum moves to the next position so the
// two labels always differ); the contrast uses only second-split estimates
// and their standard errors.
template <typename Scalar>
EctOutcome<Scalar> ect_statistic(const std::vector<LocalFit<Scalar>>& first_fits,
                                 const std::vector<LocalFit<Scalar>>& second_fits,
                                 Eigen::Index dim0, double gamma) {
  if (dim0 < 0) throw DomainError("ect_statistic: coordinate must be >= 0");
  const std::size_t k = first_fits.size();
  if (k < 2) throw KTooSmall("need at least 2 blocks, got " + std::to_string(k));
  if (second_fits.size() != k)
    throw SchemaMismatch("first and second split fit lists differ in length");
  for (const auto* fits : {&first_fits, &second_fits})
    for (const auto& fit : *fits)
      if (!fit.converged || fit.theta_hat.size() <= dim0)
        throw MissingFit("block " + std::to_string(fit.block_id) +
                         ": no converged estimate for coordinate " +
                         std::to_string(dim0 + 1));

  std::size_t imax = 0;
  std::size_t imin = 0;
  for (std::size_t i = 1; i < k; ++i) {
    const Scalar v = first_fits[i].theta_hat[dim0];
    if (v > first_fits[imax].theta_hat[dim0]) imax = i;
    if (v < first_fits[imin].theta_hat[dim0]) imin = i;
  }
  if (imin == imax) imin = imax == 0 ? 1 : 0;

  const auto& top = second_fits[imax];
  const auto& bot = second_fits[imin];
  const Scalar se2 = top.cov_hat(dim0, dim0) / Scalar(top.n_used) +
                     bot.cov_hat(dim0, dim0) / Scalar(bot.n_used);
  if (!(se2 > Scalar(0)))
    throw NonPositiveVariance("selected blocks " +
                              std::to_string(top.block_id) + ", " +
                              std::to_string(bot.block_id) +
                              " carry a non-positive contrast variance");

  EctOutcome<Scalar> out;
  out.statistic =
      (top.theta_hat[dim0] - bot.theta_hat[dim0]) / std::sqrt(se2);
  out.p_value = norm_sf(out.statistic);
  out.k_max = first_fits[imax].block_id;
  out.k_min = first_fits[imin].block_id;
  out.gamma = gamma;
  return out;
}

enum class WeightPreset { theory, simulation };

inline const char* weight_name(WeightPreset preset) {
  return preset == WeightPreset::theory ? "theory" : "simulation";
}

// theory:     min(n_min / (K ln K), 1)
// simulation: min(n_min / K^1.1, 1)   (clamped like the theory preset)
inline double combined_weight(double n_min, std::int64_t k,
                              WeightPreset preset = WeightPreset::theory) {
  if (k < 2) throw KTooSmall("need at least 2 blocks, got " + std::to_string(k));
  if (!(n_min >= 1.0))
    throw DomainError("combined_weight: n_min must be at least 1");
  const double kd = static_cast<double>(k);
  const double denom =
      preset == WeightPreset::theory ? kd * std::log(kd) : std::pow(kd, 1.1);
  return std::min(n_min / denom, 1.0);
}

template <typename Scalar = double>
struct CombinedOutcome {
  Scalar statistic = Scalar(0);  // (W r + T) / sqrt(r^2 + 1)
  Scalar p_value = Scalar(1);
  Scalar weight = Scalar(0);
};

template <typename Scalar>
CombinedOutcome<Scalar> combined_statistic(const WaldOutcome<Scalar>& wald,
                                           const EctOutcome<Scalar>& ect,
                                           Scalar weight) {
  if (!(weight > Scalar(0)))
    throw DomainError("combined_statistic: weight must be positive");
  CombinedOutcome<Scalar> out;
  out.weight = weight;
  out.statistic = (wald.statistic * weight + ect.statistic) /
                  std::sqrt(weight * weight + Scalar(1));
  out.p_value = norm_sf(out.statistic);
  return out;
}

template <typename Scalar = double>
struct DimensionOutcomes {
  int dim = 0;  // 1-based
  WaldOutcome<Scalar> wald;
  EctOutcome<Scalar> ect;
  CombinedOutcome<Scalar> combined;
};

template <typename Scalar = double>
struct HeterogeneityReport {
  Scalar alpha = Scalar(0);
  Scalar per_test_alpha = Scalar(0);  // alpha / p
  Scalar threshold = Scalar(0);       // Phi^{-1}(1 - alpha/p)
  std::vector<DimensionOutcomes<Scalar>> per_dim;
  std::map<std::string, std::vector<int>> rejected;  // family -> sorted dims
};

// Bonferroni across coordinates with strict inequality p < alpha / p_count.
template <typename Scalar>
HeterogeneityReport<Scalar> decide(
    const std::vector<DimensionOutcomes<Scalar>>& outcomes, Scalar alpha) {
  if (!(alpha > Scalar(0) && alpha < Scalar(1)))
    throw DomainError("decide: alpha must lie in (0, 1)");
  if (outcomes.empty()) throw DomainError("decide: no dimensions supplied");

  HeterogeneityReport<Scalar> report;
  report.alpha = alpha;
  report.per_test_alpha = alpha / Scalar(outcomes.size());
  report.threshold =
      Scalar(norm_quantile(1.0 - static_cast<double>(report.per_test_alpha)));
  report.per_dim = outcomes;
  report.rejected["wald"] = {};
  report.rejected["ect"] = {};
  report.rejected["combined"] = {};
  for (const auto& o : outcomes) {
    if (o.wald.p_value < report.per_test_alpha)
      report.rejected["wald"].push_back(o.dim);
    if (o.ect.p_value < report.per_test_alpha)
      report.rejected["ect"].push_back(o.dim);
    if (o.combined.p_value < report.per_test_alpha)
      report.rejected["combined"].push_back(o.dim);
  }
  for (auto& [family, dims] : report.rejected)
    std::sort(dims.begin(), dims.end());
  return report;
}

}  // namespace hetdet
