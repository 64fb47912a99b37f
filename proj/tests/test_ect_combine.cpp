#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "hetdet/inference.hpp"
#include "hetdet/rng.hpp"

using namespace hetdet;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

BlockData<double> numbered_block(Eigen::Index n, Eigen::Index p,
                                 std::int64_t id = 1) {
  BlockData<double> data;
  data.block_id = id;
  data.design.resize(n, p);
  data.response.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j)
      data.design(i, j) = static_cast<double>(100 * (j + 1) + i);
    data.response[i] = static_cast<double>(i);
  }
  return data;
}

LocalFit<double> scalar_fit(std::int64_t id, double estimate, double variance,
                            Eigen::Index n_used = 1) {
  LocalFit<double> fit;
  fit.block_id = id;
  fit.converged = true;
  fit.n_used = n_used;
  fit.theta_hat = VectorXd::Constant(1, estimate);
  fit.cov_hat = MatrixXd::Constant(1, 1,
                                   variance * static_cast<double>(n_used));
  return fit;
}

std::vector<double> sorted_responses(const BlockData<double>& a,
                                     const BlockData<double>& b) {
  std::vector<double> all;
  for (Eigen::Index i = 0; i < a.rows(); ++i) all.push_back(a.response[i]);
  for (Eigen::Index i = 0; i < b.rows(); ++i) all.push_back(b.response[i]);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

TEST_CASE("split sizes follow the floor rule") {
  const auto nine = split_block(numbered_block(9, 1), 2.0 / 3.0);
  CHECK(nine.first.rows() == 3);
  CHECK(nine.second.rows() == 6);

  const auto pair = split_block(numbered_block(2, 1), 0.5);
  CHECK(pair.first.rows() == 1);
  CHECK(pair.second.rows() == 1);

  CHECK_THROWS_AS((void)split_block(numbered_block(4, 2), 2.0 / 3.0),
                  SplitTooSmall);
  CHECK_THROWS_AS((void)split_block(numbered_block(9, 1), 0.0), DomainError);
  CHECK_THROWS_AS((void)split_block(numbered_block(9, 1), 1.0), DomainError);
}

TEST_CASE("prefix split is exact, ordered, and exhaustive") {
  for (Eigen::Index n = 2; n <= 40; ++n) {
    for (const double gamma : {0.1, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.9}) {
      const auto data = numbered_block(n, 1);
      const auto expected_first = static_cast<Eigen::Index>(
          std::floor((1.0 - gamma) * static_cast<double>(n) + 1e-9));
      if (expected_first < 1 || n - expected_first < 1) {
        CHECK_THROWS_AS((void)split_block(data, gamma), SplitTooSmall);
        continue;
      }
      const auto parts = split_block(data, gamma);
      CHECK(parts.first.rows() == expected_first);
      CHECK(parts.first.rows() + parts.second.rows() == n);
      CHECK(parts.first.block_id == data.block_id);
      CHECK(parts.second.block_id == data.block_id);
      for (Eigen::Index i = 0; i < parts.first.rows(); ++i)
        CHECK(parts.first.response[i] == data.response[i]);
      for (Eigen::Index i = 0; i < parts.second.rows(); ++i)
        CHECK(parts.second.response[i] ==
              data.response[parts.first.rows() + i]);
    }
  }
}

TEST_CASE("seeded shuffle is deterministic and preserves the rows") {
  const auto data = numbered_block(23, 2, 5);
  const auto a = split_block(data, 0.6, SplitMode::shuffle, 31);
  const auto b = split_block(data, 0.6, SplitMode::shuffle, 31);
  CHECK(a.first.design == b.first.design);
  CHECK(a.first.response == b.first.response);
  CHECK(a.second.design == b.second.design);
  CHECK(a.second.response == b.second.response);

  // row multiset is untouched and each row stays intact
  const auto pooled = sorted_responses(a.first, a.second);
  for (Eigen::Index i = 0; i < 23; ++i)
    CHECK(pooled[static_cast<std::size_t>(i)] == static_cast<double>(i));
  for (Eigen::Index i = 0; i < a.first.rows(); ++i) {
    const double row_tag = a.first.response[i];
    CHECK(a.first.design(i, 0) == 100.0 + row_tag);
    CHECK(a.first.design(i, 1) == 200.0 + row_tag);
  }

  const auto c = split_block(data, 0.6, SplitMode::shuffle, 32);
  CHECK(c.first.response != a.first.response);

  // the permutation also depends on the block id
  auto relabeled = data;
  relabeled.block_id = 6;
  const auto d = split_block(relabeled, 0.6, SplitMode::shuffle, 31);
  CHECK(d.first.response != a.first.response);
}

TEST_CASE("extreme selection follows first-split estimates only") {
  const std::vector<LocalFit<double>> first = {scalar_fit(1, 0.1, 1.0),
                                               scalar_fit(2, 0.5, 1.0),
                                               scalar_fit(3, -0.2, 1.0)};
  const std::vector<LocalFit<double>> second = {scalar_fit(1, 9.9, 0.04),
                                                scalar_fit(2, 0.4, 0.04),
                                                scalar_fit(3, -0.1, 0.04)};
  const auto out = ect_statistic(first, second, 0, 2.0 / 3.0);
  CHECK(out.k_max == 2);
  CHECK(out.k_min == 3);
  CHECK(out.gamma == doctest::Approx(2.0 / 3.0));
  CHECK(out.statistic == doctest::Approx(1.76777).epsilon(1e-5));
  CHECK(out.statistic == doctest::Approx(0.5 / std::sqrt(0.08)).epsilon(1e-12));
  CHECK(out.p_value == doctest::Approx(norm_sf(out.statistic)).epsilon(1e-15));
}

TEST_CASE("ties resolve to the earliest block and extremes never coincide") {
  const std::vector<LocalFit<double>> tied = {scalar_fit(7, 0.5, 1.0),
                                              scalar_fit(8, 0.5, 1.0),
                                              scalar_fit(9, 0.1, 1.0)};
  auto out = ect_statistic(tied, tied, 0, 0.5);
  CHECK(out.k_max == 7);
  CHECK(out.k_min == 9);

  const std::vector<LocalFit<double>> flat = {scalar_fit(4, 1.0, 1.0),
                                              scalar_fit(5, 1.0, 1.0),
                                              scalar_fit(6, 1.0, 1.0)};
  out = ect_statistic(flat, flat, 0, 0.5);
  CHECK(out.k_max == 4);
  CHECK(out.k_min == 5);
  CHECK(out.k_max != out.k_min);
}

TEST_CASE("selection is invariant to shifting all first-split estimates") {
  CounterRng rng(61);
  for (int rep = 0; rep < 20; ++rep) {
    CounterRng r = rng.split(rep);
    std::vector<LocalFit<double>> first, shifted, second;
    for (int i = 0; i < 6; ++i) {
      const double est = r.normal();
      first.push_back(scalar_fit(i + 1, est, 1.0));
      shifted.push_back(scalar_fit(i + 1, est + 42.0, 1.0));
      second.push_back(scalar_fit(i + 1, r.normal(), 0.5));
    }
    const auto base = ect_statistic(first, second, 0, 0.5);
    const auto moved = ect_statistic(shifted, second, 0, 0.5);
    CHECK(base.k_max == moved.k_max);
    CHECK(base.k_min == moved.k_min);
    CHECK(base.statistic == doctest::Approx(moved.statistic).epsilon(1e-15));
  }
}

TEST_CASE("ect rejects defective inputs with typed errors") {
  const std::vector<LocalFit<double>> one = {scalar_fit(1, 0.0, 1.0)};
  CHECK_THROWS_AS((void)ect_statistic(one, one, 0, 0.5), KTooSmall);

  const std::vector<LocalFit<double>> two = {scalar_fit(1, 0.0, 1.0),
                                             scalar_fit(2, 1.0, 1.0)};
  CHECK_THROWS_AS((void)ect_statistic(two, one, 0, 0.5), SchemaMismatch);
  CHECK_THROWS_AS((void)ect_statistic(two, two, -1, 0.5), DomainError);
  CHECK_THROWS_AS((void)ect_statistic(two, two, 1, 0.5), MissingFit);

  auto broken = two;
  broken[1].converged = false;
  CHECK_THROWS_AS((void)ect_statistic(broken, two, 0, 0.5), MissingFit);

  const std::vector<LocalFit<double>> flat_var = {scalar_fit(1, 0.0, 0.0),
                                                  scalar_fit(2, 1.0, 0.0)};
  CHECK_THROWS_AS((void)ect_statistic(two, flat_var, 0, 0.5),
                  NonPositiveVariance);
}

TEST_CASE("combined weight presets and clamping") {
  CHECK(combined_weight(500, 100, WeightPreset::theory) == 1.0);
  CHECK(combined_weight(500, 1000, WeightPreset::theory) ==
        doctest::Approx(0.07238).epsilon(1e-4));
  CHECK(combined_weight(1e12, 2, WeightPreset::theory) == 1.0);
  CHECK(combined_weight(500, 1000, WeightPreset::simulation) ==
        doctest::Approx(500.0 / std::pow(1000.0, 1.1)).epsilon(1e-12));
  CHECK(combined_weight(500, 100, WeightPreset::simulation) == 1.0);
  CHECK_THROWS_AS((void)combined_weight(500, 1, WeightPreset::theory),
                  KTooSmall);
  CHECK_THROWS_AS((void)combined_weight(0.5, 10, WeightPreset::theory),
                  DomainError);
}

TEST_CASE("combined statistic follows the weighted-sum formula") {
  WaldOutcome<double> w;
  EctOutcome<double> t;
  w.statistic = 1.2;
  t.statistic = 0.8;
  auto out = combined_statistic(w, t, 1.0);
  CHECK(out.statistic == doctest::Approx(1.41421).epsilon(1e-5));
  CHECK(out.weight == 1.0);

  w.statistic = 57.0;
  t.statistic = -0.33;
  out = combined_statistic(w, t, 1e-8);
  CHECK(out.statistic == doctest::Approx(-0.33).epsilon(1e-6));

  w.statistic = 0.0;
  t.statistic = 0.0;
  out = combined_statistic(w, t, 0.4);
  CHECK(out.statistic == 0.0);
  CHECK(out.p_value == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS((void)combined_statistic(w, t, 0.0), DomainError);
  CHECK_THROWS_AS((void)combined_statistic(w, t, -1.0), DomainError);
}

TEST_CASE("combined statistic is monotone in both members") {
  CounterRng rng(73);
  for (int rep = 0; rep < 50; ++rep) {
    WaldOutcome<double> w;
    EctOutcome<double> t;
    w.statistic = rng.normal();
    t.statistic = rng.normal();
    const double r = 0.05 + rng.uniform01();
    const double base = combined_statistic(w, t, r).statistic;
    WaldOutcome<double> w_up = w;
    w_up.statistic += 0.5;
    CHECK(combined_statistic(w_up, t, r).statistic > base);
    EctOutcome<double> t_up = t;
    t_up.statistic += 0.5;
    CHECK(combined_statistic(w, t_up, r).statistic > base);
  }
}

TEST_CASE("bonferroni decisions use strict per-coordinate thresholds") {
  auto with_pvalues = [](std::initializer_list<double> ps) {
    std::vector<DimensionOutcomes<double>> v;
    int dim = 1;
    for (const double p : ps) {
      DimensionOutcomes<double> o;
      o.dim = dim++;
      o.wald.p_value = p;
      o.ect.p_value = p;
      o.combined.p_value = p;
      v.push_back(o);
    }
    return v;
  };

  const auto report = decide(with_pvalues({0.001, 0.02, 0.5}), 0.05);
  CHECK(report.per_test_alpha == doctest::Approx(0.05 / 3.0).epsilon(1e-15));
  CHECK(report.threshold == doctest::Approx(2.12805).epsilon(1e-5));
  for (const auto* family : {"wald", "ect", "combined"}) {
    const auto& dims = report.rejected.at(family);
    REQUIRE(dims.size() == 1);
    CHECK(dims[0] == 1);
  }

  const auto none = decide(with_pvalues({1.0, 1.0}), 0.05);
  CHECK(none.rejected.at("wald").empty());
  CHECK(none.rejected.at("ect").empty());
  CHECK(none.rejected.at("combined").empty());

  // exact equality at the threshold is not a rejection
  const auto edge = decide(with_pvalues({0.05}), 0.05);
  CHECK(edge.rejected.at("wald").empty());

  CHECK_THROWS_AS((void)decide(with_pvalues({0.5}), 0.0), DomainError);
  CHECK_THROWS_AS((void)decide(with_pvalues({0.5}), 1.0), DomainError);
  CHECK_THROWS_AS((void)decide(std::vector<DimensionOutcomes<double>>{}, 0.05),
                  DomainError);
}
