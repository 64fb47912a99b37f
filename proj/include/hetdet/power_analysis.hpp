#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "hetdet/errors.hpp"
#include "hetdet/normal.hpp"

// Closed-form diagnostics for the sparse local alternative in which a
// coordinate shifts by mu = sqrt(2 c log K / n) in a K^{-beta} fraction of
// blocks: SNR approximations for the Wald and extreme contrast statistics,
// the detection boundary, regime classification, and a grid search for the
// split fraction gamma.

namespace hetdet {

struct LocalAlternative {
  std::int64_t K = 0;
  std::int64_t n = 0;
  double beta = 0.0;   // sparsity level in (0, 1)
  double c = 0.0;      // signal constant, > 0
  double sigma = 1.0;  // per-coordinate SD, > 0
  double gamma = 2.0 / 3.0;
};

namespace detail {

inline void check_alternative(const LocalAlternative& alt) {
  if (alt.K < 2) throw DomainError("alternative: K must be at least 2");
  if (!(alt.beta > 0.0 && alt.beta < 1.0))
    throw DomainError("alternative: beta must lie in (0, 1)");
  if (!(alt.c > 0.0)) throw DomainError("alternative: c must be positive");
  if (!(alt.sigma > 0.0))
    throw DomainError("alternative: sigma must be positive");
  if (!(alt.gamma > 0.0 && alt.gamma < 1.0))
    throw DomainError("alternative: gamma must lie in (0, 1)");
}

}  // namespace detail

// rho(beta) = (1 - sqrt(1 - beta))^2: the minimal signal constant (in units
// of 2 log K / n) at which a maximum-type test can detect the sparse shift
inline double detection_boundary(double beta) {
  if (!(beta > 0.0 && beta < 1.0))
    throw DomainError("detection_boundary: beta must lie in (0, 1)");
  const double s = 1.0 - std::sqrt(1.0 - beta);
  return s * s;
}

// SNR_wald ~ sqrt(2) c sigma^-2 K^{0.5 - beta} log K
inline double snr_wald(const LocalAlternative& alt) {
  detail::check_alternative(alt);
  const double kd = static_cast<double>(alt.K);
  return std::sqrt(2.0) * alt.c / (alt.sigma * alt.sigma) *
         std::pow(kd, 0.5 - alt.beta) * std::log(kd);
}

struct SnrEct {
  double value = 0.0;
  // the approximation assumes c > sigma^2 rho(beta) / (1 - gamma); when that
  // fails the extreme blocks are not separable and the value is advisory only
  bool valid = false;
};

// SNR_ect ~ sigma^-1 sqrt(2 gamma c log K)
inline SnrEct snr_ect(const LocalAlternative& alt) {
  detail::check_alternative(alt);
  SnrEct out;
  out.value = std::sqrt(2.0 * alt.gamma * alt.c *
                        std::log(static_cast<double>(alt.K))) /
              alt.sigma;
  out.valid = alt.c > alt.sigma * alt.sigma * detection_boundary(alt.beta) /
                          (1.0 - alt.gamma);
  return out;
}

enum class Regime { consistent, inconsistent, boundary };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::consistent: return "consistent";
    case Regime::inconsistent: return "inconsistent";
    case Regime::boundary: return "boundary";
  }
  return "boundary";
}

struct RegimeVerdict {
  Regime wald = Regime::boundary;
  Regime ect = Regime::boundary;
  Regime combined = Regime::boundary;
};

// Asymptotic power regimes. The Wald test is consistent exactly in the dense
// regime beta <= 0.5. The extreme contrast is consistent when the limiting
// signal c clears rho(beta) sigma^2 / (1 - gamma) at the worst-case sigma+,
// inconsistent when it falls below the same threshold at the best-case
// sigma-, and undetermined in between. The combination inherits consistency
// from either member and is inconsistent only when both are.
inline RegimeVerdict classify_regime(const LocalAlternative& alt,
                                     double sigma_minus, double sigma_plus) {
  detail::check_alternative(alt);
  if (!(sigma_minus > 0.0) || !(sigma_plus >= sigma_minus))
    throw DomainError("classify_regime: need 0 < sigma_minus <= sigma_plus");

  const double rho = detection_boundary(alt.beta);
  const double lo = rho * sigma_minus * sigma_minus / (1.0 - alt.gamma);
  const double hi = rho * sigma_plus * sigma_plus / (1.0 - alt.gamma);

  RegimeVerdict verdict;
  verdict.wald =
      alt.beta <= 0.5 ? Regime::consistent : Regime::inconsistent;
  if (alt.c > hi)
    verdict.ect = Regime::consistent;
  else if (alt.c < lo)
    verdict.ect = Regime::inconsistent;
  else
    verdict.ect = Regime::boundary;

  if (verdict.wald == Regime::consistent || verdict.ect == Regime::consistent)
    verdict.combined = Regime::consistent;
  else if (verdict.wald == Regime::inconsistent &&
           verdict.ect == Regime::inconsistent)
    verdict.combined = Regime::inconsistent;
  else
    verdict.combined = Regime::boundary;
  return verdict;
}

// Log of the two-term selection-error bound behind the gamma recommendation:
// log( Phi(-(sqrt(n(1-gamma)) mu + sqrt(2 log K))) + Phi(-sqrt(n gamma/2) mu) ).
// Evaluated in log space because both tails underflow for interesting inputs.
inline double gamma_split_error(double n, double mu, std::int64_t k,
                                double gamma) {
  if (!(n >= 1.0)) throw DomainError("gamma_split_error: n must be >= 1");
  if (!(mu > 0.0)) throw DomainError("gamma_split_error: mu must be positive");
  if (k < 2) throw DomainError("gamma_split_error: K must be at least 2");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw DomainError("gamma_split_error: gamma must lie in (0, 1)");
  const double miss = std::sqrt(n * (1.0 - gamma)) * mu +
                      std::sqrt(2.0 * std::log(static_cast<double>(k)));
  const double contrast = std::sqrt(n * gamma / 2.0) * mu;
  return log_add_exp(log_norm_sf(miss), log_norm_sf(contrast));
}

struct GammaRecommendation {
  double gamma = 0.0;
  double log_error = 0.0;  // bound value at the argmin, in log space
};

// Grid argmin of the bound above; the balance point sits near 2/3 once the
// log K term stops mattering.
inline GammaRecommendation gamma_recommendation(double n, double mu,
                                                std::int64_t k,
                                                double step = 0.01) {
  if (!(step > 0.0 && step < 1.0))
    throw DomainError("gamma_recommendation: step must lie in (0, 1)");
  GammaRecommendation best;
  bool have = false;
  for (int i = 1; step * i < 1.0 - step / 2.0; ++i) {
    const double g = step * i;
    const double err = gamma_split_error(n, mu, k, g);
    if (!have || err < best.log_error) {
      best.gamma = g;
      best.log_error = err;
      have = true;
    }
  }
  if (!have) throw DomainError("gamma_recommendation: empty grid");
  return best;
}

}  // namespace hetdet
