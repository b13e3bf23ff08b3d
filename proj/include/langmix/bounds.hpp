#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "langmix/common.hpp"

namespace langmix {

/// Closed-form bound evaluated in natural-log space; most of these exceed
/// double range when exponentiated.
struct BoundReport {
  std::string name;
  std::map<std::string, double> inputs;
  double log_value = 0.0;
  std::optional<double> value_if_representable;
  std::map<std::string, double> provenance;
  bool domain_override = false;

  void finalize() {
    if (log_value < 700.0) value_if_representable = std::exp(log_value);
  }
};

/// Log-Sobolev constant of the Gaussian with variance sigma^2: 2 sigma^2.
inline double cls_gaussian(double sigma) {
  require(sigma >= 0, "cls_gaussian: sigma must be nonnegative");
  return 2 * sigma * sigma;
}

/// Convolving a distribution with LS constant c by the sigma-Gaussian gives
/// LS constant at most 2 sigma^2 + c.
inline double cls_convolved(double c, double sigma) {
  require(c >= 0, "cls_convolved: c must be nonnegative");
  require(sigma >= 0, "cls_convolved: sigma must be nonnegative");
  return 2 * sigma * sigma + c;
}

struct Prop1Constants {
  double lipschitz = 0.0;
  double m = 0.0;
  double b = 0.0;
};

/// Smoothed-score regularity for a target supported in a ball of radius rho:
/// Lipschitz constant max(rho^2, sigma^2)/sigma^4 and (m, b)-dissipativity
/// with m = 1/(2 sigma^2), b = rho^2/(2 sigma^2).
inline Prop1Constants smoothed_score_constants(double rho, double sigma) {
  require(rho >= 0, "smoothed_score_constants: rho must be nonnegative");
  require(sigma > 0, "smoothed_score_constants: sigma must be positive");
  const double s2 = sigma * sigma;
  return {std::max(rho * rho, s2) / (s2 * s2), 1 / (2 * s2), rho * rho / (2 * s2)};
}

/// Diameter bound from curvature K > 1 and Kato-type constant kappa:
/// max(8 sqrt(K(d'-1)) (5 + ln(1024 kappa / sqrt(K(d'-1)))), 2 pi).
inline double diameter_bound(double K, int dprime, double kappa, bool allow_domain = false) {
  require(dprime >= 2, "diameter_bound: intrinsic dimension must be >= 2");
  require(kappa > 0, "diameter_bound: kappa must be positive");
  if (!allow_domain) require(K > 1, "diameter_bound: requires K > 1 (pass override to explore)");
  require(K > 0, "diameter_bound: K must be positive");
  const double s = std::sqrt(K * (dprime - 1));
  return std::max(8 * s * (5 + std::log(1024 * kappa / s)), kTwoPi);
}

/// Spectral-gap bound 1/lambda* <= (D^2/pi^2) e^{(D/2) sqrt(K(d'-1))},
/// returned as ln(1/lambda*). D = 0 gives -inf.
inline double spectral_gap_bound(double K, int dprime, double D) {
  require(K >= 0, "spectral_gap_bound: K must be nonnegative");
  require(dprime >= 2, "spectral_gap_bound: intrinsic dimension must be >= 2");
  require(D >= 0, "spectral_gap_bound: D must be nonnegative");
  if (D == 0) return -std::numeric_limits<double>::infinity();
  return std::log(D * D / (kPi * kPi)) + (D / 2) * std::sqrt(K * (dprime - 1));
}

namespace detail {

// ln(e^a + e^b) without overflow.
inline double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// ln(bound + 2 sigma^2) given ln(bound).
inline double add_gaussian_ls(double log_bound, double sigma) {
  if (sigma == 0) return log_bound;
  return logaddexp(log_bound, std::log(2 * sigma * sigma));
}

}  // namespace detail

/// Log-Sobolev bound for a bounded log-density perturbation of the uniform
/// law: c_LS(p) <= 2(d'+1)D^2 e^{4 + (d'+1)D^2 (2K + 2L + B^2)}, then the
/// Gaussian convolution addend 2 sigma^2. All in log space.
inline BoundReport cls_general_log(double sigma, int dprime, double K, double L, double B,
                                   double kappa, std::optional<double> D_override = {},
                                   bool allow_domain = false) {
  require(sigma >= 0, "cls_general_log: sigma must be nonnegative");
  require(dprime >= 2, "cls_general_log: intrinsic dimension must be >= 2");
  require(L >= 0 && B >= 0, "cls_general_log: L and B must be nonnegative");
  if (!allow_domain)
    require(K > 1.0 / dprime, "cls_general_log: requires K > 1/d' (pass override to explore)");
  double D;
  if (D_override) {
    require(*D_override > 0, "cls_general_log: D_override must be positive");
    D = *D_override;
  } else {
    D = diameter_bound(K, dprime, kappa, allow_domain);
  }
  const double d1 = dprime + 1;
  const double log_core = std::log(2 * d1 * D * D) + 4 + d1 * D * D * (2 * K + 2 * L + B * B);
  BoundReport rep;
  rep.name = "cls_general";
  rep.inputs = {{"sigma", sigma}, {"dprime", static_cast<double>(dprime)}, {"K", K},
                {"L", L},         {"B", B},                                {"kappa", kappa}};
  rep.log_value = detail::add_gaussian_ls(log_core, sigma);
  rep.provenance = {{"D", D}, {"K_prime", K + L}, {"R_bound", K + L + B * B}};
  rep.domain_override = allow_domain;
  rep.finalize();
  return rep;
}

/// Log-Sobolev bound for the uniform law from curvature alone, via the
/// spectral gap: c_LS <= (8/lambda*)(1 + (K^2+1)D^2) or (8/lambda* + 1),
/// whichever is larger, then the 2 sigma^2 convolution addend.
inline BoundReport cls_uniform_log(double sigma, int dprime, double K, double kappa,
                                   bool allow_domain = false) {
  require(sigma >= 0, "cls_uniform_log: sigma must be nonnegative");
  require(dprime >= 2, "cls_uniform_log: intrinsic dimension must be >= 2");
  if (!allow_domain) {
    require(K > 1, "cls_uniform_log: requires K > 1 (pass override to explore)");
    require(kappa > 1, "cls_uniform_log: requires kappa > 1 (pass override to explore)");
  }
  const double D = diameter_bound(K, dprime, kappa, allow_domain);
  const double log_inv_gap = spectral_gap_bound(K, dprime, D);
  const double branch_a =
      std::log(8.0) + log_inv_gap + std::log1p((K * K + 1) * D * D);
  const double branch_b = detail::logaddexp(std::log(8.0) + log_inv_gap, 0.0);
  BoundReport rep;
  rep.name = "cls_uniform";
  rep.inputs = {{"sigma", sigma}, {"dprime", static_cast<double>(dprime)}, {"K", K},
                {"kappa", kappa}};
  rep.log_value = detail::add_gaussian_ls(std::max(branch_a, branch_b), sigma);
  rep.provenance = {{"D", D}, {"log_inv_gap", log_inv_gap}};
  rep.domain_override = allow_domain;
  rep.finalize();
  return rep;
}

/// Contraction of W2 under the Langevin flow: w0 e^{-2t/c_ls}.
inline double w2_decay_bound(double w0, double c_ls, double t) {
  require(w0 >= 0, "w2_decay_bound: w0 must be nonnegative");
  require(c_ls > 0, "w2_decay_bound: c_ls must be positive");
  require(t >= 0, "w2_decay_bound: t must be nonnegative");
  return w0 * std::exp(-2 * t / c_ls);
}

/// Full sampling-error bound with an inexact score:
///   sigma sqrt(d) + w0 e^{-2t/c_ls}
///   + C sqrt((b+d)t) (eps t + p_inf^{1/2-1/d} e^{(L sqrt(d)/4) t} sqrt(t)
///     eps^{1/d})^{1/4}.
/// The third term is assembled in log space; an unrepresentable value
/// propagates as +inf.
inline double sampling_error_bound(double sigma, int d, double w0, double t, double c_ls,
                                   double eps, double b, double L, double p_inf,
                                   double C = 1.0) {
  require(d >= 3, "sampling_error_bound: requires d >= 3");
  require(sigma >= 0 && w0 >= 0 && t >= 0 && eps >= 0 && b >= 0 && L >= 0 && C >= 0,
          "sampling_error_bound: negative parameter");
  require(c_ls > 0, "sampling_error_bound: c_ls must be positive");
  require(p_inf > 0, "sampling_error_bound: p_inf must be positive");
  const double first = sigma * std::sqrt(static_cast<double>(d));
  const double second = w0 * std::exp(-2 * t / c_ls);
  double third = 0.0;
  if (eps > 0 && t > 0) {
    const double log_a = std::log(eps) + std::log(t);
    const double log_b = (0.5 - 1.0 / d) * std::log(p_inf) + (L * std::sqrt(1.0 * d) / 4) * t +
                         0.5 * std::log(t) + std::log(eps) / d;
    const double log_inner = detail::logaddexp(log_a, log_b);
    const double log_third =
        std::log(C) + 0.5 * std::log((b + d) * t) + 0.25 * log_inner;
    third = log_third < 700 ? std::exp(log_third) : std::numeric_limits<double>::infinity();
  }
  return first + second + third;
}

/// Grid argmin of the sampling-error bound over t in (0, t_max]; exposes the
/// finite optimal stopping time induced by score error.
inline std::pair<double, double> sampling_error_argmin(double sigma, int d, double w0,
                                                       double c_ls, double eps, double b,
                                                       double L, double p_inf, double C,
                                                       double t_max, int grid = 400) {
  require(t_max > 0, "sampling_error_argmin: t_max must be positive");
  require(grid >= 2, "sampling_error_argmin: grid too small");
  double best_t = t_max / grid;
  double best_v = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= grid; ++i) {
    const double t = t_max * i / grid;
    const double v = sampling_error_bound(sigma, d, w0, t, c_ls, eps, b, L, p_inf, C);
    if (v < best_v) {
      best_v = v;
      best_t = t;
    }
  }
  return {best_t, best_v};
}

}  // namespace langmix
