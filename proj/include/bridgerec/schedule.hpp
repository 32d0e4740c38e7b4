#pragma once

// Noise-schedule coefficients for the two drift/diffusion pairs
//
//   gmax: f(t) = 0,          g^2(t) = beta(t)
//   VP:   f(t) = -beta(t)/2, g^2(t) = beta(t)
//
// with beta(t) = beta0 + t (beta1 - beta0), and the derived quantities
//
//   alpha_t      = exp( int_0^t f )       alpha_bar_t = exp( -int_t^1 f )
//   sigma2_t     = int_0^t g^2 / alpha^2  sigma_bar2_t = int_t^1 g^2 / alpha^2
//
// Writing B(t) = int_0^t beta, both families integrate in closed form:
//   gmax: alpha = alpha_bar = 1, sigma2_t = B(t), sigma_bar2_t = B(1) - B(t)
//   VP:   alpha_t = exp(-B(t)/2), alpha_bar_t = exp((B(1) - B(t))/2),
//         sigma2_t = exp(B(t)) - 1, sigma_bar2_t = exp(B(t)) (exp(B(1) - B(t)) - 1)
// since d/dt exp(B) = beta exp(B) = g^2 / alpha^2 for VP.

#include <cmath>
#include <string>
#include <string_view>

#include "bridgerec/errors.hpp"

namespace bridgerec {

enum class ScheduleKind { kGmax, kVp };

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::kGmax ? "gmax" : "vp"; }

inline ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "gmax") return ScheduleKind::kGmax;
  if (s == "vp" || s == "VP") return ScheduleKind::kVp;
  throw ContractError("unknown schedule kind '" + std::string(s) + "' (expected gmax|vp)");
}

struct ScheduleParams {
  ScheduleKind kind = ScheduleKind::kGmax;
  double beta0 = 0.01;
  double beta1 = 10.0;

  void validate() const {
    if (!(beta0 > 0.0)) throw ContractError("schedule.beta0 must be positive");
    if (!(beta1 > beta0)) throw ContractError("schedule.beta1 must exceed schedule.beta0");
  }

  /// beta(t) = g^2(t) for both kinds.
  double beta(double t) const { return beta0 + t * (beta1 - beta0); }
  /// f(t), the scalar drift coefficient.
  double drift(double t) const { return kind == ScheduleKind::kGmax ? 0.0 : -0.5 * beta(t); }
};

template <typename Scalar = double>
struct ScheduleCoeffs {
  Scalar t = 0;
  Scalar alpha = 1;
  Scalar alpha_bar = 1;
  Scalar sigma2 = 0;
  Scalar sigma_bar2 = 0;
  Scalar sigma2_1 = 0;

  Scalar sigma() const { return std::sqrt(sigma2); }
  Scalar sigma_bar() const { return std::sqrt(sigma_bar2); }
  /// alpha_1, recovered from alpha_t / alpha_bar_t.
  Scalar alpha_1() const { return alpha / alpha_bar; }
};

namespace detail {

// int_0^t beta
inline double beta_head(const ScheduleParams& p, double t) {
  return p.beta0 * t + 0.5 * (p.beta1 - p.beta0) * t * t;
}

// int_t^1 beta, evaluated directly so it is exactly 0 at t = 1.
inline double beta_tail(const ScheduleParams& p, double t) {
  const double u = 1.0 - t;
  return p.beta0 * u + 0.5 * (p.beta1 - p.beta0) * u * (1.0 + t);
}

}  // namespace detail

/// Closed-form coefficients at continuous time t in [0, 1].
template <typename Scalar = double>
ScheduleCoeffs<Scalar> coeffs(const ScheduleParams& params, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("schedule time " + std::to_string(t) + " outside [0, 1]");
  }
  params.validate();
  const double head = detail::beta_head(params, t);
  const double tail = detail::beta_tail(params, t);
  const double total = detail::beta_tail(params, 0.0);

  ScheduleCoeffs<Scalar> c;
  c.t = static_cast<Scalar>(t);
  if (params.kind == ScheduleKind::kGmax) {
    c.alpha = 1;
    c.alpha_bar = 1;
    c.sigma2 = static_cast<Scalar>(head);
    c.sigma_bar2 = static_cast<Scalar>(tail);
    c.sigma2_1 = static_cast<Scalar>(total);
  } else {
    c.alpha = static_cast<Scalar>(std::exp(-0.5 * head));
    c.alpha_bar = static_cast<Scalar>(std::exp(0.5 * tail));
    c.sigma2 = static_cast<Scalar>(std::expm1(head));
    c.sigma_bar2 = static_cast<Scalar>(std::exp(head) * std::expm1(tail));
    c.sigma2_1 = static_cast<Scalar>(std::expm1(total));
  }
  return c;
}

}  // namespace bridgerec
