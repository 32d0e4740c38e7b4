#pragma once

// Reverse-time generation from the user state x1 (t = 1) to an item
// embedding estimate at t = 0, on a uniform descending time grid.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "bridgerec/bridge.hpp"
#include "bridgerec/errors.hpp"
#include "bridgerec/rng.hpp"
#include "bridgerec/schedule.hpp"

namespace bridgerec {

enum class SamplerMode { kSde, kOde };

inline std::string to_string(SamplerMode m) { return m == SamplerMode::kSde ? "sde" : "ode"; }

inline SamplerMode parse_sampler_mode(std::string_view s) {
  if (s == "sde" || s == "SDE") return SamplerMode::kSde;
  if (s == "ode" || s == "ODE") return SamplerMode::kOde;
  throw ContractError("unknown sampler mode '" + std::string(s) + "' (expected sde|ode)");
}

struct SamplerConfig {
  SamplerMode mode = SamplerMode::kSde;
  int steps = 12;
  double guidance_w = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 1) throw ContractError("sampler.steps must be at least 1");
    if (!(guidance_w >= 0.0)) throw ContractError("sampler.guidance_w must be nonnegative");
  }
};

/// x0 estimate from (x_s, s, x1).
template <typename Scalar>
using Predictor =
    std::function<Vector<Scalar>(const Vector<Scalar>& x_s, Scalar s, const Vector<Scalar>& x1)>;

namespace detail {

template <typename Scalar>
void check_step_order(const ScheduleCoeffs<Scalar>& at_s, const ScheduleCoeffs<Scalar>& at_t) {
  if (at_t.t > at_s.t) {
    throw ContractError("reverse step must move backwards in time (t=" + std::to_string(at_t.t) +
                        " > s=" + std::to_string(at_s.t) + ")");
  }
  if (!(at_s.sigma2 > 0)) throw ContractError("reverse step from s with sigma_s = 0");
}

}  // namespace detail

/// Stochastic reverse step from s to t <= s:
///   x_t = (a_t s_t^2 / a_s s_s^2) x_s + a_t (1 - s_t^2/s_s^2) pred
///         + a_t s_t sqrt(1 - s_t^2/s_s^2) eps
/// where a = alpha and s^2 = sigma2.
template <typename Scalar>
Vector<Scalar> sde_step(const Vector<Scalar>& x_s, const ScheduleCoeffs<Scalar>& at_s,
                        const ScheduleCoeffs<Scalar>& at_t, const Vector<Scalar>& pred,
                        const Vector<Scalar>& eps) {
  detail::check_step_order(at_s, at_t);
  const Scalar ratio = at_t.sigma2 / at_s.sigma2;
  const Scalar keep = (at_t.alpha / at_s.alpha) * ratio;
  const Scalar toward = at_t.alpha * (Scalar(1) - ratio);
  const Scalar noise = at_t.alpha * std::sqrt(at_t.sigma2) * std::sqrt(Scalar(1) - ratio);
  return keep * x_s + toward * pred + noise * eps;
}

/// Deterministic reverse step from s to t <= s:
///   x_t = (a_t s_t sb_t / a_s s_s sb_s) x_s
///         + (a_t / s1^2) [ (sb_t^2 - sb_s s_t sb_t / s_s) pred
///                        + (s_t^2 - s_s s_t sb_t / sb_s) x1 / alpha_1 ]
/// with sb = sigma_bar. Regrouping the terms gives
///   x_t = m_t + (std_t / std_s) (x_s - m_s),
/// m_u the bridge mean at u with endpoints (pred, x1) and std_u its standard
/// deviation. At s = 1, sb_s = 0 and x_s = x1 = m_1, so the deviation term is
/// 0/0; its limit along the bridge is zero and the step reduces to x_t = m_t.
template <typename Scalar>
Vector<Scalar> ode_step(const Vector<Scalar>& x_s, const ScheduleCoeffs<Scalar>& at_s,
                        const ScheduleCoeffs<Scalar>& at_t, const Vector<Scalar>& pred,
                        const Vector<Scalar>& x1) {
  detail::check_step_order(at_s, at_t);
  const Scalar alpha1 = at_s.alpha_1();
  const Scalar sig_s = std::sqrt(at_s.sigma2);
  const Scalar sig_t = std::sqrt(at_t.sigma2);
  const Scalar sb_t = std::sqrt(at_t.sigma_bar2);

  if (!(at_s.sigma_bar2 > 0)) {
    if (x_s != x1) {
      throw ContractError("ODE step from s = 1 requires the chain to start at x1");
    }
    const auto w = marginal_weights(at_t);
    return w.w0 * pred + w.w1 * x1;
  }

  const Scalar sb_s = std::sqrt(at_s.sigma_bar2);
  const Scalar r_sig = sig_t / sig_s;
  const Scalar r_sb = sb_t / sb_s;
  const Scalar keep = (at_t.alpha / at_s.alpha) * r_sig * r_sb;
  const Scalar to_pred = at_t.alpha * ((at_t.sigma_bar2 - sb_s * sb_t * r_sig) / at_s.sigma2_1);
  const Scalar to_x1 =
      (at_t.alpha / alpha1) * ((at_t.sigma2 - sig_s * sig_t * r_sb) / at_s.sigma2_1);
  return keep * x_s + to_pred * pred + to_x1 * x1;
}

/// (1 + w) cond - w uncond.
template <typename Scalar>
Vector<Scalar> guided_predict(const Vector<Scalar>& cond, const Vector<Scalar>& uncond, Scalar w) {
  if (cond.size() != uncond.size()) throw ContractError("guided_predict: dimension mismatch");
  return (Scalar(1) + w) * cond - w * uncond;
}

/// Time of grid point i on the uniform descending grid 1 = t_0 > ... > t_steps = 0.
inline double grid_time(int i, int steps) {
  if (i >= steps) return 0.0;
  return 1.0 - static_cast<double>(i) / static_cast<double>(steps);
}

namespace detail {

template <typename Scalar, typename PredictAt>
Vector<Scalar> run_chain(const Vector<Scalar>& x1, PredictAt&& predict_at,
                         const ScheduleParams& schedule, const SamplerConfig& config) {
  config.validate();
  if (!x1.allFinite()) throw NumericError("sampler: initial state x1 is not finite");
  Rng rng(config.seed);
  Vector<Scalar> x = x1;
  auto at_s = coeffs<Scalar>(schedule, grid_time(0, config.steps));
  for (int i = 0; i < config.steps; ++i) {
    const auto at_t = coeffs<Scalar>(schedule, grid_time(i + 1, config.steps));
    Vector<Scalar> pred = predict_at(x, at_s.t);
    if (pred.size() != x.size()) {
      throw ContractError("predictor changed the dimension at step " + std::to_string(i));
    }
    if (!pred.allFinite()) {
      throw NumericError("predictor returned non-finite values at step " + std::to_string(i) +
                         " (s=" + std::to_string(at_s.t) + ")");
    }
    if (config.mode == SamplerMode::kSde) {
      const Vector<Scalar> eps = rng.normal_vector<Scalar>(x.size());
      x = sde_step(x, at_s, at_t, pred, eps);
    } else {
      x = ode_step(x, at_s, at_t, pred, x1);
    }
    at_s = at_t;
  }
  return x;
}

}  // namespace detail

/// Runs the reverse chain from x1 and returns the state at t = 0.
template <typename Scalar>
Vector<Scalar> sample(const Vector<Scalar>& x1, const Predictor<Scalar>& predictor,
                      const ScheduleParams& schedule, const SamplerConfig& config) {
  return detail::run_chain<Scalar>(
      x1, [&](const Vector<Scalar>& x, Scalar s) { return predictor(x, s, x1); }, schedule,
      config);
}

/// Guided chain: starts at the conditional state, and at every step replaces
/// the prediction with guided_predict of the conditional and unconditional
/// predictors evaluated on their own user states.
template <typename Scalar>
Vector<Scalar> sample_guided(const Vector<Scalar>& x1_cond, const Vector<Scalar>& x1_uncond,
                             const Predictor<Scalar>& cond, const Predictor<Scalar>& uncond,
                             const ScheduleParams& schedule, const SamplerConfig& config) {
  if (x1_cond.size() != x1_uncond.size()) throw ContractError("guided states differ in dimension");
  const Scalar w = static_cast<Scalar>(config.guidance_w);
  return detail::run_chain<Scalar>(
      x1_cond,
      [&](const Vector<Scalar>& x, Scalar s) {
        return guided_predict<Scalar>(cond(x, s, x1_cond), uncond(x, s, x1_uncond), w);
      },
      schedule, config);
}

}  // namespace bridgerec
