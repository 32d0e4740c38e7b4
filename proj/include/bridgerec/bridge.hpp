#pragma once

// Tractable Schrodinger-bridge marginals between a user state x1 and a
// target item embedding x0.

#include <cmath>

#include <Eigen/Core>

#include "bridgerec/errors.hpp"
#include "bridgerec/schedule.hpp"

namespace bridgerec {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar = double>
struct BridgeEndpoints {
  Vector<Scalar> x0;  // target item embedding
  Vector<Scalar> x1;  // user state

  void validate() const {
    if (x0.size() != x1.size()) {
      throw ContractError("bridge endpoints differ in dimension (" + std::to_string(x0.size()) +
                          " vs " + std::to_string(x1.size()) + ")");
    }
  }
};

/// Isotropic Gaussian N(mean, var I).
template <typename Scalar = double>
struct Gaussian {
  Vector<Scalar> mean;
  Scalar var = 0;
};

/// Scalar weights of the marginal at time t:
///   mean = w0 x0 + w1 x1,  std = noise.
template <typename Scalar = double>
struct MarginalWeights {
  Scalar w0 = 0;
  Scalar w1 = 0;
  Scalar var = 0;
  Scalar noise = 0;
};

template <typename Scalar>
MarginalWeights<Scalar> marginal_weights(const ScheduleCoeffs<Scalar>& c) {
  if (!(c.sigma2_1 > 0)) throw ContractError("schedule total variance must be positive");
  MarginalWeights<Scalar> w;
  // Ratios first: at t = 0 sigma_bar2 / sigma2_1 is exactly 1, at t = 1 the
  // x1 ratio is, so endpoint means reproduce x0 / x1 bit for bit.
  w.w0 = c.alpha * (c.sigma_bar2 / c.sigma2_1);
  w.w1 = c.alpha_bar * (c.sigma2 / c.sigma2_1);
  w.var = c.alpha * c.alpha * c.sigma_bar2 * c.sigma2 / c.sigma2_1;
  w.noise = c.alpha * std::sqrt(c.sigma_bar2) * std::sqrt(c.sigma2) / std::sqrt(c.sigma2_1);
  return w;
}

template <typename Scalar>
Gaussian<Scalar> marginal_params(const BridgeEndpoints<Scalar>& e,
                                 const ScheduleCoeffs<Scalar>& c) {
  e.validate();
  const auto w = marginal_weights(c);
  return {w.w0 * e.x0 + w.w1 * e.x1, w.var};
}

template <typename Scalar = double>
struct BridgeSample {
  Scalar t = 0;
  Vector<Scalar> x_t;
  Vector<Scalar> eps;
};

/// x_t = w0 x0 + w1 x1 + noise * eps.
template <typename Scalar>
BridgeSample<Scalar> sample_xt(const BridgeEndpoints<Scalar>& e, const ScheduleCoeffs<Scalar>& c,
                               const Vector<Scalar>& eps) {
  e.validate();
  if (eps.size() != e.x0.size()) throw ContractError("noise dimension differs from endpoints");
  const auto w = marginal_weights(c);
  BridgeSample<Scalar> s;
  s.t = c.t;
  s.x_t = w.w0 * e.x0 + w.w1 * e.x1 + w.noise * eps;
  s.eps = eps;
  return s;
}

/// Finite-width quantities of the bridge between N(x0, eps^2 I) and
/// N(x1, alpha_1^2 eps^2 I), before taking eps -> 0.
template <typename Scalar = double>
struct LemmaQuantities {
  Vector<Scalar> a;
  Vector<Scalar> b;
  Scalar sigma2 = 0;
  Scalar epsilon = 0;
  Gaussian<Scalar> psi_hat;  // forward potential at t
  Gaussian<Scalar> psi;      // backward potential at t
};

/// sigma^2 = eps^2 + (sqrt(sigma1^4 + 4 eps^4) - sigma1^2) / 2, evaluated in a
/// cancellation-free form.
template <typename Scalar>
Scalar lemma_sigma2(Scalar sigma2_1, Scalar epsilon) {
  const Scalar e2 = epsilon * epsilon;
  const Scalar root = std::sqrt(sigma2_1 * sigma2_1 + 4 * e2 * e2);
  // (root - s^2) / 2 == 2 eps^4 / (root + s^2)
  return e2 + 2 * e2 * e2 / (root + sigma2_1);
}

template <typename Scalar>
LemmaQuantities<Scalar> lemma_quantities(const BridgeEndpoints<Scalar>& e,
                                         const ScheduleCoeffs<Scalar>& c, Scalar epsilon) {
  e.validate();
  if (!(epsilon > 0)) throw ContractError("lemma width epsilon must be positive");
  if (!(c.sigma2_1 > 0)) throw ContractError("degenerate schedule: total variance is zero");
  const Scalar alpha1 = c.alpha_1();
  LemmaQuantities<Scalar> q;
  q.epsilon = epsilon;
  q.sigma2 = lemma_sigma2(c.sigma2_1, epsilon);
  const Scalar r = q.sigma2 / c.sigma2_1;
  q.a = e.x0 + r * (e.x0 - e.x1 / alpha1);
  q.b = e.x1 + r * (e.x1 - alpha1 * e.x0);
  const Scalar a2 = c.alpha * c.alpha;
  q.psi_hat = {c.alpha * q.a, a2 * q.sigma2 + a2 * c.sigma2};
  q.psi = {c.alpha_bar * q.b, a2 * c.sigma_bar2};
  return q;
}

/// Normalised product of two isotropic Gaussian densities.
template <typename Scalar>
Gaussian<Scalar> gaussian_product(const Gaussian<Scalar>& p, const Gaussian<Scalar>& q) {
  if (p.mean.size() != q.mean.size()) throw ContractError("gaussian_product: dimension mismatch");
  const Scalar total = p.var + q.var;
  if (!(total > 0)) throw ContractError("gaussian_product: both factors are degenerate");
  return {(q.var / total) * p.mean + (p.var / total) * q.mean, p.var * q.var / total};
}

}  // namespace bridgerec
