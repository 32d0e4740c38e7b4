#include <cmath>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "bridgerec/verify.hpp"

namespace bridgerec::verify {

namespace {

using Kronrod = boost::math::quadrature::gauss_kronrod<double, 61>;

template <typename F>
double integrate(F f, double a, double b) {
  if (a == b) return 0.0;
  return Kronrod::integrate(f, a, b, 12, 1e-12);
}

}  // namespace

ScheduleCoeffs<double> coeffs_quadrature_oracle(const ScheduleParams& params, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("oracle time outside [0, 1]");
  params.validate();
  const auto f = [&](double tau) { return params.drift(tau); };
  const auto g2 = [&](double tau) { return params.beta(tau); };
  const auto alpha = [&](double tau) { return std::exp(integrate(f, 0.0, tau)); };
  const auto integrand = [&](double tau) {
    const double a = alpha(tau);
    return g2(tau) / (a * a);
  };

  ScheduleCoeffs<double> c;
  c.t = t;
  c.alpha = alpha(t);
  c.alpha_bar = std::exp(-integrate(f, t, 1.0));
  c.sigma2 = integrate(integrand, 0.0, t);
  c.sigma_bar2 = integrate(integrand, t, 1.0);
  c.sigma2_1 = integrate(integrand, 0.0, 1.0);
  return c;
}

ScheduleCoeffs<double> closed_form_coeffs(const ScheduleParams& params, double t) {
  return coeffs<double>(params, t);
}

ScheduleDeviation schedule_deviation(const CoeffFn& fn, const std::vector<double>& beta1s,
                                     int grid_points, double beta0) {
  ScheduleDeviation dev;
  for (ScheduleKind kind : {ScheduleKind::kGmax, ScheduleKind::kVp}) {
    for (double beta1 : beta1s) {
      const ScheduleParams p{kind, beta0, beta1};
      for (int i = 0; i < grid_points; ++i) {
        const double t = grid_points == 1 ? 0.0 : static_cast<double>(i) / (grid_points - 1);
        const auto got = fn(p, t);
        const auto want = coeffs_quadrature_oracle(p, t);
        const std::pair<const char*, std::pair<double, double>> fields[] = {
            {"alpha", {got.alpha, want.alpha}},
            {"alpha_bar", {got.alpha_bar, want.alpha_bar}},
            {"sigma2", {got.sigma2, want.sigma2}},
            {"sigma_bar2", {got.sigma_bar2, want.sigma_bar2}},
            {"sigma2_1", {got.sigma2_1, want.sigma2_1}},
        };
        for (const auto& [name, v] : fields) {
          const double err = std::abs(v.first - v.second) / std::max(1.0, std::abs(v.second));
          if (!(err <= dev.worst)) {
            dev.worst = std::isnan(err) ? INFINITY : err;
            std::ostringstream w;
            w << to_string(kind) << " beta1=" << beta1 << " t=" << t << " " << name;
            dev.where = w.str();
          }
        }
      }
    }
  }
  return dev;
}

}  // namespace bridgerec::verify
