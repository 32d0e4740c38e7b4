#include <gtest/gtest.h>

#include <cmath>

#include "bridgerec/bridge.hpp"
#include "bridgerec/sampler.hpp"
#include "bridgerec/schedule.hpp"
#include "bridgerec/verify.hpp"

namespace br = bridgerec;
using Vec = br::Vector<double>;

namespace {

br::ScheduleParams gmax10() { return {br::ScheduleKind::kGmax, 0.01, 10.0}; }
br::ScheduleParams vp20() { return {br::ScheduleKind::kVp, 0.01, 20.0}; }

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

// Schedule values below were frozen from a 40-digit evaluation of the
// defining integrals.

TEST(Schedule, GmaxAtOne) {
  const auto c = br::coeffs(gmax10(), 1.0);
  EXPECT_NEAR(c.sigma2_1, 5.005, 1e-12);
  EXPECT_NEAR(c.sigma2, 5.005, 1e-12);
  EXPECT_EQ(c.alpha, 1.0);
  EXPECT_EQ(c.alpha_bar, 1.0);
  EXPECT_EQ(c.sigma_bar2, 0.0);
}

TEST(Schedule, GmaxAtHalf) {
  const auto c = br::coeffs(gmax10(), 0.5);
  EXPECT_NEAR(c.sigma2, 1.25375, 1e-12);
  EXPECT_NEAR(c.sigma_bar2, 3.75125, 1e-12);
}

TEST(Schedule, AnyKindAtZero) {
  for (const auto& p : {gmax10(), vp20()}) {
    const auto c = br::coeffs(p, 0.0);
    EXPECT_EQ(c.sigma2, 0.0);
    EXPECT_EQ(c.alpha, 1.0);
  }
}

TEST(Schedule, VpAlphaOne) {
  const auto c = br::coeffs(vp20(), 1.0);
  EXPECT_NEAR(c.alpha, 6.721123170136350e-3, 1e-15);
  EXPECT_NEAR(c.alpha_1(), 6.721123170136350e-3, 1e-15);
}

TEST(Schedule, OutsideUnitIntervalIsDomainError) {
  EXPECT_THROW(br::coeffs(gmax10(), -0.01), br::DomainError);
  EXPECT_THROW(br::coeffs(gmax10(), 1.01), br::DomainError);
}

TEST(Schedule, QuadratureOracleAgreesAtSpotPoints) {
  for (double t : {0.0, 0.3, 1.0}) {
    for (const auto& p : {gmax10(), vp20()}) {
      const auto a = br::coeffs(p, t);
      const auto b = br::verify::coeffs_quadrature_oracle(p, t);
      EXPECT_NEAR(a.alpha, b.alpha, 1e-9 * std::max(1.0, std::abs(b.alpha)));
      EXPECT_NEAR(a.sigma2, b.sigma2, 1e-9 * std::max(1.0, std::abs(b.sigma2)));
      EXPECT_NEAR(a.sigma_bar2, b.sigma_bar2, 1e-9 * std::max(1.0, std::abs(b.sigma_bar2)));
    }
  }
}

TEST(Schedule, OracleCatchesAPerturbedVariance) {
  const auto perturbed = [](const br::ScheduleParams& p, double t) {
    auto c = br::coeffs(p, t);
    c.sigma2 += 1e-3;
    return c;
  };
  EXPECT_FALSE(br::verify::check_schedule(perturbed).passed);
}

TEST(Bridge, EndpointsPinned) {
  const br::BridgeEndpoints<double> e{vec({1, -2, 3}), vec({0.5, 4, -1})};
  for (const auto& p : {gmax10(), vp20()}) {
    const auto g0 = br::marginal_params(e, br::coeffs(p, 0.0));
    EXPECT_EQ(g0.mean, e.x0);
    EXPECT_EQ(g0.var, 0.0);
    const auto g1 = br::marginal_params(e, br::coeffs(p, 1.0));
    EXPECT_EQ(g1.mean, e.x1);
    EXPECT_EQ(g1.var, 0.0);
  }
}

TEST(Bridge, GmaxMidpointWeights) {
  const auto w = br::marginal_weights(br::coeffs(gmax10(), 0.5));
  EXPECT_NEAR(w.w0, 0.74950, 5e-6);
  EXPECT_NEAR(w.w1, 0.25050, 5e-6);
  EXPECT_NEAR(w.noise, 0.96937, 5e-6);
  EXPECT_NEAR(w.w0, 0.7495004995004995, 1e-14);
  EXPECT_NEAR(w.noise, 0.9693741544154926, 1e-14);
}

TEST(Bridge, ZeroNoiseSampleIsTheMean) {
  const br::BridgeEndpoints<double> e{vec({1, 2}), vec({-1, 0})};
  const auto c = br::coeffs(vp20(), 0.4);
  EXPECT_EQ(br::sample_xt<double>(e, c, Vec::Zero(2)).x_t, br::marginal_params(e, c).mean);
  EXPECT_EQ(br::sample_xt<double>(e, br::coeffs(vp20(), 0.0), vec({3, -7})).x_t, e.x0);
}

TEST(Bridge, DimensionMismatchIsContractError) {
  const br::BridgeEndpoints<double> e{vec({1, 2}), vec({1, 2, 3})};
  EXPECT_THROW(br::marginal_params(e, br::coeffs(gmax10(), 0.5)), br::ContractError);
}

TEST(Lemma, WidthOneVariance) {
  // lemma_sigma2 takes the total variance s2 and computes
  // eps^2 + (sqrt(s2^2 + 4 eps^4) - s2) / 2. Both values at 40 digits.
  // s2 = 5.005: 1 + (sqrt(5.005^2 + 4) - 5.005) / 2
  EXPECT_NEAR(br::lemma_sigma2(5.005, 1.0), 1.1924037552387655, 1e-14);
  // s2 = 5.005^2: 1 + (sqrt(5.005^4 + 4) - 5.005^2) / 2
  EXPECT_NEAR(br::lemma_sigma2(25.050025, 1.0), 1.0398567044587655, 1e-14);
}

TEST(Lemma, SmallWidthRecoversEndpoints) {
  const br::BridgeEndpoints<double> e{vec({1, -1}), vec({2, 0.5})};
  const auto q = br::lemma_quantities(e, br::coeffs(gmax10(), 0.3), 1e-6);
  EXPECT_LT((q.a - e.x0).norm(), 1e-9);
  EXPECT_LT((q.b - e.x1).norm(), 1e-9);
}

TEST(Lemma, PotentialProductMatchesMarginal) {
  const br::BridgeEndpoints<double> e{vec({1, -1, 0.3}), vec({2, 0.5, -4})};
  for (const auto& p : {gmax10(), vp20()}) {
    const auto c = br::coeffs(p, 0.6);
    const auto q = br::lemma_quantities(e, c, 1e-4);
    const auto prod = br::gaussian_product(q.psi_hat, q.psi);
    const auto m = br::marginal_params(e, c);
    EXPECT_LT((prod.mean - m.mean).norm(), 1e-3 * std::max(1.0, m.mean.norm()));
    EXPECT_NEAR(prod.var, m.var, 1e-3 * std::max(1.0, m.var));
  }
}

TEST(Lemma, NonPositiveWidthRejected) {
  const br::BridgeEndpoints<double> e{vec({1}), vec({2})};
  EXPECT_THROW(br::lemma_quantities(e, br::coeffs(gmax10(), 0.5), 0.0), br::ContractError);
}

TEST(Sampler, SdeZeroElapsedIsIdentity) {
  const auto c = br::coeffs(gmax10(), 0.5);
  const Vec x = vec({1, 2, 3});
  EXPECT_EQ(br::sde_step<double>(x, c, c, vec({9, 9, 9}), vec({5, 5, 5})), x);
}

TEST(Sampler, OdeZeroElapsedIsIdentity) {
  const auto c = br::coeffs(vp20(), 0.5);
  const Vec x = vec({1, 2, 3});
  const Vec out = br::ode_step<double>(x, c, c, vec({9, 9, 9}), vec({-1, 0, 1}));
  EXPECT_LT((out - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sampler, FinalStepCollapsesToPrediction) {
  const Vec x = vec({1, 2}), pred = vec({-3, 0.5}), x1 = vec({4, 4});
  const auto s = br::coeffs(gmax10(), 0.25);
  const auto t0 = br::coeffs(gmax10(), 0.0);
  EXPECT_EQ(br::sde_step<double>(x, s, t0, pred, vec({7, 7})), pred);
  EXPECT_LT((br::ode_step<double>(x, s, t0, pred, x1) - pred).norm(), 1e-14);
}

TEST(Sampler, GmaxHalfStepExample) {
  const Vec x1 = vec({2, -1}), x0 = vec({0.5, 3});
  const auto out = br::sde_step<double>(x1, br::coeffs(gmax10(), 1.0), br::coeffs(gmax10(), 0.5),
                                        x0, Vec::Zero(2));
  const double r = 1.25375 / 5.005;
  EXPECT_LT((out - (r * x1 + (1 - r) * x0)).norm(), 1e-14);
}

TEST(Sampler, ForwardStepIsRejected) {
  const Vec x = vec({1});
  EXPECT_THROW(br::sde_step<double>(x, br::coeffs(gmax10(), 0.3), br::coeffs(gmax10(), 0.6), x, x),
               br::ContractError);
}

TEST(Sampler, SingleSdeStepReturnsPrediction) {
  const Vec x1 = vec({0.3, -0.7});
  const br::Predictor<double> pred = [](const Vec& x, double s, const Vec&) {
    return Vec(x * (1.0 + s) + Vec::Ones(x.size()));
  };
  br::SamplerConfig cfg;
  cfg.steps = 1;
  cfg.seed = 12345;
  EXPECT_EQ(br::sample<double>(x1, pred, gmax10(), cfg), pred(x1, 1.0, x1));
}

TEST(Sampler, NonFinitePredictionIsNumericError) {
  const br::Predictor<double> bad = [](const Vec& x, double, const Vec&) {
    return Vec(x * std::nan(""));
  };
  EXPECT_THROW(br::sample<double>(vec({1}), bad, gmax10(), {}), br::NumericError);
}

TEST(Sampler, IdenticalSeedsAgreeBitwise) {
  const br::Predictor<double> pred = [](const Vec& x, double s, const Vec& x1) {
    return Vec(0.5 * x + s * x1);
  };
  br::SamplerConfig cfg;
  cfg.seed = 77;
  const Vec x1 = vec({1, -2, 0.5});
  EXPECT_EQ(br::sample<double>(x1, pred, vp20(), cfg), br::sample<double>(x1, pred, vp20(), cfg));
}

TEST(Guidance, Arithmetic) {
  EXPECT_EQ(br::guided_predict<double>(vec({1, 0}), vec({0, 1}), 1.0), vec({2, -1}));
  EXPECT_EQ(br::guided_predict<double>(vec({1, 5}), vec({0, 1}), 0.0), vec({1, 5}));
}

TEST(Guidance, EqualBranchesIgnoreStrength) {
  const Vec c = vec({0.2, -3});
  for (double w : {0.3, 1.0, 4.0}) {
    EXPECT_LT((br::guided_predict<double>(c, c, w) - c).norm(), 1e-14);
  }
}

TEST(Oracles, SamplerAndGuidanceChecksPass) {
  EXPECT_TRUE(br::verify::check_sampler().passed);
  EXPECT_TRUE(br::verify::check_guidance().passed);
  EXPECT_TRUE(br::verify::check_lemma().passed);
}
