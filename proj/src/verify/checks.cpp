#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "bridgerec/bridge.hpp"
#include "bridgerec/sampler.hpp"
#include "bridgerec/verify.hpp"

namespace bridgerec::verify {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(3) << v;
  return o.str();
}

VectorR random_vector(Index n, Rng& rng, double scale = 1.0) {
  VectorR v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

double max_abs(const VectorR& v) { return v.cwiseAbs().maxCoeff(); }

const std::vector<double> kBeta1s = {10, 20, 30, 40, 50};

// Records the first failing condition; later ones are only counted.
struct Failures {
  std::string first;
  int count = 0;
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (count++ == 0) first = what;
  }
  bool ok() const { return count == 0; }
  std::string detail(const std::string& on_pass) const {
    if (ok()) return on_pass;
    return std::to_string(count) + " failing condition(s); first: " + first;
  }
};

}  // namespace

bool Report::passed() const {
  for (const auto& c : checks) {
    if (!c.passed) return false;
  }
  return !checks.empty();
}

void Report::print(std::ostream& out) const {
  for (const auto& c : checks) {
    out << (c.passed ? "PASS" : "FAIL") << "  " << std::left << std::setw(20) << c.id << ' '
        << c.name << "  (" << c.detail << "; " << std::fixed << std::setprecision(2) << c.seconds
        << " s)" << std::defaultfloat << '\n';
  }
}

CheckResult check_schedule(const CoeffFn& fn) {
  constexpr double kTol = 1e-8;
  constexpr double kBudget = 5.0;
  const auto t0 = Clock::now();
  const auto dev = schedule_deviation(fn, kBeta1s, 101);
  CheckResult r{"schedule-oracle",
                "closed-form coefficients vs quadrature, gmax and vp, beta1 in {10..50}"};
  r.seconds = seconds_since(t0);
  r.passed = dev.worst <= kTol && r.seconds < kBudget;
  r.detail = "worst scaled deviation " + fmt(dev.worst) + " at " + dev.where + " (tol " +
             fmt(kTol) + ", budget " + fmt(kBudget) + " s)";
  return r;
}

CheckResult check_bridge(std::size_t draws, std::uint64_t seed) {
  constexpr double kSe = 4.0;
  constexpr double kBudget = 30.0;
  const auto t0 = Clock::now();
  Failures f;
  Rng rng(seed);
  const Index d = 6;
  double worst_z = 0.0;
  for (const ScheduleParams p :
       {ScheduleParams{ScheduleKind::kGmax, 0.01, 10}, ScheduleParams{ScheduleKind::kVp, 0.01, 20}}) {
    const BridgeEndpoints<double> e{random_vector(d, rng), random_vector(d, rng)};
    // Exact pinning at the endpoints.
    const auto m0 = marginal_params(e, coeffs<double>(p, 0.0));
    const auto m1 = marginal_params(e, coeffs<double>(p, 1.0));
    f.expect(m0.mean == e.x0 && m0.var == 0.0, to_string(p.kind) + ": t=0 is not (x0, 0)");
    f.expect(m1.mean == e.x1 && m1.var == 0.0, to_string(p.kind) + ": t=1 is not (x1, 0)");
    const VectorR eps = random_vector(d, rng);
    f.expect(sample_xt(e, coeffs<double>(p, 0.0), eps).x_t == e.x0,
             to_string(p.kind) + ": sample at t=0 is not x0");
    f.expect(sample_xt(e, coeffs<double>(p, 1.0), eps).x_t == e.x1,
             to_string(p.kind) + ": sample at t=1 is not x1");

    for (double t : {0.25, 0.5, 0.75}) {
      const auto c = coeffs<double>(p, t);
      const auto want = marginal_params(e, c);
      VectorR sum = VectorR::Zero(d), sq = VectorR::Zero(d);
      for (std::size_t n = 0; n < draws; ++n) {
        const VectorR x = sample_xt(e, c, rng.normal_vector<double>(d)).x_t;
        sum += x;
        sq += (x - want.mean).cwiseAbs2();
      }
      const double n = static_cast<double>(draws);
      const VectorR mean = sum / n;
      const VectorR dev = mean - want.mean;
      // Unbiased variance around the sample mean.
      const VectorR var = (sq - n * dev.cwiseAbs2()) / (n - 1.0);
      const double se_mean = std::sqrt(want.var / n);
      const double se_var = want.var * std::sqrt(2.0 / (n - 1.0));
      for (Index j = 0; j < d; ++j) {
        const double zm = std::abs(dev[j]) / se_mean;
        const double zv = std::abs(var[j] - want.var) / se_var;
        worst_z = std::max({worst_z, zm, zv});
        f.expect(zm <= kSe, to_string(p.kind) + " t=" + fmt(t) + ": mean off by " + fmt(zm) + " SE");
        f.expect(zv <= kSe,
                 to_string(p.kind) + " t=" + fmt(t) + ": variance off by " + fmt(zv) + " SE");
      }
    }
  }
  CheckResult r{"bridge-endpoints",
                "exact endpoint pinning; Monte-Carlo moments at t in {0.25,0.5,0.75}"};
  r.seconds = seconds_since(t0);
  f.expect(r.seconds < kBudget, "runtime " + fmt(r.seconds) + " s over budget");
  r.passed = f.ok();
  r.detail = f.detail("worst deviation " + fmt(worst_z) + " SE over " + std::to_string(draws) +
                      " draws (limit " + fmt(kSe) + ")");
  return r;
}

CheckResult check_lemma(std::uint64_t seed) {
  constexpr double kTol = 1e-3;
  constexpr double kEpsilon = 1e-4;
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const ScheduleParams p{i % 2 == 0 ? ScheduleKind::kGmax : ScheduleKind::kVp, 0.01,
                           kBeta1s[static_cast<std::size_t>(i) % kBeta1s.size()]};
    const BridgeEndpoints<double> e{random_vector(4, rng), random_vector(4, rng)};
    const double t = 0.02 + 0.96 * rng.uniform();
    const auto c = coeffs<double>(p, t);
    const auto q = lemma_quantities(e, c, kEpsilon);
    const auto prod = gaussian_product(q.psi_hat, q.psi);
    const auto want = marginal_params(e, c);
    worst = std::max({worst, max_abs(prod.mean - want.mean), std::abs(prod.var - want.var)});
  }
  CheckResult r{"lemma-consistency",
                "product of the two potentials at eps=1e-4 vs the marginal, 10 triples"};
  r.seconds = seconds_since(t0);
  r.passed = worst <= kTol;
  r.detail = "worst mean/variance deviation " + fmt(worst) + " (tol " + fmt(kTol) + ")";
  return r;
}

CheckResult check_sampler(std::uint64_t seed) {
  // Tolerances relative to the magnitude of the vectors involved.
  constexpr double kIdentityTol = 1e-12;
  constexpr double kMonotoneSlack = 1e-9;
  const auto t0 = Clock::now();
  Failures f;
  Rng rng(seed);
  const Index d = 5;
  for (const ScheduleParams p :
       {ScheduleParams{ScheduleKind::kGmax, 0.01, 10}, ScheduleParams{ScheduleKind::kVp, 0.01, 20}}) {
    const std::string tag = to_string(p.kind);
    const VectorR x0 = random_vector(d, rng), x1 = random_vector(d, rng);
    for (double s : {0.2, 0.5, 0.9, 1.0}) {
      const auto cs = coeffs<double>(p, s);
      const VectorR pred = random_vector(d, rng);
      const VectorR eps = random_vector(d, rng);
      // ODE chains start at x1, so the s = 1 state must be x1 itself.
      const VectorR x_s = s == 1.0 ? x1 : random_vector(d, rng);
      const double scale = std::max({1.0, max_abs(x_s), max_abs(pred), max_abs(x1)});

      const VectorR sde_same = sde_step(x_s, cs, cs, pred, eps);
      const VectorR ode_same = ode_step(x_s, cs, cs, pred, x1);
      f.expect(max_abs(sde_same - x_s) <= kIdentityTol * scale,
               tag + " sde: zero elapsed time moved x at s=" + fmt(s));
      f.expect(max_abs(ode_same - x_s) <= kIdentityTol * scale,
               tag + " ode: zero elapsed time moved x at s=" + fmt(s));

      const auto c0 = coeffs<double>(p, 0.0);
      const VectorR sde_end = sde_step(x_s, cs, c0, pred, eps);
      const VectorR ode_end = ode_step(x_s, cs, c0, pred, x1);
      const double ulp = std::numeric_limits<double>::epsilon();
      f.expect(max_abs(sde_end - pred) <= 4 * ulp * scale,
               tag + " sde: final step did not return the prediction from s=" + fmt(s));
      f.expect(max_abs(ode_end - pred) <= 4 * ulp * scale,
               tag + " ode: final step did not return the prediction from s=" + fmt(s));
    }

    // Boundary start: the s = 1 step agrees with steps from just below 1,
    // with the error shrinking as the start approaches 1.
    {
      const VectorR pred = random_vector(d, rng);
      const auto ct = coeffs<double>(p, 0.5);
      const VectorR at_one = ode_step(x1, coeffs<double>(p, 1.0), ct, pred, x1);
      double prev = INFINITY;
      for (double delta : {1e-4, 1e-6, 1e-8}) {
        const VectorR near = ode_step(x1, coeffs<double>(p, 1.0 - delta), ct, pred, x1);
        const double gap = max_abs(near - at_one) / std::max(1.0, max_abs(at_one));
        f.expect(gap < prev, tag + " ode: s=1 limit not approached as s -> 1");
        f.expect(gap <= 10.0 * std::sqrt(delta),
                 tag + " ode: s=1-" + fmt(delta) + " differs from s=1 by " + fmt(gap));
        prev = gap;
      }
    }

    // Closed-form single step, gmax s=1 -> t=0.5 with eps = 0.
    if (p.kind == ScheduleKind::kGmax) {
      const VectorR got =
          sde_step<double>(x1, coeffs<double>(p, 1.0), coeffs<double>(p, 0.5), x0, VectorR::Zero(d));
      const VectorR want = (1.25375 / 5.005) * x1 + (1.0 - 1.25375 / 5.005) * x0;
      f.expect(max_abs(got - want) <= 1e-12 * std::max(1.0, max_abs(want)),
               "gmax sde: s=1 -> t=0.5 step differs from the substituted values");
    }

    // A nonlinear deterministic predictor for determinism checks.
    const Predictor<double> nonlinear = [&](const VectorR& x, double s, const VectorR& u) {
      return VectorR((x.array().tanh() + s * u.array() + x0.array()).matrix());
    };
    for (SamplerMode mode : {SamplerMode::kSde, SamplerMode::kOde}) {
      const SamplerConfig cfg{mode, 12, 0.8, seed};
      const VectorR a = sample<double>(x1, nonlinear, p, cfg);
      const VectorR b = sample<double>(x1, nonlinear, p, cfg);
      f.expect(a == b, tag + " " + to_string(mode) + ": repeated run is not bitwise identical");
    }

    // steps = 1: a single final-step collapse onto pred(x1, 1, x1).
    for (SamplerMode mode : {SamplerMode::kSde, SamplerMode::kOde}) {
      const SamplerConfig cfg{mode, 1, 0.8, seed};
      f.expect(sample<double>(x1, nonlinear, p, cfg) == nonlinear(x1, 1.0, x1),
               tag + " " + to_string(mode) + ": one-step output differs from pred(x1, 1, x1)");
    }

    // Oracle predictor: the error may not grow with more steps.
    const Predictor<double> oracle = [&](const VectorR&, double, const VectorR&) { return x0; };
    for (SamplerMode mode : {SamplerMode::kSde, SamplerMode::kOde}) {
      double prev = INFINITY;
      for (int steps : {1, 2, 4, 8, 16}) {
        const SamplerConfig cfg{mode, steps, 0.8, seed};
        const double err = (sample<double>(x1, oracle, p, cfg) - x0).norm();
        f.expect(err <= prev + kMonotoneSlack,
                 tag + " " + to_string(mode) + ": oracle error grew at " + std::to_string(steps) +
                     " steps");
        prev = err;
      }
    }
  }
  CheckResult r{"sampler-identities",
                "zero-elapsed identity, final-step collapse, determinism, oracle monotonicity"};
  r.seconds = seconds_since(t0);
  r.passed = f.ok();
  r.detail = f.detail("all identities hold (identity tol " + fmt(kIdentityTol) +
                      ", collapse tol 4 ulp)");
  return r;
}

CheckResult check_guidance(std::uint64_t seed) {
  constexpr double kTol = 1e-12;
  const auto t0 = Clock::now();
  Failures f;
  Rng rng(seed);
  const Index d = 5;
  {
    VectorR c(2), u(2), want(2);
    c << 1, 0;
    u << 0, 1;
    want << 2, -1;
    f.expect(guided_predict<double>(c, u, 1.0) == want, "w=1 example is not (2, -1)");
  }
  for (const ScheduleParams p :
       {ScheduleParams{ScheduleKind::kGmax, 0.01, 10}, ScheduleParams{ScheduleKind::kVp, 0.01, 20}}) {
    const VectorR x0 = random_vector(d, rng);
    const VectorR x1c = random_vector(d, rng), x1u = random_vector(d, rng);
    const Predictor<double> cond = [&](const VectorR& x, double s, const VectorR& u) {
      return VectorR((0.5 * x.array().sin() + s * u.array() + x0.array()).matrix());
    };
    const Predictor<double> uncond = [&](const VectorR& x, double s, const VectorR& u) {
      return VectorR((x.array().cos() - s * u.array()).matrix());
    };
    for (SamplerMode mode : {SamplerMode::kSde, SamplerMode::kOde}) {
      const std::string tag = to_string(p.kind) + " " + to_string(mode);
      SamplerConfig cfg{mode, 12, 0.0, seed};
      const VectorR guided = sample_guided<double>(x1c, x1u, cond, uncond, p, cfg);
      const VectorR plain = sample<double>(x1c, cond, p, cfg);
      f.expect(guided == plain, tag + ": w=0 differs from conditional-only sampling");

      const VectorR base = sample_guided<double>(x1c, x1c, cond, cond, p, cfg);
      for (double w : {0.3, 0.8, 1.5, 3.0}) {
        cfg.guidance_w = w;
        const VectorR out = sample_guided<double>(x1c, x1c, cond, cond, p, cfg);
        f.expect(max_abs(out - base) <= kTol * std::max(1.0, max_abs(base)),
                 tag + ": identical branches depend on w=" + fmt(w));
      }
    }
  }
  CheckResult r{"guidance", "w=0 equals conditional sampling; identical branches ignore w"};
  r.seconds = seconds_since(t0);
  r.passed = f.ok();
  r.detail = f.detail("bitwise at w=0; w-independence within " + fmt(kTol));
  return r;
}

CheckResult check_autodiff() {
  constexpr double kOpTol = 1e-4;
  constexpr double kCompositeTol = 1e-3;
  const auto t0 = Clock::now();
  Failures f;
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& c : op_gradient_errors(10)) {
    if (c.worst >= worst_op) {
      worst_op = c.worst;
      worst_name = c.op;
    }
    f.expect(c.worst < kOpTol, c.op + " relative error " + fmt(c.worst));
  }
  const double composite = composite_gradient_error(10);
  f.expect(composite < kCompositeTol, "composite model relative error " + fmt(composite));
  CheckResult r{"autodiff", "central finite differences, every op and the full model, 10 draws"};
  r.seconds = seconds_since(t0);
  r.passed = f.ok();
  r.detail = f.detail("worst op " + worst_name + " " + fmt(worst_op) + " (tol " + fmt(kOpTol) +
                      "), composite " + fmt(composite) + " (tol " + fmt(kCompositeTol) + ")");
  return r;
}

CheckResult check_metrics() {
  const auto t0 = Clock::now();
  Failures f;
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };

  // Hand cases.
  f.expect(hr_from_rank(1, 5) == 1.0 && ndcg_from_rank(1, 5) == 1.0, "rank 1 does not score 1");
  f.expect(near(ndcg_from_rank(3, 5), 0.5), "rank 3 NDCG@5 is not 0.5");
  f.expect(hr_from_rank(6, 5) == 0.0 && ndcg_from_rank(6, 5) == 0.0, "rank > k does not score 0");
  const std::vector<Index> ranked = {4, 2, 7, 1, 0};
  f.expect(hr_at_k(ranked, 4, 1) == 1 && hr_at_k(ranked, 7, 2) == 0 && hr_at_k(ranked, 7, 3) == 1,
           "hr_at_k on a ranked list");
  f.expect(near(ndcg_at_k(ranked, 7, 5), 0.5) && ndcg_at_k(ranked, 9, 5) == 0.0,
           "ndcg_at_k on a ranked list");

  // Split reconstruction.
  Dataset ds;
  ds.num_items = 12;
  ds.user_ids = {10, 11, 12};
  ds.sequences = {{0, 1, 2}, {3, 4, 5, 6, 7, 8, 9}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0, 1, 2}};
  const SplitView view = split(ds);
  for (std::size_t u = 0; u < ds.sequences.size(); ++u) {
    const auto& s = view.users[u];
    std::vector<Index> joined = s.train;
    joined.push_back(s.valid);
    joined.push_back(s.test);
    f.expect(joined == ds.sequences[u], "split does not reconstruct user " + std::to_string(u));
    f.expect(eval_history(s, Target::kValid) == s.train, "validation history is not the train part");
    std::vector<Index> test_hist = s.train;
    test_hist.push_back(s.valid);
    f.expect(eval_history(s, Target::kTest) == test_hist, "test history is not train + valid");
  }

  // Length buckets: <= 5 short, 6..10 medium, > 10 long.
  f.expect(length_bucket(1) == LengthBucket::kShort && length_bucket(5) == LengthBucket::kShort,
           "lengths up to 5 are not short");
  f.expect(length_bucket(6) == LengthBucket::kMedium && length_bucket(10) == LengthBucket::kMedium,
           "lengths 6..10 are not medium");
  f.expect(length_bucket(11) == LengthBucket::kLong, "length 11 is not long");

  // Popularity: exactly ceil(0.2 V) popular items.
  const auto popular = popular_items(view);
  const auto n_popular = std::count(popular.begin(), popular.end(), true);
  f.expect(n_popular == 3, "expected ceil(0.2 * 12) = 3 popular items, got " +
                               std::to_string(n_popular));

  // Empty buckets are omitted; user counts add up.
  const std::vector<UserResult> results = {{0, 2, 1}, {1, 9, 3}, {2, 2, 20}};
  const Index ks[] = {5};
  const auto report = bucket_report(results, view, ks);
  f.expect(near(*report.get("HR", 5), 100.0 * 2.0 / 3.0), "overall HR@5");
  f.expect(near(*report.get("NDCG", 5), 100.0 * 1.5 / 3.0), "overall NDCG@5");
  f.expect(report.get("HR", 5, "short") && report.get("HR", 5, "long"), "missing a length bucket");
  f.expect(report.get("HR", 5, "short").has_value() && !report.get("HR", 5, "medium"),
           "medium bucket should be omitted (train lengths are 1, 5, 12)");

  CheckResult r{"metrics", "HR/NDCG hand cases, split reconstruction, bucket definitions"};
  r.seconds = seconds_since(t0);
  r.passed = f.ok();
  r.detail = f.detail("all cases hold");
  return r;
}

Report run_oracles() {
  Report rep;
  rep.checks.push_back(check_schedule());
  rep.checks.push_back(check_bridge());
  rep.checks.push_back(check_lemma());
  rep.checks.push_back(check_sampler());
  rep.checks.push_back(check_guidance());
  rep.checks.push_back(check_autodiff());
  rep.checks.push_back(check_metrics());
  return rep;
}

}  // namespace bridgerec::verify
