#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "bridgerec/verify.hpp"

namespace bridgerec::verify {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(4) << v;
  return o.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Fraction of users whose cluster matches their planted population under
// the best one-to-one relabelling (two clusters).
double agreement(const std::vector<Index>& clusters, const std::vector<Index>& planted) {
  std::size_t same = 0;
  for (std::size_t u = 0; u < planted.size(); ++u) same += clusters[u] == planted[u];
  const std::size_t best = std::max(same, planted.size() - same);
  return static_cast<double>(best) / static_cast<double>(planted.size());
}

}  // namespace

TrainConfig desk_config(std::uint64_t seed) {
  TrainConfig c;
  c.model.dim = 64;
  c.model.blocks = 2;
  c.model.heads = 2;
  c.model.dropout = 0.2;
  c.learning_rate = 0.001;
  c.batch_size = 32;
  c.epochs = 200;
  c.patience = 20;
  c.seed = seed;
  c.eval_sampler.seed = seed;
  return c;
}

SyntheticSpec overfit_toy_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.num_users = 50;
  s.num_items = 20;
  s.pattern = SyntheticPattern::kBlockCyclic;
  s.num_blocks = 4;
  s.noise_rate = 0.0;
  s.seed = seed;
  return s;
}

OverfitRun train_overfit_toy(std::uint64_t seed) {
  const auto t0 = Clock::now();
  auto data = generate_synthetic(overfit_toy_spec(seed));
  auto config = desk_config(seed);
  auto result = fit(data.dataset, config);
  return {std::move(data), config, std::move(result), seconds_since(t0)};
}

CheckResult check_overfit(const OverfitRun& run) {
  constexpr double kHr1 = 95.0;  // percent
  constexpr int kMaxEpochs = 200;
  constexpr double kBudget = 300.0;
  int reached = -1;
  for (const auto& e : run.fit.history) {
    if (e.valid_hr1 >= kHr1) {
      reached = e.epoch;
      break;
    }
  }
  const auto view = split(run.data.dataset);
  const auto t0 = Clock::now();
  const double test_hr1 =
      evaluate(run.fit.model, view, eval_options(run.config, Target::kTest)).hr(1);
  CheckResult r{"overfit", "noise-free block-cyclic toy (50 users, 20 items) reaches HR@1 >= 0.95"};
  r.seconds = run.seconds + seconds_since(t0);
  r.passed = reached > 0 && reached <= kMaxEpochs && test_hr1 >= kHr1 && r.seconds < kBudget;
  r.detail = "valid HR@1 >= " + fmt(kHr1) + "% first at epoch " + std::to_string(reached) +
             ", selected epoch " + std::to_string(run.fit.best_epoch) + " test HR@1 " +
             fmt(test_hr1) + "%, budget " + fmt(kBudget) + " s";
  return r;
}

CheckResult check_steps_plateau(const OverfitRun& run) {
  constexpr double kRatio = 0.99;
  const auto t0 = Clock::now();
  const auto view = split(run.data.dataset);
  auto options = eval_options(run.config, Target::kTest);
  options.sampler.steps = 12;
  const double at12 = evaluate(run.fit.model, view, options).hr(10);
  options.sampler.steps = 32;
  const double at32 = evaluate(run.fit.model, view, options).hr(10);
  CheckResult r{"step-plateau", "overfit toy: HR@10 at 12 steps >= 0.99 x HR@10 at 32 steps"};
  r.seconds = seconds_since(t0);
  r.passed = at12 >= kRatio * at32;
  r.detail = "HR@10 " + fmt(at12) + "% at 12 steps, " + fmt(at32) + "% at 32 steps";
  return r;
}

std::vector<SweepCell> run_sweep(const Dataset& dataset, const TrainConfig& base,
                                 const std::vector<ScheduleKind>& kinds,
                                 const std::vector<SamplerMode>& modes,
                                 const std::vector<double>& beta1s) {
  const auto view = split(dataset);
  std::vector<SweepCell> cells;
  for (ScheduleKind kind : kinds) {
    for (double beta1 : beta1s) {
      TrainConfig c = base;
      c.schedule.kind = kind;
      c.schedule.beta1 = beta1;
      const auto result = fit(dataset, c);
      for (SamplerMode mode : modes) {
        c.eval_sampler.mode = mode;
        const double hr10 = evaluate(result.model, view, eval_options(c, Target::kTest)).hr(10);
        cells.push_back({kind, mode, beta1, hr10});
      }
    }
  }
  return cells;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "kind,mode,beta1,hr10\n";
  for (const auto& c : cells) {
    out << to_string(c.kind) << ',' << to_string(c.mode) << ',' << c.beta1 << ',' << c.hr10
        << '\n';
  }
}

CheckResult check_config_sweep(std::uint64_t seed) {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.num_users = 100;
  spec.num_items = 40;
  spec.num_blocks = 4;
  spec.noise_rate = 0.2;
  spec.seed = seed;
  const auto data = generate_synthetic(spec);
  TrainConfig base = desk_config(seed);
  base.epochs = 60;
  base.patience = 10;
  const auto cells = run_sweep(data.dataset, base, {ScheduleKind::kGmax, ScheduleKind::kVp},
                               {SamplerMode::kSde}, {10, 20, 30, 40, 50});
  double gmax = 0.0, vp = 0.0;
  std::ostringstream rows;
  for (const auto& c : cells) {
    (c.kind == ScheduleKind::kGmax ? gmax : vp) += c.hr10 / 5.0;
    rows << ' ' << to_string(c.kind) << '/' << c.beta1 << '=' << fmt(c.hr10);
  }
  CheckResult r{"config-sweep",
                "noise 0.2: gmax/SDE mean HR@10 >= VP/SDE over beta1 in {10..50}"};
  r.seconds = seconds_since(t0);
  r.passed = gmax >= vp;
  r.detail = "gmax " + fmt(gmax) + "% vs vp " + fmt(vp) + "%;" + rows.str();
  return r;
}

CheckResult check_con_mode() {
  constexpr double kAgreement = 0.9;
  const auto t0 = Clock::now();
  std::vector<double> uncond, con;
  double worst_agreement = 1.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.num_users = 60;
    spec.num_items = 20;
    spec.num_blocks = 2;  // two populations with disjoint item blocks
    spec.noise_rate = 0.2;
    spec.seed = seed;
    const auto data = generate_synthetic(spec);
    const auto view = split(data.dataset);

    TrainConfig c = desk_config(seed);
    c.epochs = 60;
    c.patience = 10;
    const auto plain = fit(data.dataset, c);
    uncond.push_back(evaluate(plain.model, view, eval_options(c, Target::kTest)).hr(10));

    c.con_mode = true;
    c.k_clusters = 2;
    c.eval_sampler.guidance_w = 0.8;
    const auto guided = fit(data.dataset, c);
    con.push_back(
        evaluate(guided.model, view, eval_options(c, Target::kTest, &*guided.clusters)).hr(10));
    worst_agreement =
        std::min(worst_agreement, agreement(guided.clusters->assignments, data.population));
  }
  const double mu = median(uncond), mc = median(con);
  CheckResult r{"con-mode",
                "2 planted populations: con-mode (k=2, w=0.8) median HR@10 >= unconditional"};
  r.seconds = seconds_since(t0);
  r.passed = mc >= mu && worst_agreement >= kAgreement;
  std::ostringstream d;
  d << "median HR@10 con " << fmt(mc) << "% vs uncond " << fmt(mu) << "% over 5 seeds;"
    << " worst cluster agreement " << fmt(worst_agreement);
  r.detail = d.str();
  return r;
}

Report run_acceptance() {
  Report rep;
  rep.checks.push_back(check_schedule());
  rep.checks.push_back(check_bridge());
  rep.checks.push_back(check_lemma());
  rep.checks.push_back(check_sampler());
  rep.checks.push_back(check_guidance());
  rep.checks.push_back(check_autodiff());
  const auto toy = train_overfit_toy();
  rep.checks.push_back(check_overfit(toy));
  rep.checks.push_back(check_steps_plateau(toy));
  rep.checks.push_back(check_config_sweep());
  rep.checks.push_back(check_con_mode());
  rep.checks.push_back(check_metrics());
  return rep;
}

}  // namespace bridgerec::verify
