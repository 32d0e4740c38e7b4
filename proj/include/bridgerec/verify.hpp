#pragma once

// Independent oracles and the property / acceptance checks built on them.
// Shared by the test binaries and the `verify` CLI command.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bridgerec/schedule.hpp"
#include "bridgerec/trainer.hpp"

namespace bridgerec::verify {

struct CheckResult {
  CheckResult() = default;
  CheckResult(std::string id_, std::string name_) : id(std::move(id_)), name(std::move(name_)) {}

  std::string id;    // short tag, e.g. "schedule"
  std::string name;  // one-line description
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Report {
  std::vector<CheckResult> checks;

  bool passed() const;
  /// One "PASS|FAIL  id  name  (detail)" line per check.
  void print(std::ostream& out) const;
};

// ---------------------------------------------------------------------------
// Schedule

/// Integrates the defining integrals of the schedule directly:
/// alpha_t = exp(int_0^t f), alpha_bar_t = exp(-int_t^1 f),
/// sigma2_t = int_0^t g^2 / alpha^2, sigma_bar2_t = int_t^1 g^2 / alpha^2,
/// with alpha inside the outer integrals itself obtained by quadrature.
ScheduleCoeffs<double> coeffs_quadrature_oracle(const ScheduleParams& params, double t);

using CoeffFn = std::function<ScheduleCoeffs<double>(const ScheduleParams&, double)>;

/// The library's closed form, as a CoeffFn.
ScheduleCoeffs<double> closed_form_coeffs(const ScheduleParams& params, double t);

struct ScheduleDeviation {
  double worst = 0.0;  // max over all points and fields of |a - b| / max(1, |b|)
  std::string where;
};

/// Compares `fn` against the quadrature oracle on a uniform grid of
/// `grid_points` times in [0, 1] for both kinds and every beta1.
ScheduleDeviation schedule_deviation(const CoeffFn& fn, const std::vector<double>& beta1s,
                                     int grid_points = 101, double beta0 = 0.01);

CheckResult check_schedule(const CoeffFn& fn = closed_form_coeffs);

// ---------------------------------------------------------------------------
// Bridge

CheckResult check_bridge(std::size_t draws = 100000, std::uint64_t seed = 7);
CheckResult check_lemma(std::uint64_t seed = 11);

// ---------------------------------------------------------------------------
// Sampler and guidance

CheckResult check_sampler(std::uint64_t seed = 13);
CheckResult check_guidance(std::uint64_t seed = 17);

// ---------------------------------------------------------------------------
// Autodiff

/// max over tensors of ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12),
/// gradients of `loss` with respect to `wrt` against central differences.
/// `loss` must rebuild the graph on the given tape on every call.
double gradient_error(const std::function<Tensor(Tape&)>& loss, const std::vector<Tensor>& wrt,
                      double step = 1e-5);

struct GradientCase {
  std::string op;
  double worst = 0.0;
};

/// Every differentiable op on `instances` random inputs.
std::vector<GradientCase> op_gradient_errors(int instances = 10, std::uint64_t seed = 19);

/// Encoder + connectivity model + cross-entropy, all parameters, on a
/// two-token toy. Returns the worst relative error over `instances` draws.
double composite_gradient_error(int instances = 10, std::uint64_t seed = 23);

CheckResult check_autodiff();

// ---------------------------------------------------------------------------
// Metrics

CheckResult check_metrics();

// ---------------------------------------------------------------------------
// Desk-scale experiments

/// Hyperparameters for the toy experiments: the default learning rate and
/// dropout on a smaller network (dim 64, 2 blocks) and batches of 32.
TrainConfig desk_config(std::uint64_t seed);

/// 50 users, 20 items, block-cyclic, no noise.
SyntheticSpec overfit_toy_spec(std::uint64_t seed = 1);

struct OverfitRun {
  SyntheticData data;
  TrainConfig config;
  FitResult fit;
  double seconds = 0.0;
};

OverfitRun train_overfit_toy(std::uint64_t seed = 1);

CheckResult check_overfit(const OverfitRun& run);
CheckResult check_steps_plateau(const OverfitRun& run);

struct SweepCell {
  ScheduleKind kind;
  SamplerMode mode;
  double beta1;
  double hr10;
};

/// Trains one model per (kind, beta1) with identical data, seed and budget,
/// and evaluates test HR@10 under each sampler mode.
std::vector<SweepCell> run_sweep(const Dataset& dataset, const TrainConfig& base,
                                 const std::vector<ScheduleKind>& kinds,
                                 const std::vector<SamplerMode>& modes,
                                 const std::vector<double>& beta1s);
void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells);

CheckResult check_config_sweep(std::uint64_t seed = 1);
CheckResult check_con_mode();

/// Criteria that need no training (schedule, bridge, lemma, sampler,
/// guidance, autodiff, metrics).
Report run_oracles();
/// All acceptance criteria, including the training experiments.
Report run_acceptance();

}  // namespace bridgerec::verify
