// Runs every acceptance criterion and prints one PASS/FAIL line for each.
// Exit status is 0 only when all of them pass.

#include <iostream>

#include "bridgerec/verify.hpp"

int main() {
  using namespace bridgerec::verify;
  Report report;
  auto run = [&](CheckResult r) {
    report.checks.push_back(r);
    Report one{{r}};
    one.print(std::cout);
    std::cout.flush();
  };
  run(check_schedule());
  run(check_bridge());
  run(check_lemma());
  run(check_sampler());
  run(check_guidance());
  run(check_autodiff());
  const auto toy = train_overfit_toy();
  run(check_overfit(toy));
  run(check_steps_plateau(toy));
  run(check_config_sweep());
  run(check_con_mode());
  run(check_metrics());

  std::size_t failed = 0;
  for (const auto& c : report.checks) failed += !c.passed;
  std::cout << (report.checks.size() - failed) << "/" << report.checks.size()
            << " acceptance criteria passed\n";
  return failed == 0 ? 0 : 1;
}
