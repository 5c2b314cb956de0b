#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "optalloc/eif.hpp"
#include "optalloc/simulate.hpp"

using namespace optalloc;
using namespace optalloc::sim;

namespace {

constexpr Estimand kAll[] = {Estimand::trial, Estimand::transport, Estimand::generalize, Estimand::poststratify};

// Empirical variance of the 1:1 CIR estimators relative to bound / (observations).
std::array<double, 4> variance_to_bound(std::size_t n, std::size_t reps) {
  StudyConfig c = reference_study();
  c.designs = {DesignSpec::parse("cir:0.5")};
  c.n = c.n_star = n;
  c.replications = reps;
  c.master_seed = 31337 + n;
  const auto result = run_study(c);
  const auto& s = c.scenario;
  std::array<double, 4> ratio{};
  for (int k = 0; k < 4; ++k) {
    const auto target = s.target(kAll[k]);
    const double bound = eif::variance_bound(AllocationDesign::cir(0.5), target, s.trial, s.outcome, 0.5);
    double observations = static_cast<double>(n);
    if (kAll[k] == Estimand::transport) observations = static_cast<double>(c.n + c.n_star);
    if (kAll[k] == Estimand::generalize) observations = static_cast<double>(n) / s.generalize.gamma;
    ratio[k] = result.cell(0, k).variance / (bound / observations);
  }
  return ratio;
}

}  // namespace

TEST_CASE("empirical variance approaches the bound from above") {
  const std::size_t reps = 4000;
  const auto small = variance_to_bound(250, reps);
  const auto large = variance_to_bound(1000, reps);
  // relative standard error of a sample variance, ignoring excess kurtosis
  const double rel_se = std::sqrt(2.0 / (reps - 1));
  for (int k = 0; k < 4; ++k) {
    INFO(to_string(kAll[k]), ": n=250 ratio ", small[k], ", n=1000 ratio ", large[k]);
    std::printf("%-13s variance/bound  n=250 %.4f  n=1000 %.4f\n", std::string(to_string(kAll[k])).c_str(),
                small[k], large[k]);
    CHECK(small[k] > 1.0 - 3 * rel_se);
    CHECK(large[k] > 1.0 - 3 * rel_se);
    CHECK(large[k] < small[k]);
    CHECK(large[k] < 1.15);
  }
}

TEST_CASE("seed-disjoint halves agree on relative efficiency") {
  StudyConfig c = reference_study();
  c.replications = 2500;
  c.master_seed = 1001;
  const auto first = run_study(c);
  c.master_seed = 2002;
  const auto second = run_study(c);
  for (std::size_t d = 1; d < first.designs.size(); ++d) {
    for (std::size_t k = 0; k < first.estimands.size(); ++k) {
      const auto& a = first.cell(d, k);
      const auto& b = second.cell(d, k);
      const double se = std::hypot(a.relative_efficiency_se, b.relative_efficiency_se);
      INFO(a.design, " / ", to_string(a.estimand), ": ", a.relative_efficiency, " vs ", b.relative_efficiency);
      CHECK(std::abs(a.relative_efficiency - b.relative_efficiency) < 3 * se);
    }
  }
}
