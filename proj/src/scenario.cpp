#include "optalloc/scenario.hpp"

namespace optalloc {

TargetSpec Scenario::target(Estimand estimand) const {
  switch (estimand) {
    case Estimand::trial: return TrialTarget{};
    case Estimand::transport: return transport;
    case Estimand::generalize: return generalize;
    case Estimand::poststratify: return poststratify;
  }
  return TrialTarget{};
}

Scenario reference_scenario() {
  using numerics::TruncatedNormal;
  auto trial = CovariateDistribution::product(TruncatedNormal(0.0, 0.75, -2.0, 2.0), 0.2);
  auto transport = CovariateDistribution::product(TruncatedNormal(0.5, 1.0, -2.0, 2.0), 0.5);

  ParametricOutcome outcome;
  outcome.family = OutcomeFamily::normal;
  outcome.mean = {LinearCoefficients{0.0, 1.0, 1.0}, LinearCoefficients{1.0, 0.0, 1.0}};
  outcome.log_variance = {LinearCoefficients{-2.0, 1.0, 2.0}, LinearCoefficients{1.0, -1.0, -2.0}};

  return Scenario{trial,
                  OutcomeModel(outcome),
                  TransportTarget{transport},
                  GeneralizeTarget{CovariateDistribution::mixture(trial, transport, 0.5), 0.5},
                  PostStratifyTarget::from_cutpoint(0.5, {0.1, 0.2, 0.3, 0.4})};
}

}  // namespace optalloc
