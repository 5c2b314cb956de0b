#pragma once

#include "optalloc/model.hpp"

namespace optalloc {

// Trial law, outcome model and the three target populations of the
// reference simulation setting: W1 ~ N(0, 0.75^2; -2, 2), W2 ~ B(0.2);
// Y(0) ~ N(W1 + W2, exp(-2 + W1 + 2 W2)), Y(1) ~ N(1 + W2, exp(1 - W1 - 2 W2));
// transport target W1* ~ N(0.5, 1; -2, 2), W2* ~ B(0.5); generalization
// target the 1:1 mixture of the two; post-stratification on W1 < 0.5 and W2
// with weights (0.1, 0.2, 0.3, 0.4).
struct Scenario {
  CovariateDistribution trial;
  OutcomeModel outcome;
  TransportTarget transport;
  GeneralizeTarget generalize;
  PostStratifyTarget poststratify;

  TargetSpec target(Estimand estimand) const;
};

Scenario reference_scenario();

}  // namespace optalloc
