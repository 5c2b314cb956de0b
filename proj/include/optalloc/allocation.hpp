#pragma once

#include <span>
#include <vector>

#include "optalloc/model.hpp"

namespace optalloc::alloc {

// Moments that determine the optimal designs for a target:
//   m_a = E_F{r(W)^2 v_a(W)},  mu*_a = E_F*{m(a, W)},  var_star_delta = Var_F*{delta(W)}.
struct DesignMoments {
  double m1 = 0.0;
  double m0 = 0.0;
  double mu1_star = 0.0;
  double mu0_star = 0.0;
  double var_star_delta = 0.0;

  double estimand() const { return mu1_star - mu0_star; }
};

// r = dF*/dF, evaluated in log space. The trial target gives r = 1.
CovariateFunction density_ratio(const CovariateDistribution& trial, const TargetSpec& target);

// e(w) = gamma / r(w) for a generalization target. Throws DomainError if
// gamma is too large for the target law (e would reach 1 on the support).
CovariateFunction participation_propensity(const CovariateDistribution& trial,
                                           const GeneralizeTarget& target);

DesignMoments design_moments(const CovariateDistribution& trial, const TargetSpec& target,
                             const OutcomeModel& outcome);

// Sample-average moments over trial covariates, for fitted-model workflows
// where F is the empirical covariate distribution.
DesignMoments empirical_design_moments(std::span<const Covariate> trial_sample,
                                       const CovariateFunction& ratio,
                                       const OutcomeModel& outcome);

// g'(mu*_1) sqrt(m1) / (g'(mu*_1) sqrt(m1) + g'(mu*_0) sqrt(m0))
double optimal_cir(const DesignMoments& moments, const LinkFunction& link = {});

// w -> g'(mu*_1) v_1(w)^(1/2) / (g'(mu*_1) v_1(w)^(1/2) + g'(mu*_0) v_0(w)^(1/2)).
// The returned function throws DomainError at any w where a conditional
// variance vanishes, since the optimum would then leave (0, 1).
CovariateFunction optimal_cdr(const OutcomeModel& outcome, const LinkFunction& link = {},
                              const DesignMoments& moments = {});

AllocationDesign optimal_cdr_design(const OutcomeModel& outcome, const LinkFunction& link = {},
                                    const DesignMoments& moments = {});

// Optimal CIR probability for the trial ATE restricted to a covariate region
// (a union of disjoint rectangles).
double optimal_cir_restricted(const CovariateDistribution& trial, const OutcomeModel& outcome,
                              std::span<const Stratum> region);

}  // namespace optalloc::alloc
