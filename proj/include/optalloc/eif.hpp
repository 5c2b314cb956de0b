#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "optalloc/model.hpp"
#include "optalloc/numerics.hpp"

namespace optalloc::eif {

// One observed unit. z = 1 marks a trial participant, for whom (a, y) are
// observed; z = 0 marks a target-cohort member contributing only w.
struct Observation {
  int z = 1;
  Covariate w;
  std::optional<int> a;
  std::optional<double> y;
};

// Every nuisance quantity an influence function may consult. Functions not
// used by a given case may be left empty.
struct NuisanceSet {
  ArmFunction m;
  CovariateFunction r;  // transport density ratio
  CovariateFunction e;  // generalization participation propensity
  CovariateFunction p;  // treatment assignment propensity
  double gamma = 0.5;
  // post-stratification (the trial ATE is the single-stratum case)
  std::optional<PostStratifyTarget> strata;
  std::vector<double> tau;
  std::vector<double> stratum_effect;
  double estimand = 0.0;
};

double psi_transport(const Observation& o, const NuisanceSet& nu);
double psi_generalize(const Observation& o, const NuisanceSet& nu);
double psi_poststrat(const Observation& o, const NuisanceSet& nu);
// Dispatch on the estimand; trial and post-stratification share psi_poststrat.
double psi(Estimand estimand, const Observation& o, const NuisanceSet& nu);

// The one-stratum partition covering the whole covariate space.
PostStratifyTarget whole_population();

// True nuisances for a target. `gamma` is Pr(Z = 1) for transportation;
// generalization takes its gamma from the target itself.
NuisanceSet true_nuisances(const CovariateDistribution& trial, const TargetSpec& target,
                           const OutcomeModel& outcome, const AllocationDesign& design,
                           double gamma = 0.5);

// Var{psi(O)} by quadrature over the closed-form decomposition.
double variance_bound(const AllocationDesign& design, const TargetSpec& target,
                      const CovariateDistribution& trial, const OutcomeModel& outcome,
                      double gamma = 0.5);

struct MonteCarloBound {
  double variance = 0.0;
  double variance_se = 0.0;
  double mean = 0.0;
  double mean_se = 0.0;
  std::size_t n = 0;
};

// Empirical variance of psi over n observations simulated from the true
// data-generating law, evaluated with the true nuisances.
MonteCarloBound variance_bound_mc(const AllocationDesign& design, const TargetSpec& target,
                                  const CovariateDistribution& trial, const OutcomeModel& outcome,
                                  double gamma, std::size_t n, numerics::RngStream& rng);

// Draws one observation O for the data configuration of `target`.
Observation draw_observation(const TargetSpec& target, const CovariateDistribution& trial,
                             const OutcomeModel& outcome, const NuisanceSet& nu,
                             numerics::RngStream& rng);

// variance_bound(reference) / variance_bound(candidate)
double relative_efficiency(const AllocationDesign& reference, const AllocationDesign& candidate,
                           const TargetSpec& target, const CovariateDistribution& trial,
                           const OutcomeModel& outcome, double gamma = 0.5);

}  // namespace optalloc::eif
