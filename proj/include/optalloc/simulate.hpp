#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "optalloc/estimate.hpp"
#include "optalloc/model.hpp"
#include "optalloc/numerics.hpp"
#include "optalloc/scenario.hpp"

namespace optalloc::sim {

// Each row draws w, one uniform for assignment and both potential outcomes
// (independent given w); only Y(a) is kept. The stream therefore advances
// identically under every design, so designs sharing a stream see the same
// covariates and outcome noise.
est::TrialDataset generate_trial(const CovariateDistribution& law, const OutcomeModel& outcome,
                                 const AllocationDesign& design, std::size_t n,
                                 numerics::RngStream& rng);

est::TargetCohort generate_target(const CovariateDistribution& law, std::size_t n_star,
                                  numerics::RngStream& rng);

// Sequential enrollment: draw w from the cohort law, z ~ Bernoulli(e(w)) with
// e = gamma f / f_gen, treat and observe z = 1 rows, stop once n have z = 1.
est::GeneralizationCohort generate_generalization_cohort(const CovariateDistribution& trial_law,
                                                         const GeneralizeTarget& target,
                                                         const OutcomeModel& outcome,
                                                         const AllocationDesign& design,
                                                         std::size_t n, numerics::RngStream& rng);

// Textual design specification:
//   cir:<pi>                 fixed allocation probability
//   optimal_cir:<estimand>   optimal fixed allocation for that estimand
//   optimal_cdr[:<estimand>] optimal covariate-dependent design (the
//                            estimand only matters for a non-identity link)
struct DesignSpec {
  enum class Kind { cir, optimal_cir, optimal_cdr };
  Kind kind = Kind::cir;
  double pi = 0.5;
  std::optional<Estimand> estimand;

  static DesignSpec parse(const std::string& text);
  std::string to_string() const;
};

std::optional<Estimand> parse_estimand(std::string_view name);

AllocationDesign resolve_design(const DesignSpec& spec, const Scenario& scenario,
                                const LinkFunction& link = {});

enum class NuisanceMode { fitted, oracle };

struct StudyConfig {
  Scenario scenario = reference_scenario();
  std::vector<DesignSpec> designs;
  std::size_t reference = 0;  // index into designs
  std::vector<Estimand> estimands{Estimand::trial, Estimand::transport, Estimand::generalize,
                                  Estimand::poststratify};
  std::size_t n = 250;
  std::size_t n_star = 250;
  std::size_t replications = 5000;
  std::uint64_t master_seed = 20240101;
  NuisanceMode mode = NuisanceMode::fitted;
  LinkFunction link;
  unsigned jobs = 1;
  double max_failure_fraction = 0.01;

  void validate() const;
};

// The reference setting: 1:1 CIR, the four optimal CIR designs and the
// optimal CDR, scored on all four estimands.
StudyConfig reference_study();

struct CellSummary {
  std::string design;
  Estimand estimand = Estimand::trial;
  double truth = 0.0;
  double mean = 0.0;
  double variance = 0.0;  // empirical, divisor R - 1
  double bias = 0.0;
  double bias_se = 0.0;  // sd / sqrt(R)
  double relative_efficiency = 1.0;  // var(reference) / var(design)
  double relative_efficiency_se = 0.0;  // paired delta method
  double theoretical_re = 1.0;  // ratio of variance bounds
  double mean_std_error = 0.0;  // average reported SE
  double coverage = 0.0;  // fraction of 95% intervals covering the truth
};

struct StudyResult {
  std::vector<std::string> designs;  // labels, in config order
  std::vector<double> design_pi;  // CIR probability, NaN for CDR
  std::vector<Estimand> estimands;
  std::vector<CellSummary> cells;  // design-major
  std::size_t replications = 0;
  std::size_t used = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;  // first few, for diagnostics
  std::size_t clipped = 0;
  std::uint64_t master_seed = 0;

  const CellSummary& cell(std::size_t design, std::size_t estimand) const {
    return cells[design * estimands.size() + estimand];
  }
};

// Arm-specific target means mu*_a by quadrature, for link-scale truths.
std::pair<double, double> target_arm_means(const Scenario& scenario, Estimand estimand);
double link_truth(const Scenario& scenario, Estimand estimand, const LinkFunction& link);

// Deterministic in master_seed regardless of `jobs`. Replicate i draws its
// trial, target and cohort from streams 3i, 3i+1, 3i+2, shared across
// designs. A replicate in which any fit fails is dropped from every cell;
// throws FitError when more than max_failure_fraction are dropped.
StudyResult run_study(const StudyConfig& config);

// Data for one replicate and design, as the study generates it.
struct ReplicateData {
  est::TrialDataset trial;
  est::TargetCohort target;
  est::GeneralizationCohort cohort;
};
ReplicateData generate_replicate(const StudyConfig& config, const AllocationDesign& design,
                                 std::size_t replicate);

// One estimate per configured estimand for a replicate's data.
std::vector<est::EstimateReport> estimate_replicate(const StudyConfig& config,
                                                    const ReplicateData& data);

}  // namespace optalloc::sim
