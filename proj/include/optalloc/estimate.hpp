#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "optalloc/model.hpp"

namespace optalloc::est {

// Fitted probabilities are clipped to [kProbabilityClip, 1 - kProbabilityClip].
inline constexpr double kProbabilityClip = 1e-6;

struct TrialRow {
  Covariate w;
  int a = 0;
  double y = 0.0;
  double p_assign = 0.5;  // known design propensity at enrollment
};

struct TrialDataset {
  std::vector<TrialRow> rows;

  std::size_t size() const { return rows.size(); }
  // Throws DataError on a non-binary a or w2, or p_assign outside (0, 1).
  void validate() const;
};

struct TargetCohort {
  std::vector<Covariate> rows;
};

struct CohortRow {
  Covariate w;
  int z = 0;
  std::optional<int> a;
  std::optional<double> y;
  std::optional<double> p_assign;
};

struct GeneralizationCohort {
  std::vector<CohortRow> rows;

  std::size_t size() const { return rows.size(); }
  // Requires both z values and complete (a, y, p_assign) on every z = 1 row.
  void validate() const;
  TrialDataset trial_subset() const;
};

enum class Feature { intercept, w1, w2, w1_squared, w1_w2 };

// Feature map for working regression models.
class Basis {
 public:
  explicit Basis(std::vector<Feature> features);
  static Basis outcome_default();     // (1, w1, w2)
  static Basis membership_default();  // (1, w1, w1^2, w2)

  std::size_t size() const { return features_.size(); }
  std::span<const Feature> features() const { return features_; }
  std::string name(std::size_t j) const;
  double value(std::size_t j, const Covariate& w) const;
  double linear(const Eigen::VectorXd& coef, const Covariate& w) const;
  Eigen::MatrixXd design(std::span<const Covariate> rows) const;

 private:
  std::vector<Feature> features_;
};

struct GlmFit {
  Eigen::VectorXd coef;
  int iterations = 0;
  std::vector<double> deviance_trace;
};

// Throws FitError naming collinear columns when X is rank deficient.
GlmFit fit_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Basis& basis);

// Logistic regression by iteratively reweighted least squares. Throws
// FitError on rank deficiency, perfect separation, or non-convergence
// (with the deviance trace in the message).
GlmFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Basis& basis,
                    double tolerance = 1e-10, int max_iterations = 100);

// Per-arm working outcome model: OLS for continuous y, logistic for binary y.
struct OutcomeFit {
  Basis basis = Basis::outcome_default();
  OutcomeFamily family = OutcomeFamily::normal;
  std::array<Eigen::VectorXd, 2> coef;
  std::array<int, 2> iterations{};

  double mean(int arm, const Covariate& w) const;
};

OutcomeFit fit_outcome_regression(const TrialDataset& data,
                                  const Basis& basis = Basis::outcome_default(),
                                  OutcomeFamily family = OutcomeFamily::normal);

// r(w) = (n / n*) (1 - q(w)) / q(w) where q is the fitted trial-membership
// probability in the pooled trial + target sample.
struct DensityRatioFit {
  Basis basis = Basis::membership_default();
  Eigen::VectorXd coef;
  double log_sampling_ratio = 0.0;  // log(n / n*)
  int iterations = 0;
  std::size_t clipped = 0;
  double calibration = 1.0;  // trial-sample average of r

  double operator()(const Covariate& w) const;
};

DensityRatioFit fit_density_ratio(const TrialDataset& trial, const TargetCohort& target,
                                  const Basis& basis = Basis::membership_default());

// e(w) = Pr(Z = 1 | w), clipped.
struct ParticipationFit {
  Basis basis = Basis::membership_default();
  Eigen::VectorXd coef;
  int iterations = 0;
  std::size_t clipped = 0;

  double operator()(const Covariate& w) const;
};

ParticipationFit fit_participation(const GeneralizationCohort& cohort,
                                   const Basis& basis = Basis::membership_default());

struct NuisanceDiagnostics {
  std::size_t clipped = 0;
  int outcome_iterations = 0;
  int ratio_iterations = 0;
  int participation_iterations = 0;
  std::optional<double> ratio_calibration;
};

// Nuisance functions consumed by the estimators. Either fitted from data or
// supplied externally (true nuisances, cross-fitted models).
struct FittedNuisances {
  ArmFunction m;
  CovariateFunction r;
  CovariateFunction e;
  NuisanceDiagnostics diagnostics;
};

FittedNuisances fit_trial_nuisances(const TrialDataset& trial,
                                    const Basis& outcome_basis = Basis::outcome_default(),
                                    OutcomeFamily family = OutcomeFamily::normal);
FittedNuisances fit_transport_nuisances(const TrialDataset& trial, const TargetCohort& target,
                                        const Basis& outcome_basis = Basis::outcome_default(),
                                        const Basis& ratio_basis = Basis::membership_default(),
                                        OutcomeFamily family = OutcomeFamily::normal);
FittedNuisances fit_generalize_nuisances(const GeneralizationCohort& cohort,
                                         const Basis& outcome_basis = Basis::outcome_default(),
                                         const Basis& participation_basis = Basis::membership_default(),
                                         OutcomeFamily family = OutcomeFamily::normal);

struct EstimateReport {
  double point = 0.0;
  double std_error = 0.0;
  std::size_t n_effective = 0;
  // point = plugin + augmentation for the one-step estimators
  std::optional<double> plugin;
  std::optional<double> augmentation;
  NuisanceDiagnostics diagnostics;
};

EstimateReport estimate_transport(const TrialDataset& trial, const TargetCohort& target,
                                  const FittedNuisances& nu);
EstimateReport estimate_generalize(const GeneralizationCohort& cohort, const FittedNuisances& nu);
EstimateReport estimate_poststrat(const TrialDataset& trial, const PostStratifyTarget& strata,
                                  const FittedNuisances& nu);
// Trial-population ATE (single-stratum post-stratification).
EstimateReport estimate_trial_ate(const TrialDataset& trial, const FittedNuisances& nu);

// One-step estimates of mu*_1 and mu*_0 with their estimated influence
// values, one per analysed row.
struct ArmMeans {
  double mu1 = 0.0;
  double mu0 = 0.0;
  std::vector<double> influence1;
  std::vector<double> influence0;
  NuisanceDiagnostics diagnostics;
};

ArmMeans transport_arm_means(const TrialDataset& trial, const TargetCohort& target,
                             const FittedNuisances& nu);
ArmMeans generalize_arm_means(const GeneralizationCohort& cohort, const FittedNuisances& nu);
ArmMeans poststrat_arm_means(const TrialDataset& trial, const PostStratifyTarget& strata,
                             const FittedNuisances& nu);

// g(mu1) - g(mu0) with a delta-method standard error.
EstimateReport estimate_link_contrast(const ArmMeans& arms, const LinkFunction& link);

}  // namespace optalloc::est
