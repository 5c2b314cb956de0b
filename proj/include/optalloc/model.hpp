#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "optalloc/numerics.hpp"

namespace optalloc {

// Baseline covariates: one continuous (w1) and one binary (w2).
struct Covariate {
  double w1 = 0.0;
  int w2 = 0;
};

using CovariateFunction = std::function<double(const Covariate&)>;
using ArmFunction = std::function<double(int arm, const Covariate&)>;

// W1 ~ truncated normal, W2 ~ Bernoulli(q), independent.
struct ProductLaw {
  numerics::TruncatedNormal w1;
  double q;

  double pdf(const Covariate& w) const;
  double log_pdf(const Covariate& w) const;
  Covariate sample(numerics::RngStream& rng) const;
  bool operator==(const ProductLaw& other) const;
};

// A product law or a two-component mixture of product laws sharing the
// same W1 support.
class CovariateDistribution {
 public:
  struct Component {
    double weight;
    ProductLaw law;
  };

  static CovariateDistribution product(numerics::TruncatedNormal w1, double q);
  // lambda * first + (1 - lambda) * second; both must be product laws.
  static CovariateDistribution mixture(const CovariateDistribution& first,
                                       const CovariateDistribution& second, double lambda);

  bool is_mixture() const { return components_.size() > 1; }
  std::span<const Component> components() const { return components_; }
  double lower() const { return components_.front().law.w1.lower(); }
  double upper() const { return components_.front().law.w1.upper(); }

  double pdf(const Covariate& w) const;
  double log_pdf(const Covariate& w) const;
  double prob_w2(int w2) const;
  Covariate sample(numerics::RngStream& rng) const;

  // E{g(W)} by Gauss-Legendre on W1 (split at `breaks`) summed over W2.
  double expect(const CovariateFunction& g, std::span<const double> breaks = {},
                int order = numerics::kDefaultQuadratureOrder) const;

  bool operator==(const CovariateDistribution& other) const;

 private:
  CovariateDistribution() = default;
  std::vector<Component> components_;
};

enum class OutcomeFamily { normal, bernoulli };

std::string_view to_string(OutcomeFamily family);

// Coefficients on (1, w1, w2).
using LinearCoefficients = std::array<double, 3>;

inline double linear_predictor(const LinearCoefficients& c, const Covariate& w) {
  return c[0] + c[1] * w.w1 + c[2] * w.w2;
}

// Serializable parametric description of an outcome model. For the normal
// family the mean is linear and the variance log-linear; for the Bernoulli
// family `mean` holds logit coefficients and the variance is m(1 - m).
struct ParametricOutcome {
  OutcomeFamily family = OutcomeFamily::normal;
  std::array<LinearCoefficients, 2> mean{};
  std::array<LinearCoefficients, 2> log_variance{};
};

// Conditional means m(a, w) and variances v_a(w) of the potential outcomes.
class OutcomeModel {
 public:
  explicit OutcomeModel(ParametricOutcome parametric);
  OutcomeModel(ArmFunction mean, ArmFunction variance, OutcomeFamily family);

  double mean(int arm, const Covariate& w) const { return mean_(arm, w); }
  double variance(int arm, const Covariate& w) const { return variance_(arm, w); }
  OutcomeFamily family() const { return family_; }
  const std::optional<ParametricOutcome>& parametric() const { return parametric_; }

  double sample(int arm, const Covariate& w, numerics::RngStream& rng) const;

 private:
  ArmFunction mean_;
  ArmFunction variance_;
  OutcomeFamily family_;
  std::optional<ParametricOutcome> parametric_;
};

// delta(w) = m(1, w) - m(0, w)
double delta(const OutcomeModel& outcome, const Covariate& w);

// CIR(pi) or CDR(p(.)).
class AllocationDesign {
 public:
  static AllocationDesign cir(double pi);
  static AllocationDesign cdr(CovariateFunction propensity, std::string label = "cdr");

  bool is_cir() const { return std::holds_alternative<double>(rule_); }
  double pi() const;
  double propensity(const Covariate& w) const;
  const std::string& label() const { return label_; }

 private:
  AllocationDesign(std::variant<double, CovariateFunction> rule, std::string label)
      : rule_(std::move(rule)), label_(std::move(label)) {}
  std::variant<double, CovariateFunction> rule_;
  std::string label_;
};

// Axis-aligned rectangle: w1 in [w1_lower, w1_upper), w2 fixed or free.
struct Stratum {
  double w1_lower = -std::numeric_limits<double>::infinity();
  double w1_upper = std::numeric_limits<double>::infinity();
  std::optional<int> w2;

  bool contains(const Covariate& w) const {
    return w.w1 >= w1_lower && w.w1 < w1_upper && (!w2 || *w2 == w.w2);
  }
  bool operator==(const Stratum&) const = default;
};

struct TrialTarget {
  bool operator==(const TrialTarget&) const = default;
};

struct TransportTarget {
  CovariateDistribution law;
};

// Target cohort containing the trial cohort; `law` is the cohort covariate
// law and gamma = Pr(Z = 1) the trial participation fraction.
struct GeneralizeTarget {
  CovariateDistribution law;
  double gamma = 0.5;
};

class PostStratifyTarget {
 public:
  PostStratifyTarget(std::vector<Stratum> strata, std::vector<double> weights);
  // Four strata {w1 < c, w1 >= c} x {w2 = 0, 1}, ordered
  // (w1<c, w2=0), (w1>=c, w2=0), (w1<c, w2=1), (w1>=c, w2=1).
  static PostStratifyTarget from_cutpoint(double cutpoint, std::vector<double> weights);

  std::span<const Stratum> strata() const { return strata_; }
  std::span<const double> weights() const { return weights_; }
  std::size_t size() const { return strata_.size(); }
  std::optional<std::size_t> stratum_of(const Covariate& w) const;
  // Finite w1 edges, for splitting quadrature.
  std::vector<double> breakpoints() const;

 private:
  std::vector<Stratum> strata_;
  std::vector<double> weights_;
};

using TargetSpec = std::variant<TrialTarget, TransportTarget, GeneralizeTarget, PostStratifyTarget>;

enum class Estimand { trial, transport, generalize, poststratify };

std::string_view to_string(Estimand estimand);
Estimand estimand_of(const TargetSpec& target);
std::vector<double> breakpoints(const TargetSpec& target);

class LinkFunction {
 public:
  enum class Kind { identity, log, logit };

  LinkFunction() = default;
  explicit LinkFunction(Kind kind) : kind_(kind) {}
  static LinkFunction parse(std::string_view name);

  Kind kind() const { return kind_; }
  std::string_view name() const;
  bool in_domain(double x) const;
  double value(double x) const;
  double derivative(double x) const;

 private:
  Kind kind_ = Kind::identity;
};

// tau_k = Pr_F(W in stratum k). Throws DomainError if any is below 1e-12
// or if the strata do not partition the support.
std::vector<double> stratum_probabilities(const CovariateDistribution& trial,
                                          const PostStratifyTarget& target);

// Delta_k = E_F{delta(W) | W in stratum k}.
std::vector<double> stratum_effects(const OutcomeModel& outcome, const CovariateDistribution& trial,
                                    const PostStratifyTarget& target);

// Integral of delta against the target covariate law.
double estimand_value(const OutcomeModel& outcome, const CovariateDistribution& trial,
                      const TargetSpec& target);

}  // namespace optalloc
