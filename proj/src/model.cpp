#include "optalloc/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "optalloc/errors.hpp"

namespace optalloc {

using numerics::RngStream;
using numerics::TruncatedNormal;

double ProductLaw::pdf(const Covariate& w) const {
  return w1.pdf(w.w1) * (w.w2 == 1 ? q : 1.0 - q);
}

double ProductLaw::log_pdf(const Covariate& w) const {
  return w1.log_pdf(w.w1) + std::log(w.w2 == 1 ? q : 1.0 - q);
}

Covariate ProductLaw::sample(RngStream& rng) const {
  const double x = w1.sample(rng);
  return {x, rng.bernoulli(q) ? 1 : 0};
}

bool ProductLaw::operator==(const ProductLaw& other) const {
  return w1.mu() == other.w1.mu() && w1.sigma() == other.w1.sigma() &&
         w1.lower() == other.w1.lower() && w1.upper() == other.w1.upper() && q == other.q;
}

CovariateDistribution CovariateDistribution::product(TruncatedNormal w1, double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw DomainError("covariate law: Bernoulli probability q must lie in (0, 1)");
  }
  CovariateDistribution d;
  d.components_.push_back({1.0, ProductLaw{w1, q}});
  return d;
}

CovariateDistribution CovariateDistribution::mixture(const CovariateDistribution& first,
                                                     const CovariateDistribution& second,
                                                     double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw DomainError("covariate law: mixture weight must lie in (0, 1)");
  }
  if (first.is_mixture() || second.is_mixture()) {
    throw DomainError("covariate law: mixture components must be product laws");
  }
  if (first.lower() != second.lower() || first.upper() != second.upper()) {
    throw DomainError("covariate law: mixture components must share the same W1 support");
  }
  CovariateDistribution d;
  d.components_.push_back({lambda, first.components_.front().law});
  d.components_.push_back({1.0 - lambda, second.components_.front().law});
  return d;
}

double CovariateDistribution::pdf(const Covariate& w) const {
  double f = 0.0;
  for (const auto& c : components_) f += c.weight * c.law.pdf(w);
  return f;
}

double CovariateDistribution::log_pdf(const Covariate& w) const {
  if (!is_mixture()) return components_.front().law.log_pdf(w);
  // log-sum-exp over components
  double hi = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(components_.size());
  for (const auto& c : components_) {
    terms.push_back(std::log(c.weight) + c.law.log_pdf(w));
    hi = std::max(hi, terms.back());
  }
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - hi);
  return hi + std::log(s);
}

double CovariateDistribution::prob_w2(int w2) const {
  double p = 0.0;
  for (const auto& c : components_) p += c.weight * (w2 == 1 ? c.law.q : 1.0 - c.law.q);
  return p;
}

Covariate CovariateDistribution::sample(RngStream& rng) const {
  if (!is_mixture()) return components_.front().law.sample(rng);
  const double u = rng.uniform();
  const auto& pick = u < components_[0].weight ? components_[0] : components_[1];
  return pick.law.sample(rng);
}

double CovariateDistribution::expect(const CovariateFunction& g, std::span<const double> breaks,
                                     int order) const {
  double total = 0.0;
  for (int w2 = 0; w2 <= 1; ++w2) {
    total += numerics::integrate(
        [&](double x) {
          const Covariate w{x, w2};
          return pdf(w) * g(w);
        },
        lower(), upper(), breaks, order);
  }
  return total;
}

bool CovariateDistribution::operator==(const CovariateDistribution& other) const {
  if (components_.size() != other.components_.size()) return false;
  for (std::size_t i = 0; i < components_.size(); ++i) {
    if (components_[i].weight != other.components_[i].weight ||
        !(components_[i].law == other.components_[i].law)) {
      return false;
    }
  }
  return true;
}

std::string_view to_string(OutcomeFamily family) {
  return family == OutcomeFamily::normal ? "normal" : "bernoulli";
}

namespace {

double expit(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

OutcomeModel::OutcomeModel(ParametricOutcome p) : family_(p.family), parametric_(p) {
  if (p.family == OutcomeFamily::normal) {
    mean_ = [p](int a, const Covariate& w) { return linear_predictor(p.mean[a], w); };
    variance_ = [p](int a, const Covariate& w) {
      return std::exp(linear_predictor(p.log_variance[a], w));
    };
  } else {
    mean_ = [p](int a, const Covariate& w) { return expit(linear_predictor(p.mean[a], w)); };
    variance_ = [p](int a, const Covariate& w) {
      const double m = expit(linear_predictor(p.mean[a], w));
      return m * (1.0 - m);
    };
  }
}

OutcomeModel::OutcomeModel(ArmFunction mean, ArmFunction variance, OutcomeFamily family)
    : mean_(std::move(mean)), variance_(std::move(variance)), family_(family) {}

double OutcomeModel::sample(int arm, const Covariate& w, RngStream& rng) const {
  const double m = mean(arm, w);
  if (family_ == OutcomeFamily::bernoulli) return rng.uniform() < m ? 1.0 : 0.0;
  return m + std::sqrt(variance(arm, w)) * rng.normal();
}

double delta(const OutcomeModel& outcome, const Covariate& w) {
  return outcome.mean(1, w) - outcome.mean(0, w);
}

AllocationDesign AllocationDesign::cir(double pi) {
  if (!(pi > 0.0 && pi < 1.0)) {
    throw DomainError("allocation: CIR probability must lie in (0, 1)");
  }
  std::ostringstream label;
  label << "pi=" << pi;
  return AllocationDesign(pi, label.str());
}

AllocationDesign AllocationDesign::cdr(CovariateFunction propensity, std::string label) {
  if (!propensity) throw DomainError("allocation: empty propensity function");
  return AllocationDesign(std::move(propensity), std::move(label));
}

double AllocationDesign::pi() const {
  if (!is_cir()) throw DomainError("allocation: pi requested from a CDR design");
  return std::get<double>(rule_);
}

double AllocationDesign::propensity(const Covariate& w) const {
  if (is_cir()) return std::get<double>(rule_);
  return std::get<CovariateFunction>(rule_)(w);
}

PostStratifyTarget::PostStratifyTarget(std::vector<Stratum> strata, std::vector<double> weights)
    : strata_(std::move(strata)), weights_(std::move(weights)) {
  if (strata_.empty()) throw DomainError("post-stratification: at least one stratum required");
  if (strata_.size() != weights_.size()) {
    throw DomainError("post-stratification: one weight per stratum required");
  }
  for (double t : weights_) {
    if (!(t > 0.0)) throw DomainError("post-stratification: weights must be positive");
  }
  const double sum = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << "post-stratification: weights sum to " << sum << ", expected 1";
    throw DomainError(msg.str());
  }
  for (std::size_t i = 0; i < strata_.size(); ++i) {
    const Stratum& s = strata_[i];
    if (!(s.w1_lower < s.w1_upper)) throw DomainError("post-stratification: empty w1 interval");
    for (std::size_t j = i + 1; j < strata_.size(); ++j) {
      const Stratum& t = strata_[j];
      const bool w1_overlap = std::max(s.w1_lower, t.w1_lower) < std::min(s.w1_upper, t.w1_upper);
      const bool w2_overlap = !s.w2 || !t.w2 || *s.w2 == *t.w2;
      if (w1_overlap && w2_overlap) {
        throw DomainError("post-stratification: strata " + std::to_string(i + 1) + " and " +
                          std::to_string(j + 1) + " overlap");
      }
    }
  }
}

PostStratifyTarget PostStratifyTarget::from_cutpoint(double cutpoint, std::vector<double> weights) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<Stratum> strata{
      {-inf, cutpoint, 0}, {cutpoint, inf, 0}, {-inf, cutpoint, 1}, {cutpoint, inf, 1}};
  return PostStratifyTarget(std::move(strata), std::move(weights));
}

std::optional<std::size_t> PostStratifyTarget::stratum_of(const Covariate& w) const {
  for (std::size_t k = 0; k < strata_.size(); ++k) {
    if (strata_[k].contains(w)) return k;
  }
  return std::nullopt;
}

std::vector<double> PostStratifyTarget::breakpoints() const {
  std::vector<double> out;
  for (const auto& s : strata_) {
    if (std::isfinite(s.w1_lower)) out.push_back(s.w1_lower);
    if (std::isfinite(s.w1_upper)) out.push_back(s.w1_upper);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string_view to_string(Estimand estimand) {
  switch (estimand) {
    case Estimand::trial: return "trial";
    case Estimand::transport: return "transport";
    case Estimand::generalize: return "generalize";
    case Estimand::poststratify: return "poststratify";
  }
  return "unknown";
}

Estimand estimand_of(const TargetSpec& target) {
  return static_cast<Estimand>(target.index());
}

std::vector<double> breakpoints(const TargetSpec& target) {
  if (const auto* ps = std::get_if<PostStratifyTarget>(&target)) return ps->breakpoints();
  return {};
}

LinkFunction LinkFunction::parse(std::string_view name) {
  if (name == "identity") return LinkFunction(Kind::identity);
  if (name == "log") return LinkFunction(Kind::log);
  if (name == "logit") return LinkFunction(Kind::logit);
  throw DomainError("unknown link function '" + std::string(name) + "'");
}

std::string_view LinkFunction::name() const {
  switch (kind_) {
    case Kind::identity: return "identity";
    case Kind::log: return "log";
    case Kind::logit: return "logit";
  }
  return "unknown";
}

bool LinkFunction::in_domain(double x) const {
  switch (kind_) {
    case Kind::identity: return std::isfinite(x);
    case Kind::log: return x > 0.0 && std::isfinite(x);
    case Kind::logit: return x > 0.0 && x < 1.0;
  }
  return false;
}

double LinkFunction::value(double x) const {
  if (!in_domain(x)) {
    throw DomainError("link " + std::string(name()) + " evaluated outside its domain at " +
                      std::to_string(x));
  }
  switch (kind_) {
    case Kind::identity: return x;
    case Kind::log: return std::log(x);
    case Kind::logit: return std::log(x / (1.0 - x));
  }
  return x;
}

double LinkFunction::derivative(double x) const {
  if (!in_domain(x)) {
    throw DomainError("link " + std::string(name()) + " derivative outside its domain at " +
                      std::to_string(x));
  }
  switch (kind_) {
    case Kind::identity: return 1.0;
    case Kind::log: return 1.0 / x;
    case Kind::logit: return 1.0 / (x * (1.0 - x));
  }
  return 1.0;
}

std::vector<double> stratum_probabilities(const CovariateDistribution& trial,
                                          const PostStratifyTarget& target) {
  const auto breaks = target.breakpoints();
  std::vector<double> tau(target.size());
  double total = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const Stratum& s = target.strata()[k];
    tau[k] = trial.expect([&](const Covariate& w) { return s.contains(w) ? 1.0 : 0.0; }, breaks);
    if (tau[k] < 1e-12) {
      throw DomainError("post-stratification: stratum " + std::to_string(k + 1) +
                        " has zero trial-law probability");
    }
    total += tau[k];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw DomainError("post-stratification: strata cover only " + std::to_string(total) +
                      " of the trial-law mass");
  }
  return tau;
}

std::vector<double> stratum_effects(const OutcomeModel& outcome, const CovariateDistribution& trial,
                                    const PostStratifyTarget& target) {
  const auto tau = stratum_probabilities(trial, target);
  const auto breaks = target.breakpoints();
  std::vector<double> effects(target.size());
  for (std::size_t k = 0; k < target.size(); ++k) {
    const Stratum& s = target.strata()[k];
    effects[k] = trial.expect(
                     [&](const Covariate& w) { return s.contains(w) ? delta(outcome, w) : 0.0; },
                     breaks) /
                 tau[k];
  }
  return effects;
}

double estimand_value(const OutcomeModel& outcome, const CovariateDistribution& trial,
                      const TargetSpec& target) {
  const auto d = [&](const Covariate& w) { return delta(outcome, w); };
  return std::visit(
      [&](const auto& t) -> double {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, TrialTarget>) {
          return trial.expect(d);
        } else if constexpr (std::is_same_v<T, PostStratifyTarget>) {
          const auto effects = stratum_effects(outcome, trial, t);
          double sum = 0.0;
          for (std::size_t k = 0; k < t.size(); ++k) sum += t.weights()[k] * effects[k];
          return sum;
        } else {
          return t.law.expect(d);
        }
      },
      target);
}

}  // namespace optalloc
