#include "optalloc/allocation.hpp"

#include <cmath>
#include <sstream>

#include "optalloc/errors.hpp"

namespace optalloc::alloc {

namespace {

void require_common_support(const CovariateDistribution& trial, const CovariateDistribution& law) {
  if (trial.lower() != law.lower() || trial.upper() != law.upper()) {
    throw DomainError("target and trial covariate laws must share the same W1 support");
  }
}

double neyman_ratio(double s1, double s0) { return s1 / (s1 + s0); }

}  // namespace

CovariateFunction density_ratio(const CovariateDistribution& trial, const TargetSpec& target) {
  return std::visit(
      [&](const auto& t) -> CovariateFunction {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, TrialTarget>) {
          return [](const Covariate&) { return 1.0; };
        } else if constexpr (std::is_same_v<T, PostStratifyTarget>) {
          const auto tau = stratum_probabilities(trial, t);
          std::vector<double> ratio(t.size());
          for (std::size_t k = 0; k < t.size(); ++k) ratio[k] = t.weights()[k] / tau[k];
          return [t, ratio](const Covariate& w) {
            const auto k = t.stratum_of(w);
            if (!k) throw DomainError("density ratio: covariate lies outside every stratum");
            return ratio[*k];
          };
        } else {
          require_common_support(trial, t.law);
          return [trial, law = t.law](const Covariate& w) {
            return std::exp(law.log_pdf(w) - trial.log_pdf(w));
          };
        }
      },
      target);
}

CovariateFunction participation_propensity(const CovariateDistribution& trial,
                                           const GeneralizeTarget& target) {
  if (!(target.gamma > 0.0 && target.gamma < 1.0)) {
    throw DomainError("generalization: gamma must lie in (0, 1)");
  }
  auto ratio = density_ratio(trial, target);
  const auto rule = numerics::gauss_legendre(numerics::kDefaultQuadratureOrder, trial.lower(),
                                             trial.upper());
  std::vector<double> probe = rule.nodes;
  probe.push_back(trial.lower());
  probe.push_back(trial.upper());
  for (double x : probe) {
    for (int w2 = 0; w2 <= 1; ++w2) {
      if (target.gamma >= ratio({x, w2})) {
        std::ostringstream msg;
        msg << "generalization: gamma = " << target.gamma
            << " implies participation probability >= 1 at w = (" << x << ", " << w2 << ")";
        throw DomainError(msg.str());
      }
    }
  }
  return [ratio, gamma = target.gamma](const Covariate& w) { return gamma / ratio(w); };
}

DesignMoments design_moments(const CovariateDistribution& trial, const TargetSpec& target,
                             const OutcomeModel& outcome) {
  const auto r = density_ratio(trial, target);
  const auto breaks = breakpoints(target);
  DesignMoments m;
  m.m1 = trial.expect(
      [&](const Covariate& w) {
        const double rw = r(w);
        return rw * rw * outcome.variance(1, w);
      },
      breaks);
  m.m0 = trial.expect(
      [&](const Covariate& w) {
        const double rw = r(w);
        return rw * rw * outcome.variance(0, w);
      },
      breaks);
  m.mu1_star = trial.expect([&](const Covariate& w) { return r(w) * outcome.mean(1, w); }, breaks);
  m.mu0_star = trial.expect([&](const Covariate& w) { return r(w) * outcome.mean(0, w); }, breaks);
  const double est = m.estimand();
  m.var_star_delta = trial.expect(
      [&](const Covariate& w) {
        const double d = delta(outcome, w) - est;
        return r(w) * d * d;
      },
      breaks);
  return m;
}

DesignMoments empirical_design_moments(std::span<const Covariate> trial_sample,
                                       const CovariateFunction& ratio,
                                       const OutcomeModel& outcome) {
  if (trial_sample.empty()) throw DomainError("empirical design moments: empty sample");
  DesignMoments m;
  const double n = static_cast<double>(trial_sample.size());
  for (const auto& w : trial_sample) {
    const double rw = ratio(w);
    m.m1 += rw * rw * outcome.variance(1, w) / n;
    m.m0 += rw * rw * outcome.variance(0, w) / n;
    m.mu1_star += rw * outcome.mean(1, w) / n;
    m.mu0_star += rw * outcome.mean(0, w) / n;
  }
  const double est = m.estimand();
  for (const auto& w : trial_sample) {
    const double d = delta(outcome, w) - est;
    m.var_star_delta += ratio(w) * d * d / n;
  }
  return m;
}

double optimal_cir(const DesignMoments& moments, const LinkFunction& link) {
  if (!(moments.m1 > 0.0 && moments.m0 > 0.0)) {
    throw DomainError("optimal CIR: variance moments must be positive");
  }
  const double g1 = link.derivative(moments.mu1_star);
  const double g0 = link.derivative(moments.mu0_star);
  return neyman_ratio(g1 * std::sqrt(moments.m1), g0 * std::sqrt(moments.m0));
}

CovariateFunction optimal_cdr(const OutcomeModel& outcome, const LinkFunction& link,
                              const DesignMoments& moments) {
  double g1 = 1.0, g0 = 1.0;
  if (link.kind() != LinkFunction::Kind::identity) {
    g1 = link.derivative(moments.mu1_star);
    g0 = link.derivative(moments.mu0_star);
  }
  return [outcome, g1, g0](const Covariate& w) {
    const double s1 = g1 * std::sqrt(outcome.variance(1, w));
    const double s0 = g0 * std::sqrt(outcome.variance(0, w));
    if (!(s1 > 0.0 && s0 > 0.0)) {
      std::ostringstream msg;
      msg << "optimal CDR: conditional variance vanishes at w = (" << w.w1 << ", " << w.w2
          << "); the optimal propensity would leave (0, 1)";
      throw DomainError(msg.str());
    }
    return neyman_ratio(s1, s0);
  };
}

AllocationDesign optimal_cdr_design(const OutcomeModel& outcome, const LinkFunction& link,
                                    const DesignMoments& moments) {
  return AllocationDesign::cdr(optimal_cdr(outcome, link, moments), "p_opt");
}

double optimal_cir_restricted(const CovariateDistribution& trial, const OutcomeModel& outcome,
                              std::span<const Stratum> region) {
  std::vector<double> breaks;
  for (const auto& s : region) {
    if (std::isfinite(s.w1_lower)) breaks.push_back(s.w1_lower);
    if (std::isfinite(s.w1_upper)) breaks.push_back(s.w1_upper);
  }
  const auto inside = [&](const Covariate& w) {
    for (const auto& s : region) {
      if (s.contains(w)) return true;
    }
    return false;
  };
  const double mass = trial.expect([&](const Covariate& w) { return inside(w) ? 1.0 : 0.0; }, breaks);
  if (mass < 1e-12) throw DomainError("restricted allocation: region has zero trial-law mass");
  DesignMoments m;
  m.m1 = trial.expect([&](const Covariate& w) { return inside(w) ? outcome.variance(1, w) : 0.0; },
                      breaks) / mass;
  m.m0 = trial.expect([&](const Covariate& w) { return inside(w) ? outcome.variance(0, w) : 0.0; },
                      breaks) / mass;
  return optimal_cir(m);
}

}  // namespace optalloc::alloc
