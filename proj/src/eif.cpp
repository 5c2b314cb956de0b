#include "optalloc/eif.hpp"

#include <algorithm>
#include <cmath>

#include "optalloc/allocation.hpp"
#include "optalloc/errors.hpp"

namespace optalloc::eif {

namespace {

struct Response {
  int a;
  double y;
};

Response require_response(const Observation& o) {
  if (!o.a || !o.y) throw DataError("influence function: trial observation lacks (a, y)");
  if (*o.a != 0 && *o.a != 1) throw DataError("influence function: treatment must be 0 or 1");
  return {*o.a, *o.y};
}

// a (y - m(1,w)) / p(w) - (1 - a)(y - m(0,w)) / (1 - p(w))
double augmentation(const Response& resp, const Covariate& w, const NuisanceSet& nu) {
  const double p = nu.p(w);
  if (resp.a == 1) return (resp.y - nu.m(1, w)) / p;
  return -(resp.y - nu.m(0, w)) / (1.0 - p);
}

double nu_delta(const NuisanceSet& nu, const Covariate& w) { return nu.m(1, w) - nu.m(0, w); }

}  // namespace

double psi_transport(const Observation& o, const NuisanceSet& nu) {
  if (o.z == 0) return (nu_delta(nu, o.w) - nu.estimand) / (1.0 - nu.gamma);
  const Response resp = require_response(o);
  return nu.r(o.w) * augmentation(resp, o.w, nu) / nu.gamma;
}

double psi_generalize(const Observation& o, const NuisanceSet& nu) {
  const double base = nu_delta(nu, o.w) - nu.estimand;
  if (o.z == 0) return base;
  const Response resp = require_response(o);
  return base + augmentation(resp, o.w, nu) / nu.e(o.w);
}

double psi_poststrat(const Observation& o, const NuisanceSet& nu) {
  if (!nu.strata) throw DomainError("post-stratified influence function: no strata supplied");
  const auto k = nu.strata->stratum_of(o.w);
  if (!k) throw DataError("post-stratified influence function: covariate lies outside every stratum");
  const Response resp = require_response(o);
  const double ratio = nu.strata->weights()[*k] / nu.tau[*k];
  return ratio * (nu_delta(nu, o.w) - nu.stratum_effect[*k] + augmentation(resp, o.w, nu));
}

double psi(Estimand estimand, const Observation& o, const NuisanceSet& nu) {
  switch (estimand) {
    case Estimand::transport: return psi_transport(o, nu);
    case Estimand::generalize: return psi_generalize(o, nu);
    case Estimand::trial:
    case Estimand::poststratify: return psi_poststrat(o, nu);
  }
  return 0.0;
}

PostStratifyTarget whole_population() { return PostStratifyTarget({Stratum{}}, {1.0}); }

NuisanceSet true_nuisances(const CovariateDistribution& trial, const TargetSpec& target,
                           const OutcomeModel& outcome, const AllocationDesign& design,
                           double gamma) {
  NuisanceSet nu;
  nu.m = [outcome](int a, const Covariate& w) { return outcome.mean(a, w); };
  nu.p = [design](const Covariate& w) { return design.propensity(w); };
  nu.gamma = gamma;
  nu.estimand = estimand_value(outcome, trial, target);

  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, TrialTarget> || std::is_same_v<T, PostStratifyTarget>) {
          PostStratifyTarget strata = [&] {
            if constexpr (std::is_same_v<T, TrialTarget>) {
              return whole_population();
            } else {
              return t;
            }
          }();
          nu.tau = stratum_probabilities(trial, strata);
          nu.stratum_effect = stratum_effects(outcome, trial, strata);
          nu.r = alloc::density_ratio(trial, strata);
          nu.strata = std::move(strata);
        } else if constexpr (std::is_same_v<T, TransportTarget>) {
          if (!(gamma > 0.0 && gamma < 1.0)) throw DomainError("transport: gamma must lie in (0, 1)");
          nu.r = alloc::density_ratio(trial, t);
        } else {
          nu.gamma = t.gamma;
          nu.r = alloc::density_ratio(trial, t);
          nu.e = alloc::participation_propensity(trial, t);
        }
      },
      target);
  return nu;
}

double variance_bound(const AllocationDesign& design, const TargetSpec& target,
                      const CovariateDistribution& trial, const OutcomeModel& outcome,
                      double gamma) {
  const Estimand estimand = estimand_of(target);
  const NuisanceSet nu = true_nuisances(trial, target, outcome, design, gamma);
  const auto breaks = breakpoints(target);

  const double weighted_residual = trial.expect(
      [&](const Covariate& w) {
        const double p = design.propensity(w);
        const double r = nu.r(w);
        return r * r * (outcome.variance(1, w) / p + outcome.variance(0, w) / (1.0 - p));
      },
      breaks);

  switch (estimand) {
    case Estimand::transport:
    case Estimand::generalize: {
      const CovariateDistribution& law = estimand == Estimand::transport
                                             ? std::get<TransportTarget>(target).law
                                             : std::get<GeneralizeTarget>(target).law;
      const double var_star = law.expect([&](const Covariate& w) {
        const double d = delta(outcome, w) - nu.estimand;
        return d * d;
      });
      if (estimand == Estimand::transport) {
        return var_star / (1.0 - nu.gamma) + weighted_residual / nu.gamma;
      }
      return var_star + weighted_residual / nu.gamma;
    }
    case Estimand::trial:
    case Estimand::poststratify: {
      const double between = trial.expect(
          [&](const Covariate& w) {
            const auto k = nu.strata->stratum_of(w);
            const double r = nu.r(w);
            const double d = delta(outcome, w) - nu.stratum_effect[*k];
            return r * r * d * d;
          },
          breaks);
      return between + weighted_residual;
    }
  }
  return 0.0;
}

Observation draw_observation(const TargetSpec& target, const CovariateDistribution& trial,
                             const OutcomeModel& outcome, const NuisanceSet& nu,
                             numerics::RngStream& rng) {
  Observation o;
  const auto treat = [&](Observation& obs) {
    obs.a = rng.bernoulli(nu.p(obs.w)) ? 1 : 0;
    obs.y = outcome.sample(*obs.a, obs.w, rng);
  };
  if (const auto* tr = std::get_if<TransportTarget>(&target)) {
    o.z = rng.bernoulli(nu.gamma) ? 1 : 0;
    o.w = o.z == 1 ? trial.sample(rng) : tr->law.sample(rng);
    if (o.z == 1) treat(o);
  } else if (const auto* gen = std::get_if<GeneralizeTarget>(&target)) {
    o.w = gen->law.sample(rng);
    o.z = rng.bernoulli(nu.e(o.w)) ? 1 : 0;
    if (o.z == 1) treat(o);
  } else {
    o.z = 1;
    o.w = trial.sample(rng);
    treat(o);
  }
  return o;
}

MonteCarloBound variance_bound_mc(const AllocationDesign& design, const TargetSpec& target,
                                  const CovariateDistribution& trial, const OutcomeModel& outcome,
                                  double gamma, std::size_t n, numerics::RngStream& rng) {
  if (n < 2) throw DomainError("Monte Carlo bound: n must be at least 2");
  const Estimand estimand = estimand_of(target);
  const NuisanceSet nu = true_nuisances(trial, target, outcome, design, gamma);
  std::vector<double> values(n);
  double sum = 0.0;
  for (auto& v : values) {
    v = psi(estimand, draw_observation(target, trial, outcome, nu, rng), nu);
    sum += v;
  }
  const double dn = static_cast<double>(n);
  const double mean = sum / dn;
  double m2 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d2 = (v - mean) * (v - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  MonteCarloBound out;
  out.n = n;
  out.mean = mean;
  out.variance = m2 / (dn - 1.0);
  out.mean_se = std::sqrt(out.variance / dn);
  const double var_mle = m2 / dn;
  out.variance_se = std::sqrt(std::max(m4 / dn - var_mle * var_mle, 0.0) / dn);
  return out;
}

double relative_efficiency(const AllocationDesign& reference, const AllocationDesign& candidate,
                           const TargetSpec& target, const CovariateDistribution& trial,
                           const OutcomeModel& outcome, double gamma) {
  const double cand = variance_bound(candidate, target, trial, outcome, gamma);
  if (!(cand > 0.0)) throw DomainError("relative efficiency: candidate bound is zero");
  return variance_bound(reference, target, trial, outcome, gamma) / cand;
}

}  // namespace optalloc::eif
