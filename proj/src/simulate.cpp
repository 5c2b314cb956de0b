#include "optalloc/simulate.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "optalloc/allocation.hpp"
#include "optalloc/eif.hpp"
#include "optalloc/errors.hpp"

namespace optalloc::sim {

namespace {

constexpr std::size_t kStreamsPerReplicate = 3;
constexpr std::size_t kKeptFailureMessages = 5;

struct Row {
  Covariate w;
  int a;
  double y;
  double p;
};

Row draw_treated(const Covariate& w, const OutcomeModel& outcome, const AllocationDesign& design,
                 numerics::RngStream& rng) {
  const double p = design.propensity(w);
  const double u = rng.uniform();
  const double y1 = outcome.sample(1, w, rng);
  const double y0 = outcome.sample(0, w, rng);
  const int a = u < p ? 1 : 0;
  return {w, a, a == 1 ? y1 : y0, p};
}

// Nuisances that do not change across replicates in oracle mode.
struct OracleNuisances {
  est::FittedNuisances trial;
  est::FittedNuisances transport;
  est::FittedNuisances generalize;
};

OracleNuisances make_oracle(const Scenario& s) {
  OracleNuisances o;
  const OutcomeModel outcome = s.outcome;
  o.trial.m = [outcome](int a, const Covariate& w) { return outcome.mean(a, w); };
  o.transport.m = o.trial.m;
  o.transport.r = alloc::density_ratio(s.trial, s.transport);
  o.generalize.m = o.trial.m;
  o.generalize.e = alloc::participation_propensity(s.trial, s.generalize);
  return o;
}

struct ReplicateOutcome {
  bool ok = true;
  std::string failure;
  std::size_t clipped = 0;
  std::vector<double> point;  // design-major, estimand-minor
  std::vector<double> std_error;
};

double sample_variance(const std::vector<double>& x, double mean) {
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size() - 1);
}

}  // namespace

est::TrialDataset generate_trial(const CovariateDistribution& law, const OutcomeModel& outcome,
                                 const AllocationDesign& design, std::size_t n,
                                 numerics::RngStream& rng) {
  est::TrialDataset data;
  data.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Row r = draw_treated(law.sample(rng), outcome, design, rng);
    data.rows.push_back({r.w, r.a, r.y, r.p});
  }
  return data;
}

est::TargetCohort generate_target(const CovariateDistribution& law, std::size_t n_star,
                                  numerics::RngStream& rng) {
  if (n_star < 1) throw DomainError("generate_target: n_star must be at least 1");
  est::TargetCohort cohort;
  cohort.rows.reserve(n_star);
  for (std::size_t i = 0; i < n_star; ++i) cohort.rows.push_back(law.sample(rng));
  return cohort;
}

est::GeneralizationCohort generate_generalization_cohort(const CovariateDistribution& trial_law,
                                                         const GeneralizeTarget& target,
                                                         const OutcomeModel& outcome,
                                                         const AllocationDesign& design,
                                                         std::size_t n, numerics::RngStream& rng) {
  if (n < 1) throw DomainError("generate_generalization_cohort: n must be at least 1");
  const auto e = alloc::participation_propensity(trial_law, target);
  est::GeneralizationCohort cohort;
  cohort.rows.reserve(static_cast<std::size_t>(static_cast<double>(n) / target.gamma * 1.2));
  std::size_t enrolled = 0;
  while (enrolled < n) {
    const Covariate w = target.law.sample(rng);
    est::CohortRow row;
    row.w = w;
    row.z = rng.bernoulli(e(w)) ? 1 : 0;
    if (row.z == 1) {
      const Row r = draw_treated(w, outcome, design, rng);
      row.a = r.a;
      row.y = r.y;
      row.p_assign = r.p;
      ++enrolled;
    }
    cohort.rows.push_back(row);
  }
  return cohort;
}

std::optional<Estimand> parse_estimand(std::string_view name) {
  for (Estimand e : {Estimand::trial, Estimand::transport, Estimand::generalize, Estimand::poststratify}) {
    if (name == to_string(e)) return e;
  }
  return std::nullopt;
}

DesignSpec DesignSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string tail = colon == std::string::npos ? "" : text.substr(colon + 1);
  DesignSpec spec;
  if (head == "cir") {
    std::size_t used = 0;
    try {
      spec.pi = std::stod(tail, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tail.size() || !(spec.pi > 0.0 && spec.pi < 1.0)) {
      throw ConfigError("design '" + text + "': cir needs a probability in (0, 1)");
    }
    spec.kind = Kind::cir;
    return spec;
  }
  if (head == "optimal_cir" || head == "optimal_cdr") {
    spec.kind = head == "optimal_cir" ? Kind::optimal_cir : Kind::optimal_cdr;
    if (!tail.empty()) {
      spec.estimand = parse_estimand(tail);
      if (!spec.estimand) throw ConfigError("design '" + text + "': unknown estimand '" + tail + "'");
    } else if (spec.kind == Kind::optimal_cir) {
      throw ConfigError("design '" + text + "': optimal_cir needs an estimand");
    }
    return spec;
  }
  throw ConfigError("design '" + text + "': expected cir:<pi>, optimal_cir:<estimand> or optimal_cdr");
}

std::string DesignSpec::to_string() const {
  std::ostringstream out;
  switch (kind) {
    case Kind::cir: out << "cir:" << pi; break;
    case Kind::optimal_cir: out << "optimal_cir:" << optalloc::to_string(*estimand); break;
    case Kind::optimal_cdr:
      out << "optimal_cdr";
      if (estimand) out << ':' << optalloc::to_string(*estimand);
      break;
  }
  return out.str();
}

AllocationDesign resolve_design(const DesignSpec& spec, const Scenario& s, const LinkFunction& link) {
  switch (spec.kind) {
    case DesignSpec::Kind::cir: return AllocationDesign::cir(spec.pi);
    case DesignSpec::Kind::optimal_cir: {
      const auto m = alloc::design_moments(s.trial, s.target(*spec.estimand), s.outcome);
      return AllocationDesign::cir(alloc::optimal_cir(m, link));
    }
    case DesignSpec::Kind::optimal_cdr: {
      const auto m = alloc::design_moments(s.trial, s.target(spec.estimand.value_or(Estimand::trial)),
                                           s.outcome);
      return alloc::optimal_cdr_design(s.outcome, link, m);
    }
  }
  throw DomainError("unknown design kind");
}

void StudyConfig::validate() const {
  if (n < 2) throw ConfigError("study: n must be at least 2");
  if (n_star < 1) throw ConfigError("study: n_star must be at least 1");
  if (replications < 1) throw ConfigError("study: replications must be at least 1");
  if (designs.empty()) throw ConfigError("study: at least one design required");
  if (reference >= designs.size()) throw ConfigError("study: reference design index out of range");
  if (estimands.empty()) throw ConfigError("study: at least one estimand required");
  if (jobs < 1) throw ConfigError("study: jobs must be at least 1");
}

StudyConfig reference_study() {
  StudyConfig c;
  c.designs = {DesignSpec::parse("cir:0.5"),
               DesignSpec::parse("optimal_cir:trial"),
               DesignSpec::parse("optimal_cir:transport"),
               DesignSpec::parse("optimal_cir:generalize"),
               DesignSpec::parse("optimal_cir:poststratify"),
               DesignSpec::parse("optimal_cdr")};
  return c;
}

std::pair<double, double> target_arm_means(const Scenario& s, Estimand estimand) {
  const auto m = alloc::design_moments(s.trial, s.target(estimand), s.outcome);
  return {m.mu1_star, m.mu0_star};
}

double link_truth(const Scenario& s, Estimand estimand, const LinkFunction& link) {
  const auto [mu1, mu0] = target_arm_means(s, estimand);
  return link.value(mu1) - link.value(mu0);
}

ReplicateData generate_replicate(const StudyConfig& config, const AllocationDesign& design,
                                 std::size_t replicate) {
  const Scenario& s = config.scenario;
  const std::uint64_t base = replicate * kStreamsPerReplicate;
  ReplicateData data;
  numerics::RngStream trial_rng(config.master_seed, base);
  data.trial = generate_trial(s.trial, s.outcome, design, config.n, trial_rng);
  bool need_target = false, need_cohort = false;
  for (Estimand e : config.estimands) {
    need_target |= e == Estimand::transport;
    need_cohort |= e == Estimand::generalize;
  }
  if (need_target) {
    numerics::RngStream target_rng(config.master_seed, base + 1);
    data.target = generate_target(s.transport.law, config.n_star, target_rng);
  }
  if (need_cohort) {
    numerics::RngStream cohort_rng(config.master_seed, base + 2);
    data.cohort = generate_generalization_cohort(s.trial, s.generalize, s.outcome, design, config.n,
                                                 cohort_rng);
  }
  return data;
}

namespace {

std::vector<est::EstimateReport> estimate_with(const StudyConfig& config, const ReplicateData& data,
                                               const OracleNuisances* oracle) {
  const Scenario& s = config.scenario;
  const OutcomeFamily family = s.outcome.family();
  const bool identity = config.link.kind() == LinkFunction::Kind::identity;

  std::optional<est::FittedNuisances> trial_nu;
  const auto trial_nuisances = [&]() -> const est::FittedNuisances& {
    if (oracle) return oracle->trial;
    if (!trial_nu) trial_nu = est::fit_trial_nuisances(data.trial, est::Basis::outcome_default(), family);
    return *trial_nu;
  };

  std::vector<est::EstimateReport> out;
  for (Estimand e : config.estimands) {
    switch (e) {
      case Estimand::trial:
      case Estimand::poststratify: {
        const PostStratifyTarget strata = e == Estimand::trial ? eif::whole_population() : s.poststratify;
        const auto& nu = trial_nuisances();
        out.push_back(identity ? est::estimate_poststrat(data.trial, strata, nu)
                               : est::estimate_link_contrast(est::poststrat_arm_means(data.trial, strata, nu),
                                                             config.link));
        break;
      }
      case Estimand::transport: {
        est::FittedNuisances nu;
        if (oracle) {
          nu = oracle->transport;
        } else {
          nu = trial_nuisances();
          auto ratio = est::fit_density_ratio(data.trial, data.target);
          nu.diagnostics.clipped += ratio.clipped;
          nu.diagnostics.ratio_iterations = ratio.iterations;
          nu.diagnostics.ratio_calibration = ratio.calibration;
          nu.r = [ratio = std::move(ratio)](const Covariate& w) { return ratio(w); };
        }
        out.push_back(identity ? est::estimate_transport(data.trial, data.target, nu)
                               : est::estimate_link_contrast(est::transport_arm_means(data.trial, data.target, nu),
                                                             config.link));
        break;
      }
      case Estimand::generalize: {
        const est::FittedNuisances nu =
            oracle ? oracle->generalize
                   : est::fit_generalize_nuisances(data.cohort, est::Basis::outcome_default(),
                                                   est::Basis::membership_default(), family);
        out.push_back(identity ? est::estimate_generalize(data.cohort, nu)
                               : est::estimate_link_contrast(est::generalize_arm_means(data.cohort, nu),
                                                             config.link));
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<est::EstimateReport> estimate_replicate(const StudyConfig& config, const ReplicateData& data) {
  if (config.mode == NuisanceMode::oracle) {
    const OracleNuisances oracle = make_oracle(config.scenario);
    return estimate_with(config, data, &oracle);
  }
  return estimate_with(config, data, nullptr);
}

StudyResult run_study(const StudyConfig& config) {
  config.validate();
  const Scenario& s = config.scenario;
  const std::size_t n_designs = config.designs.size();
  const std::size_t n_est = config.estimands.size();
  const bool identity = config.link.kind() == LinkFunction::Kind::identity;

  std::vector<AllocationDesign> designs;
  StudyResult result;
  for (const auto& spec : config.designs) {
    designs.push_back(resolve_design(spec, s, config.link));
    result.designs.push_back(spec.to_string());
    result.design_pi.push_back(designs.back().is_cir() ? designs.back().pi()
                                                       : std::numeric_limits<double>::quiet_NaN());
  }
  result.estimands = config.estimands;
  result.replications = config.replications;
  result.master_seed = config.master_seed;

  std::optional<OracleNuisances> oracle;
  if (config.mode == NuisanceMode::oracle) oracle = make_oracle(s);

  std::vector<ReplicateOutcome> outcomes(config.replications);
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  const auto worker = [&] {
    for (std::size_t rep = next++; rep < config.replications; rep = next++) {
      ReplicateOutcome& o = outcomes[rep];
      try {
        for (std::size_t d = 0; d < n_designs; ++d) {
          const ReplicateData data = generate_replicate(config, designs[d], rep);
          const auto reports = estimate_with(config, data, oracle ? &*oracle : nullptr);
          for (const auto& r : reports) {
            o.point.push_back(r.point);
            o.std_error.push_back(r.std_error);
            o.clipped += r.diagnostics.clipped;
          }
        }
      } catch (const FitError& e) {
        o.ok = false;
        o.failure = "replicate " + std::to_string(rep) + ": " + e.what();
      } catch (const DataError& e) {
        o.ok = false;
        o.failure = "replicate " + std::to_string(rep) + ": " + e.what();
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        next = config.replications;
      }
    }
  };

  const unsigned jobs = static_cast<unsigned>(std::min<std::size_t>(config.jobs, config.replications));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  // fold in replicate order
  const std::size_t cells = n_designs * n_est;
  std::vector<std::vector<double>> points(cells), ses(cells);
  for (const auto& o : outcomes) {
    if (!o.ok) {
      ++result.failures;
      if (result.failure_messages.size() < kKeptFailureMessages) result.failure_messages.push_back(o.failure);
      continue;
    }
    result.clipped += o.clipped;
    for (std::size_t c = 0; c < cells; ++c) {
      points[c].push_back(o.point[c]);
      ses[c].push_back(o.std_error[c]);
    }
  }
  result.used = config.replications - result.failures;
  if (static_cast<double>(result.failures) > config.max_failure_fraction * static_cast<double>(config.replications)) {
    std::ostringstream msg;
    msg << "study: " << result.failures << " of " << config.replications << " replicates failed";
    if (!result.failure_messages.empty()) msg << "; first: " << result.failure_messages.front();
    throw FitError(msg.str());
  }
  if (result.used < 1) throw FitError("study: no replicate succeeded");
  const double used = static_cast<double>(result.used);

  std::vector<double> truths;
  for (Estimand e : config.estimands) {
    truths.push_back(identity ? estimand_value(s.outcome, s.trial, s.target(e)) : link_truth(s, e, config.link));
  }
  const double gamma_transport =
      static_cast<double>(config.n) / static_cast<double>(config.n + config.n_star);

  result.cells.resize(cells);
  for (std::size_t d = 0; d < n_designs; ++d) {
    for (std::size_t k = 0; k < n_est; ++k) {
      const std::size_t c = d * n_est + k;
      CellSummary& cell = result.cells[c];
      cell.design = result.designs[d];
      cell.estimand = config.estimands[k];
      cell.truth = truths[k];
      double sum = 0.0, se_sum = 0.0, covered = 0.0;
      for (std::size_t i = 0; i < points[c].size(); ++i) {
        sum += points[c][i];
        se_sum += ses[c][i];
        if (std::abs(points[c][i] - cell.truth) <= 1.959963984540054 * ses[c][i]) covered += 1.0;
      }
      cell.mean = sum / used;
      cell.mean_std_error = se_sum / used;
      cell.coverage = covered / used;
      cell.bias = cell.mean - cell.truth;
      cell.variance = result.used > 1 ? sample_variance(points[c], cell.mean) : 0.0;
      cell.bias_se = std::sqrt(cell.variance / used);
    }
  }

  // relative efficiency with a paired delta-method standard error on log RE
  for (std::size_t k = 0; k < n_est; ++k) {
    const CellSummary& ref = result.cells[config.reference * n_est + k];
    const auto& ref_points = points[config.reference * n_est + k];
    const TargetSpec target = s.target(config.estimands[k]);
    for (std::size_t d = 0; d < n_designs; ++d) {
      CellSummary& cell = result.cells[d * n_est + k];
      const auto& pts = points[d * n_est + k];
      cell.relative_efficiency = cell.variance > 0.0 ? ref.variance / cell.variance
                                                     : std::numeric_limits<double>::quiet_NaN();
      if (result.used > 2 && cell.variance > 0.0 && ref.variance > 0.0) {
        // squared deviations are the per-replicate contributions to each variance
        double s_ref = 0.0, s_d = 0.0, ss_ref = 0.0, ss_d = 0.0, cross = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
          const double a = (ref_points[i] - ref.mean) * (ref_points[i] - ref.mean) / ref.variance;
          const double b = (pts[i] - cell.mean) * (pts[i] - cell.mean) / cell.variance;
          s_ref += a;
          s_d += b;
          ss_ref += a * a;
          ss_d += b * b;
          cross += a * b;
        }
        const double mr = s_ref / used, md = s_d / used;
        const double var_log = (ss_ref / used - mr * mr) + (ss_d / used - md * md) - 2.0 * (cross / used - mr * md);
        cell.relative_efficiency_se = cell.relative_efficiency * std::sqrt(std::max(var_log, 0.0) / used);
      }
      if (identity) {
        cell.theoretical_re = eif::relative_efficiency(designs[config.reference], designs[d], target, s.trial,
                                                       s.outcome, gamma_transport);
      } else {
        cell.theoretical_re = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return result;
}

}  // namespace optalloc::sim
