#include "optalloc/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "optalloc/eif.hpp"
#include "optalloc/errors.hpp"

namespace optalloc::est {

namespace {

double expit(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& eta) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    dev += y[i] * softplus(-eta[i]) + (1.0 - y[i]) * softplus(eta[i]);
  }
  return 2.0 * dev;
}

const double kEtaClip = std::log(kProbabilityClip / (1.0 - kProbabilityClip));

void check_full_rank(const Eigen::MatrixXd& x, const Basis& basis, const std::string& context) {
  if (x.rows() <= x.cols()) {
    std::ostringstream msg;
    msg << context << ": " << x.rows() << " rows for " << x.cols() << " basis columns";
    throw FitError(msg.str());
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) {
    std::ostringstream msg;
    msg << context << ": singular design matrix; collinear columns:";
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < x.cols(); ++j) msg << ' ' << basis.name(perm[j]);
    throw FitError(msg.str());
  }
}

std::size_t count_clipped(const Eigen::VectorXd& eta) {
  return static_cast<std::size_t>(
      std::count_if(eta.data(), eta.data() + eta.size(),
                    [](double v) { return v < kEtaClip || v > -kEtaClip; }));
}

double influence_std_error(std::span<const double> psi) {
  const double n = static_cast<double>(psi.size());
  double mean = 0.0;
  for (double v : psi) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : psi) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n / n);
}

// Shares fitted nuisances with the influence-function module; `p` reads the
// recorded assignment probability of the row being evaluated.
struct RowNuisances {
  eif::NuisanceSet set;
  double current_p = 0.5;

  explicit RowNuisances(const FittedNuisances& nu) {
    set.m = nu.m;
    set.r = nu.r;
    set.e = nu.e;
    set.p = [this](const Covariate&) { return current_p; };
  }
  RowNuisances(const RowNuisances&) = delete;
  RowNuisances& operator=(const RowNuisances&) = delete;
};

eif::Observation as_observation(const TrialRow& row) {
  return {1, row.w, row.a, row.y};
}

double arm_residual_weight(const TrialRow& row, int arm, const ArmFunction& m) {
  if (row.a != arm) return 0.0;
  const double p = arm == 1 ? row.p_assign : 1.0 - row.p_assign;
  return (row.y - m(arm, row.w)) / p;
}

void require_nuisances(const FittedNuisances& nu, bool ratio, bool participation) {
  if (!nu.m) throw DomainError("estimator: outcome regression m is missing");
  if (ratio && !nu.r) throw DomainError("estimator: density ratio r is missing");
  if (participation && !nu.e) throw DomainError("estimator: participation propensity e is missing");
}

struct StratumIndex {
  std::vector<std::size_t> of_row;
  std::vector<std::size_t> counts;
};

StratumIndex index_strata(const TrialDataset& trial, const PostStratifyTarget& strata) {
  StratumIndex idx;
  idx.of_row.resize(trial.size());
  idx.counts.assign(strata.size(), 0);
  for (std::size_t i = 0; i < trial.size(); ++i) {
    const auto k = strata.stratum_of(trial.rows[i].w);
    if (!k) throw DataError("post-stratification: row " + std::to_string(i + 1) + " lies outside every stratum");
    idx.of_row[i] = *k;
    ++idx.counts[*k];
  }
  std::ostringstream empty;
  for (std::size_t k = 0; k < strata.size(); ++k) {
    if (idx.counts[k] == 0) empty << ' ' << (k + 1);
  }
  if (!empty.str().empty()) throw DataError("post-stratification: no trial rows in stratum" + empty.str());
  return idx;
}

}  // namespace

void TrialDataset::validate() const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string where = "trial row " + std::to_string(i + 1);
    if (r.a != 0 && r.a != 1) throw DataError(where + ": a must be 0 or 1");
    if (r.w.w2 != 0 && r.w.w2 != 1) throw DataError(where + ": w2 must be 0 or 1");
    if (!(r.p_assign > 0.0 && r.p_assign < 1.0)) throw DataError(where + ": p_assign must lie in (0, 1)");
    if (!std::isfinite(r.y) || !std::isfinite(r.w.w1)) throw DataError(where + ": non-finite value");
  }
}

void GeneralizationCohort::validate() const {
  bool any_trial = false, any_other = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string where = "cohort row " + std::to_string(i + 1);
    if (r.z == 1) {
      any_trial = true;
      if (!r.a || !r.y || !r.p_assign) throw DataError(where + ": z = 1 requires a, y and p_assign");
      if (*r.a != 0 && *r.a != 1) throw DataError(where + ": a must be 0 or 1");
      if (!(*r.p_assign > 0.0 && *r.p_assign < 1.0)) throw DataError(where + ": p_assign must lie in (0, 1)");
    } else if (r.z == 0) {
      any_other = true;
    } else {
      throw DataError(where + ": z must be 0 or 1");
    }
  }
  if (!any_trial || !any_other) throw DataError("generalization cohort needs rows with z = 1 and z = 0");
}

TrialDataset GeneralizationCohort::trial_subset() const {
  TrialDataset out;
  for (const auto& r : rows) {
    if (r.z == 1) out.rows.push_back({r.w, r.a.value_or(0), r.y.value_or(0.0), r.p_assign.value_or(0.5)});
  }
  return out;
}

Basis::Basis(std::vector<Feature> features) : features_(std::move(features)) {
  if (features_.empty()) throw DomainError("basis: at least one feature required");
}

Basis Basis::outcome_default() { return Basis({Feature::intercept, Feature::w1, Feature::w2}); }

Basis Basis::membership_default() {
  return Basis({Feature::intercept, Feature::w1, Feature::w1_squared, Feature::w2});
}

std::string Basis::name(std::size_t j) const {
  switch (features_.at(j)) {
    case Feature::intercept: return "intercept";
    case Feature::w1: return "w1";
    case Feature::w2: return "w2";
    case Feature::w1_squared: return "w1^2";
    case Feature::w1_w2: return "w1*w2";
  }
  return "?";
}

double Basis::value(std::size_t j, const Covariate& w) const {
  switch (features_[j]) {
    case Feature::intercept: return 1.0;
    case Feature::w1: return w.w1;
    case Feature::w2: return w.w2;
    case Feature::w1_squared: return w.w1 * w.w1;
    case Feature::w1_w2: return w.w1 * w.w2;
  }
  return 0.0;
}

double Basis::linear(const Eigen::VectorXd& coef, const Covariate& w) const {
  double s = 0.0;
  for (std::size_t j = 0; j < features_.size(); ++j) s += coef[static_cast<Eigen::Index>(j)] * value(j, w);
  return s;
}

Eigen::MatrixXd Basis::design(std::span<const Covariate> rows) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < size(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value(j, rows[i]);
    }
  }
  return x;
}

GlmFit fit_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Basis& basis) {
  check_full_rank(x, basis, "least squares");
  GlmFit fit;
  fit.coef = x.colPivHouseholderQr().solve(y);
  fit.iterations = 1;
  fit.deviance_trace.push_back((y - x * fit.coef).squaredNorm());
  return fit;
}

GlmFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Basis& basis,
                    double tolerance, int max_iterations) {
  check_full_rank(x, basis, "logistic regression");
  const Eigen::Index n = x.rows();
  GlmFit fit;
  fit.coef = Eigen::VectorXd::Zero(x.cols());
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  double dev = logistic_deviance(y, eta);
  fit.deviance_trace.push_back(dev);

  for (int iter = 1; iter <= max_iterations; ++iter) {
    Eigen::VectorXd sw(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = expit(eta[i]);
      const double w = std::max(mu * (1.0 - mu), 1e-300);
      sw[i] = std::sqrt(w);
      z[i] = sw[i] * (eta[i] + (y[i] - mu) / w);
    }
    Eigen::VectorXd coef = (sw.asDiagonal() * x).colPivHouseholderQr().solve(z);
    Eigen::VectorXd eta_new = x * coef;
    double dev_new = logistic_deviance(y, eta_new);
    // step halving guards against overshooting
    for (int h = 0; h < 30 && !(dev_new <= dev * (1.0 + 1e-12)); ++h) {
      coef = 0.5 * (coef + fit.coef);
      eta_new = x * coef;
      dev_new = logistic_deviance(y, eta_new);
    }
    fit.deviance_trace.push_back(dev_new);
    fit.iterations = iter;
    if (eta_new.cwiseAbs().maxCoeff() > 40.0 || dev_new < 1e-8 * static_cast<double>(n)) {
      throw FitError("logistic regression: perfect separation (fitted probabilities reach 0 or 1)");
    }
    const bool converged = std::abs(dev_new - dev) / (std::abs(dev_new) + 0.1) < tolerance;
    fit.coef = coef;
    eta = std::move(eta_new);
    dev = dev_new;
    if (converged) return fit;
  }
  std::ostringstream msg;
  msg << "logistic regression: no convergence after " << max_iterations << " iterations; deviance trace:";
  for (double d : fit.deviance_trace) msg << ' ' << d;
  throw FitError(msg.str());
}

double OutcomeFit::mean(int arm, const Covariate& w) const {
  const double lin = basis.linear(coef[arm], w);
  return family == OutcomeFamily::normal ? lin : expit(lin);
}

OutcomeFit fit_outcome_regression(const TrialDataset& data, const Basis& basis, OutcomeFamily family) {
  data.validate();
  OutcomeFit fit;
  fit.basis = basis;
  fit.family = family;
  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<Covariate> ws;
    std::vector<double> ys;
    for (const auto& r : data.rows) {
      if (r.a == arm) {
        ws.push_back(r.w);
        ys.push_back(r.y);
      }
    }
    const Eigen::MatrixXd x = basis.design(ws);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    const std::string context = "outcome regression, arm " + std::to_string(arm);
    try {
      if (family == OutcomeFamily::bernoulli) {
        for (double v : ys) {
          if (v != 0.0 && v != 1.0) throw DataError(context + ": binary outcome must be 0 or 1");
        }
        const GlmFit g = fit_logistic(x, y, basis);
        fit.coef[arm] = g.coef;
        fit.iterations[arm] = g.iterations;
      } else {
        const GlmFit g = fit_least_squares(x, y, basis);
        fit.coef[arm] = g.coef;
        fit.iterations[arm] = g.iterations;
      }
    } catch (const FitError& e) {
      throw FitError(context + ": " + e.what());
    }
  }
  return fit;
}

double DensityRatioFit::operator()(const Covariate& w) const {
  const double eta = std::clamp(basis.linear(coef, w), kEtaClip, -kEtaClip);
  return std::exp(log_sampling_ratio - eta);
}

DensityRatioFit fit_density_ratio(const TrialDataset& trial, const TargetCohort& target, const Basis& basis) {
  if (trial.rows.empty() || target.rows.empty()) {
    throw DataError("density ratio: trial and target samples must be nonempty");
  }
  std::vector<Covariate> pooled;
  pooled.reserve(trial.size() + target.rows.size());
  for (const auto& r : trial.rows) pooled.push_back(r.w);
  pooled.insert(pooled.end(), target.rows.begin(), target.rows.end());
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pooled.size()));
  z.head(static_cast<Eigen::Index>(trial.size())).setOnes();

  const Eigen::MatrixXd x = basis.design(pooled);
  DensityRatioFit fit;
  fit.basis = basis;
  try {
    const GlmFit g = fit_logistic(x, z, basis);
    fit.coef = g.coef;
    fit.iterations = g.iterations;
  } catch (const FitError& e) {
    throw FitError(std::string("density ratio: ") + e.what());
  }
  fit.log_sampling_ratio =
      std::log(static_cast<double>(trial.size()) / static_cast<double>(target.rows.size()));
  fit.clipped = count_clipped(x * fit.coef);
  double avg = 0.0;
  for (const auto& r : trial.rows) avg += fit(r.w);
  fit.calibration = avg / static_cast<double>(trial.size());
  return fit;
}

double ParticipationFit::operator()(const Covariate& w) const {
  return std::clamp(expit(basis.linear(coef, w)), kProbabilityClip, 1.0 - kProbabilityClip);
}

ParticipationFit fit_participation(const GeneralizationCohort& cohort, const Basis& basis) {
  cohort.validate();
  std::vector<Covariate> ws;
  ws.reserve(cohort.size());
  Eigen::VectorXd z(static_cast<Eigen::Index>(cohort.size()));
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    ws.push_back(cohort.rows[i].w);
    z[static_cast<Eigen::Index>(i)] = cohort.rows[i].z;
  }
  const Eigen::MatrixXd x = basis.design(ws);
  ParticipationFit fit;
  fit.basis = basis;
  try {
    const GlmFit g = fit_logistic(x, z, basis);
    fit.coef = g.coef;
    fit.iterations = g.iterations;
  } catch (const FitError& e) {
    throw FitError(std::string("participation: ") + e.what());
  }
  fit.clipped = count_clipped(x * fit.coef);
  return fit;
}

FittedNuisances fit_trial_nuisances(const TrialDataset& trial, const Basis& outcome_basis,
                                    OutcomeFamily family) {
  auto outcome = fit_outcome_regression(trial, outcome_basis, family);
  FittedNuisances nu;
  nu.diagnostics.outcome_iterations = outcome.iterations[0] + outcome.iterations[1];
  nu.m = [outcome = std::move(outcome)](int a, const Covariate& w) { return outcome.mean(a, w); };
  return nu;
}

FittedNuisances fit_transport_nuisances(const TrialDataset& trial, const TargetCohort& target,
                                        const Basis& outcome_basis, const Basis& ratio_basis,
                                        OutcomeFamily family) {
  FittedNuisances nu = fit_trial_nuisances(trial, outcome_basis, family);
  auto ratio = fit_density_ratio(trial, target, ratio_basis);
  nu.diagnostics.clipped += ratio.clipped;
  nu.diagnostics.ratio_iterations = ratio.iterations;
  nu.diagnostics.ratio_calibration = ratio.calibration;
  nu.r = [ratio = std::move(ratio)](const Covariate& w) { return ratio(w); };
  return nu;
}

FittedNuisances fit_generalize_nuisances(const GeneralizationCohort& cohort, const Basis& outcome_basis,
                                         const Basis& participation_basis, OutcomeFamily family) {
  cohort.validate();
  FittedNuisances nu = fit_trial_nuisances(cohort.trial_subset(), outcome_basis, family);
  auto part = fit_participation(cohort, participation_basis);
  nu.diagnostics.clipped += part.clipped;
  nu.diagnostics.participation_iterations = part.iterations;
  nu.e = [part = std::move(part)](const Covariate& w) { return part(w); };
  return nu;
}

EstimateReport estimate_transport(const TrialDataset& trial, const TargetCohort& target,
                                  const FittedNuisances& nu) {
  trial.validate();
  require_nuisances(nu, true, false);
  if (trial.rows.empty() || target.rows.empty()) throw DataError("transport: empty trial or target sample");
  const double n = static_cast<double>(trial.size());
  const double n_star = static_cast<double>(target.rows.size());

  double plugin = 0.0;
  for (const auto& w : target.rows) plugin += (nu.m(1, w) - nu.m(0, w)) / n_star;
  double aug = 0.0;
  for (const auto& row : trial.rows) {
    aug += nu.r(row.w) * (arm_residual_weight(row, 1, nu.m) - arm_residual_weight(row, 0, nu.m)) / n;
  }

  EstimateReport rep;
  rep.plugin = plugin;
  rep.augmentation = aug;
  rep.point = plugin + aug;
  rep.n_effective = trial.size() + target.rows.size();
  rep.diagnostics = nu.diagnostics;

  RowNuisances rn(nu);
  rn.set.gamma = n / (n + n_star);
  rn.set.estimand = rep.point;
  std::vector<double> psi;
  psi.reserve(rep.n_effective);
  for (const auto& w : target.rows) psi.push_back(eif::psi_transport({0, w, {}, {}}, rn.set));
  for (const auto& row : trial.rows) {
    rn.current_p = row.p_assign;
    psi.push_back(eif::psi_transport(as_observation(row), rn.set));
  }
  rep.std_error = influence_std_error(psi);
  return rep;
}

EstimateReport estimate_generalize(const GeneralizationCohort& cohort, const FittedNuisances& nu) {
  cohort.validate();
  require_nuisances(nu, false, true);
  const double big_n = static_cast<double>(cohort.size());
  double plugin = 0.0, aug = 0.0;
  for (const auto& row : cohort.rows) {
    plugin += (nu.m(1, row.w) - nu.m(0, row.w)) / big_n;
    if (row.z == 1) {
      const TrialRow t{row.w, *row.a, *row.y, *row.p_assign};
      aug += (arm_residual_weight(t, 1, nu.m) - arm_residual_weight(t, 0, nu.m)) / nu.e(row.w) / big_n;
    }
  }
  EstimateReport rep;
  rep.plugin = plugin;
  rep.augmentation = aug;
  rep.point = plugin + aug;
  rep.n_effective = cohort.size();
  rep.diagnostics = nu.diagnostics;

  RowNuisances rn(nu);
  rn.set.estimand = rep.point;
  std::vector<double> psi;
  psi.reserve(cohort.size());
  for (const auto& row : cohort.rows) {
    if (row.z == 1) rn.current_p = *row.p_assign;
    psi.push_back(eif::psi_generalize({row.z, row.w, row.a, row.y}, rn.set));
  }
  rep.std_error = influence_std_error(psi);
  return rep;
}

EstimateReport estimate_poststrat(const TrialDataset& trial, const PostStratifyTarget& strata,
                                  const FittedNuisances& nu) {
  trial.validate();
  require_nuisances(nu, false, false);
  const StratumIndex idx = index_strata(trial, strata);
  const std::size_t k_count = strata.size();
  std::vector<double> plugin_k(k_count, 0.0), effect_k(k_count, 0.0), tau_hat(k_count);
  for (std::size_t i = 0; i < trial.size(); ++i) {
    const auto& row = trial.rows[i];
    const std::size_t k = idx.of_row[i];
    const double cnt = static_cast<double>(idx.counts[k]);
    const double d = nu.m(1, row.w) - nu.m(0, row.w);
    plugin_k[k] += d / cnt;
    effect_k[k] += (d + arm_residual_weight(row, 1, nu.m) - arm_residual_weight(row, 0, nu.m)) / cnt;
  }
  EstimateReport rep;
  double plugin = 0.0, point = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    tau_hat[k] = static_cast<double>(idx.counts[k]) / static_cast<double>(trial.size());
    plugin += strata.weights()[k] * plugin_k[k];
    point += strata.weights()[k] * effect_k[k];
  }
  rep.plugin = plugin;
  rep.augmentation = point - plugin;
  rep.point = point;
  rep.n_effective = trial.size();
  rep.diagnostics = nu.diagnostics;

  RowNuisances rn(nu);
  rn.set.strata = strata;
  rn.set.tau = tau_hat;
  rn.set.stratum_effect = effect_k;
  rn.set.estimand = point;
  std::vector<double> psi;
  psi.reserve(trial.size());
  for (const auto& row : trial.rows) {
    rn.current_p = row.p_assign;
    psi.push_back(eif::psi_poststrat(as_observation(row), rn.set));
  }
  rep.std_error = influence_std_error(psi);
  return rep;
}

EstimateReport estimate_trial_ate(const TrialDataset& trial, const FittedNuisances& nu) {
  return estimate_poststrat(trial, eif::whole_population(), nu);
}

ArmMeans transport_arm_means(const TrialDataset& trial, const TargetCohort& target,
                             const FittedNuisances& nu) {
  trial.validate();
  require_nuisances(nu, true, false);
  if (trial.rows.empty() || target.rows.empty()) throw DataError("transport: empty trial or target sample");
  const double n = static_cast<double>(trial.size());
  const double n_star = static_cast<double>(target.rows.size());
  const double gamma = n / (n + n_star);
  ArmMeans out;
  out.diagnostics = nu.diagnostics;
  for (const auto& w : target.rows) {
    out.mu1 += nu.m(1, w) / n_star;
    out.mu0 += nu.m(0, w) / n_star;
  }
  for (const auto& row : trial.rows) {
    const double r = nu.r(row.w);
    out.mu1 += r * arm_residual_weight(row, 1, nu.m) / n;
    out.mu0 += r * arm_residual_weight(row, 0, nu.m) / n;
  }
  for (const auto& w : target.rows) {
    out.influence1.push_back((nu.m(1, w) - out.mu1) / (1.0 - gamma));
    out.influence0.push_back((nu.m(0, w) - out.mu0) / (1.0 - gamma));
  }
  for (const auto& row : trial.rows) {
    const double r = nu.r(row.w);
    out.influence1.push_back(r * arm_residual_weight(row, 1, nu.m) / gamma);
    out.influence0.push_back(r * arm_residual_weight(row, 0, nu.m) / gamma);
  }
  return out;
}

ArmMeans generalize_arm_means(const GeneralizationCohort& cohort, const FittedNuisances& nu) {
  cohort.validate();
  require_nuisances(nu, false, true);
  const double big_n = static_cast<double>(cohort.size());
  std::vector<double> v1, v0;
  v1.reserve(cohort.size());
  v0.reserve(cohort.size());
  for (const auto& row : cohort.rows) {
    double a1 = nu.m(1, row.w), a0 = nu.m(0, row.w);
    if (row.z == 1) {
      const TrialRow t{row.w, *row.a, *row.y, *row.p_assign};
      const double e = nu.e(row.w);
      a1 += arm_residual_weight(t, 1, nu.m) / e;
      a0 += arm_residual_weight(t, 0, nu.m) / e;
    }
    v1.push_back(a1);
    v0.push_back(a0);
  }
  ArmMeans out;
  out.diagnostics = nu.diagnostics;
  for (std::size_t i = 0; i < v1.size(); ++i) {
    out.mu1 += v1[i] / big_n;
    out.mu0 += v0[i] / big_n;
  }
  for (std::size_t i = 0; i < v1.size(); ++i) {
    out.influence1.push_back(v1[i] - out.mu1);
    out.influence0.push_back(v0[i] - out.mu0);
  }
  return out;
}

ArmMeans poststrat_arm_means(const TrialDataset& trial, const PostStratifyTarget& strata,
                             const FittedNuisances& nu) {
  trial.validate();
  require_nuisances(nu, false, false);
  const StratumIndex idx = index_strata(trial, strata);
  const std::size_t k_count = strata.size();
  std::vector<double> mean1(k_count, 0.0), mean0(k_count, 0.0);
  std::vector<double> v1(trial.size()), v0(trial.size());
  for (std::size_t i = 0; i < trial.size(); ++i) {
    const auto& row = trial.rows[i];
    const std::size_t k = idx.of_row[i];
    const double cnt = static_cast<double>(idx.counts[k]);
    v1[i] = nu.m(1, row.w) + arm_residual_weight(row, 1, nu.m);
    v0[i] = nu.m(0, row.w) + arm_residual_weight(row, 0, nu.m);
    mean1[k] += v1[i] / cnt;
    mean0[k] += v0[i] / cnt;
  }
  ArmMeans out;
  out.diagnostics = nu.diagnostics;
  for (std::size_t k = 0; k < k_count; ++k) {
    out.mu1 += strata.weights()[k] * mean1[k];
    out.mu0 += strata.weights()[k] * mean0[k];
  }
  const double n = static_cast<double>(trial.size());
  for (std::size_t i = 0; i < trial.size(); ++i) {
    const std::size_t k = idx.of_row[i];
    const double ratio = strata.weights()[k] / (static_cast<double>(idx.counts[k]) / n);
    out.influence1.push_back(ratio * (v1[i] - mean1[k]));
    out.influence0.push_back(ratio * (v0[i] - mean0[k]));
  }
  return out;
}

EstimateReport estimate_link_contrast(const ArmMeans& arms, const LinkFunction& link) {
  if (arms.influence1.size() != arms.influence0.size() || arms.influence1.empty()) {
    throw DomainError("link contrast: influence vectors must be nonempty and of equal length");
  }
  const double g1 = link.derivative(arms.mu1);
  const double g0 = link.derivative(arms.mu0);
  EstimateReport rep;
  rep.point = link.value(arms.mu1) - link.value(arms.mu0);
  rep.n_effective = arms.influence1.size();
  rep.diagnostics = arms.diagnostics;
  std::vector<double> psi(arms.influence1.size());
  for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = g1 * arms.influence1[i] - g0 * arms.influence0[i];
  rep.std_error = influence_std_error(psi);
  return rep;
}

}  // namespace optalloc::est
