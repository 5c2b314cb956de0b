#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "optalloc/allocation.hpp"
#include "optalloc/errors.hpp"
#include "optalloc/estimate.hpp"
#include "optalloc/scenario.hpp"
#include "optalloc/simulate.hpp"
#include "oracles.hpp"

using namespace optalloc;
using namespace optalloc::est;

namespace {

const Scenario& ref() {
  static const Scenario s = reference_scenario();
  return s;
}

TrialDataset simulated_trial(std::size_t n, std::uint64_t seed, const AllocationDesign& design) {
  numerics::RngStream rng(seed, 0);
  return sim::generate_trial(ref().trial, ref().outcome, design, n, rng);
}

TargetCohort simulated_target(std::size_t n, std::uint64_t seed) {
  numerics::RngStream rng(seed, 1);
  return sim::generate_target(ref().transport.law, n, rng);
}

// Outcomes equal to the true means, so a correctly specified working model
// fits exactly and every residual is zero.
TrialDataset noise_free(TrialDataset data) {
  for (auto& r : data.rows) r.y = ref().outcome.mean(r.a, r.w);
  return data;
}

// Standard AIPW estimate of the trial ATE written out directly.
double aipw(const TrialDataset& data, const ArmFunction& m) {
  double sum = 0.0;
  for (const auto& r : data.rows) {
    const double m1 = m(1, r.w), m0 = m(0, r.w);
    sum += m1 - m0 + (r.a ? (r.y - m1) / r.p_assign : -(r.y - m0) / (1.0 - r.p_assign));
  }
  return sum / static_cast<double>(data.size());
}

double mean_delta(const std::vector<Covariate>& rows, const ArmFunction& m) {
  double sum = 0.0;
  for (const auto& w : rows) sum += m(1, w) - m(0, w);
  return sum / static_cast<double>(rows.size());
}

Eigen::MatrixXd column_design(const std::vector<std::vector<double>>& cols) {
  Eigen::MatrixXd x(cols.front().size(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (std::size_t i = 0; i < cols[j].size(); ++i) x(i, j) = cols[j][i];
  }
  return x;
}

}  // namespace

TEST_CASE("least squares on three collinear points") {
  const Basis basis({Feature::intercept, Feature::w1});
  const auto x = column_design({{1, 1, 1}, {0, 1, 2}});
  const Eigen::Vector3d y(0, 1, 2);
  const auto fit = fit_least_squares(x, y, basis);
  CHECK(std::abs(fit.coef[0]) <= 1e-14);
  CHECK(fit.coef[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("rank-deficient design names the collinear column") {
  const Basis basis = Basis::outcome_default();
  TrialDataset data;
  for (int i = 0; i < 20; ++i) data.rows.push_back({{0.1 * i, 0}, i % 2, 0.3 * i, 0.5});
  try {
    fit_outcome_regression(data, basis);
    FAIL("expected a fit error");
  } catch (const FitError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("collinear") != std::string::npos);
    CHECK(msg.find("w2") != std::string::npos);
  }
}

TEST_CASE("too few rows for the basis is a fit error") {
  TrialDataset data;
  for (int i = 0; i < 5; ++i) data.rows.push_back({{0.1 * i, i % 2}, i < 2 ? 1 : 0, 1.0, 0.5});
  CHECK_THROWS_AS(fit_outcome_regression(data), FitError);
}

TEST_CASE("logistic separation and non-convergence") {
  const Basis basis({Feature::intercept, Feature::w1});
  std::vector<double> w1, ones;
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) {
    w1.push_back(-2.0 + 0.1 * i);
    ones.push_back(1.0);
    y[i] = w1.back() > 0.0 ? 1.0 : 0.0;
  }
  const auto x = column_design({ones, w1});
  try {
    fit_logistic(x, y, basis);
    FAIL("expected a fit error");
  } catch (const FitError& e) {
    CHECK(std::string(e.what()).find("separation") != std::string::npos);
  }

  // overlapping classes converge, but not within one iteration
  for (int i = 0; i < 40; ++i) y[i] = (i % 3 == 0) != (w1[i] > 0.5) ? 1.0 : 0.0;
  const auto ok = fit_logistic(x, y, basis);
  CHECK(ok.iterations > 1);
  try {
    fit_logistic(x, y, basis, 1e-10, 1);
    FAIL("expected a fit error");
  } catch (const FitError& e) {
    CHECK(std::string(e.what()).find("deviance trace") != std::string::npos);
  }
}

TEST_CASE("outcome regression interpolates exact linear data") {
  const auto data = noise_free(simulated_trial(60, 1, AllocationDesign::cir(0.5)));
  const auto fit = fit_outcome_regression(data);
  for (const auto& r : data.rows) CHECK(std::abs(fit.mean(r.a, r.w) - r.y) <= 1e-12);
}

TEST_CASE("outcome regression coefficients are within 3 standard errors") {
  const auto data = simulated_trial(250, 77, AllocationDesign::cir(0.5));
  const auto fit = fit_outcome_regression(data);
  const Basis basis = Basis::outcome_default();
  const Eigen::Vector3d truth[2] = {{0, 1, 1}, {1, 0, 1}};
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<Covariate> w;
    std::vector<double> y;
    for (const auto& r : data.rows) {
      if (r.a != arm) continue;
      w.push_back(r.w);
      y.push_back(r.y);
    }
    const Eigen::MatrixXd x = basis.design(w);
    const Eigen::VectorXd resid = Eigen::Map<const Eigen::VectorXd>(y.data(), y.size()) - x * fit.coef[arm];
    // heteroskedasticity-robust sandwich covariance
    const Eigen::MatrixXd bread = (x.transpose() * x).inverse();
    const Eigen::MatrixXd meat = x.transpose() * resid.array().square().matrix().asDiagonal() * x;
    const Eigen::MatrixXd cov = bread * meat * bread;
    for (int j = 0; j < 3; ++j) CHECK(std::abs(fit.coef[arm][j] - truth[arm][j]) < 3.0 * std::sqrt(cov(j, j)));
  }
}

TEST_CASE("density ratio of identical samples is one") {
  const auto trial = simulated_trial(400, 3, AllocationDesign::cir(0.5));
  TargetCohort copy;
  for (const auto& r : trial.rows) copy.rows.push_back(r.w);
  const auto r = fit_density_ratio(trial, copy);
  for (Eigen::Index j = 0; j < r.coef.size(); ++j) CHECK(std::abs(r.coef[j]) <= 1e-8);
  CHECK(r({0.3, 1}) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(r.calibration == doctest::Approx(1.0).epsilon(1e-8));

  // every target row appears twice in the trial: prefactor n / n* = 2 cancels the odds
  TrialDataset doubled;
  for (const auto& row : trial.rows) {
    doubled.rows.push_back(row);
    doubled.rows.push_back(row);
  }
  const auto r2 = fit_density_ratio(doubled, copy);
  CHECK(r2.log_sampling_ratio == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(r2.coef[0] == doctest::Approx(std::log(2.0)).epsilon(1e-8));
  CHECK(r2({-0.4, 0}) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("density ratio matches the analytic ratio in large samples") {
  const std::size_t n = 100'000;
  const auto trial = simulated_trial(n, 5, AllocationDesign::cir(0.5));
  const auto target = simulated_target(n, 5);
  const auto r = fit_density_ratio(trial, target);
  for (const Covariate w : {Covariate{0, 0}, Covariate{1, 1}, Covariate{-1, 0}}) {
    const double truth = static_cast<double>(oracle::f_transport(w.w1, w.w2) / oracle::f_trial(w.w1, w.w2));
    CHECK(std::abs(r(w) / truth - 1.0) < 0.05);
  }
  CHECK(std::abs(r.calibration - 1.0) < 0.02);
}

TEST_CASE("participation propensity matches the mixture formula in large samples") {
  numerics::RngStream rng(9, 0);
  const auto cohort = sim::generate_generalization_cohort(ref().trial, ref().generalize, ref().outcome,
                                                          AllocationDesign::cir(0.5), 100'000, rng);
  const auto e = fit_participation(cohort);
  for (const Covariate w : {Covariate{0, 0}, Covariate{1, 1}, Covariate{-1, 0}}) {
    const auto f = oracle::f_trial(w.w1, w.w2), ft = oracle::f_transport(w.w1, w.w2);
    CHECK(std::abs(e(w) / static_cast<double>(f / (f + ft)) - 1.0) < 0.05);
  }
  // clipping keeps the fitted propensity inside (0, 1) even far off the support
  for (double w1 : {-1e3, 1e3}) {
    CHECK(e({w1, 0}) >= kProbabilityClip);
    CHECK(e({w1, 0}) <= 1.0 - kProbabilityClip);
  }
}

TEST_CASE("participation independent of covariates gives a constant propensity") {
  // each covariate value appears ten times, three of them in the trial
  numerics::RngStream rng(4, 0);
  GeneralizationCohort cohort;
  for (int i = 0; i < 100; ++i) {
    const Covariate w = ref().trial.sample(rng);
    for (int j = 0; j < 10; ++j) {
      CohortRow row{w, j < 3 ? 1 : 0, {}, {}, {}};
      if (row.z) {
        row.a = j % 2;
        row.y = 0.0;
        row.p_assign = 0.5;
      }
      cohort.rows.push_back(row);
    }
  }
  const auto e = fit_participation(cohort);
  for (const Covariate w : {Covariate{-1, 0}, Covariate{0, 1}, Covariate{1, 0}}) {
    CHECK(e(w) == doctest::Approx(0.3).epsilon(1e-8));
  }
}

TEST_CASE("one-step estimates equal plug-in plus augmentation") {
  const auto trial = simulated_trial(250, 11, alloc::optimal_cdr_design(ref().outcome));
  const auto target = simulated_target(250, 11);
  const auto nu = fit_transport_nuisances(trial, target);
  const auto tr = estimate_transport(trial, target, nu);
  CHECK(std::abs(tr.point - (*tr.plugin + *tr.augmentation)) <= 1e-12);

  const auto ps = estimate_poststrat(trial, ref().poststratify, fit_trial_nuisances(trial));
  CHECK(std::abs(ps.point - (*ps.plugin + *ps.augmentation)) <= 1e-12);

  numerics::RngStream rng(11, 2);
  const auto cohort = sim::generate_generalization_cohort(ref().trial, ref().generalize, ref().outcome,
                                                          AllocationDesign::cir(0.5), 250, rng);
  const auto gen = estimate_generalize(cohort, fit_generalize_nuisances(cohort));
  CHECK(std::abs(gen.point - (*gen.plugin + *gen.augmentation)) <= 1e-12);
  CHECK(gen.n_effective == cohort.size());
}

TEST_CASE("zero residuals leave the plug-in estimate") {
  const auto trial = noise_free(simulated_trial(200, 12, AllocationDesign::cir(0.4)));
  const auto target = simulated_target(150, 12);

  const auto nu = fit_transport_nuisances(trial, target);
  const auto tr = estimate_transport(trial, target, nu);
  CHECK(std::abs(*tr.augmentation) <= 1e-10);
  CHECK(tr.point == doctest::Approx(mean_delta(target.rows, nu.m)).epsilon(1e-10));

  const auto trial_nu = fit_trial_nuisances(trial);
  const auto ps = estimate_poststrat(trial, ref().poststratify, trial_nu);
  std::vector<std::vector<Covariate>> by_stratum(4);
  for (const auto& r : trial.rows) by_stratum[*ref().poststratify.stratum_of(r.w)].push_back(r.w);
  double expect = 0.0;
  for (int k = 0; k < 4; ++k) expect += ref().poststratify.weights()[k] * mean_delta(by_stratum[k], trial_nu.m);
  CHECK(ps.point == doctest::Approx(expect).epsilon(1e-10));

  GeneralizationCohort cohort;
  for (const auto& r : trial.rows) cohort.rows.push_back({r.w, 1, r.a, r.y, r.p_assign});
  for (const auto& w : target.rows) cohort.rows.push_back({w, 0, {}, {}, {}});
  const auto gnu = fit_generalize_nuisances(cohort);
  std::vector<Covariate> all;
  for (const auto& r : cohort.rows) all.push_back(r.w);
  CHECK(estimate_generalize(cohort, gnu).point == doctest::Approx(mean_delta(all, gnu.m)).epsilon(1e-10));
}

TEST_CASE("estimators reduce to the trial AIPW estimate") {
  const auto trial = simulated_trial(300, 13, alloc::optimal_cdr_design(ref().outcome));
  const auto nu_trial = fit_trial_nuisances(trial);
  const double expect = aipw(trial, nu_trial.m);

  CHECK(estimate_trial_ate(trial, nu_trial).point == doctest::Approx(expect).epsilon(1e-12));
  const PostStratifyTarget one({Stratum{}}, {1.0});
  CHECK(estimate_poststrat(trial, one, nu_trial).point == doctest::Approx(expect).epsilon(1e-12));

  // transport with r = 1 and the trial covariates as target sample
  TargetCohort same;
  for (const auto& r : trial.rows) same.rows.push_back(r.w);
  FittedNuisances unit = nu_trial;
  unit.r = [](const Covariate&) { return 1.0; };
  CHECK(estimate_transport(trial, same, unit).point == doctest::Approx(expect).epsilon(1e-12));

  // generalization with e = 1: AIPW on the participants plus the plug-in on the rest
  GeneralizationCohort cohort;
  for (const auto& r : trial.rows) cohort.rows.push_back({r.w, 1, r.a, r.y, r.p_assign});
  const auto others = simulated_target(100, 13);
  for (const auto& w : others.rows) cohort.rows.push_back({w, 0, {}, {}, {}});
  FittedNuisances all_in = nu_trial;
  all_in.e = [](const Covariate&) { return 1.0; };
  const double n = static_cast<double>(trial.size()), total = static_cast<double>(cohort.size());
  const double gen_expect = (n * expect + 100.0 * mean_delta(others.rows, nu_trial.m)) / total;
  CHECK(estimate_generalize(cohort, all_in).point == doctest::Approx(gen_expect).epsilon(1e-12));
}

TEST_CASE("trial ATE standard error is the influence-function standard deviation") {
  const auto trial = simulated_trial(300, 14, AllocationDesign::cir(0.6));
  const auto nu = fit_trial_nuisances(trial);
  const auto rep = estimate_trial_ate(trial, nu);
  std::vector<double> psi;
  for (const auto& r : trial.rows) {
    const double m1 = nu.m(1, r.w), m0 = nu.m(0, r.w);
    psi.push_back(m1 - m0 - rep.point + (r.a ? (r.y - m1) / r.p_assign : -(r.y - m0) / (1 - r.p_assign)));
  }
  double mean = 0.0, ss = 0.0;
  for (double v : psi) mean += v / psi.size();
  for (double v : psi) ss += (v - mean) * (v - mean);
  CHECK(rep.std_error == doctest::Approx(std::sqrt(ss / psi.size()) / std::sqrt(double(psi.size()))).epsilon(1e-10));
}

TEST_CASE("estimates do not depend on row order") {
  auto trial = simulated_trial(250, 15, AllocationDesign::cir(0.5));
  auto target = simulated_target(250, 15);
  const auto before = estimate_transport(trial, target, fit_transport_nuisances(trial, target));
  std::mt19937 g(1);
  std::shuffle(trial.rows.begin(), trial.rows.end(), g);
  std::shuffle(target.rows.begin(), target.rows.end(), g);
  const auto after = estimate_transport(trial, target, fit_transport_nuisances(trial, target));
  CHECK(after.point == doctest::Approx(before.point).epsilon(1e-12));
  CHECK(after.std_error == doctest::Approx(before.std_error).epsilon(1e-10));
}

TEST_CASE("empty stratum is reported by index") {
  TrialDataset trial = simulated_trial(250, 16, AllocationDesign::cir(0.5));
  std::erase_if(trial.rows, [](const TrialRow& r) { return r.w.w2 == 1 && r.w.w1 >= 0.5; });
  try {
    estimate_poststrat(trial, ref().poststratify, fit_trial_nuisances(trial));
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("stratum 4") != std::string::npos);
  }
}

TEST_CASE("invalid trial data is rejected") {
  TrialDataset trial = simulated_trial(50, 17, AllocationDesign::cir(0.5));
  trial.rows[3].p_assign = 1.0;
  CHECK_THROWS_AS(fit_trial_nuisances(trial), DataError);
  GeneralizationCohort cohort;
  cohort.rows.push_back({{0, 0}, 1, 1, {}, 0.5});
  cohort.rows.push_back({{0, 0}, 0, {}, {}, {}});
  CHECK_THROWS_AS(cohort.validate(), DataError);
}

TEST_CASE("link contrast") {
  const auto trial = simulated_trial(250, 18, AllocationDesign::cir(0.5));
  const auto target = simulated_target(250, 18);
  const auto nu = fit_transport_nuisances(trial, target);
  const auto arms = transport_arm_means(trial, target, nu);
  const auto direct = estimate_transport(trial, target, nu);
  const auto id = estimate_link_contrast(arms, LinkFunction{});
  CHECK(id.point == doctest::Approx(direct.point).epsilon(1e-12));
  CHECK(id.std_error == doctest::Approx(direct.std_error).epsilon(1e-10));

  ArmMeans equal;
  equal.mu1 = equal.mu0 = 0.8;
  equal.influence1 = {0.1, -0.2, 0.1};
  equal.influence0 = {0.0, 0.1, -0.1};
  CHECK(estimate_link_contrast(equal, LinkFunction(LinkFunction::Kind::log)).point == 0.0);
  ArmMeans negative = equal;
  negative.mu0 = -0.1;
  CHECK_THROWS_AS(estimate_link_contrast(negative, LinkFunction(LinkFunction::Kind::log)), DomainError);
}
