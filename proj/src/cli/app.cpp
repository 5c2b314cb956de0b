#include "optalloc/cli/app.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "optalloc/allocation.hpp"
#include "optalloc/cli/config.hpp"
#include "optalloc/cli/csv.hpp"
#include "optalloc/eif.hpp"
#include "optalloc/errors.hpp"
#include "optalloc/estimate.hpp"
#include "optalloc/simulate.hpp"

namespace optalloc::cli {

namespace {

using nlohmann::json;

const std::vector<Estimand> kAllEstimands{Estimand::trial, Estimand::transport, Estimand::generalize,
                                          Estimand::poststratify};

struct Context {
  RunConfig config;
  std::string hash;
  std::ostream& out;
  std::ostream& err;

  std::vector<std::string> provenance() const {
    return {"config_hash=" + hash, "seed=" + std::to_string(config.study.master_seed)};
  }
  json stamp() const { return {{"config_hash", hash}, {"seed", config.study.master_seed}}; }
  std::filesystem::path path(const std::string& name) const { return config.out_dir / name; }
};

std::ofstream open_artifact(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  return f;
}

void write_json(const std::filesystem::path& path, const json& doc) {
  auto f = open_artifact(path);
  f << doc.dump(2) << '\n';
}

// Small CSV table writer with provenance comment lines.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  void write(const std::filesystem::path& path, const std::vector<std::string>& comments) const {
    auto f = open_artifact(path);
    for (const auto& c : comments) f << "# " << c << '\n';
    emit(f, ",");
  }

  void print(std::ostream& os) const {
    std::vector<std::size_t> width(header_.size(), 0);
    for (std::size_t j = 0; j < header_.size(); ++j) width[j] = header_[j].size();
    for (const auto& r : rows_) {
      for (std::size_t j = 0; j < r.size(); ++j) width[j] = std::max(width[j], r[j].size());
    }
    const auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t j = 0; j < r.size(); ++j) os << std::setw(static_cast<int>(width[j]) + 2) << r[j];
      os << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

 private:
  void emit(std::ostream& os, const char* sep) const {
    const auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t j = 0; j < r.size(); ++j) os << (j ? sep : "") << r[j];
      os << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string fixed(double x, int digits = 3) {
  if (!std::isfinite(x)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::string name(Estimand e) { return std::string(to_string(e)); }

double transport_gamma(const RunConfig& c) {
  return static_cast<double>(c.study.n) / static_cast<double>(c.study.n + c.study.n_star);
}

// ---------------------------------------------------------------- optimize

int cmd_optimize(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Scenario& s = c.scenario;
  const OutcomeModel& outcome = s.outcome;

  Table summary({"estimand", "pi_opt", "estimand_value", "mu1_star", "mu0_star", "m1", "m0"});
  json targets = json::array();
  std::vector<CovariateFunction> p_opt;
  for (Estimand e : kAllEstimands) {
    const auto m = alloc::design_moments(s.trial, s.target(e), outcome);
    const double pi = alloc::optimal_cir(m, c.link);
    const double value = c.link.value(m.mu1_star) - c.link.value(m.mu0_star);
    summary.add({name(e), fixed(pi, 6), fixed(value, 6), fixed(m.mu1_star, 6), fixed(m.mu0_star, 6),
                 fixed(m.m1, 6), fixed(m.m0, 6)});
    json t = {{"estimand", name(e)}, {"pi_opt", pi}, {"estimand_value", value},
              {"mu1_star", m.mu1_star}, {"mu0_star", m.mu0_star}, {"m1", m.m1}, {"m0", m.m0}};
    // p_opt(w) = c1 sd1(w) / (c1 sd1(w) + c0 sd0(w)) with c_a = g'(mu*_a)
    const bool identity = c.link.kind() == LinkFunction::Kind::identity;
    t["p_opt_scale"] = {{"arm1", identity ? 1.0 : c.link.derivative(m.mu1_star)},
                        {"arm0", identity ? 1.0 : c.link.derivative(m.mu0_star)}};
    targets.push_back(t);
    p_opt.push_back(alloc::optimal_cdr(outcome, c.link, m));
  }

  std::vector<std::string> header{"w1", "w2"};
  for (Estimand e : kAllEstimands) header.push_back("p_opt_" + name(e));
  Table grid(header);
  const std::size_t points = c.grid_points;
  for (int w2 = 0; w2 <= 1; ++w2) {
    for (std::size_t i = 0; i < points; ++i) {
      const double w1 = s.trial.lower() + (s.trial.upper() - s.trial.lower()) * static_cast<double>(i) /
                                              static_cast<double>(points - 1);
      std::vector<std::string> row{format_double(w1), std::to_string(w2)};
      for (const auto& p : p_opt) row.push_back(format_double(p({w1, w2})));
      grid.add(row);
    }
  }

  json doc = ctx.stamp();
  doc["link"] = std::string(c.link.name());
  doc["targets"] = targets;
  json params = {{"family", std::string(to_string(outcome.family()))}};
  if (const auto& p = outcome.parametric()) {
    params["mean"] = {p->mean[0], p->mean[1]};
    if (p->family == OutcomeFamily::normal) params["log_variance"] = {p->log_variance[0], p->log_variance[1]};
  }
  doc["outcome"] = params;
  doc["grid_points"] = points;

  summary.write(ctx.path("optimize.csv"), ctx.provenance());
  grid.write(ctx.path("p_opt_grid.csv"), ctx.provenance());
  write_json(ctx.path("optimize.json"), doc);
  ctx.out << "Optimal allocation (link: " << c.link.name() << ")\n";
  summary.print(ctx.out);
  return kOk;
}

// ---------------------------------------------------------------- bound

int cmd_bound(Context& ctx) {
  const RunConfig& c = ctx.config;
  const Scenario& s = c.scenario;
  if (c.link.kind() != LinkFunction::Kind::identity) {
    throw ConfigError("bound: variance bounds are computed on the identity scale; set link = \"identity\"");
  }
  std::vector<AllocationDesign> designs;
  for (const auto& d : c.study.designs) designs.push_back(sim::resolve_design(d, s, c.link));
  const double gamma = transport_gamma(c);

  Table long_form({"design", "pi", "estimand", "bound", "relative_efficiency"});
  std::vector<std::string> wide_header{"design", "pi"};
  for (Estimand e : kAllEstimands) wide_header.push_back(name(e));
  Table wide(wide_header);
  json cells = json::array();

  std::vector<std::vector<double>> bound(designs.size(), std::vector<double>(kAllEstimands.size()));
  for (std::size_t d = 0; d < designs.size(); ++d) {
    for (std::size_t k = 0; k < kAllEstimands.size(); ++k) {
      bound[d][k] = eif::variance_bound(designs[d], s.target(kAllEstimands[k]), s.trial, s.outcome, gamma);
    }
  }
  for (std::size_t d = 0; d < designs.size(); ++d) {
    const std::string label = c.study.designs[d].to_string();
    const double pi = designs[d].is_cir() ? designs[d].pi() : std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> row{label, designs[d].is_cir() ? fixed(pi) : "cdr"};
    for (std::size_t k = 0; k < kAllEstimands.size(); ++k) {
      const double re = bound[c.study.reference][k] / bound[d][k];
      row.push_back(fixed(re));
      long_form.add({label, designs[d].is_cir() ? format_double(pi) : "NA", name(kAllEstimands[k]),
                     format_double(bound[d][k]), format_double(re)});
      cells.push_back({{"design", label},
                       {"pi", designs[d].is_cir() ? json(pi) : json(nullptr)},
                       {"estimand", name(kAllEstimands[k])},
                       {"bound", bound[d][k]},
                       {"relative_efficiency", re}});
    }
    wide.add(row);
  }
  json doc = ctx.stamp();
  doc["reference"] = c.study.designs[c.study.reference].to_string();
  doc["transport_gamma"] = gamma;
  doc["cells"] = cells;

  long_form.write(ctx.path("bounds.csv"), ctx.provenance());
  wide.write(ctx.path("bound_re.csv"), ctx.provenance());
  write_json(ctx.path("bound.json"), doc);
  ctx.out << "Relative efficiency from variance bounds (reference "
          << c.study.designs[c.study.reference].to_string() << ")\n";
  wide.print(ctx.out);
  return kOk;
}

// ---------------------------------------------------------------- simulate

void dump_datasets(const Context& ctx) {
  const RunConfig& c = ctx.config;
  for (std::size_t d = 0; d < c.study.designs.size(); ++d) {
    const auto design = sim::resolve_design(c.study.designs[d], c.scenario, c.link);
    const auto data = sim::generate_replicate(c.study, design, 0);
    auto comments = ctx.provenance();
    comments.push_back("design=" + c.study.designs[d].to_string() + " replicate=0");
    const auto dir = ctx.path("datasets");
    const std::string stem = "design" + std::to_string(d);
    write_trial_csv(dir / (stem + "_trial.csv"), data.trial, comments);
    if (!data.target.rows.empty()) write_target_csv(dir / (stem + "_target.csv"), data.target, comments);
    if (!data.cohort.rows.empty()) write_generalization_csv(dir / (stem + "_cohort.csv"), data.cohort, comments);
  }
}

int cmd_simulate(Context& ctx) {
  const RunConfig& c = ctx.config;
  const auto result = sim::run_study(c.study);

  std::vector<std::string> header{"design", "pi"};
  for (Estimand e : result.estimands) header.push_back(name(e));
  Table re_table(header);
  Table cells({"design", "estimand", "truth", "mean", "bias", "bias_se", "variance", "relative_efficiency",
               "relative_efficiency_se", "theoretical_re", "mean_std_error", "coverage"});
  json jcells = json::array();
  for (std::size_t d = 0; d < result.designs.size(); ++d) {
    const double pi = result.design_pi[d];
    std::vector<std::string> row{result.designs[d], std::isfinite(pi) ? fixed(pi) : "cdr"};
    for (std::size_t k = 0; k < result.estimands.size(); ++k) {
      const auto& x = result.cell(d, k);
      row.push_back(fixed(x.relative_efficiency));
      cells.add({x.design, name(x.estimand), format_double(x.truth), format_double(x.mean), format_double(x.bias),
                 format_double(x.bias_se), format_double(x.variance), format_double(x.relative_efficiency),
                 format_double(x.relative_efficiency_se), format_double(x.theoretical_re),
                 format_double(x.mean_std_error), format_double(x.coverage)});
      jcells.push_back({{"design", x.design},
                        {"estimand", name(x.estimand)},
                        {"truth", x.truth},
                        {"mean", x.mean},
                        {"bias", x.bias},
                        {"bias_se", x.bias_se},
                        {"variance", x.variance},
                        {"relative_efficiency", x.relative_efficiency},
                        {"relative_efficiency_se", x.relative_efficiency_se},
                        {"theoretical_re", x.theoretical_re},
                        {"mean_std_error", x.mean_std_error},
                        {"coverage", x.coverage}});
    }
    re_table.add(row);
  }
  json doc = ctx.stamp();
  doc["reference"] = c.study.designs[c.study.reference].to_string();
  doc["replications"] = result.replications;
  doc["used"] = result.used;
  doc["failures"] = result.failures;
  doc["failure_messages"] = result.failure_messages;
  doc["clipped"] = result.clipped;
  doc["n"] = c.study.n;
  doc["n_star"] = c.study.n_star;
  doc["nuisances"] = c.study.mode == sim::NuisanceMode::oracle ? "oracle" : "fitted";
  doc["link"] = std::string(c.link.name());
  doc["cells"] = jcells;

  re_table.write(ctx.path("study_re.csv"), ctx.provenance());
  cells.write(ctx.path("study_cells.csv"), ctx.provenance());
  write_json(ctx.path("study.json"), doc);
  if (c.dump_datasets) dump_datasets(ctx);

  ctx.out << "Relative efficiency over " << result.used << " replicates (reference "
          << c.study.designs[c.study.reference].to_string() << ")\n";
  re_table.print(ctx.out);
  if (result.failures > 0) ctx.err << result.failures << " replicate(s) excluded after fit failures\n";
  return kOk;
}

// ---------------------------------------------------------------- estimate

json report_json(const est::EstimateReport& r) {
  json j = {{"point", r.point},
            {"std_error", r.std_error},
            {"ci95", {r.point - 1.959963984540054 * r.std_error, r.point + 1.959963984540054 * r.std_error}},
            {"n_effective", r.n_effective}};
  if (r.plugin) j["plugin"] = *r.plugin;
  if (r.augmentation) j["augmentation"] = *r.augmentation;
  json diag = {{"clipped", r.diagnostics.clipped},
               {"outcome_iterations", r.diagnostics.outcome_iterations},
               {"ratio_iterations", r.diagnostics.ratio_iterations},
               {"participation_iterations", r.diagnostics.participation_iterations}};
  if (r.diagnostics.ratio_calibration) diag["ratio_calibration"] = *r.diagnostics.ratio_calibration;
  j["diagnostics"] = diag;
  return j;
}

int cmd_estimate(Context& ctx, bool oracle) {
  const RunConfig& c = ctx.config;
  if (!c.estimate) throw ConfigError("estimate: the config has no [estimate] section");
  const EstimateInputs& in = *c.estimate;
  const Scenario& s = c.scenario;
  const bool identity = c.link.kind() == LinkFunction::Kind::identity;

  est::FittedNuisances nu;
  if (oracle) {
    const OutcomeModel outcome = s.outcome;
    nu.m = [outcome](int a, const Covariate& w) { return outcome.mean(a, w); };
    if (in.estimand == Estimand::transport) nu.r = alloc::density_ratio(s.trial, s.transport);
    if (in.estimand == Estimand::generalize) nu.e = alloc::participation_propensity(s.trial, s.generalize);
  }

  est::EstimateReport report;
  switch (in.estimand) {
    case Estimand::trial:
    case Estimand::poststratify: {
      const auto trial = load_trial_csv(in.trial);
      PostStratifyTarget strata = in.estimand == Estimand::trial ? eif::whole_population() : s.poststratify;
      if (in.estimand == Estimand::poststratify && !in.weights.empty()) {
        const auto w = load_weights_csv(in.weights);
        if (w.size() != strata.size()) {
          throw DataError(in.weights.string() + ": " + std::to_string(w.size()) + " weights for " +
                          std::to_string(strata.size()) + " configured strata");
        }
        strata = PostStratifyTarget({strata.strata().begin(), strata.strata().end()}, w);
      }
      if (!oracle) nu = est::fit_trial_nuisances(trial, est::Basis::outcome_default(), in.family);
      report = identity ? est::estimate_poststrat(trial, strata, nu)
                        : est::estimate_link_contrast(est::poststrat_arm_means(trial, strata, nu), c.link);
      break;
    }
    case Estimand::transport: {
      const auto trial = load_trial_csv(in.trial);
      const auto target = load_target_csv(in.target);
      if (!oracle) {
        nu = est::fit_transport_nuisances(trial, target, est::Basis::outcome_default(),
                                          est::Basis::membership_default(), in.family);
      }
      report = identity ? est::estimate_transport(trial, target, nu)
                        : est::estimate_link_contrast(est::transport_arm_means(trial, target, nu), c.link);
      break;
    }
    case Estimand::generalize: {
      const auto cohort = load_generalization_csv(in.cohort);
      if (!oracle) {
        nu = est::fit_generalize_nuisances(cohort, est::Basis::outcome_default(),
                                           est::Basis::membership_default(), in.family);
      }
      report = identity ? est::estimate_generalize(cohort, nu)
                        : est::estimate_link_contrast(est::generalize_arm_means(cohort, nu), c.link);
      break;
    }
  }

  json doc = ctx.stamp();
  doc["estimand"] = name(in.estimand);
  doc["link"] = std::string(c.link.name());
  doc["nuisances"] = oracle ? "oracle" : "fitted";
  doc["report"] = report_json(report);
  write_json(ctx.path("estimate.json"), doc);
  ctx.out << doc.dump(2) << '\n';
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optimal treatment allocation for trial, transported, generalized and post-stratified effects"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replications;
  std::optional<unsigned> jobs;
  std::string out_dir;
  bool oracle = false;
  app.add_option("--config", config_path, "TOML run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed (overrides study.seed)");
  app.add_option("--replications", replications, "replicates (overrides study.replications)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  app.add_option("--jobs", jobs, "worker threads for simulate")->check(CLI::PositiveNumber);
  app.add_flag("--oracle-nuisances", oracle, "use true nuisance functions instead of fitted ones");

  auto* optimize = app.add_subcommand("optimize", "optimal CIR probabilities and the gridded optimal CDR");
  auto* bound = app.add_subcommand("bound", "variance bounds and relative efficiencies of the configured designs");
  auto* simulate = app.add_subcommand("simulate", "replicated simulation study");
  auto* estimate = app.add_subcommand("estimate", "one-step estimate from CSV data");
  for (auto* sub : {optimize, bound, simulate, estimate}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code == 0 ? kOk : kConfigError;
  }

  try {
    RunConfig loaded = config_path.empty() ? RunConfig{} : load_config(config_path);
    // verbosity 0 keeps stdout quiet; artifacts and diagnostics are unaffected
    std::ostream quiet(nullptr);
    std::ostream& shown = loaded.verbosity > 0 ? out : quiet;
    Context ctx{std::move(loaded), "", shown, err};
    RunConfig& c = ctx.config;
    if (seed) c.study.master_seed = *seed;
    if (replications) c.study.replications = *replications;
    if (jobs) c.study.jobs = *jobs;
    if (oracle) c.study.mode = sim::NuisanceMode::oracle;
    if (!out_dir.empty()) c.out_dir = out_dir;
    c.sync();
    ctx.hash = hash_hex(config_hash(c));

    if (*optimize) return cmd_optimize(ctx);
    if (*bound) return cmd_bound(ctx);
    if (*simulate) return cmd_simulate(ctx);
    return cmd_estimate(ctx, oracle);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const FitError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const DomainError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  }
}

}  // namespace optalloc::cli
