#include "optalloc/cli/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "optalloc/errors.hpp"

namespace optalloc::cli {

namespace {

// Typed access to one TOML table; remembers which keys were consumed so
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const toml::table& table, std::string path) : table_(&table), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  std::string key_path(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }
  bool has(std::string_view key) const { return table_->contains(key); }
  const toml::node* raw(std::string_view key) { return take(key); }

  std::optional<double> number(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return std::nullopt;
    if (!n->is_number()) fail(key, "expected a number");
    return n->value<double>();
  }
  double number(std::string_view key, double fallback) { return number(key).value_or(fallback); }
  double required_number(std::string_view key) {
    auto v = number(key);
    if (!v) fail(key, "missing required key");
    return *v;
  }

  std::optional<std::int64_t> integer(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return std::nullopt;
    if (!n->is_integer()) fail(key, "expected an integer");
    return n->value<std::int64_t>();
  }
  std::size_t count(std::string_view key, std::size_t fallback, std::int64_t minimum) {
    auto v = integer(key);
    if (!v) return fallback;
    if (*v < minimum) fail(key, "must be at least " + std::to_string(minimum));
    return static_cast<std::size_t>(*v);
  }

  std::optional<std::string> string(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return std::nullopt;
    if (!n->is_string()) fail(key, "expected a string");
    return n->value<std::string>();
  }

  std::optional<bool> boolean(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return std::nullopt;
    if (!n->is_boolean()) fail(key, "expected true or false");
    return n->value<bool>();
  }

  std::optional<Section> table(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return std::nullopt;
    if (!n->is_table()) fail(key, "expected a table");
    return Section(*n->as_table(), key_path(key));
  }

  const toml::array* array(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return nullptr;
    if (!n->is_array()) fail(key, "expected an array");
    return n->as_array();
  }

  std::optional<std::vector<double>> numbers(std::string_view key) {
    const toml::array* arr = array(key);
    if (!arr) return std::nullopt;
    std::vector<double> out;
    for (const auto& el : *arr) {
      if (!el.is_number()) fail(key, "expected an array of numbers");
      out.push_back(*el.value<double>());
    }
    return out;
  }

  std::optional<std::vector<std::string>> strings(std::string_view key) {
    const toml::array* arr = array(key);
    if (!arr) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& el : *arr) {
      if (!el.is_string()) fail(key, "expected an array of strings");
      out.push_back(*el.value<std::string>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : *table_) {
      if (!used_.count(std::string(k.str()))) {
        throw ConfigError("unknown key '" + key_path(k.str()) + "'");
      }
    }
  }

  [[noreturn]] void fail(std::string_view key, const std::string& what) const {
    throw ConfigError("config key '" + key_path(key) + "': " + what);
  }

 private:
  const toml::node* take(std::string_view key) {
    used_.insert(std::string(key));
    return table_->get(key);
  }

  const toml::table* table_;
  std::string path_;
  std::set<std::string> used_;
};

// Model constructors signal bad values with DomainError; report the key.
template <typename F>
auto guarded(const Section& s, F&& build) {
  try {
    return build();
  } catch (const DomainError& e) {
    throw ConfigError("config section '" + s.path() + "': " + e.what());
  }
}

CovariateDistribution read_product(Section& s) {
  auto w1 = s.table("w1");
  if (!w1) s.fail("w1", "missing required table");
  const double mean = w1->required_number("mean");
  const double sd = w1->required_number("sd");
  const double lower = w1->required_number("lower");
  const double upper = w1->required_number("upper");
  w1->finish();
  const double q = s.required_number("w2_prob");
  if (!(q > 0.0 && q < 1.0)) s.fail("w2_prob", "must lie in (0, 1)");
  return guarded(s, [&] {
    return CovariateDistribution::product(numerics::TruncatedNormal(mean, sd, lower, upper), q);
  });
}

// A law table: either {w1, w2_prob} or {mixture_weight, first, second}.
// Extra keys are left for the caller to consume.
CovariateDistribution read_law(Section& s) {
  if (s.has("mixture_weight")) {
    const double lambda = s.required_number("mixture_weight");
    auto first = s.table("first");
    auto second = s.table("second");
    if (!first) s.fail("first", "missing required table");
    if (!second) s.fail("second", "missing required table");
    const auto a = read_product(*first);
    const auto b = read_product(*second);
    first->finish();
    second->finish();
    return guarded(s, [&] { return CovariateDistribution::mixture(a, b, lambda); });
  }
  return read_product(s);
}

LinearCoefficients read_coefficients(Section& s, std::string_view key) {
  auto v = s.numbers(key);
  if (!v) s.fail(key, "missing required key");
  if (v->size() != 3) s.fail(key, "expected 3 coefficients on (1, w1, w2)");
  return {(*v)[0], (*v)[1], (*v)[2]};
}

OutcomeFamily parse_family(Section& s, std::string_view key, const std::string& name) {
  if (name == "normal") return OutcomeFamily::normal;
  if (name == "bernoulli") return OutcomeFamily::bernoulli;
  s.fail(key, "expected \"normal\" or \"bernoulli\", got \"" + name + "\"");
}

OutcomeModel read_outcome(Section& s) {
  ParametricOutcome p;
  const auto family = s.string("family");
  if (!family) s.fail("family", "missing required key");
  p.family = parse_family(s, "family", *family);
  p.mean = {read_coefficients(s, "mean0"), read_coefficients(s, "mean1")};
  if (p.family == OutcomeFamily::normal) {
    p.log_variance = {read_coefficients(s, "log_variance0"), read_coefficients(s, "log_variance1")};
  }
  return guarded(s, [&] { return OutcomeModel(p); });
}

PostStratifyTarget read_poststratify(Section& s) {
  auto weights = s.numbers("weights");
  if (!weights) s.fail("weights", "missing required key");
  const bool has_cut = s.has("cutpoint");
  const toml::array* strata_arr = s.array("strata");
  if (has_cut == (strata_arr != nullptr)) s.fail("strata", "give exactly one of 'cutpoint' or 'strata'");
  if (has_cut) {
    const double c = s.required_number("cutpoint");
    return guarded(s, [&] { return PostStratifyTarget::from_cutpoint(c, *weights); });
  }
  std::vector<Stratum> strata;
  std::size_t i = 0;
  for (const auto& el : *strata_arr) {
    ++i;
    if (!el.is_table()) s.fail("strata", "expected an array of tables");
    Section st(*el.as_table(), s.key_path("strata") + "[" + std::to_string(i) + "]");
    Stratum stratum;
    stratum.w1_lower = st.number("w1_lower", stratum.w1_lower);
    stratum.w1_upper = st.number("w1_upper", stratum.w1_upper);
    if (auto w2 = st.integer("w2")) {
      if (*w2 != 0 && *w2 != 1) st.fail("w2", "must be 0 or 1");
      stratum.w2 = static_cast<int>(*w2);
    }
    st.finish();
    strata.push_back(stratum);
  }
  return guarded(s, [&] { return PostStratifyTarget(strata, *weights); });
}

Estimand read_estimand(Section& s, std::string_view key, const std::string& name) {
  const auto e = sim::parse_estimand(name);
  if (!e) s.fail(key, "unknown estimand \"" + name + "\" (trial, transport, generalize, poststratify)");
  return *e;
}

// Seeds above 2^63 - 1 do not fit a TOML integer and are written as
// decimal strings.
std::uint64_t read_seed(const toml::node& n, const Section& s) {
  if (const auto v = n.value<std::int64_t>(); v && n.is_integer()) {
    if (*v < 0) s.fail("seed", "must be non-negative");
    return static_cast<std::uint64_t>(*v);
  }
  if (const auto text = n.value<std::string>()) {
    std::uint64_t seed = 0;
    const auto* end = text->data() + text->size();
    const auto [ptr, ec] = std::from_chars(text->data(), end, seed);
    if (ec == std::errc() && ptr == end && !text->empty()) return seed;
  }
  s.fail("seed", "expected a non-negative integer");
}

void read_study(Section& s, RunConfig& c) {
  sim::StudyConfig& st = c.study;
  if (auto designs = s.strings("designs")) {
    if (designs->empty()) s.fail("designs", "at least one design required");
    st.designs.clear();
    for (const auto& d : *designs) {
      try {
        st.designs.push_back(sim::DesignSpec::parse(d));
      } catch (const ConfigError& e) {
        s.fail("designs", e.what());
      }
    }
    st.reference = 0;
  }
  if (auto ref = s.string("reference")) {
    bool found = false;
    for (std::size_t i = 0; i < st.designs.size() && !found; ++i) {
      if (st.designs[i].to_string() == sim::DesignSpec::parse(*ref).to_string()) {
        st.reference = i;
        found = true;
      }
    }
    if (!found) s.fail("reference", "\"" + *ref + "\" is not among study.designs");
  }
  if (auto est = s.strings("estimands")) {
    if (est->empty()) s.fail("estimands", "at least one estimand required");
    st.estimands.clear();
    for (const auto& e : *est) st.estimands.push_back(read_estimand(s, "estimands", e));
  }
  st.n = s.count("n", st.n, 2);
  st.n_star = s.count("n_star", st.n_star, 1);
  st.replications = s.count("replications", st.replications, 1);
  if (const toml::node* seed = s.raw("seed")) st.master_seed = read_seed(*seed, s);
  if (auto mode = s.string("nuisances")) {
    if (*mode == "fitted") {
      st.mode = sim::NuisanceMode::fitted;
    } else if (*mode == "oracle") {
      st.mode = sim::NuisanceMode::oracle;
    } else {
      s.fail("nuisances", "expected \"fitted\" or \"oracle\"");
    }
  }
  st.jobs = static_cast<unsigned>(s.count("jobs", st.jobs, 1));
  if (auto f = s.number("max_failure_fraction")) {
    if (!(*f >= 0.0 && *f < 1.0)) s.fail("max_failure_fraction", "must lie in [0, 1)");
    st.max_failure_fraction = *f;
  }
  if (auto d = s.boolean("dump_datasets")) c.dump_datasets = *d;
}

toml::table law_table(const CovariateDistribution& law) {
  const auto product = [](const ProductLaw& p) {
    toml::table w1;
    w1.insert("mean", p.w1.mu());
    w1.insert("sd", p.w1.sigma());
    w1.insert("lower", p.w1.lower());
    w1.insert("upper", p.w1.upper());
    toml::table t;
    t.insert("w1", std::move(w1));
    t.insert("w2_prob", p.q);
    return t;
  };
  const auto comps = law.components();
  if (!law.is_mixture()) return product(comps.front().law);
  toml::table t;
  t.insert("mixture_weight", comps[0].weight);
  t.insert("first", product(comps[0].law));
  t.insert("second", product(comps[1].law));
  return t;
}

toml::array coefficient_array(const LinearCoefficients& c) { return toml::array{c[0], c[1], c[2]}; }

}  // namespace

void RunConfig::sync() {
  study.scenario = scenario;
  study.link = link;
}

RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir) {
  toml::table doc;
  try {
    doc = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
  RunConfig c;
  Section root(doc, "");
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };

  if (auto link = root.string("link")) {
    try {
      c.link = LinkFunction::parse(*link);
    } catch (const DomainError&) {
      root.fail("link", "expected identity, log or logit");
    }
  }
  if (auto out = root.table("output")) {
    if (auto dir = out->string("dir")) c.out_dir = resolve(*dir);
    if (auto v = out->integer("verbosity")) {
      if (*v != 0 && *v != 1) out->fail("verbosity", "expected 0 (quiet) or 1");
      c.verbosity = static_cast<int>(*v);
    }
    out->finish();
  }
  if (auto trial = root.table("trial")) {
    c.scenario.trial = read_law(*trial);
    trial->finish();
  }
  if (auto outcome = root.table("outcome")) {
    c.scenario.outcome = read_outcome(*outcome);
    outcome->finish();
  }
  if (auto targets = root.table("targets")) {
    if (auto tr = targets->table("transport")) {
      c.scenario.transport = TransportTarget{read_law(*tr)};
      tr->finish();
    }
    if (auto gen = targets->table("generalize")) {
      const double gamma = gen->number("gamma", 0.5);
      if (!(gamma > 0.0 && gamma < 1.0)) gen->fail("gamma", "must lie in (0, 1)");
      c.scenario.generalize = GeneralizeTarget{read_law(*gen), gamma};
      gen->finish();
    }
    if (auto ps = targets->table("poststratify")) {
      c.scenario.poststratify = read_poststratify(*ps);
      ps->finish();
    }
    targets->finish();
  }
  if (auto study = root.table("study")) {
    read_study(*study, c);
    study->finish();
  }
  if (auto opt = root.table("optimize")) {
    c.grid_points = opt->count("grid_points", c.grid_points, 2);
    opt->finish();
  }
  if (auto est = root.table("estimate")) {
    EstimateInputs in;
    const auto name = est->string("estimand");
    if (!name) est->fail("estimand", "missing required key");
    in.estimand = read_estimand(*est, "estimand", *name);
    if (auto fam = est->string("outcome_family")) in.family = parse_family(*est, "outcome_family", *fam);
    if (auto p = est->string("trial")) in.trial = resolve(*p);
    if (auto p = est->string("target")) in.target = resolve(*p);
    if (auto p = est->string("cohort")) in.cohort = resolve(*p);
    if (auto p = est->string("weights")) in.weights = resolve(*p);
    const bool needs_trial = in.estimand != Estimand::generalize;
    if (needs_trial && in.trial.empty()) est->fail("trial", "required for this estimand");
    if (in.estimand == Estimand::transport && in.target.empty()) est->fail("target", "required for transport");
    if (in.estimand == Estimand::generalize && in.cohort.empty()) est->fail("cohort", "required for generalize");
    est->finish();
    c.estimate = in;
  }
  root.finish();

  // cross-section checks
  for (const auto& d : c.study.designs) {
    if (d.kind == sim::DesignSpec::Kind::optimal_cdr && c.link.kind() != LinkFunction::Kind::identity &&
        !d.estimand) {
      throw ConfigError("config key 'study.designs': optimal_cdr needs an estimand under a non-identity link");
    }
  }
  c.sync();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

std::string to_toml(const RunConfig& c) {
  toml::table doc;
  doc.insert("link", std::string(c.link.name()));

  toml::table output;
  output.insert("dir", c.out_dir.string());
  output.insert("verbosity", c.verbosity);
  doc.insert("output", std::move(output));

  doc.insert("trial", law_table(c.scenario.trial));

  const auto& param = c.scenario.outcome.parametric();
  if (!param) throw ConfigError("outcome model has no parametric form and cannot be written to TOML");
  toml::table outcome;
  outcome.insert("family", std::string(to_string(param->family)));
  outcome.insert("mean0", coefficient_array(param->mean[0]));
  outcome.insert("mean1", coefficient_array(param->mean[1]));
  if (param->family == OutcomeFamily::normal) {
    outcome.insert("log_variance0", coefficient_array(param->log_variance[0]));
    outcome.insert("log_variance1", coefficient_array(param->log_variance[1]));
  }
  doc.insert("outcome", std::move(outcome));

  toml::table targets;
  targets.insert("transport", law_table(c.scenario.transport.law));
  toml::table gen = law_table(c.scenario.generalize.law);
  gen.insert("gamma", c.scenario.generalize.gamma);
  targets.insert("generalize", std::move(gen));
  toml::table ps;
  toml::array strata;
  for (const auto& s : c.scenario.poststratify.strata()) {
    toml::table st;
    st.insert("w1_lower", s.w1_lower);
    st.insert("w1_upper", s.w1_upper);
    if (s.w2) st.insert("w2", *s.w2);
    strata.push_back(std::move(st));
  }
  ps.insert("strata", std::move(strata));
  toml::array weights;
  for (double w : c.scenario.poststratify.weights()) weights.push_back(w);
  ps.insert("weights", std::move(weights));
  targets.insert("poststratify", std::move(ps));
  doc.insert("targets", std::move(targets));

  const auto& st = c.study;
  toml::table study;
  toml::array designs;
  for (const auto& d : st.designs) designs.push_back(d.to_string());
  study.insert("designs", std::move(designs));
  study.insert("reference", st.designs.at(st.reference).to_string());
  toml::array estimands;
  for (Estimand e : st.estimands) estimands.push_back(std::string(to_string(e)));
  study.insert("estimands", std::move(estimands));
  study.insert("n", static_cast<std::int64_t>(st.n));
  study.insert("n_star", static_cast<std::int64_t>(st.n_star));
  study.insert("replications", static_cast<std::int64_t>(st.replications));
  if (st.master_seed <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
    study.insert("seed", static_cast<std::int64_t>(st.master_seed));
  } else {
    study.insert("seed", std::to_string(st.master_seed));
  }
  study.insert("nuisances", std::string(st.mode == sim::NuisanceMode::oracle ? "oracle" : "fitted"));
  study.insert("jobs", static_cast<std::int64_t>(st.jobs));
  study.insert("max_failure_fraction", st.max_failure_fraction);
  study.insert("dump_datasets", c.dump_datasets);
  doc.insert("study", std::move(study));

  toml::table opt;
  opt.insert("grid_points", static_cast<std::int64_t>(c.grid_points));
  doc.insert("optimize", std::move(opt));

  if (c.estimate) {
    toml::table est;
    est.insert("estimand", std::string(to_string(c.estimate->estimand)));
    est.insert("outcome_family", std::string(to_string(c.estimate->family)));
    if (!c.estimate->trial.empty()) est.insert("trial", c.estimate->trial.string());
    if (!c.estimate->target.empty()) est.insert("target", c.estimate->target.string());
    if (!c.estimate->cohort.empty()) est.insert("cohort", c.estimate->cohort.string());
    if (!c.estimate->weights.empty()) est.insert("weights", c.estimate->weights.string());
    doc.insert("estimate", std::move(est));
  }

  std::ostringstream out;
  out << doc << '\n';
  return out.str();
}

std::uint64_t config_hash(const RunConfig& config) {
  // where results are written does not change them
  RunConfig canonical = config;
  canonical.out_dir = "out";
  canonical.verbosity = 1;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_toml(canonical)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace optalloc::cli
