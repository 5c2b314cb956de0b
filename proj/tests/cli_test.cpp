#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optalloc/cli/app.hpp"
#include "optalloc/cli/config.hpp"
#include "optalloc/cli/csv.hpp"
#include "optalloc/errors.hpp"

using namespace optalloc;
using namespace optalloc::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kBundledConfig = fs::path(OPTALLOC_SOURCE_DIR) / "configs" / "reference_study.toml";

// Fresh scratch directory per test case.
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "optalloc_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "optalloc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

template <typename F>
std::string data_error_message(F&& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  FAIL("expected a data error");
  return {};
}

const char* kFullConfig = R"(
link = "logit"

[output]
dir = "results"
verbosity = 0

[trial]
w1 = { mean = 0.1, sd = 0.8, lower = -2.5, upper = 2.5 }
w2_prob = 0.3

[outcome]
family = "bernoulli"
mean0 = [0.0, 0.5, -0.5]
mean1 = [1.0, -0.5, 1.0]

[targets.transport]
w1 = { mean = 0.4, sd = 1.1, lower = -2.5, upper = 2.5 }
w2_prob = 0.45

[targets.generalize]
mixture_weight = 0.6
first = { w1 = { mean = 0.1, sd = 0.8, lower = -2.5, upper = 2.5 }, w2_prob = 0.3 }
second = { w1 = { mean = 0.4, sd = 1.1, lower = -2.5, upper = 2.5 }, w2_prob = 0.45 }
gamma = 0.4

[targets.poststratify]
weights = [0.25, 0.75]
strata = [ { w1_upper = 0.0 }, { w1_lower = 0.0 } ]

[study]
designs = ["cir:0.5", "optimal_cir:transport", "optimal_cdr:transport"]
reference = "cir:0.5"
estimands = ["transport", "trial"]
n = 300
n_star = 200
replications = 17
seed = "18446744073709551615"
nuisances = "oracle"
jobs = 2
max_failure_fraction = 0.05
dump_datasets = true

[optimize]
grid_points = 11

[estimate]
estimand = "poststratify"
outcome_family = "bernoulli"
trial = "data/trial.csv"
weights = "data/weights.csv"
)";

}  // namespace

TEST_CASE("config round-trips through canonical TOML") {
  const RunConfig c = parse_config(kFullConfig, "/base");
  CHECK(c.link.kind() == LinkFunction::Kind::logit);
  CHECK(c.scenario.outcome.family() == OutcomeFamily::bernoulli);
  CHECK(c.scenario.generalize.law.is_mixture());
  CHECK(c.scenario.generalize.gamma == 0.4);
  CHECK(c.scenario.poststratify.size() == 2);
  CHECK(c.study.master_seed == 18446744073709551615ull);
  CHECK(c.study.mode == sim::NuisanceMode::oracle);
  CHECK(c.study.designs.size() == 3);
  CHECK(c.study.estimands.size() == 2);
  CHECK(c.dump_datasets);
  CHECK(c.grid_points == 11);
  CHECK(c.verbosity == 0);
  REQUIRE(c.estimate);
  CHECK(c.estimate->trial == fs::path("/base/data/trial.csv"));
  CHECK(c.out_dir == fs::path("/base/results"));

  const std::string text = to_toml(c);
  const RunConfig again = parse_config(text);
  CHECK(to_toml(again) == text);
  CHECK(config_hash(again) == config_hash(c));
}

TEST_CASE("an empty document is the bundled reference study") {
  const RunConfig empty = parse_config("");
  CHECK(to_toml(empty) == to_toml(RunConfig{}));
  CHECK(config_hash(load_config(kBundledConfig)) == config_hash(empty));
}

TEST_CASE("config hash ignores the output directory but not the seed") {
  RunConfig a = parse_config("");
  RunConfig b = a;
  b.out_dir = "elsewhere";
  b.verbosity = 0;
  CHECK(config_hash(a) == config_hash(b));
  b.study.master_seed += 1;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(hash_hex(0xabcULL) == "0000000000000abc");
}

TEST_CASE("config errors name the offending key") {
  const auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("[study]\nbogus = 1\n").find("study.bogus") != std::string::npos);
  CHECK(message("[study]\nn = \"many\"\n").find("study.n") != std::string::npos);
  CHECK(message("[study]\ndesigns = [\"cir:2\"]\n").find("study.designs") != std::string::npos);
  CHECK(message("[study]\nreference = \"cir:0.3\"\n").find("study.reference") != std::string::npos);
  CHECK(message("[targets.poststratify]\nweights = [0.5, 0.5]\ncutpoint = 0.0\n").find("poststratify") !=
        std::string::npos);
  CHECK(message("link = \"probit\"\n").find("link") != std::string::npos);
  CHECK(message("[output]\nverbosity = 3\n").find("output.verbosity") != std::string::npos);
  CHECK(message("[study\n").find("config line") != std::string::npos);
}

TEST_CASE("trial CSV parsing reports file and line") {
  const fs::path dir = scratch("trial_csv");
  write_text(dir / "missing.csv", "w1,w2,a,y\n0,0,1,0.5\n");
  CHECK(data_error_message([&] { load_trial_csv(dir / "missing.csv"); }).find("missing column 'p_assign'") !=
        std::string::npos);

  write_text(dir / "bad.csv", "# comment\nw1,w2,a,y,p_assign\n0,0,1,0.5,0.5\n0.2,1,0,abc,0.5\n");
  const std::string bad = data_error_message([&] { load_trial_csv(dir / "bad.csv"); });
  CHECK(bad.find("bad.csv:4") != std::string::npos);
  CHECK(bad.find("non-numeric") != std::string::npos);

  write_text(dir / "p.csv", "w1,w2,a,y,p_assign\n0,0,1,0.5,1.0\n");
  CHECK(data_error_message([&] { load_trial_csv(dir / "p.csv"); }).find("p.csv:2") != std::string::npos);

  write_text(dir / "reordered.csv", "y,p_assign,a,w2,w1\n0.5,0.25,1,0,-0.3\n");
  const auto ok = load_trial_csv(dir / "reordered.csv");
  REQUIRE(ok.size() == 1);
  CHECK(ok.rows[0].w.w1 == -0.3);
  CHECK(ok.rows[0].p_assign == 0.25);
}

TEST_CASE("weights CSV must sum to one") {
  const fs::path dir = scratch("weights_csv");
  write_text(dir / "ok.csv", "stratum_id,tau_star\n1,0.1\n2,0.2\n3,0.3\n4,0.4\n");
  const auto w = load_weights_csv(dir / "ok.csv");
  CHECK(w == std::vector<double>{0.1, 0.2, 0.3, 0.4});
  write_text(dir / "short.csv", "stratum_id,tau_star\n1,0.1\n2,0.2\n3,0.2\n4,0.4\n");
  CHECK(data_error_message([&] { load_weights_csv(dir / "short.csv"); }).find("sum to 0.9") != std::string::npos);
  write_text(dir / "gap.csv", "stratum_id,tau_star\n1,0.5\n3,0.5\n");
  CHECK_THROWS_AS(load_weights_csv(dir / "gap.csv"), DataError);
}

TEST_CASE("generalization CSV allows blank trial fields only outside the trial") {
  const fs::path dir = scratch("cohort_csv");
  write_text(dir / "ok.csv", "w1,w2,z,a,y,p_assign\n0.1,0,1,1,0.4,0.5\n0.3,1,0,,,\n");
  const auto cohort = load_generalization_csv(dir / "ok.csv");
  REQUIRE(cohort.size() == 2);
  CHECK_FALSE(cohort.rows[1].a.has_value());

  write_text(dir / "bad.csv", "w1,w2,z,a,y,p_assign\n0.1,0,0,,,\n0.3,1,1,,0.2,0.5\n");
  const std::string msg = data_error_message([&] { load_generalization_csv(dir / "bad.csv"); });
  CHECK(msg.find("bad.csv:3") != std::string::npos);
  CHECK(msg.find("'a'") != std::string::npos);
}

TEST_CASE("written datasets reload bit for bit") {
  const fs::path dir = scratch("csv_roundtrip");
  est::TrialDataset trial;
  trial.rows.push_back({{0.1 + 0.2, 1}, 1, std::nextafter(1.0 / 3.0, 1.0), 0.7298});
  trial.rows.push_back({{-1.9999999999999998, 0}, 0, -1e-300, 0.1});
  write_trial_csv(dir / "t.csv", trial, {"note"});
  const auto back = load_trial_csv(dir / "t.csv");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.rows[i].w.w1 == trial.rows[i].w.w1);
    CHECK(back.rows[i].y == trial.rows[i].y);
    CHECK(back.rows[i].p_assign == trial.rows[i].p_assign);
  }
}

TEST_CASE("optimize on the bundled config") {
  const fs::path dir = scratch("optimize");
  const auto r = run_cli({"--config", kBundledConfig.string(), "--out", dir.string(), "optimize"});
  REQUIRE(r.code == kOk);
  for (const char* v : {"0.729770", "0.291421", "0.460186", "0.260416"}) CHECK(r.out.find(v) != std::string::npos);

  const auto doc = nlohmann::json::parse(read_text(dir / "optimize.json"));
  const double expect[] = {0.730, 0.291, 0.460, 0.260};
  REQUIRE(doc["targets"].size() == 4);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(doc["targets"][k]["pi_opt"].get<double>() - expect[k]) <= 0.002);

  const std::string grid = read_text(dir / "p_opt_grid.csv");
  CHECK(grid.find("w1,w2,p_opt_trial,p_opt_transport,p_opt_generalize,p_opt_poststratify") != std::string::npos);
  CHECK(read_text(dir / "optimize.csv").find("# config_hash=") == 0);
  CHECK(doc.contains("config_hash"));
  CHECK(doc["seed"] == 20240101);
}

TEST_CASE("bound reports relative efficiencies and needs the identity link") {
  const fs::path dir = scratch("bound");
  const auto r = run_cli({"--out", dir.string(), "bound"});
  REQUIRE(r.code == kOk);
  CHECK(fs::exists(dir / "bound_re.csv"));
  CHECK(fs::exists(dir / "bound.json"));
  write_text(dir / "logit.toml", "link = \"logit\"\n");
  CHECK(run_cli({"--config", (dir / "logit.toml").string(), "--out", dir.string(), "bound"}).code == kConfigError);
}

TEST_CASE("simulate is reproducible across runs") {
  const fs::path dir = scratch("simulate");
  write_text(dir / "small.toml", "[study]\nn = 100\nn_star = 80\ndump_datasets = true\n");
  const auto cfg = (dir / "small.toml").string();
  const auto a = run_cli({"--config", cfg, "--replications", "1", "--seed", "7", "--out", (dir / "a").string(),
                          "simulate"});
  const auto b = run_cli({"--config", cfg, "--replications", "1", "--seed", "7", "--out", (dir / "b").string(),
                          "simulate"});
  REQUIRE(a.code == kOk);
  REQUIRE(b.code == kOk);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(entry.path(), dir / "a");
    CHECK(read_text(entry.path()) == read_text(dir / "b" / rel));
    const std::string text = read_text(entry.path());
    CHECK(text.find("config_hash") != std::string::npos);
    CHECK(text.find("seed") != std::string::npos);
  }
  CHECK(files == 3 + 6 * 3);
  CHECK(read_text(dir / "a" / "study_re.csv").find("# seed=7") != std::string::npos);
}

TEST_CASE("estimate on dumped datasets matches the in-memory estimate") {
  const fs::path dir = scratch("estimate_roundtrip");
  write_text(dir / "sim.toml", "[study]\nn = 150\nn_star = 120\ndump_datasets = true\n");
  REQUIRE(run_cli({"--config", (dir / "sim.toml").string(), "--replications", "1", "--seed", "11", "--out",
                   dir.string(), "simulate"})
              .code == kOk);

  RunConfig c = parse_config("[study]\nn = 150\nn_star = 120\n");
  c.study.master_seed = 11;
  c.sync();
  const auto design = sim::resolve_design(c.study.designs[2], c.scenario);
  const auto data = sim::generate_replicate(c.study, design, 0);
  const auto reports = sim::estimate_replicate(c.study, data);

  const std::pair<const char*, std::string> cases[] = {
      {"trial", "trial = \"datasets/design2_trial.csv\""},
      {"transport", "trial = \"datasets/design2_trial.csv\"\ntarget = \"datasets/design2_target.csv\""},
      {"generalize", "cohort = \"datasets/design2_cohort.csv\""},
      {"poststratify", "trial = \"datasets/design2_trial.csv\""},
  };
  for (int k = 0; k < 4; ++k) {
    const auto cfg = dir / ("est_" + std::to_string(k) + ".toml");
    write_text(cfg, std::string("[estimate]\nestimand = \"") + cases[k].first + "\"\n" + cases[k].second + "\n");
    const auto out = dir / ("est_" + std::to_string(k));
    const auto r = run_cli({"--config", cfg.string(), "--out", out.string(), "estimate"});
    REQUIRE(r.code == kOk);
    const auto doc = nlohmann::json::parse(read_text(out / "estimate.json"));
    CHECK(doc["report"]["point"].get<double>() == reports[k].point);
    CHECK(doc["report"]["std_error"].get<double>() == reports[k].std_error);
  }
}

TEST_CASE("estimate with exact outcomes returns the plug-in") {
  const fs::path dir = scratch("estimate_plugin");
  std::string trial = "w1,w2,a,y,p_assign\n";
  std::string target = "w1,w2\n";
  for (int i = 0; i < 40; ++i) {
    const double w1 = -1.8 + 0.09 * i;
    const int w2 = i % 3 == 0;
    const int a = i % 2;
    const double y = a ? 1.0 + w2 : w1 + w2;
    trial += format_double(w1) + "," + std::to_string(w2) + "," + std::to_string(a) + "," + format_double(y) + ",0.5\n";
    target += format_double(-1.75 + 0.088 * i) + "," + std::to_string(i % 2) + "\n";
  }
  write_text(dir / "trial.csv", trial);
  write_text(dir / "target.csv", target);
  write_text(dir / "run.toml", "[estimate]\nestimand = \"transport\"\ntrial = \"trial.csv\"\ntarget = \"target.csv\"\n");
  const auto r = run_cli({"--config", (dir / "run.toml").string(), "--out", dir.string(), "estimate"});
  REQUIRE(r.code == kOk);
  const auto rep = nlohmann::json::parse(read_text(dir / "estimate.json"))["report"];
  CHECK(std::abs(rep["augmentation"].get<double>()) <= 1e-12);
  double plugin = 0.0;
  for (int i = 0; i < 40; ++i) plugin += (1.0 - (-1.75 + 0.088 * i)) / 40.0;
  CHECK(rep["point"].get<double>() == doctest::Approx(plugin).epsilon(1e-12));
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("exit_codes");
  CHECK(run_cli({}).code == kConfigError);
  CHECK(run_cli({"--config", (dir / "absent.toml").string(), "optimize"}).code == kConfigError);

  write_text(dir / "unknown.toml", "[study]\nbogus = 1\n");
  const auto unknown = run_cli({"--config", (dir / "unknown.toml").string(), "optimize"});
  CHECK(unknown.code == kConfigError);
  CHECK(unknown.err.find("study.bogus") != std::string::npos);

  write_text(dir / "trial.csv", "w1,w2,a,y,p_assign\n");
  for (int i = 0; i < 30; ++i) {
    std::ofstream(dir / "trial.csv", std::ios::app) << 0.1 * i - 1.5 << ',' << (i % 4 == 0) << ',' << i % 2 << ','
                                                   << 0.03 * i << ",0.5\n";
  }
  write_text(dir / "weights.csv", "stratum_id,tau_star\n1,0.1\n2,0.2\n3,0.3\n4,0.3\n");
  write_text(dir / "ps.toml",
             "[estimate]\nestimand = \"poststratify\"\ntrial = \"trial.csv\"\nweights = \"weights.csv\"\n");
  const auto weights = run_cli({"--config", (dir / "ps.toml").string(), "--out", dir.string(), "estimate"});
  CHECK(weights.code == kDataError);
  CHECK(weights.err.find("0.9") != std::string::npos);

  write_text(dir / "missing.toml", "[estimate]\nestimand = \"trial\"\ntrial = \"nowhere.csv\"\n");
  CHECK(run_cli({"--config", (dir / "missing.toml").string(), "--out", dir.string(), "estimate"}).code ==
        kDataError);

  // every row has w2 = 0, so the outcome design matrix is singular
  write_text(dir / "flat.csv", "w1,w2,a,y,p_assign\n");
  for (int i = 0; i < 30; ++i) {
    std::ofstream(dir / "flat.csv", std::ios::app) << 0.1 * i - 1.5 << ",0," << i % 2 << ',' << 0.03 * i << ",0.5\n";
  }
  write_text(dir / "flat.toml", "[estimate]\nestimand = \"trial\"\ntrial = \"flat.csv\"\n");
  const auto singular = run_cli({"--config", (dir / "flat.toml").string(), "--out", dir.string(), "estimate"});
  CHECK(singular.code == kNumericalError);
  CHECK(singular.err.find("w2") != std::string::npos);

  write_text(dir / "noest.toml", "");
  CHECK(run_cli({"--config", (dir / "noest.toml").string(), "--out", dir.string(), "estimate"}).code ==
        kConfigError);
}

TEST_CASE("verbosity 0 silences the tables") {
  const fs::path dir = scratch("quiet");
  write_text(dir / "quiet.toml", "[output]\nverbosity = 0\n");
  const auto r = run_cli({"--config", (dir / "quiet.toml").string(), "--out", dir.string(), "optimize"});
  CHECK(r.code == kOk);
  CHECK(r.out.empty());
  CHECK(fs::exists(dir / "optimize.csv"));
}
