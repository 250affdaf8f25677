#include "evgen/cli.hpp"
#include "evgen/dataio.hpp"
#include "evgen/eval.hpp"
#include "evgen/gmm.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace evgen;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "evgen_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run(std::vector<std::string> args) { return cli::run(args); }

// Runs with std::cerr captured.
int run_capture(std::vector<std::string> args, std::string& err) {
  std::ostringstream buf;
  auto* old = std::cerr.rdbuf(buf.rdbuf());
  const int code = cli::run(args);
  std::cerr.rdbuf(old);
  err = buf.str();
  return code;
}

// Shared small inputs: 1200 two-mode sessions ingested into train/test sets.
struct Inputs {
  fs::path dir;
  fs::path sessions;
  fs::path train;
  fs::path test;
};

const Inputs& inputs() {
  static const Inputs in = [] {
    Inputs i;
    i.dir = scratch("inputs");
    REQUIRE(run({"--seed", "5", "--out", i.dir.string(), "synth", "--modes", "2", "--n", "1200"}) == 0);
    i.sessions = i.dir / "sessions.csv";
    REQUIRE(run({"--seed", "5", "--out", i.dir.string(), "ingest", "--sessions", i.sessions.string()}) == 0);
    i.train = i.dir / "train.csv";
    i.test = i.dir / "test.csv";
    return i;
  }();
  return in;
}

}  // namespace

TEST_CASE("ingest splits 20000 sessions 19000/1000 and is reproducible") {
  const auto a = scratch("ingest_a");
  const auto b = scratch("ingest_b");
  REQUIRE(run({"--seed", "1", "--out", a.string(), "synth", "--n", "20000"}) == 0);
  const auto sessions = (a / "sessions.csv").string();
  REQUIRE(run({"--seed", "2", "--out", a.string(), "ingest", "--sessions", sessions}) == 0);
  REQUIRE(run({"--seed", "2", "--out", b.string(), "ingest", "--sessions", sessions}) == 0);
  CHECK(dataio::read_dataset(a / "train.csv").size() == 19000);
  CHECK(dataio::read_dataset(a / "test.csv").size() == 1000);
  CHECK(dataio::read_dataset(a / "train.csv").normalized());
  const auto report = nlohmann::json::parse(slurp(a / "ingest_report.json"));
  CHECK(report.at("sessions") == 20000);
  CHECK(report.at("rejected") == 0);
  for (const char* f : {"train.csv", "test.csv", "ingest_report.json"}) CHECK(slurp(a / f) == slurp(b / f));
  CHECK(fs::exists(a / "ingest.config.toml"));
}

TEST_CASE("input errors exit with code 2") {
  const auto dir = scratch("errors");
  std::ofstream(dir / "empty.csv").close();
  std::string err;
  CHECK(run_capture({"--out", dir.string(), "ingest", "--sessions", (dir / "empty.csv").string()}, err) == 2);
  CHECK_FALSE(err.empty());
  CHECK(run_capture({"--out", dir.string(), "train-gmm", "--data", (dir / "missing.csv").string()}, err) == 2);
  CHECK(run_capture({"--out", dir.string(), "nonsense"}, err) == 2);
  CHECK(run_capture({"--out", dir.string(), "train-gmm", "--data", (dir / "empty.csv").string()}, err) == 2);
  CHECK(run({"--help"}) == 0);
}

TEST_CASE("train-gmm echoes the large-K defaults and recovers three modes with --clusters 3") {
  const auto dir = scratch("gmm");
  // Defaults appear in the config echo even though this run fails fast on too few samples.
  dataio::LoadCurveDataset tiny;
  tiny.curves = Matrix::Zero(3, kSlots);
  tiny.curves.middleCols(10, 4).setConstant(2.0);
  dataio::write_dataset(dir / "tiny.csv", tiny);
  std::string err;
  CHECK(run_capture({"--out", dir.string(), "train-gmm", "--data", (dir / "tiny.csv").string()}, err) == 2);
  const std::string echo = slurp(dir / "train-gmm.config.toml");
  CHECK(echo.find("clusters=\"1000\"") != std::string::npos);
  CHECK(echo.find("tol=\"1e-06\"") != std::string::npos);
  CHECK(echo.find("max-iter=\"50000\"") != std::string::npos);

  const auto pop = dataio::synth_population(dataio::example_population(3, 1500, 4));
  dataio::write_dataset(dir / "three.csv", pop.data);
  REQUIRE(run({"--seed", "3", "--out", dir.string(), "train-gmm", "--data", (dir / "three.csv").string(),
               "--clusters", "3", "--max-iter", "500"}) == 0);
  const auto model = gmm::load_model(dir / "gmm_model.json");
  REQUIRE(model.params.clusters() == 3);
  // Start hours of the three modes: 8, 12.5, 18.
  std::vector<double> starts;
  for (int k = 0; k < 3; ++k) starts.push_back(model.params.means[static_cast<std::size_t>(k)][0]);
  std::sort(starts.begin(), starts.end());
  CHECK(starts[0] == doctest::Approx(8.0).epsilon(0.05));
  CHECK(starts[1] == doctest::Approx(12.5).epsilon(0.05));
  CHECK(starts[2] == doctest::Approx(18.0).epsilon(0.05));
  CHECK(slurp(dir / "gmm_trace.csv").rfind("iteration,mean_log_likelihood\n", 0) == 0);
}

TEST_CASE("train-gan smoke run, generation, evaluation and sweep") {
  const auto& in = inputs();
  const auto dir = scratch("gan");
  const auto out = dir.string();
  REQUIRE(run({"--seed", "9", "--out", out, "train-gan", "--data", in.train.string(), "--condition",
               "continuous", "--batch", "256", "--epochs", "1"}) == 0);
  const auto model = dir / "gan_model.json";
  REQUIRE(fs::exists(model));
  CHECK(fs::exists(dir / "checkpoints" / "epoch_00001.json"));
  const std::string trace = slurp(dir / "trace.csv");
  CHECK(trace.rfind("epoch,critic_loss,wasserstein_estimate,gp_term,sc_term,lr\n", 0) == 0);
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 2);

  REQUIRE(run({"--seed", "1", "--out", out, "generate", "--model", model.string(), "--n", "500",
               "--file", "gan.csv"}) == 0);
  const auto gan = dataio::read_dataset(dir / "gan.csv");
  CHECK(gan.size() == 500);
  CHECK(gan.curves.cols() == 96);
  CHECK_FALSE(gan.normalized());

  REQUIRE(run({"--seed", "1", "--out", out, "generate", "--model", model.string(), "--n", "50",
               "--fix-c", "5=1.5", "--file", "extra.csv"}) == 0);
  CHECK(dataio::read_dataset(dir / "extra.csv").size() == 50);
  std::string err;
  CHECK(run_capture({"--out", out, "generate", "--model", model.string(), "--category", "1"}, err) == 2);
  CHECK(run_capture({"--out", out, "generate", "--model", model.string(), "--fix-c", "9=1"}, err) == 2);

  REQUIRE(run({"--seed", "2", "--out", out, "train-gmm", "--data", in.train.string(), "--clusters", "4",
               "--max-iter", "200"}) == 0);
  REQUIRE(run({"--seed", "2", "--out", out, "generate", "--model", (dir / "gmm_model.json").string(),
               "--n", "300", "--file", "gmm.csv"}) == 0);
  // GMM curves are flat sessions: one run of equal interior slots.
  const auto gmm_curves = dataio::read_dataset(dir / "gmm.csv").curves;
  for (Eigen::Index i = 0; i < gmm_curves.rows(); ++i) {
    std::vector<double> active;
    for (int t = 0; t < kSlots; ++t)
      if (gmm_curves(i, t) > 0.0) active.push_back(gmm_curves(i, t));
    for (std::size_t k = 2; k + 1 < active.size(); ++k) CHECK(active[k] == active[1]);
  }

  REQUIRE(run({"--out", out, "evaluate", "--real", in.test.string(), "--synth", in.test.string()}) == 0);
  const auto self = eval::load_report(dir / "report_test.json");
  CHECK(self.ks_distance == 0.0);
  CHECK(self.log_spectral_distance == 0.0);

  REQUIRE(run({"--out", out, "evaluate", "--real", in.test.string(), "--synth", (dir / "gan.csv").string(),
               (dir / "gmm.csv").string()}) == 0);
  CHECK(fs::exists(dir / "report_gan.json"));
  CHECK(fs::exists(dir / "report_gmm.json"));
  CHECK(fs::exists(dir / "plots" / "gan" / "cdf.svg"));
  CHECK(eval::load_report(dir / "report_gan.json").units == "kW");

  REQUIRE(run({"--seed", "4", "--out", out, "evaluate", "--real", in.test.string(), "--fit", in.train.string(),
               "--sweep-k", "1,2,3", "--n-synth", "200", "--max-iter", "100", "--no-plots"}) == 0);
  for (const char* f : {"report_gmm_k1.json", "report_gmm_k2.json", "report_gmm_k3.json"})
    CHECK(fs::exists(dir / f));

  REQUIRE(run({"--seed", "3", "--out", out, "sweep", "--model", model.string(), "--var", "2", "--values",
               "0,0.5,1,1.5", "--n-per-value", "20"}) == 0);
  const auto sweep = nlohmann::json::parse(slurp(dir / "sweep.json"));
  REQUIRE(sweep.at("entries").size() == 4);
  for (const auto& e : sweep.at("entries")) CHECK(e.at("mean").size() == 96);
  CHECK(fs::exists(dir / "sweep.svg"));
}

TEST_CASE("a diverging run exits with code 3 and names the last checkpoint") {
  const auto& in = inputs();
  const auto dir = scratch("diverge");
  std::string err;
  const int code = run_capture({"--out", dir.string(), "train-gan", "--data", in.train.string(), "--batch",
                                "128", "--epochs", "3", "--lr", "1e308"},
                               err);
  CHECK(code == 3);
  CHECK(err.find("last checkpoint:") != std::string::npos);
}

TEST_CASE("the config echo reproduces the run") {
  const auto& in = inputs();
  const auto a = scratch("echo_a");
  const auto b = scratch("echo_b");
  REQUIRE(run({"--seed", "12", "--out", a.string(), "train-gmm", "--data", in.train.string(), "--clusters", "3",
               "--max-iter", "50"}) == 0);
  // Same options from the file; --out on the command line takes precedence.
  REQUIRE(run({"--config", (a / "train-gmm.config.toml").string(), "--out", b.string(), "train-gmm"}) == 0);
  CHECK(slurp(a / "gmm_model.json") == slurp(b / "gmm_model.json"));
  CHECK(slurp(a / "gmm_trace.csv") == slurp(b / "gmm_trace.csv"));
}
