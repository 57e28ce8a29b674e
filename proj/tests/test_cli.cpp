#include "smml/cli.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace smml;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(SMML_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("smml_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "run.ini";
  std::ofstream(p) << text;
  return p;
}

std::string config(const std::string& name) { return std::string(SMML_CONFIG_DIR) + "/" + name; }

// Last numeric field of the CSV row whose first field is `key`.
std::vector<std::string> csv_row(const std::string& csv, const std::string& key) {
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (!fields.empty() && fields[0] == key) return fields;
  }
  return {};
}

}  // namespace

TEST(Cli, SolveWritesAReloadableCodebook) {
  const fs::path out = scratch("solve");
  const CliRun r = run("solve --config " + config("binomial_dp.ini") + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto doc = read_json_file((out / "codebook.json").string());
  EXPECT_EQ(doc.at("method"), "dp");
  EXPECT_EQ(doc.at("k"), 4);
  EXPECT_TRUE(doc.contains("config_hash"));
  EXPECT_TRUE(fs::exists(out / "trace.csv"));
  EXPECT_TRUE(fs::exists(out / "trace.json"));

  const Binomial model(10);
  const auto m = marginal_table(model, {PriorFamily::Beta, {1.0, 1.0}});
  const LoadedCodebook lc = read_codebook(doc, m);
  EXPECT_NEAR(codelength(lc.codebook, lc.partition, m, model), lc.codelength, 1e-10);
  EXPECT_NEAR(lc.codelength, dp_exact_1d(model, m, {1, 6}).codelength, 1e-12);
}

TEST(Cli, DecomposeFromSavedCodebook) {
  const fs::path out = scratch("decompose");
  ASSERT_EQ(run("solve --config " + config("binomial_dp.ini") + " --out " + out.string()).code, 0);
  const CliRun r = run("decompose --config " + config("binomial_dp.ini") + " --out " + out.string() + " --codebook " +
                    (out / "codebook.json").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto total = csv_row(slurp(out / "decompose.csv"), "total");
  ASSERT_GE(total.size(), 4u);
  const double h = std::stod(total[2]);
  const double detail = std::stod(total[3]);
  const auto doc = read_json_file((out / "codebook.json").string());
  EXPECT_NEAR(h + detail, doc.at("codelength_nats").get<double>(), 1e-10);
  EXPECT_LE(h, std::log(doc.at("k").get<double>()) + 1e-12);
}

TEST(Cli, RerunsAreByteIdentical) {
  const fs::path a = scratch("rerun_a");
  const fs::path b = scratch("rerun_b");
  for (const auto& dir : {a, b}) {
    ASSERT_EQ(run("solve --config " + config("multinomial_lloyd.ini") + " --out " + dir.string()).code, 0);
    ASSERT_EQ(run("asymptotics --config " + config("bernoulli_asymptotics.ini") + " --out " + dir.string() +
                  " --format json")
                  .code,
              0);
  }
  for (const char* f : {"codebook.json", "trace.csv", "asymptotics.json", "asymptotics_summary.json"}) {
    EXPECT_FALSE(slurp(a / f).empty()) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(Cli, SeedOverrideChangesTheStamp) {
  const fs::path out = scratch("seed");
  ASSERT_EQ(run("sweep-k --config " + config("binomial_dp.ini") + " --out " + out.string() + " --seed 42").code, 0);
  EXPECT_NE(slurp(out / "sweep_k.csv").find("seed=42"), std::string::npos);
}

TEST(Cli, VoronoiWritesSitesAndPoints) {
  const fs::path out = scratch("voronoi");
  const CliRun r = run("voronoi --config " + config("binomial_dp.ini") + " --out " + out.string() + " --format csv");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "voronoi_sites.csv"));
  EXPECT_TRUE(fs::exists(out / "voronoi_points.csv"));
}

TEST(Cli, UnknownKeyIsAConfigErrorWithLineNumber) {
  const fs::path dir = scratch("badkey");
  const auto ini = write_config(dir, "[model]\nfamily = binomial\nn = 10\nsmoothing = 3\n");
  const CliRun r = run("solve --config " + ini.string() + " --out " + dir.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("line 4"), std::string::npos) << r.output;
}

TEST(Cli, ConfigErrorsExitWithTwo) {
  const fs::path dir = scratch("configerr");
  EXPECT_EQ(run("solve --config " + (dir / "missing.ini").string()).code, 2);
  EXPECT_EQ(run("solve").code, 2);
  EXPECT_EQ(run("solve --config " + config("binomial_dp.ini") + " --format xml").code, 2);
  const auto mismatch = write_config(dir, "[model]\nfamily = binomial\nn = 5\nprior = gamma\nprior_params = 1, 1\n");
  EXPECT_EQ(run("solve --config " + mismatch.string() + " --out " + dir.string()).code, 2);
  const auto dp2 = write_config(dir,
                                "[model]\nfamily = multinomial\nn = 3\ncategories = 3\nprior = dirichlet\n"
                                "prior_params = 1, 1, 1\n[solver]\nmethod = dp\n");
  EXPECT_EQ(run("solve --config " + dp2.string() + " --out " + dir.string()).code, 2);
}

TEST(Cli, NumericalFailureExitsWithThree) {
  const fs::path dir = scratch("numerr");
  const auto ini = write_config(dir,
                                "[model]\nfamily = binomial\nn = 4000\nprior = beta\nprior_params = 0.001, 0.001\n"
                                "marginal = quadrature\n[solver]\nmethod = dp\nk_max = 2\n");
  const CliRun r = run("solve --config " + ini.string() + " --out " + dir.string());
  EXPECT_EQ(r.code, 3) << r.output;
}
