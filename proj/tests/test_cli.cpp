#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "nvsense/config.hpp"

namespace fs = std::filesystem;
using nvsense::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" NVSENSE_CLI "\" " + args + " 2>/dev/null";
  Outcome o;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return o;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) o.out.append(buf, n);
  const int st = pclose(p);
  o.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return o;
}

std::string config(const std::string& name) { return std::string(NVSENSE_CONFIGS) + "/test/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json manifest(const fs::path& dir) { return json::parse(slurp(dir / "manifest.json")); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("nvsense_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path dir(const std::string& name) const { return root_ / name; }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path p = root_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // Every CSV of two output directories, byte for byte.
  static void expect_same_csvs(const fs::path& a, const fs::path& b) {
    const json files = manifest(a)["files"];
    ASSERT_FALSE(files.empty());
    EXPECT_EQ(files, manifest(b)["files"]);
    for (const auto& f : files) {
      const std::string name = f.get<std::string>();
      const std::string x = slurp(a / name);
      EXPECT_FALSE(x.empty()) << name;
      EXPECT_EQ(x, slurp(b / name)) << name;
    }
  }

  fs::path root_;
};

}  // namespace

TEST_F(Cli, SimulateWritesArtifactsAndManifest) {
  const auto o = run("simulate " + config("solid_small.json") + " --out " + dir("s").string() + " --threads 2");
  ASSERT_EQ(o.code, 0);
  EXPECT_TRUE(json::accept(o.out));
  const json m = manifest(dir("s"));
  EXPECT_EQ(m["artifact"], "nvsense");
  EXPECT_EQ(m["version"], "0.1.0");
  EXPECT_EQ(m["scenario"], "solid");
  EXPECT_EQ(m["threads"], 2);
  EXPECT_GT(m["wall_time_s"].get<double>(), 0.0);
  for (const char* k : {"collective_coupling", "lambda_fraction", "detection_protons", "first_minimum_us", "engine"})
    EXPECT_TRUE(m["derived"].contains(k)) << k;
  EXPECT_EQ(m["files"], json::array({"population.csv"}));
  EXPECT_FALSE(m["defaults_applied"].empty());
  const std::string csv = slurp(dir("s") / "population.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,n");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 102);
  // second data row: 12 significant digits
  std::istringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  std::getline(rows, line);
  std::getline(rows, line);
  EXPECT_EQ(line.substr(0, line.find(',')), "2.00000000000e-01");
}

TEST_F(Cli, EveryScenarioRuns) {
  const std::map<std::string, std::vector<std::string>> expected = {
      {"liquid_small.json", {"population.csv", "correlation_x.csv", "correlation_z.csv", "alpha.csv", "rates.csv"}},
      {"mixed_small.json", {"population.csv", "reference_solid.csv", "correlation_x.csv", "correlation_z.csv", "alpha.csv"}},
      {"scan_small.json", {"spectrum.csv", "peaks.csv"}}};
  for (const auto& [name, files] : expected) {
    const fs::path d = dir(name);
    ASSERT_EQ(run("simulate " + config(name) + " --out " + d.string()).code, 0) << name;
    EXPECT_EQ(manifest(d)["files"], json(files)) << name;
    for (const auto& f : files) EXPECT_TRUE(fs::exists(d / f)) << f;
  }
  const json mixed = manifest(dir("mixed_small.json"));
  EXPECT_LT(mixed["derived"]["max_deviation_from_solid"].get<double>(), 0.01);
  EXPECT_EQ(mixed["seed"], 5);
}

TEST_F(Cli, ByteIdenticalReruns) {
  for (const char* name : {"liquid_small.json", "mixed_small.json", "solid_small.json"}) {
    ASSERT_EQ(run("simulate " + config(name) + " --threads 3 --out " + dir("a").string()).code, 0);
    ASSERT_EQ(run("simulate " + config(name) + " --threads 3 --out " + dir("b").string()).code, 0);
    expect_same_csvs(dir("a"), dir("b"));
  }
}

TEST_F(Cli, LiquidSamplingIndependentOfThreadCount) {
  ASSERT_EQ(run("simulate " + config("liquid_small.json") + " --threads 1 --out " + dir("a").string()).code, 0);
  ASSERT_EQ(run("simulate " + config("liquid_small.json") + " --threads 4 --out " + dir("b").string()).code, 0);
  expect_same_csvs(dir("a"), dir("b"));
}

TEST_F(Cli, ManifestConfigReproducesTheRun) {
  ASSERT_EQ(run("simulate " + config("liquid_small.json") + " --seed 77 --out " + dir("a").string()).code, 0);
  const json m = manifest(dir("a"));
  EXPECT_EQ(m["seed"], 77);
  EXPECT_EQ(m["config"]["liquid"]["seed"], 77);
  const fs::path echoed = write("echo.json", m["config"].dump(2));
  ASSERT_EQ(run("simulate " + echoed.string() + " --out " + dir("b").string()).code, 0);
  expect_same_csvs(dir("a"), dir("b"));
  EXPECT_TRUE(manifest(dir("b"))["defaults_applied"].empty());
  EXPECT_EQ(manifest(dir("b"))["config"], m["config"]);
}

TEST_F(Cli, SeedOverrideChangesTheSample) {
  ASSERT_EQ(run("simulate " + config("liquid_small.json") + " --out " + dir("a").string()).code, 0);
  ASSERT_EQ(run("simulate " + config("liquid_small.json") + " --seed 12 --out " + dir("b").string()).code, 0);
  EXPECT_NE(slurp(dir("a") / "correlation_z.csv"), slurp(dir("b") / "correlation_z.csv"));
}

TEST_F(Cli, ThreadCountFromEnvironment) {
  ASSERT_EQ(run("simulate " + config("solid_small.json") + " --out " + dir("a").string(), "NVSENSE_THREADS=3").code, 0);
  EXPECT_EQ(manifest(dir("a"))["threads"], 3);
  ASSERT_EQ(run("simulate " + config("solid_small.json") + " --threads 2 --out " + dir("b").string(), "NVSENSE_THREADS=3")
                .code,
            0);
  EXPECT_EQ(manifest(dir("b"))["threads"], 2);
}

TEST_F(Cli, OutputDirectoryFromConfig) {
  const fs::path target = dir("from_config");
  json j = json::parse(slurp(config("solid_small.json")));
  j["output"]["directory"] = target.string();
  ASSERT_EQ(run("simulate " + write("c.json", j.dump()).string()).code, 0);
  EXPECT_TRUE(fs::exists(target / "manifest.json"));
}

TEST_F(Cli, ConfigErrorsExitWithTwo) {
  EXPECT_EQ(run("simulate " + dir("missing.json").string()).code, 2);
  EXPECT_EQ(run("simulate " + write("bad.json", "{\"scenario\": ").string()).code, 2);
  EXPECT_EQ(run("verify " + write("unknown.json", R"({"scenario": "solid", "geometry": {"depht": "3 nm"}})").string()).code,
            2);
  EXPECT_EQ(run("verify " + write("unit.json", R"({"scenario": "solid", "geometry": {"depth": "3 G"}})").string()).code, 2);
  EXPECT_EQ(run("simulate " + write("seedless.json", R"({"scenario": "liquid"})").string()).code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("dance").code, 2);
  EXPECT_EQ(run("simulate " + config("solid_small.json") + " --threads many").code, 2);
  EXPECT_EQ(run("export-protons " + config("liquid_small.json")).code, 2);
}

TEST_F(Cli, ResourceCapExitsWithThree) {
  EXPECT_EQ(run("verify " + config("oversize.json")).code, 3);
  EXPECT_EQ(run("simulate " + config("oversize.json") + " --out " + dir("o").string()).code, 3);
}

TEST_F(Cli, NumericalFailureExitsWithFour) {
  EXPECT_EQ(run("simulate " + config("chain_cap.json") + " --out " + dir("c").string()).code, 4);
}

TEST_F(Cli, VerifyReportsWithoutRunning) {
  const auto o = run("verify " + config("solid_small.json"));
  ASSERT_EQ(o.code, 0);
  const json r = json::parse(o.out);
  EXPECT_GT(r["detection_protons"].get<int>(), 0);
  EXPECT_GT(r["lambda_fraction"].get<double>(), 0.0);
  EXPECT_EQ(r["engine"], "dense");
  EXPECT_TRUE(r.contains("memory_bytes_estimate"));

  const auto l = run("verify " + config("liquid_small.json"));
  ASSERT_EQ(l.code, 0);
  const json rl = json::parse(l.out);
  EXPECT_GT(rl["n_eff"].get<double>(), 0.0);
  EXPECT_EQ(rl["lags"], 101);

  json flat = json::parse(slurp(config("scan_small.json")));
  flat["physics"]["gradient"] = "0 G/nm";
  const auto s = run("verify " + write("flat.json", flat.dump()).string());
  ASSERT_EQ(s.code, 0);
  EXPECT_EQ(json::parse(s.out)["warnings"].size(), 1u);
  EXPECT_FALSE(fs::exists(dir("out")));
}

TEST_F(Cli, ExportProtons) {
  const fs::path f = dir("protons.txt");
  ASSERT_EQ(run("export-protons " + config("solid_small.json") + " --out " + f.string()).code, 0);
  const json r = json::parse(run("verify " + config("solid_small.json")).out);
  std::ifstream is(f);
  std::size_t rows = 0;
  bool echoed = false;
  for (std::string line; std::getline(is, line);) {
    if (line.rfind("# config ", 0) == 0) echoed = true;
    if (!line.empty() && line[0] != '#') ++rows;
  }
  EXPECT_TRUE(echoed);
  EXPECT_EQ(rows, r["detection_protons"].get<std::size_t>());
  const auto full = run("export-protons --full " + config("solid_small.json"));
  ASSERT_EQ(full.code, 0);
  EXPECT_GT(std::count(full.out.begin(), full.out.end(), '\n'), static_cast<long>(rows));
}
