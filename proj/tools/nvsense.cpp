#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "nvsense/scenario.hpp"

namespace {

nvsense::ScenarioConfig load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw nvsense::ConfigError(path + ": cannot open config");
  std::stringstream ss;
  ss << is.rdbuf();
  return nvsense::parse_config(ss.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rabi-driven NV sensing of proton baths"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir;
  unsigned threads = 0;
  std::uint64_t seed = 0;

  auto* sim = app.add_subcommand("simulate", "run the scenario and write CSV outputs and a manifest");
  sim->add_option("config", config, "JSON config")->required();
  sim->add_option("--out", out_dir, "output directory (overrides output.directory)");
  sim->add_option("--threads", threads, "worker threads (default NVSENSE_THREADS or all cores)");
  auto* seed_opt = sim->add_option("--seed", seed, "Monte Carlo seed (overrides liquid.seed)");

  auto* ver = app.add_subcommand("verify", "validate the config and report sizes and estimates without running");
  ver->add_option("config", config, "JSON config")->required();

  std::string proton_out;
  bool full = false;
  auto* exp = app.add_subcommand("export-protons", "write proton positions of the solid sample");
  exp->add_option("config", config, "JSON config")->required();
  exp->add_option("--out", proton_out, "output file (default stdout)");
  exp->add_flag("--full", full, "whole slab instead of the detection volume");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(nvsense::ExitCode::config);
  }

  try {
    nvsense::ScenarioConfig cfg = load(config);
    if (*sim) {
      nvsense::RunOptions ro;
      ro.out_dir = out_dir;
      ro.threads = threads;
      if (*seed_opt) ro.seed = seed;
      const auto res = nvsense::run_scenario(cfg, ro);
      std::cout << res.manifest["derived"].dump(2) << "\n";
    } else if (*ver) {
      std::cout << nvsense::verify_scenario(cfg).dump(2) << "\n";
    } else {
      if (cfg.scenario == nvsense::Scenario::liquid) throw nvsense::ConfigError("scenario: liquid has no proton lattice");
      const auto slab = nvsense::build_ice_lattice(cfg.lattice, cfg.nv);
      const auto set = full ? slab : nvsense::truncate_to_volume(slab, nvsense::DetectionVolume{cfg.detection_radius});
      const std::string echo = nvsense::serialize(cfg).dump();
      if (proton_out.empty()) {
        nvsense::write_protons(std::cout, set, echo);
      } else {
        std::ofstream os(proton_out);
        if (!os) throw nvsense::ResourceError(proton_out + ": cannot open for writing");
        nvsense::write_protons(os, set, echo);
        if (!os) throw nvsense::ResourceError(proton_out + ": write failed");
      }
    }
  } catch (const nvsense::Error& e) {
    std::cerr << "nvsense: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "nvsense: config: " << e.what() << "\n";
    return static_cast<int>(nvsense::ExitCode::config);
  } catch (const std::bad_alloc&) {
    std::cerr << "nvsense: out of memory\n";
    return static_cast<int>(nvsense::ExitCode::resource);
  } catch (const std::exception& e) {
    std::cerr << "nvsense: " << e.what() << "\n";
    return static_cast<int>(nvsense::ExitCode::failure);
  }
  return 0;
}
