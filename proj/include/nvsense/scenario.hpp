#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nvsense/chain.hpp"
#include "nvsense/config.hpp"
#include "nvsense/covariance.hpp"
#include "nvsense/couplings.hpp"
#include "nvsense/error.hpp"
#include "nvsense/lattice.hpp"
#include "nvsense/liquid.hpp"
#include "nvsense/magnetometry.hpp"
#include "nvsense/parallel.hpp"
#include "nvsense/spin_oracle.hpp"

namespace nvsense {

inline constexpr const char* version = "0.1.0";

struct RunOptions {
  std::string out_dir;  // empty: output.directory of the config
  unsigned threads = 0;  // 0: NVSENSE_THREADS or hardware concurrency
  std::optional<std::uint64_t> seed;
  bool write_files = true;
};

struct RunResult {
  Scenario scenario = Scenario::solid;
  json manifest;
  std::vector<double> t, n, n_reference;
  Spectrum spectrum;
  LiquidCorrelations correlations;
  RateTable rates;
  std::vector<std::string> files;
};

// Columns of equal length, 12 significant digits.
inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<const std::vector<double>*>& cols) {
  if (header.size() != cols.size() || cols.empty()) throw InvalidArgument("csv header and columns differ");
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw ResourceError("cannot write " + path.string());
  for (std::size_t c = 0; c < header.size(); ++c) std::fprintf(f, c ? ",%s" : "%s", header[c].c_str());
  std::fputc('\n', f);
  const std::size_t rows = cols.front()->size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) std::fprintf(f, c ? ",%.11e" : "%.11e", (*cols[c])[r]);
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw ResourceError("cannot write " + path.string());
}

struct SolidSample {
  ProtonSet slab;     // whole slab as built
  ProtonSet protons;  // inside the detection volume
  CouplingSet couplings;
};

inline SolidSample build_solid_sample(const ScenarioConfig& c, LarmorModel larmor_model) {
  SolidSample s;
  s.slab = build_ice_lattice(c.lattice, c.nv);
  s.protons = truncate_to_volume(s.slab, DetectionVolume{c.detection_radius});
  if (s.protons.empty()) throw ConfigError("geometry: no protons inside the detection volume");
  FieldProfile field = c.field;
  if (larmor_model == LarmorModel::effective) field.grad_lambda = 0;
  CouplingOptions co;
  co.larmor = larmor_model;
  co.internuclear = c.internuclear;
  co.max_dense_modes = c.max_dense_modes;
  s.couplings = assemble_couplings(s.protons, field, c.constants, co);
  return s;
}

inline double lambda_fraction(const ScenarioConfig& c, const ProtonSet& slab) {
  return interaction_fraction(slab, c.detection_radius, c.reference_radius,
                              [&](const Vec3& p) { return nv_coupling(p, c.constants); }, c.lambda_measure);
}

inline std::size_t dense_limit() { return 400; }

struct SolidDynamics {
  std::vector<double> n;
  std::string engine;
  std::size_t chain_length = 0;
};

// NV population for a solid bath, optionally with the liquid depolarization
// rate alpha(t) acting on the NV.
inline SolidDynamics solid_dynamics(const CouplingSet& cs, double omega, const std::vector<double>& times,
                                    const ScenarioConfig& c, const RateFunction* alpha) {
  SolidDynamics out;
  const bool chain = c.engine == ScanEngine::chain || (c.engine == ScanEngine::automatic && cs.size() > dense_limit());
  if (chain) {
    ChainOptions opt;
    opt.max_length = c.chain_max_length;
    ExchangeChain ch(cs, opt);
    out.n = alpha ? ch.populations_dissipative(omega, *alpha, times, {}, c.dt) : ch.populations(omega, times);
    out.engine = "chain";
    out.chain_length = ch.length();
    return out;
  }
  const ModeHamiltonian v = assemble_V(cs, omega);
  out.engine = "dense";
  out.n.resize(times.size());
  if (alpha) {
    DissipativeOptions opt;
    opt.dt = c.dt;
    propagate_dissipative(v, initial_covariance(v.modes() - 1), *alpha, times, opt,
                          [&](std::size_t k, double, const CovarianceMatrix& g) { out.n[k] = nv_population(g); });
  } else {
    const UnitaryPropagator u(v.v);
    for (std::size_t k = 0; k < times.size(); ++k) out.n[k] = u.nv_population(times[k], {});
  }
  return out;
}

inline LiquidVolume liquid_region(const ScenarioConfig& c) {
  const double floor = c.scenario == Scenario::mixed ? solid_top(c.lattice, c.nv) : c.nv.depth_z0;
  return {floor, c.detection_radius};
}

inline double liquid_spins(const ScenarioConfig& c) {
  const double n = c.proton_density * liquid_volume(liquid_region(c));
  if (!(n > 0)) throw ConfigError("geometry: the liquid does not reach into the detection volume");
  return n;
}

inline json correlation_summary(const CorrelationFunction& f) {
  return {{"tau_c_us", f.tau_c}, {"variance", f.variance}, {"residual_fraction", f.residual_fraction()},
          {"lag_step_us", f.lag_step()}, {"max_lag_us", f.max_lag()}, {"trajectories", f.n_trajectories}};
}

inline json rate_summary(const RateSet& r) {
  return {{"gamma_x_delta", r.gamma_x_delta}, {"gamma_x_sum", r.gamma_x_sum}, {"gamma_z_omega", r.gamma_z_omega},
          {"shift_x_delta", r.shift_x_delta}, {"shift_x_sum", r.shift_x_sum}, {"shift_z_omega", r.shift_z_omega},
          {"alpha", r.alpha}};
}

namespace detail {

inline double first_minimum(const std::vector<double>& t, const std::vector<double>& n, double* value) {
  for (std::size_t k = 1; k + 1 < n.size(); ++k) {
    if (n[k] < n[k - 1] && n[k] <= n[k + 1]) {
      if (value) *value = n[k];
      return t[k];
    }
  }
  if (value) *value = std::numeric_limits<double>::quiet_NaN();
  return std::numeric_limits<double>::quiet_NaN();
}

inline json maybe(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct LiquidStage {
  LiquidCorrelations corr;
  RateTable table;
  double n_eff = 0, tau_c = 0;
};

inline LiquidStage run_liquid_stage(const ScenarioConfig& c, const std::vector<double>& times, unsigned threads) {
  LiquidStage st;
  LiquidSampling s = c.sampling;
  s.threads = threads;
  st.corr = sample_liquid_correlations(c.diffusion, liquid_region(c), c.constants, s);
  st.tau_c = hyperfine_correlation_time(st.corr.x, st.corr.z);
  st.n_eff = liquid_spins(c);
  st.table = build_rate_table(st.corr.x, st.corr.z, c.rabi_frequency, larmor(c.field.b0, c.constants), st.n_eff, times);
  return st;
}

inline void write_correlations(const std::filesystem::path& dir, const LiquidCorrelations& corr,
                               std::vector<std::string>& files) {
  for (const CorrelationFunction* f : {&corr.x, &corr.z}) {
    const std::string name = std::string("correlation_") + to_string(f->component) + ".csv";
    write_csv(dir / name, {"tau", "value", "stderr"}, {&f->lag, &f->value, &f->stderr_value});
    files.push_back(name);
  }
}

inline void write_alpha(const std::filesystem::path& dir, const RateTable& tab, std::vector<std::string>& files) {
  std::vector<double> a, gxd, gxs, gz;
  for (const RateSet& r : tab.rates) {
    a.push_back(r.alpha);
    gxd.push_back(r.gamma_x_delta);
    gxs.push_back(r.gamma_x_sum);
    gz.push_back(r.gamma_z_omega);
  }
  write_csv(dir / "alpha.csv", {"t", "alpha", "gamma_x_delta", "gamma_x_sum", "gamma_z_omega"},
            {&tab.t, &a, &gxd, &gxs, &gz});
  files.push_back("alpha.csv");
}

}  // namespace detail

inline RunResult run_scenario(ScenarioConfig c, const RunOptions& ro = {}) {
  const auto start = std::chrono::steady_clock::now();
  if (ro.seed) {
    c.sampling.seed = *ro.seed;
    c.has_seed = true;
  }
  const unsigned threads = ro.threads > 0 ? ro.threads : default_thread_count();
  const std::filesystem::path dir = ro.out_dir.empty() ? c.output_directory : ro.out_dir;
  if (ro.write_files) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ResourceError("cannot create output directory " + dir.string() + ": " + ec.message());
  }

  RunResult res;
  res.scenario = c.scenario;
  json derived;
  json warnings = json::array();
  const double omega_n = larmor(c.field.b0, c.constants);
  const std::vector<double> times = linear_grid(0.0, c.t_end, c.time_points);
  derived["larmor_frequency"] = omega_n;
  derived["rabi_frequency"] = c.rabi_frequency;

  if (c.scenario == Scenario::liquid) {
    const auto st = detail::run_liquid_stage(c, times, threads);
    res.correlations = st.corr;
    res.rates = st.table;
    res.t = times;
    const double step = c.dt > 0 ? c.dt : c.t_end / static_cast<double>(c.time_points - 1);
    res.n = populate_liquid([&](double t) { return st.table.alpha(t); }, 1.0, times, step);
    res.n_reference = populate_liquid(st.table.markov.alpha, 1.0, times);
    derived["n_eff"] = st.n_eff;
    derived["tau_c_us"] = st.tau_c;
    derived["correlation_x"] = correlation_summary(st.corr.x);
    derived["correlation_z"] = correlation_summary(st.corr.z);
    derived["integration_dt_us"] = st.corr.dt;
    derived["markov"] = rate_summary(st.table.markov);
    derived["markov"]["gamma_x_delta_stderr"] = rate_gamma_stderr(st.corr.x, c.rabi_frequency - omega_n, markov_time);
    derived["markov"]["gamma_z_omega_stderr"] = rate_gamma_stderr(st.corr.z, c.rabi_frequency, markov_time);
    derived["depolarization_time_us"] = 1.0 / st.table.markov.alpha;
    if (ro.write_files) {
      write_csv(dir / "population.csv", {"t", "n", "n_markov"}, {&res.t, &res.n, &res.n_reference});
      res.files.push_back("population.csv");
      detail::write_correlations(dir, st.corr, res.files);
      detail::write_alpha(dir, st.table, res.files);
      const auto w = linear_grid(0.0, 4.0 * omega_n, 201);
      std::vector<double> gx, gz, sx, sz, ex, ez;
      for (double x : w) {
        gx.push_back(rate_gamma(st.corr.x, x, markov_time));
        gz.push_back(rate_gamma(st.corr.z, x, markov_time));
        sx.push_back(shift_omega(st.corr.x, x, markov_time));
        sz.push_back(shift_omega(st.corr.z, x, markov_time));
        ex.push_back(rate_gamma_stderr(st.corr.x, x, markov_time));
        ez.push_back(rate_gamma_stderr(st.corr.z, x, markov_time));
      }
      write_csv(dir / "rates.csv", {"omega", "gamma_x", "gamma_z", "shift_x", "shift_z", "gamma_x_stderr", "gamma_z_stderr"},
                {&w, &gx, &gz, &sx, &sz, &ex, &ez});
      res.files.push_back("rates.csv");
    }
  } else if (c.scenario == Scenario::solid || c.scenario == Scenario::mixed) {
    const SolidSample s = build_solid_sample(c, LarmorModel::effective);
    const double lam = lambda_fraction(c, s.slab);
    const double g = collective_coupling(s.couplings.g);
    derived["slab_protons"] = s.slab.size();
    derived["detection_protons"] = s.protons.size();
    derived["lambda_fraction"] = lam;
    derived["lambda_measure"] = to_string(c.lambda_measure);
    derived["collective_coupling"] = g;
    derived["short_time_minimum_us"] = pi / (2.0 * g);
    res.t = times;
    if (c.scenario == Scenario::solid) {
      const auto dyn = solid_dynamics(s.couplings, c.rabi_frequency, times, c, nullptr);
      res.n = dyn.n;
      derived["engine"] = dyn.engine;
      if (dyn.engine == "chain") derived["chain_length"] = dyn.chain_length;
      double nmin = 0;
      const double tmin = detail::first_minimum(times, res.n, &nmin);
      derived["first_minimum_us"] = detail::maybe(tmin);
      derived["first_minimum_n"] = detail::maybe(nmin);
      if (ro.write_files) {
        write_csv(dir / "population.csv", {"t", "n"}, {&res.t, &res.n});
        res.files.push_back("population.csv");
      }
    } else {
      const auto st = detail::run_liquid_stage(c, times, threads);
      res.correlations = st.corr;
      res.rates = st.table;
      const RateFunction alpha = [&](double t) { return st.table.alpha(t); };
      const auto ref = solid_dynamics(s.couplings, c.rabi_frequency, times, c, nullptr);
      const auto mix = solid_dynamics(s.couplings, c.rabi_frequency, times, c, &alpha);
      res.n = mix.n;
      res.n_reference = ref.n;
      double dev = 0;
      for (std::size_t k = 0; k < times.size(); ++k) dev = std::max(dev, std::abs(res.n[k] - res.n_reference[k]));
      derived["engine"] = mix.engine;
      derived["liquid_floor_nm"] = liquid_region(c).floor;
      derived["n_eff"] = st.n_eff;
      derived["tau_c_us"] = st.tau_c;
      derived["correlation_x"] = correlation_summary(st.corr.x);
      derived["correlation_z"] = correlation_summary(st.corr.z);
      derived["integration_dt_us"] = st.corr.dt;
      derived["markov"] = rate_summary(st.table.markov);
      derived["depolarization_time_us"] = 1.0 / st.table.markov.alpha;
      derived["max_deviation_from_solid"] = dev;
      if (ro.write_files) {
        write_csv(dir / "population.csv", {"t", "n"}, {&res.t, &res.n});
        write_csv(dir / "reference_solid.csv", {"t", "n"}, {&res.t, &res.n_reference});
        res.files.push_back("population.csv");
        res.files.push_back("reference_solid.csv");
        detail::write_correlations(dir, st.corr, res.files);
        detail::write_alpha(dir, st.table, res.files);
      }
    }
  } else {
    const SolidSample s = build_solid_sample(c, LarmorModel::gradient);
    if (!(c.field.grad_lambda > 0)) warnings.push_back("gradient is zero: peak heights cannot be mapped to layers");
    const auto layers = layer_couplings(s.protons, s.couplings.g, c.grouping);
    ScanConfig sc;
    sc.tau = c.tau;
    sc.field = c.field;
    sc.engine = c.engine;
    sc.dense_limit = dense_limit();
    sc.threshold = c.threshold;
    sc.sideband_window = c.sideband_window;
    sc.threads = threads;
    sc.chain.max_length = c.chain_max_length;
    double lo = c.omega_min, hi = c.omega_max;
    if (!(lo > 0 || hi > 0)) {
      const double spacing = layers.size() > 1 ? layers[1].z - layers[0].z : c.lattice.sheet_spacing();
      const double detune = c.constants.gamma_h * c.field.grad_lambda * spacing;
      const double pad = detune > 0 ? detune : 5.0 * pi / c.tau;
      lo = gradient_larmor(layers.front().z, c.field, c.constants) - pad;
      hi = gradient_larmor(layers.back().z, c.field, c.constants) + pad;
    }
    sc.omega = linear_grid(lo, hi, c.omega_points);
    res.spectrum = rabi_scan(s.couplings, sc, c.constants);
    if (res.spectrum.coarse_grid) warnings.push_back("a dip spans fewer than three grid points; refine omega_points");

    EnvelopeModel em;
    em.beta = beta_factor(c.constants);
    em.density = c.lattice.model == LatticeModel::layered ? c.lattice.layer_density
                                                          : ice_plane_densities(c.lattice)[0] * 2.0;
    json jl = json::array();
    for (const auto& l : layers)
      jl.push_back({{"z_nm", l.z}, {"coupling", l.coupling}, {"protons", l.count}, {"envelope_n", envelope(em, l.z, c.tau)}});
    derived["layers"] = jl;
    derived["detection_protons"] = s.protons.size();
    derived["omega_window"] = {lo, hi};
    if (layers.size() >= 2 && c.field.grad_lambda > 0) {
      const auto rep = resolution_check(s.protons, s.couplings.g, c.field, c.constants, c.grouping);
      derived["resolution_ratios"] = rep.ratio;
      derived["resolution_margin"] = rep.margin;
      derived["resolution_pass"] = rep.pass;
      if (!rep.pass) warnings.push_back("neighbouring layers are not resolved by the gradient");
    }
    derived["peaks"] = res.spectrum.peaks.size();
    derived["coarse_grid"] = res.spectrum.coarse_grid;
    if (ro.write_files) {
      write_csv(dir / "spectrum.csv", {"omega", "n"}, {&res.spectrum.omega, &res.spectrum.n});
      std::vector<double> w, z, d;
      for (const Peak& p : res.spectrum.peaks) {
        w.push_back(p.omega);
        z.push_back(p.z_layer);
        d.push_back(p.depth);
      }
      write_csv(dir / "peaks.csv", {"omega_peak", "z_layer", "depth"}, {&w, &z, &d});
      res.files.push_back("spectrum.csv");
      res.files.push_back("peaks.csv");
    }
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json m;
  m["artifact"] = "nvsense";
  m["version"] = version;
  m["scenario"] = to_string(c.scenario);
  m["config"] = serialize(c);
  m["defaults_applied"] = c.defaults_applied;
  if (c.has_seed) m["seed"] = c.sampling.seed;
  m["threads"] = threads;
  m["derived"] = derived;
  m["warnings"] = warnings;
  m["files"] = res.files;
  m["wall_time_s"] = wall;
  res.manifest = m;
  for (const auto& w : warnings) std::cerr << "warning: " << w.get<std::string>() << "\n";
  if (ro.write_files) {
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << "\n";
    if (!os) throw ResourceError("cannot write manifest.json");
  }
  return res;
}

// Dry run: sizes, derived quantities and resource estimates, no dynamics.
inline json verify_scenario(const ScenarioConfig& c) {
  json r;
  json warnings = json::array();
  r["scenario"] = to_string(c.scenario);
  r["defaults_applied"] = c.defaults_applied;
  if (c.scenario != Scenario::liquid) {
    r["expected_slab_protons"] = expected_proton_count(c.lattice);
    const ProtonSet slab = build_ice_lattice(c.lattice, c.nv);
    const ProtonSet det = truncate_to_volume(slab, DetectionVolume{c.detection_radius});
    const std::size_t n = det.size();
    r["slab_protons"] = slab.size();
    r["detection_protons"] = n;
    if (n == 0) throw ConfigError("geometry: no protons inside the detection volume");
    if (c.internuclear && n > c.max_dense_modes)
      throw ResourceError("internuclear matrix for " + std::to_string(n) + " protons exceeds the cap of " +
                          std::to_string(c.max_dense_modes));
    r["lambda_fraction"] = lambda_fraction(c, slab);
    std::vector<cplx> g;
    for (const Vec3& p : det.positions) g.push_back(nv_coupling(p, c.constants));
    r["collective_coupling"] = collective_coupling(g);
    const bool chain = c.engine == ScanEngine::chain || (c.engine == ScanEngine::automatic && n > dense_limit());
    r["engine"] = chain ? "chain" : "dense";
    const double nd = static_cast<double>(n);
    r["memory_bytes_estimate"] =
        chain ? 8.0 * nd * nd + 16.0 * nd * static_cast<double>(c.chain_max_length) : 128.0 * (nd + 1) * (nd + 1);
    if (c.scenario == Scenario::scan) {
      const auto layers = layer_couplings(det, g, c.grouping);
      if (!(c.field.grad_lambda > 0)) {
        warnings.push_back("gradient is zero: layers share one resonance and cannot be resolved");
      } else if (layers.size() >= 2) {
        const auto rep = resolution_check(det, g, c.field, c.constants, c.grouping);
        r["resolution_ratios"] = rep.ratio;
        r["resolution_margin"] = rep.margin;
        r["resolution_pass"] = rep.pass;
        if (!rep.pass) warnings.push_back("neighbouring layers are not resolved by the gradient");
      }
    }
  }
  if (c.scenario == Scenario::liquid || c.scenario == Scenario::mixed) {
    const LiquidVolume v = liquid_region(c);
    r["liquid_floor_nm"] = v.floor;
    r["n_eff"] = liquid_spins(c);
    const double t_scale = v.floor * v.floor / c.diffusion.d_w;
    const auto n_lags = static_cast<std::size_t>(std::llround(c.sampling.max_lag_factor / c.sampling.lag_step_factor)) + 1;
    double dt = c.sampling.lag_step_factor * t_scale;
    std::size_t every = 1;
    if (c.diffusion.kind == DiffusionKind::interface) {
      const double cap = std::pow(c.sampling.max_step_kappa / c.diffusion.kappa, 2) / (2.0 * c.diffusion.d_w);
      every = static_cast<std::size_t>(std::ceil(dt / cap));
      dt /= static_cast<double>(every);
    }
    r["lags"] = n_lags;
    r["integration_dt_us"] = dt;
    r["trajectory_steps"] = static_cast<double>(c.sampling.n_traj) * static_cast<double>((n_lags - 1) * every);
    r["trajectory_length_us"] = dt * static_cast<double>((n_lags - 1) * every);
    r["memory_bytes_estimate"] =
        24.0 * static_cast<double>(std::min(c.sampling.batch, c.sampling.n_traj)) * static_cast<double>(n_lags);
  }
  r["warnings"] = warnings;
  return r;
}

}  // namespace nvsense
