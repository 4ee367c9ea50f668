#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nvsense/couplings.hpp"
#include "nvsense/error.hpp"
#include "nvsense/lattice.hpp"
#include "nvsense/liquid.hpp"
#include "nvsense/magnetometry.hpp"
#include "nvsense/units.hpp"

namespace nvsense {

using json = nlohmann::ordered_json;

enum class Scenario { liquid, solid, mixed, scan };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::liquid: return "liquid";
    case Scenario::solid: return "solid";
    case Scenario::mixed: return "mixed";
    default: return "scan";
  }
}

enum class Dimension {
  length, time, frequency, field, gradient, diffusion, areal_density, volume_density, inverse_length,
  gyromagnetic, dipolar,
};

namespace units {

struct Unit {
  Dimension dim;
  double scale;  // multiply to get internal units
};

inline const std::map<std::string, Unit>& table() {
  static const std::map<std::string, Unit> t = {
      {"nm", {Dimension::length, 1.0}},
      {"A", {Dimension::length, 0.1}},
      {"um", {Dimension::length, 1e3}},
      {"us", {Dimension::time, 1.0}},
      {"ns", {Dimension::time, 1e-3}},
      {"ms", {Dimension::time, 1e3}},
      {"s", {Dimension::time, 1e6}},
      {"rad/us", {Dimension::frequency, 1.0}},
      {"rad/s", {Dimension::frequency, 1e-6}},
      {"MHz", {Dimension::frequency, two_pi}},
      {"kHz", {Dimension::frequency, two_pi * 1e-3}},
      {"G", {Dimension::field, 1.0}},
      {"mT", {Dimension::field, 10.0}},
      {"T", {Dimension::field, 1e4}},
      {"G/nm", {Dimension::gradient, 1.0}},
      {"T/m", {Dimension::gradient, 1e-5}},
      {"nm^2/us", {Dimension::diffusion, 1.0}},
      {"m^2/s", {Dimension::diffusion, 1e12}},
      {"nm^-2", {Dimension::areal_density, 1.0}},
      {"nm^-3", {Dimension::volume_density, 1.0}},
      {"nm^-1", {Dimension::inverse_length, 1.0}},
      {"rad/us/G", {Dimension::gyromagnetic, 1.0}},
      {"rad/s/T", {Dimension::gyromagnetic, 1e-10}},
      {"rad/us*nm^3", {Dimension::dipolar, 1.0}},
  };
  return t;
}

inline const char* canonical(Dimension d) {
  switch (d) {
    case Dimension::length: return "nm";
    case Dimension::time: return "us";
    case Dimension::frequency: return "rad/us";
    case Dimension::field: return "G";
    case Dimension::gradient: return "G/nm";
    case Dimension::diffusion: return "nm^2/us";
    case Dimension::areal_density: return "nm^-2";
    case Dimension::volume_density: return "nm^-3";
    case Dimension::inverse_length: return "nm^-1";
    case Dimension::gyromagnetic: return "rad/us/G";
    default: return "rad/us*nm^3";
  }
}

inline std::string format(double v, Dimension d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g %s", v, canonical(d));
  return buf;
}

inline double parse(const std::string& text, Dimension d, const std::string& path) {
  std::istringstream ss(text);
  double v;
  std::string unit, extra;
  if (!(ss >> v)) throw ConfigError(path + ": expected \"<number> <unit>\", got \"" + text + "\"");
  if (!(ss >> unit)) throw ConfigError(path + ": missing unit, expected " + canonical(d));
  if (ss >> extra) throw ConfigError(path + ": trailing text in \"" + text + "\"");
  const auto it = table().find(unit);
  if (it == table().end()) throw ConfigError(path + ": unknown unit \"" + unit + "\"");
  if (it->second.dim != d)
    throw ConfigError(path + ": unit \"" + unit + "\" does not measure the expected quantity (" + canonical(d) + ")");
  if (!std::isfinite(v)) throw ConfigError(path + ": value must be finite");
  return v * it->second.scale;
}

}  // namespace units

struct ScenarioConfig {
  Scenario scenario = Scenario::solid;

  // geometry
  NvPlacement nv;
  double detection_radius = 6.0;
  LatticeSpec lattice;
  LayerGrouping grouping = LayerGrouping::stack;

  // physics
  FieldProfile field;
  double rabi_frequency = 0.0;
  PhysicalConstants constants;
  bool internuclear = true;
  InteractionMeasure lambda_measure = InteractionMeasure::root_sum_square;
  double reference_radius = 30.0;

  // liquid
  DiffusionModel diffusion;
  double proton_density = 66.7;
  LiquidSampling sampling;
  bool has_seed = false;

  // solver
  double t_end = 30.0;
  std::size_t time_points = 601;
  double dt = 0.0;
  double tau = 30.0;
  std::size_t omega_points = 400;
  double omega_min = 0.0, omega_max = 0.0;
  ScanEngine engine = ScanEngine::automatic;
  double threshold = 0.95;
  double sideband_window = 0.0;
  std::size_t max_dense_modes = 12000;
  std::size_t chain_max_length = 2048;

  // output
  std::string output_directory = "out";

  std::vector<std::string> defaults_applied;
};

// Height of the top of the solid slab, where the liquid of a mixed sample begins.
inline double solid_top(const LatticeSpec& s, const NvPlacement& nv) {
  const double spacing = s.model == LatticeModel::ice_ih ? 0.5 * s.c_lattice : s.sheet_spacing();
  return nv.depth_z0 + static_cast<double>(s.n_layers) * spacing;
}

namespace detail {

// Walks a JSON object, records consumed keys and applied defaults.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>* defaults)
      : j_(j), path_(std::move(path)), defaults_(defaults) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* get(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    if (!j_.contains(key)) return Reader(empty, at(key), defaults_);
    return Reader(j_.at(key), at(key), defaults_);
  }

  double quantity(const std::string& key, Dimension d, double fallback) {
    const json* v = get(key);
    if (!v) {
      note_default(key);
      return fallback;
    }
    if (!v->is_string()) throw ConfigError(at(key) + ": physical quantities are written as \"<number> <unit>\"");
    return units::parse(v->get<std::string>(), d, at(key));
  }

  std::optional<double> optional_quantity(const std::string& key, Dimension d) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    if (v->is_string() && v->get<std::string>() == "auto") return std::nullopt;
    if (!v->is_string()) throw ConfigError(at(key) + ": physical quantities are written as \"<number> <unit>\"");
    return units::parse(v->get<std::string>(), d, at(key));
  }

  double number(const std::string& key, double fallback) {
    const json* v = get(key);
    if (!v) {
      note_default(key);
      return fallback;
    }
    if (!v->is_number()) throw ConfigError(at(key) + ": expected a number");
    return v->get<double>();
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback, std::uint64_t min_value = 0) {
    const json* v = get(key);
    if (!v) {
      note_default(key);
      return fallback;
    }
    if (!v->is_number_integer() && !v->is_number_unsigned()) throw ConfigError(at(key) + ": expected an integer");
    if (v->is_number_integer() && v->get<long long>() < 0) throw ConfigError(at(key) + ": must not be negative");
    const auto n = v->get<std::uint64_t>();
    if (n < min_value) throw ConfigError(at(key) + ": must be at least " + std::to_string(min_value));
    return n;
  }

  bool flag(const std::string& key, bool fallback) {
    const json* v = get(key);
    if (!v) {
      note_default(key);
      return fallback;
    }
    if (!v->is_boolean()) throw ConfigError(at(key) + ": expected true or false");
    return v->get<bool>();
  }

  std::string choice(const std::string& key, const std::vector<std::string>& options, const std::string& fallback) {
    const json* v = get(key);
    if (!v) {
      note_default(key);
      return fallback;
    }
    if (!v->is_string()) throw ConfigError(at(key) + ": expected a string");
    const auto s = v->get<std::string>();
    for (const auto& o : options)
      if (o == s) return s;
    std::string list;
    for (const auto& o : options) list += (list.empty() ? "" : ", ") + o;
    throw ConfigError(at(key) + ": \"" + s + "\" is not one of " + list);
  }

  void note_default(const std::string& key) {
    if (defaults_) defaults_->push_back(at(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>* defaults_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path + ": " + what);
}

}  // namespace detail

inline ScenarioConfig parse_config(const json& root) {
  ScenarioConfig c;
  auto* defs = &c.defaults_applied;
  detail::Reader r(root, "", defs);

  const json* sc = r.get("scenario");
  if (!sc || !sc->is_string() || sc->get<std::string>().empty())
    throw ConfigError("scenario: required, one of liquid, solid, mixed, scan");
  const std::string name = sc->get<std::string>();
  if (name == "liquid") c.scenario = Scenario::liquid;
  else if (name == "solid") c.scenario = Scenario::solid;
  else if (name == "mixed") c.scenario = Scenario::mixed;
  else if (name == "scan") c.scenario = Scenario::scan;
  else throw ConfigError("scenario: \"" + name + "\" is not one of liquid, solid, mixed, scan");

  {
    auto g = r.child("geometry");
    c.nv.depth_z0 = g.quantity("depth", Dimension::length, 3.0);
    detail::require(c.nv.depth_z0 > 0, g.at("depth"), "must be positive");
    c.detection_radius = g.quantity("detection_radius", Dimension::length, 2.0 * c.nv.depth_z0);
    detail::require(c.detection_radius > 0, g.at("detection_radius"), "must be positive");

    auto l = g.child("lattice");
    const std::string model = l.choice("model", {"ice_ih", "layered"}, c.scenario == Scenario::scan ? "layered" : "ice_ih");
    c.lattice.model = model == "ice_ih" ? LatticeModel::ice_ih : LatticeModel::layered;
    c.lattice.a_lattice = l.quantity("a", Dimension::length, 0.4518);
    c.lattice.c_lattice = l.quantity("c", Dimension::length, 0.7356);
    detail::require(c.lattice.a_lattice > 0, l.at("a"), "must be positive");
    detail::require(c.lattice.c_lattice > 0, l.at("c"), "must be positive");
    // Solid slabs default to more than four depths of material so the
    // reference sum for the detection-volume fraction is converged.
    std::uint64_t layers = 1;
    if (c.scenario == Scenario::solid)
      layers = static_cast<std::uint64_t>(std::ceil(4.0 * c.nv.depth_z0 / (0.5 * c.lattice.c_lattice)));
    else if (c.scenario == Scenario::scan)
      layers = 6;
    c.lattice.n_layers = static_cast<int>(l.count("layers", layers, 1));
    c.lattice.lateral_radius = l.quantity("lateral_radius", Dimension::length, 4.0 * c.nv.depth_z0);
    detail::require(c.lattice.lateral_radius > 0, l.at("lateral_radius"), "must be positive");
    c.lattice.layer_density = l.quantity("layer_density", Dimension::areal_density, 15.2);
    detail::require(c.lattice.layer_density > 0, l.at("layer_density"), "must be positive");
    c.lattice.layer_spacing = l.quantity("layer_spacing", Dimension::length, 0.5 * c.lattice.c_lattice);
    detail::require(c.lattice.layer_spacing > 0, l.at("layer_spacing"), "must be positive");
    c.lattice.oh_length = l.quantity("oh_length", Dimension::length, 0.1);
    detail::require(c.lattice.oh_length > 0 && c.lattice.oh_length < 0.5 * c.lattice.c_lattice, l.at("oh_length"),
                    "must lie between 0 and c/2");
    c.lattice.max_protons = l.count("max_protons", 5'000'000, 1);
    c.grouping = l.choice("grouping", {"plane", "stack"}, "stack") == "plane" ? LayerGrouping::plane : LayerGrouping::stack;
    l.finish();
    g.finish();
  }

  {
    auto p = r.child("physics");
    auto k = p.child("constants");
    const PhysicalConstants d;
    c.constants.gamma_e = k.quantity("gamma_e", Dimension::gyromagnetic, d.gamma_e);
    c.constants.gamma_h = k.quantity("gamma_h", Dimension::gyromagnetic, d.gamma_h);
    const PhysicalConstants derived = constants_from_gyromagnetic(c.constants.gamma_e, c.constants.gamma_h);
    const bool custom = k.has("gamma_e") || k.has("gamma_h");
    c.constants.c_en = k.quantity("c_en", Dimension::dipolar, custom ? derived.c_en : d.c_en);
    c.constants.c_nn = k.quantity("c_nn", Dimension::dipolar, custom ? derived.c_nn : d.c_nn);
    detail::require(c.constants.valid(), k.at(""), "constants must be positive");
    k.finish();

    c.field.b0 = p.quantity("b0", Dimension::field, field_for_larmor_mhz(1.0, c.constants));
    detail::require(c.field.b0 > 0, p.at("b0"), "must be positive");
    c.field.grad_lambda = p.quantity("gradient", Dimension::gradient, 60.0);
    detail::require(c.field.grad_lambda >= 0, p.at("gradient"), "must not be negative");
    c.rabi_frequency = p.quantity("rabi_frequency", Dimension::frequency, larmor(c.field.b0, c.constants));
    detail::require(c.rabi_frequency > 0, p.at("rabi_frequency"), "must be positive");
    c.internuclear = p.flag("internuclear", true);
    const std::string m = p.choice("lambda_measure", {"root_sum_square", "magnitude", "signed"}, "root_sum_square");
    c.lambda_measure = m == "magnitude" ? InteractionMeasure::magnitude
                       : m == "signed"  ? InteractionMeasure::signed_sum
                                        : InteractionMeasure::root_sum_square;
    c.reference_radius = p.quantity("reference_radius", Dimension::length, 10.0 * c.nv.depth_z0);
    detail::require(c.reference_radius >= c.detection_radius, p.at("reference_radius"),
                    "must not be smaller than the detection radius");
    p.finish();
  }

  {
    auto q = r.child("liquid");
    auto d = q.child("diffusion");
    const bool mixed = c.scenario == Scenario::mixed;
    const std::string kind = d.choice("kind", {"uniform", "interface"}, mixed ? "interface" : "uniform");
    c.diffusion.kind = kind == "uniform" ? DiffusionKind::uniform : DiffusionKind::interface;
    c.diffusion.d_w = d.quantity("d_w", Dimension::diffusion, 2000.0);
    detail::require(c.diffusion.d_w > 0, d.at("d_w"), "must be positive");
    c.diffusion.d_min = d.quantity("d_min", Dimension::diffusion, 0.2 * c.diffusion.d_w);
    c.diffusion.kappa = d.quantity("kappa", Dimension::inverse_length, 1.0);
    const double floor = mixed ? solid_top(c.lattice, c.nv) : c.nv.depth_z0;
    c.diffusion.z_prime = d.quantity("z_prime", Dimension::length, floor + 1.0);
    if (c.diffusion.kind == DiffusionKind::interface) {
      detail::require(c.diffusion.d_min > 0 && c.diffusion.d_min <= c.diffusion.d_w, d.at("d_min"),
                      "must lie in (0, d_w]");
      detail::require(c.diffusion.kappa > 0, d.at("kappa"), "must be positive");
    }
    d.finish();
    c.proton_density = q.quantity("proton_density", Dimension::volume_density, 66.7);
    detail::require(c.proton_density > 0, q.at("proton_density"), "must be positive");
    c.sampling.n_traj = q.count("trajectories", 120000, 2);
    c.sampling.batch = q.count("batch", 5000, 1);
    c.sampling.lag_step_factor = q.number("lag_step", 0.05);
    c.sampling.max_lag_factor = q.number("max_lag", 20.0);
    detail::require(c.sampling.lag_step_factor > 0, q.at("lag_step"), "must be positive");
    detail::require(c.sampling.max_lag_factor > 2 * c.sampling.lag_step_factor, q.at("max_lag"),
                    "must span at least two lag steps");
    c.sampling.max_step_kappa = q.number("max_step_kappa", 0.25);
    detail::require(c.sampling.max_step_kappa > 0, q.at("max_step_kappa"), "must be positive");
    c.sampling.n_blocks = q.count("blocks", 16, 2);
    const json* seed = q.get("seed");
    if (seed) {
      if (!seed->is_number_unsigned() && !(seed->is_number_integer() && seed->get<long long>() >= 0))
        throw ConfigError(q.at("seed") + ": expected a non-negative integer");
      c.sampling.seed = seed->get<std::uint64_t>();
      c.has_seed = true;
    }
    q.finish();
  }

  {
    auto s = r.child("solver");
    const double t_default = c.scenario == Scenario::liquid ? 10000.0 : 30.0;
    c.t_end = s.quantity("t_end", Dimension::time, t_default);
    detail::require(c.t_end > 0, s.at("t_end"), "must be positive");
    c.time_points = s.count("time_points", c.scenario == Scenario::liquid ? 501 : 601, 2);
    c.dt = s.quantity("dt", Dimension::time, 0.0);
    detail::require(c.dt >= 0, s.at("dt"), "must not be negative");
    c.tau = s.quantity("tau", Dimension::time, 30.0);
    detail::require(c.tau > 0, s.at("tau"), "must be positive");
    c.omega_points = s.count("omega_points", 400, 3);
    if (auto v = s.optional_quantity("omega_min", Dimension::frequency)) c.omega_min = *v;
    else if (!s.has("omega_min")) s.note_default("omega_min");
    if (auto v = s.optional_quantity("omega_max", Dimension::frequency)) c.omega_max = *v;
    else if (!s.has("omega_max")) s.note_default("omega_max");
    if (c.omega_min > 0 || c.omega_max > 0)
      detail::require(c.omega_max > c.omega_min, s.at("omega_max"), "must exceed omega_min");
    const std::string e = s.choice("engine", {"auto", "dense", "chain"}, "auto");
    c.engine = e == "dense" ? ScanEngine::dense : e == "chain" ? ScanEngine::chain : ScanEngine::automatic;
    c.threshold = s.number("threshold", 0.95);
    detail::require(c.threshold > 0.5 && c.threshold <= 1.0, s.at("threshold"), "must lie in (0.5, 1]");
    if (auto v = s.optional_quantity("sideband_window", Dimension::frequency)) c.sideband_window = *v;
    else if (!s.has("sideband_window")) s.note_default("sideband_window");
    c.max_dense_modes = s.count("max_dense_modes", 12000, 1);
    c.chain_max_length = s.count("chain_max_length", 2048, 8);
    s.finish();
  }

  {
    auto o = r.child("output");
    const json* d = o.get("directory");
    if (d) {
      if (!d->is_string() || d->get<std::string>().empty()) throw ConfigError("output.directory: expected a path");
      c.output_directory = d->get<std::string>();
    } else {
      o.note_default("directory");
    }
    o.finish();
  }
  r.finish();

  if ((c.scenario == Scenario::liquid || c.scenario == Scenario::mixed) && !c.has_seed)
    throw ConfigError("liquid.seed: required for liquid and mixed scenarios");
  return c;
}

inline ScenarioConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(j);
}

// Complete config with every value explicit, in canonical units.
inline json serialize(const ScenarioConfig& c) {
  using units::format;
  json j;
  j["scenario"] = to_string(c.scenario);
  j["geometry"] = {
      {"depth", format(c.nv.depth_z0, Dimension::length)},
      {"detection_radius", format(c.detection_radius, Dimension::length)},
      {"lattice",
       {{"model", to_string(c.lattice.model)},
        {"a", format(c.lattice.a_lattice, Dimension::length)},
        {"c", format(c.lattice.c_lattice, Dimension::length)},
        {"layers", c.lattice.n_layers},
        {"lateral_radius", format(c.lattice.lateral_radius, Dimension::length)},
        {"layer_density", format(c.lattice.layer_density, Dimension::areal_density)},
        {"layer_spacing", format(c.lattice.layer_spacing, Dimension::length)},
        {"oh_length", format(c.lattice.oh_length, Dimension::length)},
        {"max_protons", c.lattice.max_protons},
        {"grouping", c.grouping == LayerGrouping::plane ? "plane" : "stack"}}},
  };
  j["physics"] = {
      {"b0", format(c.field.b0, Dimension::field)},
      {"gradient", format(c.field.grad_lambda, Dimension::gradient)},
      {"rabi_frequency", format(c.rabi_frequency, Dimension::frequency)},
      {"constants",
       {{"gamma_e", format(c.constants.gamma_e, Dimension::gyromagnetic)},
        {"gamma_h", format(c.constants.gamma_h, Dimension::gyromagnetic)},
        {"c_en", format(c.constants.c_en, Dimension::dipolar)},
        {"c_nn", format(c.constants.c_nn, Dimension::dipolar)}}},
      {"internuclear", c.internuclear},
      {"lambda_measure", to_string(c.lambda_measure)},
      {"reference_radius", format(c.reference_radius, Dimension::length)},
  };
  json liquid = {
      {"diffusion",
       {{"kind", c.diffusion.kind == DiffusionKind::uniform ? "uniform" : "interface"},
        {"d_w", format(c.diffusion.d_w, Dimension::diffusion)},
        {"d_min", format(c.diffusion.d_min, Dimension::diffusion)},
        {"kappa", format(c.diffusion.kappa, Dimension::inverse_length)},
        {"z_prime", format(c.diffusion.z_prime, Dimension::length)}}},
      {"proton_density", format(c.proton_density, Dimension::volume_density)},
      {"trajectories", c.sampling.n_traj},
      {"batch", c.sampling.batch},
      {"lag_step", c.sampling.lag_step_factor},
      {"max_lag", c.sampling.max_lag_factor},
      {"max_step_kappa", c.sampling.max_step_kappa},
      {"blocks", c.sampling.n_blocks},
  };
  if (c.has_seed) liquid["seed"] = c.sampling.seed;
  j["liquid"] = liquid;
  json solver = {
      {"t_end", format(c.t_end, Dimension::time)},
      {"time_points", c.time_points},
      {"dt", format(c.dt, Dimension::time)},
      {"tau", format(c.tau, Dimension::time)},
      {"omega_points", c.omega_points},
      {"omega_min", c.omega_min > 0 || c.omega_max > 0 ? json(format(c.omega_min, Dimension::frequency)) : json("auto")},
      {"omega_max", c.omega_min > 0 || c.omega_max > 0 ? json(format(c.omega_max, Dimension::frequency)) : json("auto")},
      {"engine", c.engine == ScanEngine::dense ? "dense" : c.engine == ScanEngine::chain ? "chain" : "auto"},
      {"threshold", c.threshold},
      {"sideband_window", c.sideband_window > 0 ? json(format(c.sideband_window, Dimension::frequency)) : json("auto")},
      {"max_dense_modes", c.max_dense_modes},
      {"chain_max_length", c.chain_max_length},
  };
  j["solver"] = solver;
  j["output"] = {{"directory", c.output_directory}};
  return j;
}

}  // namespace nvsense
