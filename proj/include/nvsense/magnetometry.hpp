#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "nvsense/chain.hpp"
#include "nvsense/covariance.hpp"
#include "nvsense/couplings.hpp"
#include "nvsense/error.hpp"
#include "nvsense/lattice.hpp"
#include "nvsense/parallel.hpp"

namespace nvsense {

enum class ScanEngine {
  automatic,  // dense up to dense_limit protons, chain above
  dense,      // one eigendecomposition of V per Omega point
  chain,      // one Lanczos chain shared by all Omega points
};

struct ScanConfig {
  std::vector<double> omega;  // rad/us, ascending
  double tau = 30.0;          // us
  FieldProfile field;
  ScanEngine engine = ScanEngine::automatic;
  std::size_t dense_limit = 400;
  double threshold = 0.95;       // dips must fall below this population
  double sideband_window = 0.0;  // rad/us; 0 selects 5 pi / tau
  double liquid_alpha = 0.0;     // NV-local depolarization added to the scan, 0 disables
  InitialState initial;
  unsigned threads = 1;
  ChainOptions chain;
};

struct Peak {
  double omega = 0;
  double z_layer = 0;  // nm, through the inverse gradient map
  double depth = 0;    // 1 - n at the refined minimum
  double n = 0;
};

struct Spectrum {
  std::vector<double> omega;
  std::vector<double> n;
  std::vector<Peak> peaks;
  bool coarse_grid = false;  // a dip spans fewer than three grid points
};

inline std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
  if (points < 2 || !(hi > lo)) throw InvalidArgument("grid needs at least two points and hi > lo");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

struct DipSearch {
  std::vector<Peak> peaks;
  bool coarse_grid = false;
};

// Local minima below the threshold, refined through a parabola over three
// points. A minimum closer than `window` to a deeper accepted one is a
// finite-time sideband of that dip and is dropped.
inline DipSearch find_dips(const std::vector<double>& omega, const std::vector<double>& n, double threshold,
                           double window) {
  DipSearch out;
  struct Cand {
    double w, v;
    std::size_t i;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 1; i + 1 < n.size(); ++i) {
    if (!(n[i] < threshold && n[i] < n[i - 1] && n[i] <= n[i + 1])) continue;
    const double x0 = omega[i - 1], x1 = omega[i], x2 = omega[i + 1];
    const double y0 = n[i - 1], y1 = n[i], y2 = n[i + 1];
    const double d01 = (y1 - y0) / (x1 - x0), d12 = (y2 - y1) / (x2 - x1);
    const double curv = (d12 - d01) / (x2 - x0);
    double w = x1, v = y1;
    if (curv > 0) {
      w = 0.5 * (x0 + x1) - d01 / (2.0 * curv);
      w = std::clamp(w, x0, x2);
      v = y1 + d01 * (w - x1) + curv * (w - x0) * (w - x1);
      v = std::min(v, y1);
    }
    cands.push_back({w, v, i});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.v < b.v; });
  std::vector<Cand> kept;
  for (const Cand& c : cands) {
    bool side = false;
    for (const Cand& k : kept) side = side || std::abs(c.w - k.w) < window;
    if (!side) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(), [](const Cand& a, const Cand& b) { return a.w < b.w; });
  for (const Cand& c : kept) {
    // Grid points below the half-depth level between the dip and full polarization.
    const double half = 0.5 * (c.v + 1.0);
    std::size_t lo = c.i, hi = c.i;
    while (lo > 0 && n[lo - 1] < half) --lo;
    while (hi + 1 < n.size() && n[hi + 1] < half) ++hi;
    if (hi - lo + 1 < 3) out.coarse_grid = true;
    out.peaks.push_back({c.w, std::numeric_limits<double>::quiet_NaN(), 1.0 - c.v, c.v});
  }
  return out;
}

// NV population after tau at every Omega of the grid; the couplings carry
// gradient-shifted Larmor frequencies.
inline Spectrum rabi_scan(const CouplingSet& couplings, const ScanConfig& cfg, const PhysicalConstants& consts) {
  if (!(cfg.tau > 0)) throw InvalidArgument("interaction time must be positive");
  if (cfg.omega.size() < 3) throw InvalidArgument("scan needs at least three Omega points");
  for (std::size_t i = 1; i < cfg.omega.size(); ++i)
    if (!(cfg.omega[i] > cfg.omega[i - 1])) throw InvalidArgument("Omega grid must be strictly ascending");
  if (couplings.size() == 0) throw InvalidArgument("scan needs at least one proton");

  Spectrum sp;
  sp.omega = cfg.omega;
  sp.n.assign(cfg.omega.size(), 0.0);
  const bool use_chain = cfg.engine == ScanEngine::chain ||
                         (cfg.engine == ScanEngine::automatic && couplings.size() > cfg.dense_limit);
  const std::vector<double> at{cfg.tau};
  if (use_chain) {
    // Sequential: the shared chain grows on demand, in grid order.
    ExchangeChain chain(couplings, cfg.chain);
    const auto alpha = [&](double) { return cfg.liquid_alpha; };
    for (std::size_t i = 0; i < cfg.omega.size(); ++i) {
      sp.n[i] = cfg.liquid_alpha > 0 ? chain.populations_dissipative(cfg.omega[i], alpha, at, cfg.initial).front()
                                     : chain.populations(cfg.omega[i], at, cfg.initial).front();
    }
  } else {
    parallel_for(cfg.omega.size(), cfg.threads, [&](std::size_t i) {
      const ModeHamiltonian v = assemble_V(couplings, cfg.omega[i]);
      if (cfg.liquid_alpha > 0) {
        const auto g = propagate_dissipative(v, initial_covariance(v.modes() - 1, cfg.initial),
                                             [&](double) { return cfg.liquid_alpha; }, at);
        sp.n[i] = nv_population(g.front());
      } else {
        const UnitaryPropagator u(v.v);
        sp.n[i] = u.nv_population(cfg.tau, cfg.initial);
      }
    });
  }
  const double window = cfg.sideband_window > 0 ? cfg.sideband_window : 5.0 * pi / cfg.tau;
  DipSearch dips = find_dips(sp.omega, sp.n, cfg.threshold, window);
  for (Peak& p : dips.peaks) p.z_layer = gradient_position(p.omega, cfg.field, consts);
  sp.peaks = std::move(dips.peaks);
  sp.coarse_grid = dips.coarse_grid;
  return sp;
}

// sqrt(sum_layer |g|^2) = sqrt(rho_2D) beta / z_L^2 for an infinite plane.
inline double beta_factor(const PhysicalConstants& c) { return 0.75 * c.c_en * std::sqrt(pi / 12.0); }

struct EnvelopeModel {
  double beta = 0;
  double density = 15.2;  // protons nm^-2
};

inline double envelope(const EnvelopeModel& m, double z_layer, double tau) {
  if (!(z_layer > 0)) throw InvalidArgument("layer height must be positive");
  const double c = std::cos(std::sqrt(m.density) * m.beta * tau / (z_layer * z_layer));
  return 0.5 + 0.5 * c * c;
}

struct LayerCoupling {
  double z = 0;
  double coupling = 0;  // sqrt(sum |g|^2) over the layer
  std::size_t count = 0;
};

inline std::vector<LayerCoupling> layer_couplings(const ProtonSet& protons, const std::vector<cplx>& g,
                                                  LayerGrouping grouping) {
  if (g.size() != protons.size()) throw InvalidArgument("coupling and proton counts differ");
  std::map<int, LayerCoupling> m;
  std::map<int, double> zsum;
  for (std::size_t i = 0; i < protons.size(); ++i) {
    const int l = protons.layer_index[i];
    if (l < 0) throw InvalidArgument("layer couplings need a solid proton set");
    const int key = grouping == LayerGrouping::plane ? l : protons.layers[static_cast<std::size_t>(l)].stack;
    LayerCoupling& lc = m[key];
    lc.coupling += std::norm(g[i]);
    lc.count += 1;
    zsum[key] += protons.positions[i].z();
  }
  std::vector<LayerCoupling> out;
  for (auto& [k, lc] : m) {
    lc.coupling = std::sqrt(lc.coupling);
    lc.z = zsum[k] / static_cast<double>(lc.count);
    out.push_back(lc);
  }
  std::sort(out.begin(), out.end(), [](const LayerCoupling& a, const LayerCoupling& b) { return a.z < b.z; });
  return out;
}

struct ResolutionReport {
  std::vector<double> ratio;  // detuning between neighbours / stronger layer coupling
  double margin = 5.0;
  bool pass = false;
};

// Layer selectivity: neighbouring layers must be detuned by much more than
// their collective coupling.
inline ResolutionReport resolution_check(const ProtonSet& protons, const std::vector<cplx>& g,
                                         const FieldProfile& field, const PhysicalConstants& consts,
                                         LayerGrouping grouping = LayerGrouping::stack, double margin = 5.0) {
  const auto layers = layer_couplings(protons, g, grouping);
  if (layers.size() < 2) throw InvalidArgument("resolution check needs at least two layers");
  ResolutionReport r;
  r.margin = margin;
  r.pass = true;
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
    const double detune = consts.gamma_h * field.grad_lambda * (layers[k + 1].z - layers[k].z);
    const double g_max = std::max(layers[k].coupling, layers[k + 1].coupling);
    const double q = g_max > 0 ? detune / g_max : std::numeric_limits<double>::infinity();
    r.ratio.push_back(q);
    r.pass = r.pass && q >= margin;
  }
  return r;
}

}  // namespace nvsense
