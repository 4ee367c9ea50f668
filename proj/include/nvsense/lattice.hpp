#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nvsense/error.hpp"
#include "nvsense/units.hpp"

namespace nvsense {

using Vec3 = Eigen::Vector3d;

enum class LatticeModel {
  ice_ih,   // ordered hexagonal ice, three proton planes per bilayer
  layered,  // flat triangular proton sheets of prescribed areal density
};

inline const char* to_string(LatticeModel m) { return m == LatticeModel::ice_ih ? "ice_ih" : "layered"; }

struct LatticeSpec {
  LatticeModel model = LatticeModel::ice_ih;
  double a_lattice = 0.4518;  // nm
  double c_lattice = 0.7356;  // nm
  int n_layers = 1;           // bilayers for ice_ih, sheets for layered
  double lateral_radius = 12.0;
  double oh_length = 0.1;      // nm, ice_ih only
  double layer_density = 15.2; // nm^-2, layered only
  double layer_spacing = 0.0;  // nm, layered only; 0 means c_lattice / 2
  std::size_t max_protons = 5'000'000;

  double sheet_spacing() const { return layer_spacing > 0 ? layer_spacing : 0.5 * c_lattice; }
};

struct NvPlacement {
  double depth_z0 = 3.0;  // nm from the NV to the first proton plane or liquid floor
};

struct DetectionVolume {
  double radius = 6.0;  // hemisphere radius around the NV, z > 0
};

struct LayerInfo {
  double z = 0.0;        // nm
  double density = 0.0;  // protons nm^-2 of the infinite plane
  int stack = 0;         // bilayer (ice_ih) or sheet (layered) this plane belongs to
};

struct ProtonSet {
  std::vector<Vec3> positions;
  std::vector<int> layer_index;  // -1 for liquid protons
  std::vector<LayerInfo> layers;
  double lateral_radius = 0.0;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
};

namespace detail {

inline void validate(const LatticeSpec& s, const NvPlacement& nv) {
  if (!(s.a_lattice > 0) || !(s.c_lattice > 0)) throw InvalidArgument("lattice constants must be positive");
  if (s.n_layers < 1) throw InvalidArgument("n_layers must be at least 1");
  if (!(s.lateral_radius > 0)) throw InvalidArgument("lateral_radius must be positive");
  if (!(nv.depth_z0 > 0)) throw InvalidArgument("depth_z0 must be positive");
  if (s.model == LatticeModel::ice_ih && !(s.oh_length > 0 && s.oh_length < 0.5 * s.c_lattice))
    throw InvalidArgument("oh_length out of range");
  if (s.model == LatticeModel::layered && !(s.layer_density > 0))
    throw InvalidArgument("layer_density must be positive");
}

// Upper bound on |i|, |j| for hexagonal cells reaching lateral distance r.
inline int cell_range(double r, double a) { return static_cast<int>(std::ceil(2.0 * r / (std::sqrt(3.0) * a))) + 2; }

}  // namespace detail

// Proton planes of the ordered ice slab relative to the lowest proton plane:
// per bilayer, two protons per cell just above the lower oxygen sheet, one
// just below the upper sheet and one on the vertical bond above it.
inline std::array<double, 3> ice_plane_offsets(const LatticeSpec& s) {
  const double u = 0.0625;
  const double lat = s.a_lattice / std::sqrt(3.0);
  const double vert = 2.0 * u * s.c_lattice;
  const double z_tilt = s.oh_length * vert / std::hypot(lat, vert);
  return {0.0, vert - 2.0 * z_tilt, vert + s.oh_length - z_tilt};
}

inline std::array<double, 3> ice_plane_densities(const LatticeSpec& s) {
  const double cell = 0.5 * std::sqrt(3.0) * s.a_lattice * s.a_lattice;
  return {2.0 / cell, 1.0 / cell, 1.0 / cell};
}

inline double expected_proton_count(const LatticeSpec& s) {
  const double area = pi * std::pow(s.lateral_radius + s.a_lattice, 2);
  double per_layer = s.layer_density;
  if (s.model == LatticeModel::ice_ih) {
    const auto d = ice_plane_densities(s);
    per_layer = d[0] + d[1] + d[2];
  }
  return area * per_layer * s.n_layers;
}

inline ProtonSet build_layered_lattice(const LatticeSpec& s, const NvPlacement& nv) {
  const double sp = std::sqrt(2.0 / (std::sqrt(3.0) * s.layer_density));
  const double dz = s.sheet_spacing();
  const double R = s.lateral_radius;
  const int n = static_cast<int>(std::ceil(2.0 * R / (std::sqrt(3.0) * sp))) + 2;
  ProtonSet out;
  out.lateral_radius = R;
  for (int k = 0; k < s.n_layers; ++k) {
    const double z = nv.depth_z0 + k * dz;
    out.layers.push_back({z, s.layer_density, k});
    const double ox = (k % 2) ? 0.5 * sp : 0.0;
    const double oy = (k % 2) ? 0.5 * sp / std::sqrt(3.0) : 0.0;
    for (int i = -n; i <= n; ++i) {
      for (int j = -n; j <= n; ++j) {
        const double x = (i + 0.5 * j) * sp + ox;
        const double y = 0.5 * std::sqrt(3.0) * j * sp + oy;
        if (x * x + y * y > R * R) continue;
        out.positions.emplace_back(x, y, z);
        out.layer_index.push_back(k);
      }
    }
  }
  return out;
}

inline ProtonSet build_ice_ih_lattice(const LatticeSpec& s, const NvPlacement& nv) {
  const double a = s.a_lattice;
  const double c = s.c_lattice;
  const double u = 0.0625;
  const double R = s.lateral_radius;
  const Eigen::Vector2d a1(a, 0.0);
  const Eigen::Vector2d a2(-0.5 * a, 0.5 * std::sqrt(3.0) * a);
  const Eigen::Vector2d site_a(1.0 / 3.0, 2.0 / 3.0);
  const Eigen::Vector2d site_b(2.0 / 3.0, 1.0 / 3.0);
  const auto lat = [&](const Eigen::Vector2d& f) -> Eigen::Vector2d { return f.x() * a1 + f.y() * a2; };

  const auto offs = ice_plane_offsets(s);
  const auto dens = ice_plane_densities(s);
  const double lat_bond = a / std::sqrt(3.0);
  const double vert = 2.0 * u * c;
  const double frac_lat = s.oh_length * lat_bond / std::hypot(lat_bond, vert);

  ProtonSet out;
  out.lateral_radius = R;
  const int n = detail::cell_range(R + a, a);

  for (int k = 0; k < s.n_layers; ++k) {
    // Bilayers alternate the sublattice of their lower oxygen sheet.
    const Eigen::Vector2d low = (k % 2 == 0) ? site_b : site_a;
    const Eigen::Vector2d up = (k % 2 == 0) ? site_a : site_b;
    const double z0 = nv.depth_z0 + k * 0.5 * c;
    const int base = static_cast<int>(out.layers.size());
    for (int p = 0; p < 3; ++p) out.layers.push_back({z0 + offs[p], dens[p], k});

    // In-plane unit directions from a lower oxygen to its three upper
    // neighbours, ordered by azimuth.
    std::vector<Eigen::Vector2d> dirs;
    const Eigen::Vector2d pl = lat(low);
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const Eigen::Vector2d q = lat(up + Eigen::Vector2d(di, dj)) - pl;
        if (std::abs(q.norm() - lat_bond) < 1e-9) dirs.push_back(q / q.norm());
      }
    }
    if (dirs.size() != 3) throw NumericalError("ice lattice neighbour search failed");
    std::sort(dirs.begin(), dirs.end(), [](const Eigen::Vector2d& l, const Eigen::Vector2d& r) {
      const auto az = [](const Eigen::Vector2d& v) {
        double t = std::atan2(v.y(), v.x());
        return t < 0 ? t + two_pi : t;
      };
      return az(l) < az(r);
    });

    for (int i = -n; i <= n; ++i) {
      for (int j = -n; j <= n; ++j) {
        const Eigen::Vector2d cell = i * a1 + j * a2;
        const Eigen::Vector2d o_low = cell + pl;
        const Eigen::Vector2d o_up = cell + lat(up);
        // The lower oxygen donates along its first two tilted bonds, the upper
        // oxygen along the third one and along its vertical bond.
        const std::array<std::pair<Eigen::Vector2d, int>, 4> hs{{
            {o_low + frac_lat * dirs[0], 0},
            {o_low + frac_lat * dirs[1], 0},
            {o_low + (lat_bond - frac_lat) * dirs[2], 1},
            {o_up, 2},
        }};
        for (const auto& [xy, plane] : hs) {
          if (xy.squaredNorm() > R * R) continue;
          out.positions.emplace_back(xy.x(), xy.y(), out.layers[base + plane].z);
          out.layer_index.push_back(base + plane);
        }
      }
    }
  }
  return out;
}

// Ordered proton slab whose lowest proton plane sits at z = depth_z0.
inline ProtonSet build_ice_lattice(const LatticeSpec& shape, const NvPlacement& nv) {
  detail::validate(shape, nv);
  const double expected = expected_proton_count(shape);
  if (expected > static_cast<double>(shape.max_protons))
    throw ResourceError("lattice would hold about " + std::to_string(static_cast<long long>(expected)) +
                        " protons, above the cap of " + std::to_string(shape.max_protons));
  return shape.model == LatticeModel::ice_ih ? build_ice_ih_lattice(shape, nv) : build_layered_lattice(shape, nv);
}

// Subset inside the hemisphere |r| <= R, z > 0. Layer metadata is kept whole.
inline ProtonSet truncate_to_volume(const ProtonSet& protons, const DetectionVolume& vol) {
  ProtonSet out;
  out.layers = protons.layers;
  out.lateral_radius = protons.lateral_radius;
  const double r2 = vol.radius * vol.radius;
  for (std::size_t i = 0; i < protons.size(); ++i) {
    const Vec3& p = protons.positions[i];
    if (p.z() > 0 && p.squaredNorm() <= r2) {
      out.positions.push_back(p);
      out.layer_index.push_back(protons.layer_index[i]);
    }
  }
  return out;
}

enum class InteractionMeasure {
  root_sum_square,  // sqrt(sum |g|^2), the collective exchange coupling
  magnitude,        // sum |g|
  signed_sum,       // |sum g|
};

inline const char* to_string(InteractionMeasure m) {
  switch (m) {
    case InteractionMeasure::root_sum_square: return "root_sum_square";
    case InteractionMeasure::magnitude: return "magnitude";
    default: return "signed";
  }
}

// Detection-volume figure of merit: measure over |r| <= r_m divided by the
// same measure over |r| <= r_ref.
template <class CouplingFn>
double interaction_fraction(const ProtonSet& protons, double r_m, double r_ref, CouplingFn&& coupling,
                            InteractionMeasure measure = InteractionMeasure::root_sum_square) {
  if (protons.empty()) throw InvalidArgument("interaction_fraction on an empty proton set");
  if (!(r_ref >= r_m)) throw InvalidArgument("reference radius must not be smaller than r_m");
  double in_abs = 0, ref_abs = 0;
  std::complex<double> in_sum = 0, ref_sum = 0;
  for (const Vec3& p : protons.positions) {
    const double r = p.norm();
    if (r > r_ref || p.z() <= 0) continue;
    const std::complex<double> g = coupling(p);
    const double w = measure == InteractionMeasure::root_sum_square ? std::norm(g) : std::abs(g);
    ref_abs += w;
    ref_sum += g;
    if (r <= r_m) {
      in_abs += w;
      in_sum += g;
    }
  }
  if (measure == InteractionMeasure::signed_sum) {
    if (std::abs(ref_sum) == 0) throw NumericalError("signed coupling sum vanishes at the reference radius");
    return std::abs(in_sum) / std::abs(ref_sum);
  }
  if (ref_abs == 0) throw NumericalError("no coupling inside the reference radius");
  return measure == InteractionMeasure::root_sum_square ? std::sqrt(in_abs / ref_abs) : in_abs / ref_abs;
}

enum class LayerGrouping {
  plane,  // every distinct proton plane is its own layer
  stack,  // planes of one bilayer merged
};

struct LayerRow {
  double z = 0.0;
  double density = 0.0;
  std::size_t count = 0;
};

inline std::vector<LayerRow> layer_table(const ProtonSet& protons, LayerGrouping grouping = LayerGrouping::plane) {
  if (protons.empty()) throw InvalidArgument("layer_table on an empty proton set");
  std::map<int, std::size_t> counts;
  for (int l : protons.layer_index) {
    if (l < 0 || static_cast<std::size_t>(l) >= protons.layers.size())
      throw InvalidArgument("layer_table needs a solid proton set");
    ++counts[l];
  }
  if (grouping == LayerGrouping::plane) {
    std::vector<LayerRow> rows;
    for (const auto& [l, n] : counts) rows.push_back({protons.layers[l].z, protons.layers[l].density, n});
    std::sort(rows.begin(), rows.end(), [](const LayerRow& x, const LayerRow& y) { return x.z < y.z; });
    return rows;
  }
  std::map<int, LayerRow> stacks;
  std::map<int, double> zsum;
  for (const auto& [l, n] : counts) {
    const LayerInfo& info = protons.layers[l];
    LayerRow& row = stacks[info.stack];
    row.density += info.density;
    row.count += n;
    zsum[info.stack] += info.z * static_cast<double>(n);
  }
  std::vector<LayerRow> rows;
  for (auto& [s, row] : stacks) {
    row.z = zsum[s] / static_cast<double>(row.count);
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const LayerRow& x, const LayerRow& y) { return x.z < y.z; });
  return rows;
}

// Columnar text: header lines start with '#', then "x y z layer_index".
inline void write_protons(std::ostream& os, const ProtonSet& p, const std::string& header_echo = {}) {
  os << "# nvsense proton set, units nm, NV at origin\n";
  if (!header_echo.empty()) {
    std::istringstream lines(header_echo);
    for (std::string line; std::getline(lines, line);) os << "# config " << line << '\n';
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "# lateral_radius %.17g\n", p.lateral_radius);
  os << buf;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    std::snprintf(buf, sizeof buf, "# layer %zu %.17g %.17g %d\n", l, p.layers[l].z, p.layers[l].density,
                  p.layers[l].stack);
    os << buf;
  }
  os << "# x y z layer_index\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d\n", p.positions[i].x(), p.positions[i].y(),
                  p.positions[i].z(), p.layer_index[i]);
    os << buf;
  }
}

inline ProtonSet read_protons(std::istream& is) {
  ProtonSet p;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    if (line[0] == '#') {
      std::string hash, key;
      ss >> hash >> key;
      if (key == "lateral_radius") {
        ss >> p.lateral_radius;
      } else if (key == "layer") {
        std::size_t l;
        LayerInfo info;
        if (ss >> l >> info.z >> info.density >> info.stack) {
          if (p.layers.size() <= l) p.layers.resize(l + 1);
          p.layers[l] = info;
        }
      }
      continue;
    }
    double x, y, z;
    int l;
    if (!(ss >> x >> y >> z >> l)) throw ConfigError("proton file line " + std::to_string(lineno) + ": expected x y z layer_index");
    p.positions.emplace_back(x, y, z);
    p.layer_index.push_back(l);
  }
  return p;
}

}  // namespace nvsense
