#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "nvsense/lattice.hpp"
#include "nvsense/couplings.hpp"
#include "oracles.hpp"

using namespace nvsense;

namespace {

LatticeSpec small_ice(int layers, double radius) {
  LatticeSpec s;
  s.n_layers = layers;
  s.lateral_radius = radius;
  return s;
}

}  // namespace

TEST(IceLattice, PlaneOffsetsFollowBondGeometry) {
  const auto o = ice_plane_offsets(LatticeSpec{});
  EXPECT_DOUBLE_EQ(o[0], 0.0);
  EXPECT_NEAR(o[1], 0.025459025265036295, 1e-14);
  EXPECT_NEAR(o[2], 0.15870451263251817, 1e-14);
}

TEST(IceLattice, DensityPerBilayer) {
  const auto d = ice_plane_densities(LatticeSpec{});
  EXPECT_NEAR(d[0] + d[1] + d[2], 22.627517344507204, 1e-10);
  EXPECT_NEAR(d[0], 2.0 * d[1], 1e-12);
}

TEST(IceLattice, CountsMatchArealDensity) {
  const LatticeSpec s = small_ice(3, 10.0);
  const ProtonSet p = build_ice_lattice(s, NvPlacement{3.0});
  const auto rows = layer_table(p, LayerGrouping::plane);
  ASSERT_EQ(rows.size(), 9u);
  const auto d = ice_plane_densities(s);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double measured = static_cast<double>(rows[k].count) / (pi * 100.0);
    EXPECT_NEAR(measured / d[k % 3], 1.0, 0.01) << "plane " << k;
  }
  EXPECT_NEAR(rows.front().z, 3.0, 1e-12);
  EXPECT_NEAR(rows[3].z - rows[0].z, 0.5 * s.c_lattice, 1e-12);
}

// Every proton sits on an oxygen-oxygen bond at the O-H distance from its
// donor, every bond carries one proton and every oxygen donates two.
TEST(IceLattice, ProtonsObeyIceRules) {
  const LatticeSpec s = small_ice(3, 2.5);
  const ProtonSet p = build_ice_lattice(s, NvPlacement{3.0});
  const double lat = s.a_lattice / std::sqrt(3.0);
  const double vert = s.c_lattice / 8.0;
  const double z_low = 3.0 - s.oh_length * vert / std::hypot(lat, vert);
  const double bond_tilt = std::hypot(lat, vert), bond_vert = 3.0 * s.c_lattice / 8.0;

  bool matched = false;
  for (bool swap : {false, true}) {
    const auto ox = oracle::wurtzite_oxygens(s.a_lattice, s.c_lattice, s.n_layers, z_low, 4.0, swap);
    std::vector<int> donated(ox.size(), 0);
    bool all_on_bonds = true;
    std::map<std::pair<std::size_t, std::size_t>, int> bond_use;
    for (const Vec3& h : p.positions) {
      int donors = 0;
      for (std::size_t i = 0; i < ox.size() && all_on_bonds; ++i) {
        if (std::abs((h - ox[i].r).norm() - s.oh_length) > 1e-9) continue;
        const Vec3 dir = (h - ox[i].r).normalized();
        bool on_bond = false;
        for (std::size_t j = 0; j < ox.size(); ++j) {
          const Vec3 b = ox[j].r - ox[i].r;
          const double len = b.norm();
          const bool bonded = std::abs(len - bond_tilt) < 1e-9 || std::abs(len - bond_vert) < 1e-9;
          if (bonded && (b / len - dir).norm() < 1e-9) {
            on_bond = true;
            ++bond_use[{std::min(i, j), std::max(i, j)}];
          }
        }
        // Vertical bonds of the top sheet point into empty space.
        const bool dangling = ox[i].bilayer == s.n_layers - 1 && (dir - Vec3(0, 0, 1)).norm() < 1e-9;
        if (on_bond || dangling) {
          ++donors;
          ++donated[i];
        }
      }
      if (donors != 1) all_on_bonds = false;
    }
    if (!all_on_bonds) continue;
    matched = true;
    for (std::size_t i = 0; i < ox.size(); ++i) {
      if (Eigen::Vector2d(ox[i].r.x(), ox[i].r.y()).norm() < 1.8) {
        EXPECT_EQ(donated[i], 2) << "oxygen " << i;
      }
    }
    for (const auto& [bond, uses] : bond_use) EXPECT_EQ(uses, 1);
  }
  EXPECT_TRUE(matched);
}

TEST(IceLattice, ResourceGuard) {
  LatticeSpec s = small_ice(33, 12.0);
  s.max_protons = 1000;
  EXPECT_THROW(build_ice_lattice(s, NvPlacement{3.0}), ResourceError);
}

TEST(IceLattice, RejectsBadGeometry) {
  LatticeSpec s;
  s.n_layers = 0;
  EXPECT_THROW(build_ice_lattice(s, NvPlacement{3.0}), InvalidArgument);
  s.n_layers = 1;
  EXPECT_THROW(build_ice_lattice(s, NvPlacement{0.0}), InvalidArgument);
}

TEST(LayeredLattice, SheetDensityAndSpacing) {
  LatticeSpec s;
  s.model = LatticeModel::layered;
  s.n_layers = 4;
  s.lateral_radius = 10.0;
  const ProtonSet p = build_ice_lattice(s, NvPlacement{3.0});
  const auto rows = layer_table(p, LayerGrouping::plane);
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_NEAR(rows[k].z, 3.0 + 0.3678 * static_cast<double>(k), 1e-12);
    EXPECT_NEAR(static_cast<double>(rows[k].count) / (pi * 100.0), 15.2, 0.15);
  }
}

TEST(Truncation, KeepsHemisphereOnly) {
  const ProtonSet p = build_ice_lattice(small_ice(9, 8.0), NvPlacement{3.0});
  const ProtonSet t = truncate_to_volume(p, DetectionVolume{6.0});
  ASSERT_FALSE(t.empty());
  std::size_t inside = 0;
  for (const Vec3& r : p.positions) inside += r.norm() <= 6.0 ? 1 : 0;
  EXPECT_EQ(t.size(), inside);
  for (const Vec3& r : t.positions) EXPECT_LE(r.norm(), 6.0);
  EXPECT_EQ(t.layers.size(), p.layers.size());
}

TEST(InteractionFraction, MeasuresAgreeOnTrivialCases) {
  const ProtonSet p = build_ice_lattice(small_ice(4, 6.0), NvPlacement{3.0});
  const PhysicalConstants c;
  const auto g = [&](const Vec3& r) { return nv_coupling(r, c); };
  for (auto m : {InteractionMeasure::root_sum_square, InteractionMeasure::magnitude, InteractionMeasure::signed_sum})
    EXPECT_NEAR(interaction_fraction(p, 50.0, 50.0, g, m), 1.0, 1e-12);
  const double f = interaction_fraction(p, 4.0, 6.0, g);
  EXPECT_GT(f, 0.0);
  EXPECT_LT(f, 1.0);
  EXPECT_THROW(interaction_fraction(p, 6.0, 4.0, g), InvalidArgument);
}

TEST(InteractionFraction, RootSumSquareByHand) {
  ProtonSet p;
  p.positions = {Vec3(0, 0, 3), Vec3(1, 0, 3), Vec3(0, 0, 8)};
  p.layer_index = {0, 0, 0};
  p.layers = {{3.0, 1.0, 0}};
  const PhysicalConstants c;
  const auto g = [&](const Vec3& r) { return nv_coupling(r, c); };
  const double g1 = std::abs(nv_coupling(p.positions[1], c));
  const double g2 = std::abs(nv_coupling(p.positions[2], c));
  // the proton straight above the NV has no transverse coupling
  EXPECT_NEAR(std::abs(nv_coupling(p.positions[0], c)), 0.0, 1e-15);
  EXPECT_NEAR(interaction_fraction(p, 4.0, 9.0, g), g1 / std::sqrt(g1 * g1 + g2 * g2), 1e-14);
}

TEST(ProtonIo, RoundTripsExactly) {
  const ProtonSet p = build_ice_lattice(small_ice(2, 3.0), NvPlacement{3.0});
  std::stringstream ss;
  write_protons(ss, p, "{\"scenario\":\"solid\"}");
  const ProtonSet q = read_protons(ss);
  ASSERT_EQ(q.size(), p.size());
  ASSERT_EQ(q.layers.size(), p.layers.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(q.positions[i], p.positions[i]);
    EXPECT_EQ(q.layer_index[i], p.layer_index[i]);
  }
  EXPECT_EQ(q.lateral_radius, p.lateral_radius);
}
