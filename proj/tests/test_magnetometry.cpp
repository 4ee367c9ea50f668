#include <gtest/gtest.h>

#include "nvsense/magnetometry.hpp"

using namespace nvsense;

namespace {

std::vector<double> lorentz_dips(const std::vector<double>& w, const std::vector<std::array<double, 3>>& dips) {
  std::vector<double> n(w.size(), 1.0);
  for (std::size_t i = 0; i < w.size(); ++i)
    for (const auto& [c, depth, width] : dips) n[i] -= depth / (1.0 + std::pow((w[i] - c) / width, 2));
  return n;
}

ProtonSet layered(int sheets, double radius, double detection) {
  LatticeSpec s;
  s.model = LatticeModel::layered;
  s.n_layers = sheets;
  s.lateral_radius = radius;
  return truncate_to_volume(build_ice_lattice(s, NvPlacement{3.0}), DetectionVolume{detection});
}

}  // namespace

TEST(DipSearch, RefinesMinimaBetweenGridPoints) {
  const auto w = linear_grid(0.0, 10.0, 201);
  const auto n = lorentz_dips(w, {{{3.013, 0.4, 0.3}}, {{7.21, 0.25, 0.3}}});
  const auto d = find_dips(w, n, 0.95, 0.5);
  ASSERT_EQ(d.peaks.size(), 2u);
  EXPECT_NEAR(d.peaks[0].omega, 3.013, 2e-3);
  EXPECT_NEAR(d.peaks[1].omega, 7.21, 2e-3);
  EXPECT_NEAR(d.peaks[0].depth, 0.4 + 0.25 / (1 + std::pow(4.197 / 0.3, 2)), 2e-3);
  EXPECT_FALSE(d.coarse_grid);
}

TEST(DipSearch, DropsSidebandsAndShallowMinima) {
  const auto w = linear_grid(0.0, 10.0, 401);
  const auto n = lorentz_dips(w, {{{5.0, 0.5, 0.1}}, {{5.6, 0.1, 0.05}}, {{8.0, 0.03, 0.1}}});
  const auto d = find_dips(w, n, 0.95, 1.0);
  ASSERT_EQ(d.peaks.size(), 1u);
  EXPECT_NEAR(d.peaks[0].omega, 5.0, 1e-3);
  EXPECT_EQ(find_dips(w, n, 0.95, 0.3).peaks.size(), 2u);
}

TEST(DipSearch, FlagsCoarseGrid) {
  const auto w = linear_grid(0.0, 10.0, 21);
  const auto n = lorentz_dips(w, {{{5.1, 0.5, 0.05}}});
  EXPECT_TRUE(find_dips(w, n, 0.95, 0.1).coarse_grid);
}

TEST(Envelope, BetaMatchesDenseSheetSum) {
  const PhysicalConstants c;
  const ProtonSet p = layered(1, 80.0, 1e9);
  std::vector<cplx> g = nv_couplings(p, c);
  const double direct = collective_coupling(g);
  EXPECT_NEAR(direct / (std::sqrt(15.2) * beta_factor(c) / 9.0), 1.0, 5e-3);
}

TEST(Envelope, LimitsOfTheCosineForm) {
  EnvelopeModel m{0.1, 15.2};
  const double z = 3.0;
  const double tau_half = 0.5 * pi * z * z / (std::sqrt(15.2) * 0.1);
  EXPECT_NEAR(envelope(m, z, tau_half), 0.5, 1e-12);
  EXPECT_NEAR(envelope(m, z, 2.0 * tau_half), 1.0, 1e-12);
  EXPECT_NEAR(envelope(m, 100.0, 1.0), 1.0, 1e-6);
  EXPECT_THROW(envelope(m, 0.0, 1.0), InvalidArgument);
}

TEST(RabiScan, SingleProtonDipAtItsLarmorFrequency) {
  const PhysicalConstants c;
  ProtonSet p;
  p.positions = {Vec3(1.5, 0.0, 3.2)};
  p.layer_index = {0};
  p.layers = {{3.2, 1.0, 0}};
  const FieldProfile f{field_for_larmor_mhz(1.0, c), 60.0};
  CouplingOptions co;
  co.larmor = LarmorModel::gradient;
  const auto cs = assemble_couplings(p, f, c, co);
  const double target = gradient_larmor(3.2, f, c);
  const double g = std::abs(cs.g[0]);
  ScanConfig sc;
  sc.field = f;
  sc.tau = pi / (2.0 * g);
  sc.omega = linear_grid(target - 0.05, target + 0.05, 301);
  const auto sp = rabi_scan(cs, sc, c);
  ASSERT_GE(sp.peaks.size(), 1u);
  const auto deepest = *std::min_element(sp.peaks.begin(), sp.peaks.end(),
                                         [](const Peak& a, const Peak& b) { return a.n < b.n; });
  EXPECT_NEAR(deepest.omega, target, 1e-4);
  EXPECT_NEAR(deepest.z_layer, 3.2, 1e-4 / (c.gamma_h * 60.0));
  EXPECT_NEAR(deepest.n, 0.5, 1e-3);
}

TEST(RabiScan, DenseAndChainEnginesAgree) {
  const PhysicalConstants c;
  const ProtonSet p = layered(2, 4.0, 3.5);
  const FieldProfile f{field_for_larmor_mhz(1.0, c), 60.0};
  CouplingOptions co;
  co.larmor = LarmorModel::gradient;
  const auto cs = assemble_couplings(p, f, c, co);
  ScanConfig sc;
  sc.field = f;
  sc.omega = linear_grid(gradient_larmor(2.6, f, c), gradient_larmor(3.8, f, c), 60);
  sc.engine = ScanEngine::dense;
  sc.threads = 4;
  const auto a = rabi_scan(cs, sc, c);
  sc.engine = ScanEngine::chain;
  const auto b = rabi_scan(cs, sc, c);
  for (std::size_t i = 0; i < a.n.size(); ++i) EXPECT_NEAR(a.n[i], b.n[i], 1e-9);
  EXPECT_EQ(a.peaks.size(), b.peaks.size());
}

TEST(RabiScan, RejectsBadGrids) {
  const PhysicalConstants c;
  CouplingSet cs;
  cs.g = {cplx(0.01, 0)};
  cs.omega = {6.0};
  cs.h = Eigen::MatrixXd::Zero(1, 1);
  ScanConfig sc;
  sc.omega = {1.0, 3.0, 2.0};
  EXPECT_THROW(rabi_scan(cs, sc, c), InvalidArgument);
  sc.omega = {1.0, 2.0};
  EXPECT_THROW(rabi_scan(cs, sc, c), InvalidArgument);
}

TEST(Resolution, RatioByHand) {
  const PhysicalConstants c;
  const ProtonSet p = layered(3, 8.0, 6.0);
  const auto g = nv_couplings(p, c);
  const FieldProfile f{234.0, 60.0};
  const auto layers = layer_couplings(p, g, LayerGrouping::stack);
  ASSERT_EQ(layers.size(), 3u);
  const auto rep = resolution_check(p, g, f, c);
  ASSERT_EQ(rep.ratio.size(), 2u);
  const double expect = c.gamma_h * 60.0 * 0.3678 / std::max(layers[0].coupling, layers[1].coupling);
  EXPECT_NEAR(rep.ratio[0], expect, 1e-9 * expect);
  EXPECT_EQ(rep.pass, rep.ratio[0] >= 5.0 && rep.ratio[1] >= 5.0);
}
