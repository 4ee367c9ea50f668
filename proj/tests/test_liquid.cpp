#include <gtest/gtest.h>

#include "nvsense/liquid.hpp"
#include "oracles.hpp"

using namespace nvsense;

namespace {

CorrelationFunction sampled_exponential(double c0, double tau_c, double step, std::size_t n) {
  CorrelationFunction f;
  for (std::size_t k = 0; k < n; ++k) {
    f.lag.push_back(step * static_cast<double>(k));
    f.value.push_back(c0 * std::exp(-f.lag.back() / tau_c));
  }
  f.tau_c = tau_c;
  f.variance = c0;
  return f;
}

}  // namespace

TEST(Diffusion, InterfaceProfile) {
  DiffusionModel m;
  m.kind = DiffusionKind::interface;
  m.d_w = 2000;
  m.d_min = 400;
  m.kappa = 1.0;
  m.z_prime = 4.0;
  EXPECT_NEAR(interface_diffusion(4.0, m), 1200.0, 1e-12);
  EXPECT_NEAR(interface_diffusion(40.0, m), 2000.0, 1e-9);
  EXPECT_NEAR(interface_diffusion(-40.0, m), 400.0, 1e-9);
  EXPECT_NEAR(diffusion_slope(4.0, m), 800.0, 1e-9);
  const double h = 1e-5;
  EXPECT_NEAR(diffusion_slope(4.7, m), (interface_diffusion(4.7 + h, m) - interface_diffusion(4.7 - h, m)) / (2 * h), 1e-4);
  DiffusionModel u;
  EXPECT_THROW(interface_diffusion(1.0, u), InvalidArgument);
  EXPECT_EQ(diffusion_slope(1.0, u), 0.0);
}

TEST(Diffusion, SphericalCapVolume) {
  EXPECT_NEAR(liquid_volume({3.0, 6.0}), 45.0 * pi, 1e-12);
  EXPECT_NEAR(liquid_volume({0.0, 6.0}), 2.0 / 3.0 * pi * 216.0, 1e-12);
  EXPECT_EQ(liquid_volume({7.0, 6.0}), 0.0);
}

TEST(Trajectories, ShortTimeMeanSquareDisplacement) {
  DiffusionModel m;
  TrajectoryOptions o;
  o.n_traj = 40000;
  o.n_samples = 2;
  o.dt = 6.25e-7;
  o.seed = 11;
  o.threads = 4;
  const auto ens = simulate_trajectories(m, LiquidVolume{3.0, 6.0}, o);
  double s = 0;
  for (std::size_t j = 0; j < ens.n_traj; ++j) {
    const Vec3 d = ens.position(j, 1) - ens.position(j, 0);
    s += d.x() * d.x() + d.y() * d.y();
  }
  const double msd = s / (2.0 * static_cast<double>(ens.n_traj));
  EXPECT_NEAR(msd / (2.0 * m.d_w * o.dt), 1.0, 0.03);
}

TEST(Trajectories, StayAboveTheFloor) {
  DiffusionModel m;
  TrajectoryOptions o;
  o.n_traj = 2000;
  o.n_samples = 50;
  o.dt = 2e-4;
  const auto ens = simulate_trajectories(m, LiquidVolume{3.0, 6.0}, o);
  for (std::size_t j = 0; j < ens.n_traj; ++j) {
    EXPECT_LE(ens.position(j, 0).norm(), 6.0);
    for (std::size_t k = 0; k < ens.n_samples; ++k) ASSERT_GE(ens.position(j, k).z(), 3.0);
  }
}

// With the drift term the uniform density stays uniform across the slow layer.
TEST(Trajectories, InterfaceModelKeepsUniformDensity) {
  DiffusionModel m;
  m.kind = DiffusionKind::interface;
  m.d_min = 400;
  m.kappa = 1.0;
  m.z_prime = 4.0;
  TrajectoryOptions o;
  o.n_traj = 100000;
  o.n_samples = 2;
  o.dt = 1.5625e-5;
  o.sample_every = 1280;
  o.seed = 3;
  o.threads = 8;
  const auto ens = simulate_trajectories(m, LiquidVolume{3.0, 50.0}, o);
  double near = 0, far = 0;
  for (std::size_t j = 0; j < ens.n_traj; ++j) {
    const double z = ens.position(j, 1).z();
    near += (z >= 3.0 && z < 3.5) ? 1 : 0;
    far += (z >= 6.0 && z < 6.5) ? 1 : 0;
  }
  ASSERT_GT(far, 500);
  EXPECT_NEAR(near / far, 1.0, 0.12);
}

TEST(Trajectories, IndependentOfThreadCount) {
  DiffusionModel m;
  TrajectoryOptions o;
  o.n_traj = 300;
  o.n_samples = 20;
  o.dt = 1e-3;
  o.seed = 99;
  o.threads = 1;
  const auto a = simulate_trajectories(m, LiquidVolume{3.0, 6.0}, o);
  o.threads = 7;
  const auto b = simulate_trajectories(m, LiquidVolume{3.0, 6.0}, o);
  EXPECT_EQ(a.xyz, b.xyz);
  o.seed = 100;
  const auto c = simulate_trajectories(m, LiquidVolume{3.0, 6.0}, o);
  EXPECT_NE(a.xyz, c.xyz);
}

TEST(Correlation, OrnsteinUhlenbeckProcess) {
  const double step = 0.1, tau = 2.0, var = 3.0;
  const auto series = oracle::ou_series(400, 2000, step, tau, var, 5);
  CorrelationOptions opt;
  opt.n_lags = 120;
  opt.origins = TimeOrigins::all;
  const auto f = estimate_series_correlation(series, step, opt);
  EXPECT_NEAR(f.tau_c / tau, 1.0, 0.03);
  for (std::size_t k : {0u, 10u, 20u, 40u}) {
    EXPECT_NEAR(f.value[k], var * std::exp(-f.lag[k] / tau), 0.04 * var) << k;
    EXPECT_GT(f.stderr_value[k], 0.0);
  }
  EXPECT_EQ(f.block_value.size(), 16u);
}

TEST(Correlation, FitRecoversExactExponential) {
  const auto f = sampled_exponential(2.5, 0.37, 0.01, 300);
  EXPECT_NEAR(fit_correlation_time(f.lag, f.value), 0.37, 1e-7);
}

TEST(Correlation, AccumulatorMergeIsOrderFree) {
  CorrelationAccumulator a(Component::z, 3, 0.1), b(Component::z, 3, 0.1), all(Component::z, 3, 0.1);
  const double p[4][3] = {{1.0, 0.5, 0.2}, {2.0, 0.9, 0.1}, {1.5, 0.7, 0.3}, {0.8, 0.2, 0.05}};
  for (int i = 0; i < 4; ++i) {
    (i < 2 ? a : b).add(static_cast<std::uint64_t>(i), p[i]);
    all.add(static_cast<std::uint64_t>(i), p[i]);
  }
  a.merge(b);
  const auto x = a.finish(), y = all.finish();
  for (std::size_t k = 0; k < x.value.size(); ++k) EXPECT_NEAR(x.value[k], y.value[k], 1e-15);
  EXPECT_EQ(x.n_trajectories, 4u);
}

TEST(Rates, LorentzianMarkovLimit) {
  const double c0 = 1.7e-5, tau = 1.4e-3;
  const auto f = sampled_exponential(c0, tau, tau / 200.0, 4001);
  for (double w : {0.0, 2.0 * pi, 500.0, 2000.0}) {
    const double lorentz = c0 * tau / (1.0 + w * w * tau * tau);
    EXPECT_NEAR(rate_gamma(f, w, markov_time) / lorentz, 1.0, 1e-4) << w;
    const double shift = c0 * w * tau * tau / (1.0 + w * w * tau * tau);
    EXPECT_NEAR(shift_omega(f, w, markov_time), shift, 1e-4 * lorentz) << w;
  }
}

TEST(Rates, FiniteTimeAndExponentialTail) {
  const double c0 = 1.0, tau = 1.0;
  const auto f = sampled_exponential(c0, tau, 0.01, 301);  // grid ends at 3 tau
  for (double t : {0.5, 2.0, 7.0, 30.0}) {
    for (double w : {0.0, 1.3}) {
      const auto ref = oracle::exponential_transform(c0, tau, w, t);
      EXPECT_NEAR(rate_gamma(f, w, t), ref.real(), 2e-5) << t << " " << w;
      EXPECT_NEAR(shift_omega(f, w, t), ref.imag(), 2e-5) << t << " " << w;
    }
  }
  EXPECT_EQ(rate_gamma(f, 1.0, 0.0), 0.0);
}

TEST(Rates, NyquistGuard) {
  const auto f = sampled_exponential(1.0, 1.0, 0.1, 50);
  EXPECT_THROW(rate_gamma(f, 40.0, markov_time), InvalidArgument);
}

TEST(Rates, DepolarizationCombination) {
  EXPECT_NEAR(depolarization_alpha(1.0, 2.0, 3.0, 8.0), 12.0, 1e-15);
  const auto cx = sampled_exponential(2e-5, 1e-3, 2.5e-5, 801);
  const auto cz = sampled_exponential(4e-5, 1.6e-3, 2.5e-5, 801);
  const double w = 2.0 * pi;
  const RateSet r = evaluate_rates(cx, cz, w, w, 100.0, markov_time);
  EXPECT_NEAR(r.gamma_x_delta, rate_gamma(cx, 0.0, markov_time), 1e-20);
  EXPECT_NEAR(r.gamma_x_sum, rate_gamma(cx, 2.0 * w, markov_time), 1e-20);
  EXPECT_NEAR(r.gamma_z_omega, rate_gamma(cz, w, markov_time), 1e-20);
  EXPECT_NEAR(r.alpha, 25.0 * (r.gamma_x_delta + r.gamma_x_sum + r.gamma_z_omega), 1e-18);
}

TEST(Rates, TableInterpolatesAndSaturates) {
  const auto cx = sampled_exponential(2e-5, 1e-3, 2.5e-5, 801);
  const auto cz = sampled_exponential(4e-5, 1.6e-3, 2.5e-5, 801);
  const auto tab = build_rate_table(cx, cz, 2.0 * pi, 2.0 * pi, 1e4, {0.0, 1e-3, 1e-2, 1.0});
  EXPECT_EQ(tab.alpha(0.0), 0.0);
  EXPECT_NEAR(tab.alpha(5.0), tab.rates.back().alpha, 1e-18);
  EXPECT_NEAR(tab.rates.back().alpha, tab.markov.alpha, 1e-6 * tab.markov.alpha);
  const double mid = tab.alpha(5e-4);
  EXPECT_NEAR(mid, 0.5 * tab.rates[1].alpha, 1e-18);
}

TEST(Population, ClosedFormAndIntegratorAgree) {
  const std::vector<double> ts{0.0, 100.0, 1000.0, 5000.0};
  const auto a = populate_liquid(4e-4, 1.0, ts);
  const auto b = populate_liquid([](double) { return 4e-4; }, 1.0, ts, 10.0);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    EXPECT_NEAR(a[k], 0.5 + 0.5 * std::exp(-4e-4 * ts[k]), 1e-15);
    EXPECT_NEAR(b[k], a[k], 1e-12);
  }
  EXPECT_THROW(populate_liquid(1.0, 1.5, ts), InvalidArgument);
}

TEST(Pipeline, ReproducibleAcrossThreadsAndBatches) {
  DiffusionModel m;
  LiquidSampling s;
  s.n_traj = 600;
  s.batch = 200;
  s.seed = 4;
  s.threads = 1;
  const PhysicalConstants c;
  const auto a = sample_liquid_correlations(m, LiquidVolume{3.0, 6.0}, c, s);
  s.threads = 5;
  s.batch = 600;
  const auto b = sample_liquid_correlations(m, LiquidVolume{3.0, 6.0}, c, s);
  EXPECT_EQ(a.x.value, b.x.value);
  EXPECT_EQ(a.z.value, b.z.value);
  EXPECT_EQ(a.x.lag.size(), 401u);
  EXPECT_NEAR(a.x.lag_step(), 0.05 * 9.0 / 2000.0, 1e-18);
  EXPECT_GT(hyperfine_correlation_time(a.x, a.z), 0.0);
}
