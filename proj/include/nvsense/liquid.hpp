#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "nvsense/couplings.hpp"
#include "nvsense/error.hpp"
#include "nvsense/lattice.hpp"
#include "nvsense/parallel.hpp"
#include "nvsense/rng.hpp"
#include "nvsense/units.hpp"

namespace nvsense {

enum class DiffusionKind { uniform, interface };

struct DiffusionModel {
  DiffusionKind kind = DiffusionKind::uniform;
  double d_w = 2000.0;   // nm^2/us
  double d_min = 400.0;  // nm^2/us, interface only
  double kappa = 1.0;    // nm^-1
  double z_prime = 0.0;  // nm, sigmoid midpoint

  void validate() const {
    if (!(d_w > 0)) throw InvalidArgument("D_W must be positive");
    if (kind == DiffusionKind::interface) {
      if (!(d_min > 0 && d_min <= d_w)) throw InvalidArgument("interface model needs 0 < D_min <= D_W");
      if (!(kappa > 0)) throw InvalidArgument("interface model needs kappa > 0");
    }
  }
};

// D(z) = D_min + (D_W - D_min) / (1 + exp(-2 kappa (z - z')))
inline double interface_diffusion(double z, const DiffusionModel& m) {
  if (m.kind != DiffusionKind::interface) throw InvalidArgument("interface_diffusion needs an interface model");
  return m.d_min + (m.d_w - m.d_min) / (1.0 + std::exp(-2.0 * m.kappa * (z - m.z_prime)));
}

inline double diffusion_at(double z, const DiffusionModel& m) {
  return m.kind == DiffusionKind::uniform ? m.d_w : interface_diffusion(z, m);
}

inline double diffusion_slope(double z, const DiffusionModel& m) {
  if (m.kind == DiffusionKind::uniform) return 0.0;
  const double e = std::exp(-2.0 * m.kappa * (z - m.z_prime));
  return (m.d_w - m.d_min) * 2.0 * m.kappa * e / ((1.0 + e) * (1.0 + e));
}

// Liquid above a flat floor; trajectories start uniformly inside the
// hemisphere |r| <= radius above the floor.
struct LiquidVolume {
  double floor = 3.0;
  double radius = 6.0;
};

inline double liquid_volume(const LiquidVolume& v) {
  if (v.floor >= v.radius) return 0.0;
  const double h = v.radius - std::max(v.floor, 0.0);
  return pi * h * h * (3.0 * v.radius - h) / 3.0;
}

struct TrajectoryOptions {
  std::size_t n_traj = 1000;
  double dt = 2.25e-4;          // us, integration step
  std::size_t sample_every = 1; // integration steps between stored samples
  std::size_t n_samples = 401;  // stored positions per trajectory, including t = 0
  std::uint64_t seed = 1;
  std::uint64_t first_index = 0;  // global index of the first trajectory (RNG stream)
  unsigned threads = 1;

  double t_total() const { return dt * static_cast<double>(sample_every * (n_samples - 1)); }
  double sample_interval() const { return dt * static_cast<double>(sample_every); }
};

struct TrajectoryEnsemble {
  std::size_t n_traj = 0;
  std::size_t n_samples = 0;
  double sample_interval = 0;
  std::uint64_t first_index = 0;
  std::vector<double> xyz;  // [traj][sample][3]

  Vec3 position(std::size_t traj, std::size_t k) const {
    const double* p = &xyz[3 * (traj * n_samples + k)];
    return Vec3(p[0], p[1], p[2]);
  }
};

namespace detail {

inline Vec3 sample_in_volume(const LiquidVolume& v, std::mt19937_64& g) {
  const double lo = std::max(v.floor, 0.0);
  for (;;) {
    const double x = v.radius * (2.0 * Gaussian::uniform(g) - 1.0);
    const double y = v.radius * (2.0 * Gaussian::uniform(g) - 1.0);
    const double z = lo + (v.radius - lo) * Gaussian::uniform(g);
    if (x * x + y * y + z * z <= v.radius * v.radius) return Vec3(x, y, z);
  }
}

}  // namespace detail

// Reflected Brownian paths above the liquid floor. For uniform D a step is the
// exact transition of reflected Brownian motion; for the interface profile the
// Ito drift D'(z) keeps the uniform density stationary.
inline TrajectoryEnsemble simulate_trajectories(const DiffusionModel& model, const LiquidVolume& vol,
                                                const TrajectoryOptions& opt) {
  model.validate();
  if (!(opt.dt > 0)) throw InvalidArgument("dt must be positive");
  if (opt.n_traj == 0) throw InvalidArgument("n_traj must be positive");
  if (opt.n_samples < 2 || opt.sample_every == 0) throw InvalidArgument("T_total must be positive");
  if (liquid_volume(vol) <= 0) throw InvalidArgument("liquid volume is empty");
  TrajectoryEnsemble ens;
  ens.n_traj = opt.n_traj;
  ens.n_samples = opt.n_samples;
  ens.sample_interval = opt.sample_interval();
  ens.first_index = opt.first_index;
  ens.xyz.resize(3 * opt.n_traj * opt.n_samples);
  const bool uniform = model.kind == DiffusionKind::uniform;
  const double sig_u = std::sqrt(2.0 * model.d_w * opt.dt);

  parallel_for(opt.n_traj, opt.threads, [&](std::size_t j) {
    auto rng = stream_rng(opt.seed, opt.first_index + j);
    Gaussian normal;
    Vec3 p = detail::sample_in_volume(vol, rng);
    double* out = &ens.xyz[3 * j * opt.n_samples];
    out[0] = p.x();
    out[1] = p.y();
    out[2] = p.z();
    for (std::size_t k = 1; k < opt.n_samples; ++k) {
      for (std::size_t s = 0; s < opt.sample_every; ++s) {
        const double xi = normal(rng), eta = normal(rng), zeta = normal(rng);
        if (uniform) {
          p += sig_u * Vec3(xi, eta, zeta);
        } else {
          const double d = diffusion_at(p.z(), model);
          const double sig = std::sqrt(2.0 * d * opt.dt);
          p.x() += sig * xi;
          p.y() += sig * eta;
          p.z() += diffusion_slope(p.z(), model) * opt.dt + sig * zeta;
        }
        if (p.z() < vol.floor) p.z() = 2.0 * vol.floor - p.z();
      }
      out[3 * k] = p.x();
      out[3 * k + 1] = p.y();
      out[3 * k + 2] = p.z();
    }
  });
  return ens;
}

enum class Component { x, z };

inline const char* to_string(Component c) { return c == Component::x ? "x" : "z"; }

struct CorrelationFunction {
  Component component = Component::x;
  std::vector<double> lag;    // us
  std::vector<double> value;  // rad^2 us^-2
  std::vector<double> stderr_value;
  std::vector<std::vector<double>> block_value;  // batch means used for rate errors
  std::size_t n_trajectories = 0;
  double tau_c = 0;  // us
  double variance = 0;

  double lag_step() const { return lag.size() > 1 ? lag[1] - lag[0] : 0.0; }
  double max_lag() const { return lag.empty() ? 0.0 : lag.back(); }
  // Last value relative to the variance; the grid is long enough when small.
  double residual_fraction() const { return variance > 0 ? std::abs(value.back()) / variance : 0.0; }
};

// Least-squares exponential C0 exp(-tau / tau_c) through the sampled values.
inline double fit_correlation_time(const std::vector<double>& lag, const std::vector<double>& value) {
  if (lag.size() < 3 || !(value[0] > 0)) throw NumericalError("cannot fit a correlation time");
  const double c0 = value[0];
  const auto cost = [&](double lt) {
    const double tc = std::exp(lt);
    double s = 0;
    for (std::size_t k = 0; k < lag.size(); ++k) {
      const double r = value[k] - c0 * std::exp(-lag[k] / tc);
      s += r * r;
    }
    return s;
  };
  double a = std::log((lag[1] - lag[0]) * 0.1), b = std::log(lag.back() * 10.0);
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = cost(x1), f2 = cost(x2);
  for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = cost(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = cost(x2);
    }
  }
  return std::exp(0.5 * (a + b));
}

enum class TimeOrigins {
  first,  // only t = 0; samples start from the stationary distribution
  all,    // every origin after burn-in; for long stationary series
};

// Streaming estimator. Each series contributes one estimate per lag; sums
// are taken in series-index order so the result does not depend on threads.
class CorrelationAccumulator {
 public:
  CorrelationAccumulator(Component c, std::size_t n_lags, double lag_step, std::size_t n_blocks = 16)
      : component_(c), n_lags_(n_lags), lag_step_(lag_step), n_blocks_(std::max<std::size_t>(n_blocks, 1)),
        sum_(n_lags, 0.0), sum2_(n_lags, 0.0), block_sum_(n_blocks_, std::vector<double>(n_lags, 0.0)),
        block_n_(n_blocks_, 0) {
    if (n_lags < 2) throw InvalidArgument("need at least two lags");
  }

  std::size_t n_lags() const { return n_lags_; }
  std::size_t count() const { return n_; }

  // Per-series lag products, one value per lag.
  void add(std::uint64_t series_index, const double* products) {
    const std::size_t b = series_index % n_blocks_;
    for (std::size_t k = 0; k < n_lags_; ++k) {
      sum_[k] += products[k];
      sum2_[k] += products[k] * products[k];
      block_sum_[b][k] += products[k];
    }
    ++block_n_[b];
    ++n_;
  }

  void merge(const CorrelationAccumulator& o) {
    if (o.n_lags_ != n_lags_ || o.n_blocks_ != n_blocks_) throw InvalidArgument("accumulator shapes differ");
    for (std::size_t k = 0; k < n_lags_; ++k) {
      sum_[k] += o.sum_[k];
      sum2_[k] += o.sum2_[k];
    }
    for (std::size_t b = 0; b < n_blocks_; ++b) {
      for (std::size_t k = 0; k < n_lags_; ++k) block_sum_[b][k] += o.block_sum_[b][k];
      block_n_[b] += o.block_n_[b];
    }
    n_ += o.n_;
  }

  CorrelationFunction finish() const {
    if (n_ < 2) throw NumericalError("too few trajectories for a correlation estimate");
    CorrelationFunction cf;
    cf.component = component_;
    cf.n_trajectories = n_;
    const double n = static_cast<double>(n_);
    for (std::size_t k = 0; k < n_lags_; ++k) {
      cf.lag.push_back(lag_step_ * static_cast<double>(k));
      const double m = sum_[k] / n;
      cf.value.push_back(m);
      cf.stderr_value.push_back(std::sqrt(std::max(0.0, sum2_[k] / n - m * m) / (n - 1.0)));
    }
    for (std::size_t b = 0; b < n_blocks_; ++b) {
      if (block_n_[b] == 0) continue;
      std::vector<double> v(n_lags_);
      for (std::size_t k = 0; k < n_lags_; ++k) v[k] = block_sum_[b][k] / static_cast<double>(block_n_[b]);
      cf.block_value.push_back(std::move(v));
    }
    cf.variance = cf.value[0];
    cf.tau_c = fit_correlation_time(cf.lag, cf.value);
    return cf;
  }

 private:
  Component component_;
  std::size_t n_lags_;
  double lag_step_;
  std::size_t n_blocks_;
  std::vector<double> sum_, sum2_;
  std::vector<std::vector<double>> block_sum_;
  std::vector<std::size_t> block_n_;
  std::size_t n_ = 0;
};

// Lag products of one scalar or paired series, averaged over time origins.
// `a` holds n_samples values per channel, channels interleaved.
inline void lag_products(const double* a, std::size_t channels, std::size_t n_samples, std::size_t n_lags,
                         TimeOrigins origins, std::size_t burn_in, double* out) {
  if (origins == TimeOrigins::first) {
    for (std::size_t k = 0; k < n_lags; ++k) {
      double s = 0;
      for (std::size_t c = 0; c < channels; ++c) s += a[k * channels + c] * a[c];
      out[k] = s / static_cast<double>(channels);
    }
    return;
  }
  for (std::size_t k = 0; k < n_lags; ++k) {
    double s = 0;
    std::size_t m = 0;
    for (std::size_t o = burn_in; o + k < n_samples; ++o, ++m) {
      for (std::size_t c = 0; c < channels; ++c) s += a[(o + k) * channels + c] * a[o * channels + c];
    }
    out[k] = s / static_cast<double>(m * channels);
  }
}

struct CorrelationOptions {
  std::size_t n_lags = 0;  // 0 uses every stored sample
  TimeOrigins origins = TimeOrigins::first;
  std::size_t burn_in = 0;  // samples skipped before the first origin (all-origins mode)
  std::size_t n_blocks = 16;
  unsigned threads = 1;
};

inline void accumulate_correlation(const TrajectoryEnsemble& ens, Component comp, const PhysicalConstants& consts,
                                   const CorrelationOptions& opt, CorrelationAccumulator& acc) {
  const std::size_t n_lags = acc.n_lags();
  const std::size_t needed = opt.origins == TimeOrigins::first ? n_lags : opt.burn_in + n_lags;
  if (needed > ens.n_samples) throw NumericalError("too few samples for the requested lag grid");
  const std::size_t ch = comp == Component::x ? 2 : 1;
  std::vector<double> prod(ens.n_traj * n_lags);
  parallel_for(ens.n_traj, opt.threads, [&](std::size_t j) {
    std::vector<double> a(ens.n_samples * ch);
    for (std::size_t k = 0; k < ens.n_samples; ++k) {
      const HyperfineVector h = hyperfine_vector(ens.position(j, k), consts);
      if (comp == Component::x) {
        a[2 * k] = h.x;
        a[2 * k + 1] = h.y;
      } else {
        a[k] = h.z;
      }
    }
    lag_products(a.data(), ch, ens.n_samples, n_lags, opt.origins, opt.burn_in, &prod[j * n_lags]);
  });
  for (std::size_t j = 0; j < ens.n_traj; ++j) acc.add(ens.first_index + j, &prod[j * n_lags]);
}

// Transverse correlation uses (A_x A_x + A_y A_y) / 2, which is the same
// function as <A_x A_x> for an axially symmetric ensemble at half the noise.
inline CorrelationFunction estimate_correlation(const TrajectoryEnsemble& ens, Component comp,
                                                const PhysicalConstants& consts, const CorrelationOptions& opt = {}) {
  const std::size_t n_lags = opt.n_lags ? opt.n_lags : ens.n_samples;
  CorrelationAccumulator acc(comp, n_lags, ens.sample_interval, opt.n_blocks);
  accumulate_correlation(ens, comp, consts, opt, acc);
  return acc.finish();
}

// Correlation of arbitrary stationary scalar series, one row per series.
inline CorrelationFunction estimate_series_correlation(const std::vector<std::vector<double>>& series, double step,
                                                       const CorrelationOptions& opt) {
  if (series.empty()) throw NumericalError("no series");
  const std::size_t n_samples = series.front().size();
  const std::size_t n_lags = opt.n_lags ? opt.n_lags : n_samples / 2;
  if (opt.burn_in + n_lags > n_samples) throw NumericalError("too few samples for the requested lag grid");
  CorrelationAccumulator acc(Component::z, n_lags, step, opt.n_blocks);
  std::vector<double> prod(n_lags);
  for (std::size_t j = 0; j < series.size(); ++j) {
    lag_products(series[j].data(), 1, n_samples, n_lags, opt.origins, opt.burn_in, prod.data());
    acc.add(j, prod.data());
  }
  return acc.finish();
}

namespace detail {

// Integral of C(tau) exp(i w tau) over [0, t]. Trapezoid on the sampled grid;
// beyond the last lag the correlation continues as C_last exp(-(tau - T)/tau_c).
inline cplx transform(const std::vector<double>& lag, const std::vector<double>& value, double tau_c, double w,
                      double t) {
  if (!(t >= 0)) throw InvalidArgument("integration time must be >= 0");
  const double step = lag[1] - lag[0];
  if (std::abs(w) > pi / step) throw InvalidArgument("frequency exceeds the lag-grid Nyquist limit");
  const auto f = [&](std::size_t k) { return value[k] * std::exp(cplx(0, w * lag[k])); };
  cplx s = 0;
  const double tmax = lag.back();
  const double upper = std::min(t, tmax);
  std::size_t k = 0;
  for (; k + 1 < lag.size() && lag[k + 1] <= upper; ++k) s += 0.5 * step * (f(k) + f(k + 1));
  if (k + 1 < lag.size() && upper > lag[k]) {
    const double h = upper - lag[k];
    const double frac = h / step;
    const double c_up = value[k] + frac * (value[k + 1] - value[k]);
    s += 0.5 * h * (f(k) + c_up * std::exp(cplx(0, w * upper)));
  }
  if (t > tmax) {
    const cplx rate(-1.0 / tau_c, w);
    const cplx head = value.back() * std::exp(cplx(0, w * tmax));
    if (std::isinf(t)) {
      s += -head / rate;
    } else {
      s += head * (std::exp(rate * (t - tmax)) - 1.0) / rate;
    }
  }
  return s;
}

}  // namespace detail

inline constexpr double markov_time = std::numeric_limits<double>::infinity();

// gamma(w, t) = int_0^t C(tau) cos(w tau) dtau; t = markov_time gives the limit.
inline double rate_gamma(const CorrelationFunction& c, double w, double t) {
  return detail::transform(c.lag, c.value, c.tau_c, w, t).real();
}

inline double shift_omega(const CorrelationFunction& c, double w, double t) {
  return detail::transform(c.lag, c.value, c.tau_c, w, t).imag();
}

// Standard error of rate_gamma from batch means.
inline double rate_gamma_stderr(const CorrelationFunction& c, double w, double t) {
  const std::size_t b = c.block_value.size();
  if (b < 2) return 0.0;
  std::vector<double> r(b);
  double mean = 0;
  for (std::size_t i = 0; i < b; ++i) {
    r[i] = detail::transform(c.lag, c.block_value[i], c.tau_c, w, t).real();
    mean += r[i];
  }
  mean /= static_cast<double>(b);
  double v = 0;
  for (double x : r) v += (x - mean) * (x - mean);
  return std::sqrt(v / static_cast<double>(b - 1) / static_cast<double>(b));
}

inline double depolarization_alpha(double gamma_x_delta, double gamma_x_sum, double gamma_z_omega, double n_spins) {
  if (!(n_spins > 0)) throw InvalidArgument("spin count must be positive");
  return 0.25 * n_spins * (gamma_x_delta + gamma_x_sum + gamma_z_omega);
}

struct RateSet {
  double gamma_x_delta = 0;  // gamma_x(Delta)
  double gamma_x_sum = 0;    // gamma_x(2 Omega - Delta)
  double gamma_z_omega = 0;  // gamma_z(Omega)
  double shift_x_delta = 0;
  double shift_x_sum = 0;
  double shift_z_omega = 0;
  double alpha = 0;
};

inline RateSet evaluate_rates(const CorrelationFunction& cx, const CorrelationFunction& cz, double omega,
                              double omega_n, double n_spins, double t) {
  const double delta = omega - omega_n;
  RateSet r;
  r.gamma_x_delta = rate_gamma(cx, delta, t);
  r.gamma_x_sum = rate_gamma(cx, 2.0 * omega - delta, t);
  r.gamma_z_omega = rate_gamma(cz, omega, t);
  r.shift_x_delta = shift_omega(cx, delta, t);
  r.shift_x_sum = shift_omega(cx, 2.0 * omega - delta, t);
  r.shift_z_omega = shift_omega(cz, omega, t);
  r.alpha = depolarization_alpha(r.gamma_x_delta, r.gamma_x_sum, r.gamma_z_omega, n_spins);
  return r;
}

inline double markov_alpha(const CorrelationFunction& cx, const CorrelationFunction& cz, double omega, double omega_n,
                           double n_spins) {
  return evaluate_rates(cx, cz, omega, omega_n, n_spins, markov_time).alpha;
}

struct RateTable {
  double omega = 0, omega_n = 0, n_eff = 0;
  std::vector<double> t;
  std::vector<RateSet> rates;
  RateSet markov;

  // alpha(t), linear between tabulated times and Markov beyond the last one.
  double alpha(double time) const {
    if (t.empty() || time >= t.back()) return t.empty() ? markov.alpha : rates.back().alpha;
    if (time <= t.front()) return rates.front().alpha;
    const auto it = std::upper_bound(t.begin(), t.end(), time);
    const std::size_t i = static_cast<std::size_t>(it - t.begin());
    const double f = (time - t[i - 1]) / (t[i] - t[i - 1]);
    return rates[i - 1].alpha + f * (rates[i].alpha - rates[i - 1].alpha);
  }
};

inline RateTable build_rate_table(const CorrelationFunction& cx, const CorrelationFunction& cz, double omega,
                                  double omega_n, double n_spins, const std::vector<double>& times) {
  RateTable tab;
  tab.omega = omega;
  tab.omega_n = omega_n;
  tab.n_eff = n_spins;
  tab.t = times;
  for (double t : times) tab.rates.push_back(evaluate_rates(cx, cz, omega, omega_n, n_spins, t));
  tab.markov = evaluate_rates(cx, cz, omega, omega_n, n_spins, markov_time);
  return tab;
}

// n(t) = 1/2 + (n0 - 1/2) exp(-alpha_M t)
inline std::vector<double> populate_liquid(double alpha_m, double n0, const std::vector<double>& times) {
  if (!(n0 >= 0 && n0 <= 1)) throw InvalidArgument("n0 must lie in [0, 1]");
  std::vector<double> n(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) n[k] = 0.5 + (n0 - 0.5) * std::exp(-alpha_m * times[k]);
  return n;
}

// dn/dt = -alpha(t) (n - 1/2), classical RK4 with steps no longer than dt.
inline std::vector<double> populate_liquid(const std::function<double(double)>& alpha, double n0,
                                           const std::vector<double>& times, double dt) {
  if (!(n0 >= 0 && n0 <= 1)) throw InvalidArgument("n0 must lie in [0, 1]");
  if (!(dt > 0)) throw InvalidArgument("dt must be positive");
  std::vector<double> out(times.size());
  double y = n0 - 0.5, t = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double span = times[k] - t;
    const auto m = static_cast<std::size_t>(std::ceil(std::max(span, 0.0) / dt - 1e-9));
    if (m > 0) {
      const double h = span / static_cast<double>(m);
      for (std::size_t s = 0; s < m; ++s) {
        const double ts = t + static_cast<double>(s) * h;
        const double a0 = alpha(ts), a1 = alpha(ts + 0.5 * h), a2 = alpha(ts + h);
        const double k1 = -a0 * y;
        const double k2 = -a1 * (y + 0.5 * h * k1);
        const double k3 = -a1 * (y + 0.5 * h * k2);
        const double k4 = -a2 * (y + h * k3);
        y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      }
    }
    t = times[k];
    out[k] = 0.5 + y;
  }
  return out;
}

// Correlation time of the full hyperfine vector, <A(0).A(tau)> = 2 C_x + C_z.
inline double hyperfine_correlation_time(const CorrelationFunction& cx, const CorrelationFunction& cz) {
  if (cx.lag.size() != cz.lag.size() || cx.lag.empty()) throw InvalidArgument("correlation grids differ");
  std::vector<double> total(cx.value.size());
  for (std::size_t k = 0; k < total.size(); ++k) total[k] = 2.0 * cx.value[k] + cz.value[k];
  return fit_correlation_time(cx.lag, total);
}

// Monte Carlo settings for the full liquid pipeline. Lag grid and run length
// scale with floor^2 / D_W, the diffusive time across the NV depth.
struct LiquidSampling {
  std::size_t n_traj = 100000;
  std::size_t batch = 5000;
  double lag_step_factor = 0.05;  // lag step in units of floor^2 / D_W
  double max_lag_factor = 20.0;   // last lag in the same units
  double max_step_kappa = 0.25;   // interface model: step rms <= max_step_kappa / kappa
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t n_blocks = 16;
};

struct LiquidCorrelations {
  CorrelationFunction x, z;
  double dt = 0;  // integration step used
};

inline LiquidCorrelations sample_liquid_correlations(const DiffusionModel& model, const LiquidVolume& vol,
                                                     const PhysicalConstants& consts, const LiquidSampling& s) {
  model.validate();
  if (s.n_traj < 2 || s.batch == 0) throw InvalidArgument("need at least two trajectories");
  const double t_scale = vol.floor * vol.floor / model.d_w;
  const double lag = s.lag_step_factor * t_scale;
  const auto n_lags = static_cast<std::size_t>(std::llround(s.max_lag_factor / s.lag_step_factor)) + 1;
  TrajectoryOptions to;
  to.n_samples = n_lags;
  to.seed = s.seed;
  to.threads = s.threads;
  to.sample_every = 1;
  to.dt = lag;
  if (model.kind == DiffusionKind::interface) {
    const double dt_cap = std::pow(s.max_step_kappa / model.kappa, 2) / (2.0 * model.d_w);
    to.sample_every = static_cast<std::size_t>(std::ceil(lag / dt_cap));
    to.dt = lag / static_cast<double>(to.sample_every);
  }
  CorrelationAccumulator ax(Component::x, n_lags, lag, s.n_blocks), az(Component::z, n_lags, lag, s.n_blocks);
  CorrelationOptions co;
  co.threads = s.threads;
  co.n_blocks = s.n_blocks;
  for (std::size_t first = 0; first < s.n_traj; first += s.batch) {
    to.first_index = first;
    to.n_traj = std::min(s.batch, s.n_traj - first);
    const TrajectoryEnsemble ens = simulate_trajectories(model, vol, to);
    accumulate_correlation(ens, Component::x, consts, co, ax);
    accumulate_correlation(ens, Component::z, consts, co, az);
  }
  return {ax.finish(), az.finish(), to.dt};
}

}  // namespace nvsense
