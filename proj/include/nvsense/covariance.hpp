#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "nvsense/couplings.hpp"
#include "nvsense/error.hpp"

namespace nvsense {

// Mode 0 is the NV, modes 1..N the protons.
struct ModeHamiltonian {
  Eigen::MatrixXcd v;
  Eigen::Index modes() const { return v.rows(); }
};

// Second-moment matrix of the bosonic modes. Element (i, j) holds
// <a_j^dagger a_i>, the ordering for which d/dt gamma = -i [V, gamma]; it is
// the transpose of <a_i^dagger a_j> and shares its diagonal and spectrum.
using CovarianceMatrix = Eigen::MatrixXcd;

struct InitialState {
  double nv_occupation = 1.0;
  double bath_occupation = 0.5;
};

inline ModeHamiltonian assemble_V(const CouplingSet& c, double omega) {
  const auto n = static_cast<Eigen::Index>(c.size());
  if (static_cast<std::size_t>(n) != c.omega.size() || (n > 0 && (c.h.rows() != n || c.h.cols() != n)))
    throw InvalidArgument("coupling set sizes do not match");
  if (!std::isfinite(omega)) throw NumericalError("non-finite Rabi frequency");
  ModeHamiltonian m;
  m.v = Eigen::MatrixXcd::Zero(n + 1, n + 1);
  m.v(0, 0) = omega;
  for (Eigen::Index i = 0; i < n; ++i) {
    const cplx g = c.g[static_cast<std::size_t>(i)];
    const double w = c.omega[static_cast<std::size_t>(i)];
    if (!std::isfinite(g.real()) || !std::isfinite(g.imag()) || !std::isfinite(w))
      throw NumericalError("non-finite coupling for mode " + std::to_string(i + 1));
    m.v(0, i + 1) = g;
    m.v(i + 1, 0) = std::conj(g);
    m.v(i + 1, i + 1) = w;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      const double h = c.h(i, j);
      if (!std::isfinite(h)) throw NumericalError("non-finite internuclear coupling");
      m.v(i + 1, j + 1) = h / 8.0;
    }
  }
  return m;
}

inline CovarianceMatrix initial_covariance(Eigen::Index n_bath, const InitialState& s = {}) {
  CovarianceMatrix g = CovarianceMatrix::Zero(n_bath + 1, n_bath + 1);
  g(0, 0) = s.nv_occupation;
  for (Eigen::Index i = 1; i <= n_bath; ++i) g(i, i) = s.bath_occupation;
  return g;
}

inline double nv_population(const CovarianceMatrix& g) { return g(0, 0).real(); }

inline double hermiticity_defect(const Eigen::MatrixXcd& m) { return (m - m.adjoint()).cwiseAbs().maxCoeff(); }

namespace detail {

inline double hermitian_tolerance(const Eigen::MatrixXcd& m) {
  return 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff());
}

inline void check_times(const std::vector<double>& times) {
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] >= 0) || !std::isfinite(times[k])) throw InvalidArgument("output times must be finite and >= 0");
    if (k > 0 && times[k] < times[k - 1]) throw InvalidArgument("output times must be non-decreasing");
  }
}

}  // namespace detail

// Exact propagation through one eigendecomposition of V.
class UnitaryPropagator {
 public:
  explicit UnitaryPropagator(const Eigen::MatrixXcd& v) {
    if (v.rows() != v.cols()) throw InvalidArgument("V must be square");
    if (hermiticity_defect(v) > detail::hermitian_tolerance(v))
      throw NumericalError("V is not Hermitian; eigendecomposition refused");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(v);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of V failed");
    q_ = es.eigenvectors();
    lambda_ = es.eigenvalues();
  }

  const Eigen::MatrixXcd& eigenvectors() const { return q_; }
  const Eigen::VectorXd& eigenvalues() const { return lambda_; }

  // gamma(t) = exp(-iVt) gamma0 exp(iVt)
  CovarianceMatrix apply(const CovarianceMatrix& g0_eig, double t) const {
    const Eigen::VectorXcd ph = (lambda_.array() * cplx(0, -t)).exp().matrix();
    Eigen::MatrixXcd m = ph.asDiagonal() * g0_eig * ph.conjugate().asDiagonal();
    CovarianceMatrix out = q_ * m * q_.adjoint();
    return 0.5 * (out + out.adjoint());
  }

  CovarianceMatrix to_eigenbasis(const CovarianceMatrix& g0) const { return q_.adjoint() * g0 * q_; }

  // NV population for an initial state that is diagonal with a uniform bath:
  // n(t) = b + (n0 - b) |U_00(t)|^2.
  double nv_population(double t, const InitialState& s) const {
    cplx u00 = 0;
    for (Eigen::Index k = 0; k < lambda_.size(); ++k) u00 += std::norm(q_(0, k)) * std::exp(cplx(0, -lambda_(k) * t));
    return s.bath_occupation + (s.nv_occupation - s.bath_occupation) * std::norm(u00);
  }

 private:
  Eigen::MatrixXcd q_;
  Eigen::VectorXd lambda_;
};

using CovarianceObserver = std::function<void(std::size_t, double, const CovarianceMatrix&)>;

inline void propagate_unitary(const ModeHamiltonian& h, const CovarianceMatrix& g0, const std::vector<double>& times,
                              const CovarianceObserver& observe) {
  detail::check_times(times);
  if (g0.rows() != h.modes() || g0.cols() != h.modes()) throw InvalidArgument("covariance and V sizes differ");
  const UnitaryPropagator u(h.v);
  const CovarianceMatrix ge = u.to_eigenbasis(g0);
  for (std::size_t k = 0; k < times.size(); ++k) observe(k, times[k], u.apply(ge, times[k]));
}

inline std::vector<CovarianceMatrix> propagate_unitary(const ModeHamiltonian& h, const CovarianceMatrix& g0,
                                                       const std::vector<double>& times) {
  std::vector<CovarianceMatrix> out(times.size());
  propagate_unitary(h, g0, times, [&](std::size_t k, double, const CovarianceMatrix& g) { out[k] = g; });
  return out;
}

struct DissipativeOptions {
  double dt = 0.0;  // 0 selects min(0.01 / ||V||_2, 0.01 / alpha_max)
  double alpha_max = -1.0;  // bound on alpha(t) used for the step choice; < 0 probes the output times
  double hermiticity_tolerance = 1e-9;
  std::size_t max_steps = 50'000'000;
};

using RateFunction = std::function<double(double)>;

namespace detail {

// d/dt gamma for the NV-local dissipator with gain alpha/2 and loss 3 alpha/2.
inline void dissipative_rhs(const Eigen::MatrixXcd& v, double alpha, const CovarianceMatrix& g, CovarianceMatrix& out) {
  out.noalias() = v * g;
  out.noalias() -= g * v;
  out *= cplx(0, -1);
  const double h = 0.5 * alpha;
  out.row(0) -= h * g.row(0);
  out.col(0) -= h * g.col(0);
  out(0, 0) += h;
}

inline double spectral_norm_bound(const Eigen::MatrixXcd& v) {
  if (v.rows() == 0) return 0.0;
  if (v.rows() <= 600) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(v, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  double best = 0;  // Gershgorin bound for large matrices
  for (Eigen::Index i = 0; i < v.rows(); ++i) best = std::max(best, v.row(i).cwiseAbs().sum());
  return best;
}

}  // namespace detail

inline double choose_dissipative_dt(const Eigen::MatrixXcd& v_shifted, double alpha_max) {
  const double vn = detail::spectral_norm_bound(v_shifted);
  double dt = std::numeric_limits<double>::infinity();
  if (vn > 0) dt = std::min(dt, 0.01 / vn);
  if (alpha_max > 0) dt = std::min(dt, 0.01 / alpha_max);
  if (!std::isfinite(dt)) dt = 0.01;
  return dt;
}

// Fourth-order Runge-Kutta integration of
//   d/dt gamma = -i [V, gamma] - (alpha/2) {Delta, gamma} + (alpha/2) Delta,
// Delta the NV projector, with Hermitian projection after every step.
inline void propagate_dissipative(const ModeHamiltonian& h, const CovarianceMatrix& g0, const RateFunction& alpha,
                                  const std::vector<double>& times, const DissipativeOptions& opt,
                                  const CovarianceObserver& observe) {
  detail::check_times(times);
  if (g0.rows() != h.modes() || g0.cols() != h.modes()) throw InvalidArgument("covariance and V sizes differ");
  if (hermiticity_defect(h.v) > detail::hermitian_tolerance(h.v)) throw NumericalError("V is not Hermitian");
  const Eigen::Index n = h.modes();

  // A multiple of the identity commutes with gamma; removing the mean
  // frequency leaves the dynamics unchanged and relaxes the step limit.
  const double shift = n > 0 ? h.v.diagonal().real().mean() : 0.0;
  const Eigen::MatrixXcd v = h.v - shift * Eigen::MatrixXcd::Identity(n, n);

  double amax = opt.alpha_max;
  if (amax < 0) {
    amax = 0;
    for (double t : times) amax = std::max(amax, alpha(t));
  }
  const double dt_max = opt.dt > 0 ? opt.dt : choose_dissipative_dt(v, amax);

  CovarianceMatrix g = g0;
  CovarianceMatrix k1(n, n), k2(n, n), k3(n, n), k4(n, n), tmp(n, n);
  double t = 0.0;
  std::size_t steps = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double span = times[k] - t;
    const auto m = static_cast<std::size_t>(std::ceil(span / dt_max - 1e-9));
    if (m > 0) {
      const double dt = span / static_cast<double>(m);
      for (std::size_t s = 0; s < m; ++s) {
        if (++steps > opt.max_steps) throw ResourceError("dissipative propagation exceeds the step cap");
        const double ts = t + static_cast<double>(s) * dt;
        const double a0 = alpha(ts), ah = alpha(ts + 0.5 * dt), a1 = alpha(ts + dt);
        if (!(a0 >= 0 && ah >= 0 && a1 >= 0)) throw NumericalError("depolarization rate must be non-negative");
        detail::dissipative_rhs(v, a0, g, k1);
        tmp = g + (0.5 * dt) * k1;
        detail::dissipative_rhs(v, ah, tmp, k2);
        tmp = g + (0.5 * dt) * k2;
        detail::dissipative_rhs(v, ah, tmp, k3);
        tmp = g + dt * k3;
        detail::dissipative_rhs(v, a1, tmp, k4);
        g += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        const double drift = hermiticity_defect(g);
        if (!(drift <= opt.hermiticity_tolerance))
          throw NumericalError("Hermiticity drift " + std::to_string(drift) + " exceeds tolerance; reduce dt");
        g = 0.5 * (g + g.adjoint()).eval();
      }
    }
    t = times[k];
    observe(k, t, g);
  }
}

inline std::vector<CovarianceMatrix> propagate_dissipative(const ModeHamiltonian& h, const CovarianceMatrix& g0,
                                                           const RateFunction& alpha, const std::vector<double>& times,
                                                           const DissipativeOptions& opt = {}) {
  std::vector<CovarianceMatrix> out(times.size());
  propagate_dissipative(h, g0, alpha, times, opt,
                        [&](std::size_t k, double, const CovarianceMatrix& g) { out[k] = g; });
  return out;
}

// Binary snapshot: magic "NVCOV1\0\0", uint64 dimension, double time, then
// row-major (re, im) doubles.
inline void write_covariance(std::ostream& os, const CovarianceMatrix& g, double t) {
  const char magic[8] = {'N', 'V', 'C', 'O', 'V', '1', 0, 0};
  const std::uint64_t dim = static_cast<std::uint64_t>(g.rows());
  os.write(magic, 8);
  os.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  os.write(reinterpret_cast<const char*>(&t), sizeof t);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const double re = g(i, j).real(), im = g(i, j).imag();
      os.write(reinterpret_cast<const char*>(&re), sizeof re);
      os.write(reinterpret_cast<const char*>(&im), sizeof im);
    }
  }
}

inline CovarianceMatrix read_covariance(std::istream& is, double* t = nullptr) {
  char magic[8];
  std::uint64_t dim = 0;
  double time = 0;
  if (!is.read(magic, 8) || std::string(magic, 6) != "NVCOV1") throw ConfigError("not a covariance snapshot");
  is.read(reinterpret_cast<char*>(&dim), sizeof dim);
  is.read(reinterpret_cast<char*>(&time), sizeof time);
  const auto n = static_cast<Eigen::Index>(dim);
  CovarianceMatrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double re = 0, im = 0;
      is.read(reinterpret_cast<char*>(&re), sizeof re);
      is.read(reinterpret_cast<char*>(&im), sizeof im);
      g(i, j) = cplx(re, im);
    }
  }
  if (!is) throw ConfigError("truncated covariance snapshot");
  if (t) *t = time;
  return g;
}

}  // namespace nvsense
