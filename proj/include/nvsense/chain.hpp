#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "nvsense/covariance.hpp"
#include "nvsense/couplings.hpp"
#include "nvsense/error.hpp"

namespace nvsense {

// NV population for large baths. When all protons start with the same
// occupation b the covariance stays of the form b I + (n0 - b) w w^dagger, so
// only the NV column w of the propagator is needed. Lanczos on the proton
// block, seeded with the NV coupling vector, turns V into a tridiagonal chain
// whose first site is the NV; the chain does not depend on Omega.
struct ChainOptions {
  std::size_t initial_length = 96;
  std::size_t max_length = 2048;
  double tolerance = 1e-10;  // on the population, between successive chain lengths
};

class ExchangeChain {
 public:
  ExchangeChain(const CouplingSet& c, ChainOptions opt = {}) : opt_(opt) {
    const auto n = static_cast<Eigen::Index>(c.size());
    if (n == 0) throw InvalidArgument("exchange chain needs at least one proton");
    if (c.omega.size() != c.size() || c.h.rows() != n) throw InvalidArgument("coupling set sizes do not match");
    reference_ = 0;
    for (double w : c.omega) reference_ += w;
    reference_ /= static_cast<double>(n);
    block_ = c.h / 8.0;
    for (Eigen::Index i = 0; i < n; ++i) block_(i, i) = c.omega[static_cast<std::size_t>(i)] - reference_;
    Eigen::VectorXcd q(n);
    for (Eigen::Index i = 0; i < n; ++i) q(i) = std::conj(c.g[static_cast<std::size_t>(i)]);
    coupling_ = q.norm();
    scale_ = std::max(1.0, block_.cwiseAbs().maxCoeff());
    if (coupling_ > 0) {
      basis_.push_back(q / coupling_);
      extend(std::min<std::size_t>(opt_.initial_length, static_cast<std::size_t>(n)));
    }
  }

  double collective_coupling() const { return coupling_; }
  double reference() const { return reference_; }
  std::size_t length() const { return alpha_.size(); }
  bool exhausted() const { return done_; }

  // Populations at fixed Rabi frequency, unitary dynamics.
  std::vector<double> populations(double omega, const std::vector<double>& times, const InitialState& s = {}) {
    if (coupling_ == 0) return std::vector<double>(times.size(), s.nv_occupation);
    for (;;) {
      const auto full = unitary(omega, times, s, length());
      if (done_) return full;
      const auto part = unitary(omega, times, s, (3 * length()) / 4);
      if (max_diff(full, part) <= opt_.tolerance) return full;
      if (length() >= opt_.max_length) throw NumericalError("exchange chain did not converge within max_length");
      extend(std::min(2 * length(), opt_.max_length));
    }
  }

  double population(double omega, double t, const InitialState& s = {}) {
    return populations(omega, std::vector<double>{t}, s).front();
  }

  // Populations under the NV-local dissipator driven by alpha(t). Requires a
  // bath occupation of 1/2, where the dissipator leaves the uniform part
  // invariant.
  std::vector<double> populations_dissipative(double omega, const RateFunction& alpha, const std::vector<double>& times,
                                              const InitialState& s = {}, double dt = 0.0) {
    if (std::abs(s.bath_occupation - 0.5) > 1e-15)
      throw InvalidArgument("dissipative chain requires bath occupation 1/2");
    for (;;) {
      const auto full = dissipative(omega, alpha, times, s, length(), dt);
      if (done_ || coupling_ == 0) return full;
      const auto part = dissipative(omega, alpha, times, s, (3 * length()) / 4, dt);
      if (max_diff(full, part) <= std::max(opt_.tolerance, 1e-9)) return full;
      if (length() >= opt_.max_length) throw NumericalError("exchange chain did not converge within max_length");
      extend(std::min(2 * length(), opt_.max_length));
    }
  }

 private:
  static double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
  }

  // Lanczos with full reorthogonalization on the real symmetric proton block.
  void extend(std::size_t target) {
    const auto n = static_cast<std::size_t>(block_.rows());
    target = std::min(target, n);
    while (!done_ && alpha_.size() < target) {
      const Eigen::VectorXcd& q = basis_.back();
      Eigen::VectorXcd w(q.size());
      w.real() = block_ * q.real();
      w.imag() = block_ * q.imag();
      const double a = q.dot(w).real();
      alpha_.push_back(a);
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& b : basis_) w -= b * b.dot(w);
      }
      const double beta = w.norm();
      if (alpha_.size() == n || beta <= 1e-13 * scale_) {
        done_ = true;
        break;
      }
      beta_.push_back(beta);
      basis_.push_back(w / beta);
    }
  }

  // Tridiagonal chain of length m behind the NV site, NV detuning omega - ref.
  void tridiagonal(double omega, std::size_t m, Eigen::VectorXd& d, Eigen::VectorXd& e) const {
    d.resize(static_cast<Eigen::Index>(m + 1));
    e.resize(static_cast<Eigen::Index>(m));
    d(0) = omega - reference_;
    for (std::size_t k = 0; k < m; ++k) d(static_cast<Eigen::Index>(k + 1)) = alpha_[k];
    if (m > 0) e(0) = coupling_;
    for (std::size_t k = 1; k < m; ++k) e(static_cast<Eigen::Index>(k)) = beta_[k - 1];
  }

  std::vector<double> unitary(double omega, const std::vector<double>& times, const InitialState& s,
                              std::size_t m) const {
    Eigen::VectorXd d, e;
    tridiagonal(omega, m, d, e);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(d, e, Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success) throw NumericalError("chain eigendecomposition failed");
    const Eigen::VectorXd w = es.eigenvectors().row(0).transpose().cwiseAbs2();
    const Eigen::VectorXd& lam = es.eigenvalues();
    std::vector<double> out(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
      cplx u00 = 0;
      for (Eigen::Index j = 0; j < lam.size(); ++j) u00 += w(j) * std::exp(cplx(0, -lam(j) * times[k]));
      out[k] = s.bath_occupation + (s.nv_occupation - s.bath_occupation) * std::norm(u00);
    }
    return out;
  }

  std::vector<double> dissipative(double omega, const RateFunction& alpha, const std::vector<double>& times,
                                  const InitialState& s, std::size_t m, double dt_req) const {
    Eigen::VectorXd d, e;
    tridiagonal(omega, m, d, e);
    const auto dim = d.size();
    const auto apply = [&](double a, const Eigen::VectorXcd& x, Eigen::VectorXcd& y) {
      for (Eigen::Index i = 0; i < dim; ++i) {
        cplx acc = d(i) * x(i);
        if (i > 0) acc += e(i - 1) * x(i - 1);
        if (i + 1 < dim) acc += e(i) * x(i + 1);
        y(i) = cplx(0, -1) * acc;
      }
      y(0) -= 0.5 * a * x(0);
    };
    double bound = std::abs(d(0));
    for (Eigen::Index i = 0; i < dim; ++i) {
      double row = std::abs(d(i));
      if (i > 0) row += std::abs(e(i - 1));
      if (i + 1 < dim) row += std::abs(e(i));
      bound = std::max(bound, row);
    }
    double amax = 0;
    for (double t : times) amax = std::max(amax, alpha(t));
    double dt_max = dt_req > 0 ? dt_req : choose_dissipative_dt(Eigen::MatrixXcd::Identity(1, 1) * bound, amax);

    Eigen::VectorXcd x = Eigen::VectorXcd::Zero(dim), k1(dim), k2(dim), k3(dim), k4(dim);
    x(0) = 1.0;
    std::vector<double> out(times.size());
    double t = 0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      const double span = times[k] - t;
      const auto steps = static_cast<std::size_t>(std::ceil(span / dt_max - 1e-9));
      if (steps > 0) {
        const double dt = span / static_cast<double>(steps);
        for (std::size_t st = 0; st < steps; ++st) {
          const double ts = t + static_cast<double>(st) * dt;
          const double a0 = alpha(ts), ah = alpha(ts + 0.5 * dt), a1 = alpha(ts + dt);
          apply(a0, x, k1);
          apply(ah, x + 0.5 * dt * k1, k2);
          apply(ah, x + 0.5 * dt * k2, k3);
          apply(a1, x + dt * k3, k4);
          x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
      }
      t = times[k];
      out[k] = s.bath_occupation + (s.nv_occupation - s.bath_occupation) * std::norm(x(0));
    }
    return out;
  }

  ChainOptions opt_;
  Eigen::MatrixXd block_;
  double reference_ = 0;
  double coupling_ = 0;
  double scale_ = 1;
  std::vector<Eigen::VectorXcd> basis_;
  std::vector<double> alpha_;
  std::vector<double> beta_;
  bool done_ = false;
};

}  // namespace nvsense
