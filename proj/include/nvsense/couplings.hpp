#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "nvsense/error.hpp"
#include "nvsense/lattice.hpp"
#include "nvsense/units.hpp"

namespace nvsense {

using cplx = std::complex<double>;

struct HyperfineVector {
  double x = 0, y = 0, z = 0;  // rad/us
};

struct FieldProfile {
  double b0 = 0.0;           // G
  double grad_lambda = 0.0;  // G/nm
};

struct CouplingSet {
  std::vector<cplx> g;  // NV-proton flip-flop couplings
  Eigen::MatrixXd h;    // internuclear couplings, zero diagonal
  std::vector<double> omega;

  std::size_t size() const { return g.size(); }
};

// Secular point-dipole field of a proton at r on an NV quantized along z.
inline HyperfineVector hyperfine_vector(const Vec3& r, const PhysicalConstants& c) {
  const double r2 = r.squaredNorm();
  if (!(r2 > 0)) throw NumericalError("hyperfine coupling is singular at r = 0");
  const double rn = std::sqrt(r2);
  const double inv3 = 1.0 / (r2 * rn);
  const double inv5 = inv3 / r2;
  return {-3.0 * c.c_en * r.x() * r.z() * inv5, -3.0 * c.c_en * r.y() * r.z() * inv5,
          c.c_en * (1.0 - 3.0 * r.z() * r.z() / r2) * inv3};
}

inline cplx nv_coupling(const HyperfineVector& a) { return 0.25 * cplx(a.x, -a.y); }

inline cplx nv_coupling(const Vec3& r, const PhysicalConstants& c) { return nv_coupling(hyperfine_vector(r, c)); }

inline std::vector<cplx> nv_couplings(const ProtonSet& p, const PhysicalConstants& c) {
  std::vector<cplx> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = nv_coupling(p.positions[i], c);
  return g;
}

inline std::vector<double> hyperfine_z(const ProtonSet& p, const PhysicalConstants& c) {
  std::vector<double> az(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) az[i] = hyperfine_vector(p.positions[i], c).z;
  return az;
}

inline double internuclear_coupling(const Vec3& ri, const Vec3& rj, const PhysicalConstants& c) {
  const Vec3 d = ri - rj;
  const double r2 = d.squaredNorm();
  if (!(r2 > 0)) throw NumericalError("coincident protons");
  return c.c_nn * (1.0 - 3.0 * d.z() * d.z() / r2) / (r2 * std::sqrt(r2));
}

// Dense symmetric matrix; memory grows as N^2, callers bound N.
inline Eigen::MatrixXd internuclear_couplings(const ProtonSet& p, const PhysicalConstants& c) {
  const auto n = static_cast<Eigen::Index>(p.size());
  if (n < 2) throw InvalidArgument("internuclear couplings need at least two protons");
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vec3& rj = p.positions[static_cast<std::size_t>(j)];
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = internuclear_coupling(p.positions[static_cast<std::size_t>(i)], rj, c);
      h(i, j) = v;
      h(j, i) = v;
    }
  }
  return h;
}

inline double larmor(double b0, const PhysicalConstants& c) { return c.gamma_h * b0; }

// Larmor frequency dressed by the static NV field, omega_N - A_z / 2.
inline std::vector<double> effective_larmor(const std::vector<double>& a_z, double b0, const PhysicalConstants& c) {
  if (!(b0 > 0)) throw InvalidArgument("B0 must be positive");
  std::vector<double> w(a_z.size());
  for (std::size_t i = 0; i < a_z.size(); ++i) w[i] = c.gamma_h * b0 - 0.5 * a_z[i];
  return w;
}

inline double gradient_larmor(double z, const FieldProfile& f, const PhysicalConstants& c) {
  return c.gamma_h * (f.b0 + f.grad_lambda * z);
}

inline double gradient_position(double omega, const FieldProfile& f, const PhysicalConstants& c) {
  if (f.grad_lambda == 0) return std::numeric_limits<double>::quiet_NaN();
  return (omega / c.gamma_h - f.b0) / f.grad_lambda;
}

enum class LarmorModel {
  effective,  // omega_N - A_z / 2
  gradient,   // gamma_H (B0 + lambda z)
};

struct CouplingOptions {
  LarmorModel larmor = LarmorModel::effective;
  bool internuclear = true;
  std::size_t max_dense_modes = 12000;
};

inline CouplingSet assemble_couplings(const ProtonSet& p, const FieldProfile& field, const PhysicalConstants& c,
                                      const CouplingOptions& opt = {}) {
  if (!(field.b0 > 0)) throw InvalidArgument("B0 must be positive");
  if (field.grad_lambda < 0) throw InvalidArgument("gradient must be non-negative");
  CouplingSet cs;
  cs.g = nv_couplings(p, c);
  if (opt.larmor == LarmorModel::effective) {
    cs.omega = effective_larmor(hyperfine_z(p, c), field.b0, c);
  } else {
    cs.omega.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) cs.omega[i] = gradient_larmor(p.positions[i].z(), field, c);
  }
  const auto n = static_cast<Eigen::Index>(p.size());
  if (opt.internuclear && n >= 2) {
    if (p.size() > opt.max_dense_modes)
      throw ResourceError("internuclear matrix for " + std::to_string(p.size()) + " protons exceeds the cap of " +
                          std::to_string(opt.max_dense_modes));
    cs.h = internuclear_couplings(p, c);
  } else {
    cs.h = Eigen::MatrixXd::Zero(n, n);
  }
  return cs;
}

inline double collective_coupling(const std::vector<cplx>& g) {
  double s = 0;
  for (const cplx& x : g) s += std::norm(x);
  return std::sqrt(s);
}

}  // namespace nvsense
