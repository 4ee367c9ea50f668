#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nvsense/covariance.hpp"
#include "nvsense/couplings.hpp"
#include "nvsense/error.hpp"
#include "nvsense/parallel.hpp"
#include "nvsense/rng.hpp"

namespace nvsense {

// Basis states are bit strings: bit 0 is the NV (1 = up), bit i the i-th proton.
struct SpinOptions {
  bool rotating_wave = true;    // flip-flop couplings only
  std::size_t max_dimension = 1u << 13;
  double larmor = 0.0;          // bare omega_N, used only without the rotating-wave approximation
  std::vector<HyperfineVector> hyperfine;  // used only without the rotating-wave approximation
};

struct SpinSystem {
  std::size_t n_spins = 0;
  double omega = 0;
  CouplingSet couplings;
  bool rotating_wave = true;
  Eigen::MatrixXcd hamiltonian;

  std::size_t dimension() const { return std::size_t{1} << (n_spins + 1); }
};

namespace detail {

struct SectorEigen {
  std::vector<std::uint32_t> states;
  std::map<std::uint32_t, Eigen::Index> position;
  Eigen::MatrixXcd q;
  Eigen::VectorXd lambda;
};

inline double flip_flop_h(const CouplingSet& c, std::size_t i, std::size_t j) { return c.h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / 8.0; }

}  // namespace detail

inline SpinSystem build_spin_hamiltonian(const CouplingSet& c, double omega, const SpinOptions& opt = {}) {
  const std::size_t n = c.size();
  if (n + 1 >= 31 || (std::size_t{1} << (n + 1)) > opt.max_dimension)
    throw ResourceError("spin Hilbert space for " + std::to_string(n) + " protons exceeds the dimension cap");
  if (c.omega.size() != n || (n > 0 && c.h.rows() != static_cast<Eigen::Index>(n)))
    throw InvalidArgument("coupling set sizes do not match");
  if (!opt.rotating_wave && opt.hyperfine.size() != n)
    throw InvalidArgument("full coupling needs one hyperfine vector per proton");
  SpinSystem s;
  s.n_spins = n;
  s.omega = omega;
  s.couplings = c;
  s.rotating_wave = opt.rotating_wave;
  const auto dim = static_cast<Eigen::Index>(s.dimension());
  s.hamiltonian = Eigen::MatrixXcd::Zero(dim, dim);
  auto& H = s.hamiltonian;
  const auto bit = [](std::uint32_t st, std::size_t k) { return (st >> k) & 1u; };

  for (std::uint32_t st = 0; st < static_cast<std::uint32_t>(dim); ++st) {
    const double sz = bit(st, 0) ? 0.5 : -0.5;
    double diag = omega * sz;
    for (std::size_t i = 0; i < n; ++i) {
      const double iz = bit(st, i + 1) ? 0.5 : -0.5;
      if (opt.rotating_wave) {
        diag += c.omega[i] * iz;
      } else {
        diag += (opt.larmor - 0.5 * opt.hyperfine[i].z) * iz;
      }
    }
    H(st, st) += diag;

    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t mi = 1u << (i + 1);
      if (opt.rotating_wave) {
        // g S+ I-: NV down, proton up -> NV up, proton down
        if (!bit(st, 0) && bit(st, i + 1)) {
          const std::uint32_t to = (st | 1u) & ~mi;
          H(to, st) += c.g[i];
          H(st, to) += std::conj(c.g[i]);
        }
      } else {
        // (S_x - 1/2) A.I: S_x flips bit 0 with weight 1/2, the -1/2 keeps
        // the NV state. A.I = A_z I_z + ((A_x - i A_y) I+ + (A_x + i A_y) I-) / 2.
        const HyperfineVector& a = opt.hyperfine[i];
        const double iz = bit(st, i + 1) ? 0.5 : -0.5;
        const std::uint32_t flip_nv = st ^ 1u;
        H(flip_nv, st) += 0.5 * a.z * iz;
        const cplx lower = bit(st, i + 1) ? 0.5 * cplx(a.x, a.y) : cplx(0);
        const cplx raise = bit(st, i + 1) ? cplx(0) : 0.5 * cplx(a.x, -a.y);
        const std::uint32_t flip_p = st ^ mi;
        const cplx amp = lower + raise;
        H(flip_p ^ 1u, st) += 0.5 * amp;
        H(flip_p, st) += -0.5 * amp;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const std::uint32_t mi = 1u << (i + 1), mj = 1u << (j + 1);
        if (bit(st, i + 1) != bit(st, j + 1)) {
          // h/8 (I+^i I-^j + I+^j I-^i) swaps the two proton bits
          H(st ^ mi ^ mj, st) += detail::flip_flop_h(c, i, j);
        }
      }
    }
  }
  return s;
}

struct BathEnsemble {
  std::vector<std::uint32_t> configs;  // proton bits, bit i-1 is proton i
  std::vector<double> weights;
};

inline BathEnsemble thermal_bath(std::size_t n) {
  if (n > 20) throw ResourceError("exact thermal bath too large");
  BathEnsemble b;
  const std::uint32_t m = 1u << n;
  for (std::uint32_t c = 0; c < m; ++c) {
    b.configs.push_back(c);
    b.weights.push_back(1.0 / static_cast<double>(m));
  }
  return b;
}

inline BathEnsemble sampled_bath(std::size_t n, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw InvalidArgument("bath sample count must be positive");
  BathEnsemble b;
  auto rng = stream_rng(seed, 0);
  for (std::size_t k = 0; k < samples; ++k) {
    b.configs.push_back(static_cast<std::uint32_t>(rng() & ((std::uint64_t{1} << n) - 1)));
    b.weights.push_back(1.0 / static_cast<double>(samples));
  }
  return b;
}

// Exact mixture up to 8 protons, 256 uniform samples above.
inline BathEnsemble default_bath(std::size_t n, std::uint64_t seed = 1) {
  return n <= 8 ? thermal_bath(n) : sampled_bath(n, 256, seed);
}

inline std::vector<double> mean_occupations(const BathEnsemble& b, std::size_t n) {
  std::vector<double> occ(n, 0.0);
  for (std::size_t k = 0; k < b.configs.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) occ[i] += b.weights[k] * ((b.configs[k] >> i) & 1u);
  }
  return occ;
}

struct ExactEvolution {
  std::vector<double> n;           // NV population
  std::vector<double> norm_error;  // max |1 - ||psi||| over the ensemble
  std::vector<double> excitation;  // ensemble mean of S_z + sum I_z
};

namespace detail {

inline std::vector<SectorEigen> sector_eigen(const SpinSystem& s) {
  const std::size_t dim = s.dimension();
  std::vector<SectorEigen> out;
  if (!s.rotating_wave) {
    SectorEigen e;
    for (std::uint32_t st = 0; st < dim; ++st) {
      e.position[st] = static_cast<Eigen::Index>(e.states.size());
      e.states.push_back(st);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(s.hamiltonian);
    if (es.info() != Eigen::Success) throw NumericalError("spin eigendecomposition failed");
    e.q = es.eigenvectors();
    e.lambda = es.eigenvalues();
    out.push_back(std::move(e));
    return out;
  }
  out.resize(s.n_spins + 2);
  for (std::uint32_t st = 0; st < dim; ++st) {
    auto& e = out[static_cast<std::size_t>(std::popcount(st))];
    e.position[st] = static_cast<Eigen::Index>(e.states.size());
    e.states.push_back(st);
  }
  for (auto& e : out) {
    const auto m = static_cast<Eigen::Index>(e.states.size());
    Eigen::MatrixXcd blk(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) blk(a, b) = s.hamiltonian(e.states[a], e.states[b]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(blk);
    if (es.info() != Eigen::Success) throw NumericalError("spin sector eigendecomposition failed");
    e.q = es.eigenvectors();
    e.lambda = es.eigenvalues();
  }
  return out;
}

}  // namespace detail

// NV starts up, protons in the ensemble's basis states.
inline ExactEvolution evolve_exact(const SpinSystem& s, const BathEnsemble& bath, const std::vector<double>& times,
                                   unsigned threads = 1) {
  const auto sectors = detail::sector_eigen(s);
  const std::size_t nb = bath.configs.size();
  std::vector<std::vector<double>> pop(nb), norm(nb), exc(nb);
  parallel_for(nb, threads, [&](std::size_t k) {
    const std::uint32_t st = (bath.configs[k] << 1) | 1u;
    const auto& e = s.rotating_wave ? sectors[static_cast<std::size_t>(std::popcount(st))] : sectors[0];
    const Eigen::Index pos = e.position.at(st);
    const Eigen::VectorXcd c0 = e.q.row(pos).adjoint();
    pop[k].resize(times.size());
    norm[k].resize(times.size());
    exc[k].resize(times.size());
    for (std::size_t t = 0; t < times.size(); ++t) {
      const Eigen::VectorXcd ph = (e.lambda.array() * cplx(0, -times[t])).exp().matrix();
      const Eigen::VectorXcd psi = e.q * ph.cwiseProduct(c0);
      double up = 0, nrm = 0, ex = 0;
      for (Eigen::Index a = 0; a < psi.size(); ++a) {
        const double p = std::norm(psi(a));
        const std::uint32_t b = e.states[static_cast<std::size_t>(a)];
        nrm += p;
        if (b & 1u) up += p;
        ex += p * (static_cast<double>(std::popcount(b)) - 0.5 * static_cast<double>(s.n_spins + 1));
      }
      pop[k][t] = up;
      norm[k][t] = std::abs(std::sqrt(nrm) - 1.0);
      exc[k][t] = ex;
    }
  });
  ExactEvolution out;
  out.n.assign(times.size(), 0.0);
  out.norm_error.assign(times.size(), 0.0);
  out.excitation.assign(times.size(), 0.0);
  for (std::size_t k = 0; k < nb; ++k) {
    for (std::size_t t = 0; t < times.size(); ++t) {
      out.n[t] += bath.weights[k] * pop[k][t];
      out.excitation[t] += bath.weights[k] * exc[k][t];
      out.norm_error[t] = std::max(out.norm_error[t], norm[k][t]);
    }
  }
  return out;
}

// Bosonic counterpart of the same system, bath occupations matched to the ensemble.
inline std::vector<double> hpa_population(const SpinSystem& s, const BathEnsemble& bath,
                                          const std::vector<double>& times) {
  const ModeHamiltonian v = assemble_V(s.couplings, s.omega);
  const auto occ = mean_occupations(bath, s.n_spins);
  CovarianceMatrix g0 = initial_covariance(static_cast<Eigen::Index>(s.n_spins));
  for (std::size_t i = 0; i < s.n_spins; ++i) g0(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(i + 1)) = occ[i];
  std::vector<double> n(times.size());
  propagate_unitary(v, g0, times, [&](std::size_t k, double, const CovarianceMatrix& g) { n[k] = nv_population(g); });
  return n;
}

struct HpaComparison {
  double max_relative = 0;  // max |n_hpa - n_exact| / (n_exact - 1/2 + eps)
  double max_absolute = 0;  // max |n_hpa - n_exact|
  std::vector<double> n_exact, n_hpa;
};

inline HpaComparison compare_hpa(const SpinSystem& s, const BathEnsemble& bath, const std::vector<double>& times,
                                 double eps = 1e-3) {
  HpaComparison c;
  c.n_exact = evolve_exact(s, bath, times).n;
  c.n_hpa = hpa_population(s, bath, times);
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double d = std::abs(c.n_hpa[k] - c.n_exact[k]);
    c.max_absolute = std::max(c.max_absolute, d);
    c.max_relative = std::max(c.max_relative, d / std::abs(c.n_exact[k] - 0.5 + eps));
  }
  return c;
}

// Leading-order decay of a polarized NV, 1 - (1/2) sum |g|^2 t^2.
inline double short_time_population(double collective_coupling, double t) {
  return 1.0 - 0.5 * collective_coupling * collective_coupling * t * t;
}

}  // namespace nvsense
