#pragma once

#include <cmath>
#include <numbers>

// Internal unit system: nm, us, rad/us, G. Every public frequency is angular.
namespace nvsense {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

struct PhysicalConstants {
  double gamma_e = 17.6085963023;     // rad us^-1 G^-1
  double gamma_h = 0.026752218744;    // rad us^-1 G^-1
  double c_en = 0.49677611241067093;  // rad us^-1 nm^3, mu0/4pi hbar gamma_e gamma_H
  double c_nn = 7.547372316252322e-4; // rad us^-1 nm^3, mu0/4pi hbar gamma_H^2

  bool valid() const { return gamma_e > 0 && gamma_h > 0 && c_en > 0 && c_nn > 0; }
};

// mu0/4pi * hbar in rad us^-1 nm^3 per (rad us^-1 G^-1)^2, so that
// C = dipolar_unit * gamma_1 * gamma_2 reproduces the defaults above.
inline constexpr double dipolar_unit = 1.054571817;

inline PhysicalConstants constants_from_gyromagnetic(double gamma_e, double gamma_h) {
  return {gamma_e, gamma_h, dipolar_unit * gamma_e * gamma_h, dipolar_unit * gamma_h * gamma_h};
}

inline double angular_from_hz(double f_mhz) { return two_pi * f_mhz; }
inline double mhz_from_angular(double w) { return w / two_pi; }

// Field at which the proton Larmor frequency is exactly 1 MHz.
inline double field_for_larmor_mhz(double f_mhz, const PhysicalConstants& c) {
  return angular_from_hz(f_mhz) / c.gamma_h;
}

}  // namespace nvsense
