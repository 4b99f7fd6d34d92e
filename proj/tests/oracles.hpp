#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <array>
#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// Closed-form J = 1/2 hyperfine + Zeeman energy (MHz) of the (F, m) level,
// I = 3/2, H/h = A I.J + muB B0 (gJ J_z + gI I_z).
inline double breit_rabi(double A, double gJ, double gI, double muB, int F, int m, double B0) {
  const double I = 1.5;
  const double dE = A * (I + 0.5);  // signed zero-field splitting E(F=2) - E(F=1)
  if (std::abs(m) == 2) {
    const double s = m > 0 ? 1.0 : -1.0;
    return A * I / 2 + s * muB * B0 * (gJ / 2 + gI * I);
  }
  const double x = (gJ - gI) * muB * B0 / dE;
  const double root = std::sqrt(1 + 4 * m * x / (2 * I + 1) + x * x);
  const double sign = F == 2 ? 1.0 : -1.0;
  return -dE / (2 * (2 * I + 1)) + gI * muB * B0 * m + sign * dE / 2 * root;
}

// Polarization ellipse by sampling Re{v e^{iwt}} over one period.
struct SampledEllipse {
  double major = 0, minor = 0, orientation = 0;  // orientation of the major axis in [0, pi)
};

inline SampledEllipse sample_ellipse(std::complex<double> vx, std::complex<double> vz, int samples = 200000) {
  SampledEllipse e;
  e.minor = INFINITY;
  for (int k = 0; k < samples; ++k) {
    const double t = 2 * M_PI * k / samples;
    const std::complex<double> ph = std::polar(1.0, t);
    const double x = (vx * ph).real(), z = (vz * ph).real();
    const double r = std::hypot(x, z);
    if (r > e.major) {
      e.major = r;
      e.orientation = std::atan2(z, x);
    }
    e.minor = std::min(e.minor, r);
  }
  while (e.orientation < 0) e.orientation += M_PI;
  while (e.orientation >= M_PI) e.orientation -= M_PI;
  return e;
}

// Second-order shift of a two-level transition f0 driven at f with Rabi
// frequency omega (MHz), counter-rotating term included.
inline double two_level_shift(double f0, double omega, double f) {
  const double per_level = 0.25 * omega * omega * (1 / (f0 - f) + 1 / (f0 + f));
  return 2 * per_level;
}

// Line-current field by explicit superposition (uT, um, A).
inline Eigen::Vector2cd wire_field(const std::vector<std::array<double, 2>>& pos,
                                   const std::vector<std::complex<double>>& amp, double x, double z) {
  Eigen::Vector2cd b = Eigen::Vector2cd::Zero();
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const double dx = x - pos[k][0], dz = z - pos[k][1];
    const double r2 = dx * dx + dz * dz;
    // mu0 I / (2 pi r) along the azimuth, mu0 / (2 pi) = 0.2 uT m / A = 2e5 uT um / A
    b(0) += amp[k] * (-dz) * (2e5 / r2);
    b(1) += amp[k] * dx * (2e5 / r2);
  }
  return b;
}

}  // namespace oracle

namespace oracle {

// Jacobian d(B_k)/d(r_l) of the line-current field from the complex-variable
// form B_x + i B_z = K I * i / conj(w), w = (x - x_k) + i (z - z_k).
inline Eigen::Matrix2cd wire_gradient(const std::vector<std::array<double, 2>>& pos,
                                      const std::vector<std::complex<double>>& amp, double x, double z) {
  const double K = 2e5;
  Eigen::Matrix2cd g = Eigen::Matrix2cd::Zero();
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const std::complex<double> wb(x - pos[k][0], -(z - pos[k][1]));
    const std::complex<double> dx = std::complex<double>(0, -K) / (wb * wb);
    const std::complex<double> dz = -K / (wb * wb);
    g(0, 0) += amp[k] * dx.real();
    g(1, 0) += amp[k] * dx.imag();
    g(0, 1) += amp[k] * dz.real();
    g(1, 1) += amp[k] * dz.imag();
  }
  return g;
}

}  // namespace oracle
