#pragma once

// Ground-state hyperfine manifold of a J = 1/2, I = 3/2 ion (9Be+) in a static
// field, its magnetic-dipole transitions, and second-order AC Zeeman shifts
// from an oscillating field, with a Floquet diagonalization as oracle.
//
// Energies are E/h in MHz, static fields in mT, oscillating fields in uT.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nearfield/errors.hpp"
#include "nearfield/model.hpp"

namespace nearfield {

struct HyperfineConstants {
  double A_hfs = -625.008837;  // MHz
  double gJ = 2.00226206;
  double gI_prime = 2.1349e-4;  // H_Z / h = (mu_B B0 / h)(gJ m_J + gI' m_I)
  double muB = 13.996245;       // mu_B / h, MHz/mT
  static constexpr double I_nuc = 1.5;
  static constexpr double J_el = 0.5;
};

// Adiabatic (F, m_F) name of a level; F is exact only at zero field.
struct LevelLabel {
  int F = 2;
  int m = 0;
  bool operator==(const LevelLabel&) const = default;
};

inline std::string to_string(const LevelLabel& l) { return std::to_string(l.F) + "," + std::to_string(l.m); }

struct TransitionSpec {
  LevelLabel lower;
  LevelLabel upper;
  int delta_m() const { return upper.m - lower.m; }
  bool operator==(const TransitionSpec&) const = default;
};

inline std::string to_string(const TransitionSpec& t) { return to_string(t.lower) + ":" + to_string(t.upper); }

inline constexpr std::size_t n_levels = 8;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using Mat8c = Eigen::Matrix<std::complex<double>, 8, 8>;

// Fixed level order: F=2, m=-2..2, then F=1, m=-1..1.
inline constexpr std::array<LevelLabel, n_levels> level_labels{{
    {2, -2}, {2, -1}, {2, 0}, {2, 1}, {2, 2}, {1, -1}, {1, 0}, {1, 1}}};

inline std::size_t level_index(const LevelLabel& l) {
  for (std::size_t i = 0; i < n_levels; ++i)
    if (level_labels[i] == l) return i;
  throw UnknownLevel("(F=" + std::to_string(l.F) + ", m=" + std::to_string(l.m) + ")");
}

namespace detail {

// Product basis |m_I, m_J>, index = iI * 2 + iJ, m_I = 3/2 - iI, m_J = 1/2 - iJ.
struct SpinOperators {
  Mat8 Iz, Ip, Im, Jz, Jp, Jm;
  std::array<int, n_levels> twice_m{};  // 2 (m_I + m_J)
};

inline const SpinOperators& spin_operators() {
  static const SpinOperators ops = [] {
    SpinOperators o;
    auto single = [](double j, Eigen::MatrixXd& z, Eigen::MatrixXd& p) {
      const int n = static_cast<int>(2 * j + 1);
      z = Eigen::MatrixXd::Zero(n, n);
      p = Eigen::MatrixXd::Zero(n, n);
      for (int k = 0; k < n; ++k) {
        const double m = j - k;
        z(k, k) = m;
        if (k > 0) p(k - 1, k) = std::sqrt(j * (j + 1) - m * (m + 1));
      }
    };
    Eigen::MatrixXd iz, ip, jz, jp;
    single(HyperfineConstants::I_nuc, iz, ip);
    single(HyperfineConstants::J_el, jz, jp);
    const Eigen::MatrixXd e4 = Eigen::MatrixXd::Identity(4, 4), e2 = Eigen::MatrixXd::Identity(2, 2);
    auto kron = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
      Mat8 out;
      for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
      return out;
    };
    o.Iz = kron(iz, e2);
    o.Ip = kron(ip, e2);
    o.Im = o.Ip.transpose();
    o.Jz = kron(e4, jz);
    o.Jp = kron(e4, jp);
    o.Jm = o.Jp.transpose();
    for (int k = 0; k < 8; ++k) o.twice_m[k] = static_cast<int>(std::lround(2 * (o.Iz(k, k) + o.Jz(k, k))));
    return o;
  }();
  return ops;
}

}  // namespace detail

inline Mat8 hyperfine_hamiltonian(const HyperfineConstants& c, double B0) {
  const auto& o = detail::spin_operators();
  const Mat8 idotj = o.Iz * o.Jz + 0.5 * (o.Ip * o.Jm + o.Im * o.Jp);
  return c.A_hfs * idotj + c.muB * B0 * (c.gJ * o.Jz + c.gI_prime * o.Iz);
}

struct Level {
  LevelLabel label;
  double energy = 0;  // MHz
  Vec8 state;         // in the |m_I, m_J> product basis
};

struct LevelSet {
  double B0 = 0;                            // mT
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  std::array<Level, n_levels> levels;       // in level_labels order
  // Magnetic moment operators gJ J + gI' I in the eigenbasis (spherical parts).
  Mat8 moment_z, moment_plus, moment_minus;

  const Level& operator[](const LevelLabel& l) const { return levels[level_index(l)]; }
  Vec8 energies() const {
    Vec8 e;
    for (std::size_t i = 0; i < n_levels; ++i) e(i) = levels[i].energy;
    return e;
  }
};

// Exact diagonalization exploiting conservation of m = m_I + m_J (blocks of
// size 1 or 2). Within each 2x2 block the F = 2 label goes to the lower
// eigenvalue when A < 0 and to the upper one otherwise.
inline LevelSet diagonalize_ground_state(const HyperfineConstants& c, double B0,
                                         const Eigen::Vector3d& axis = Eigen::Vector3d::UnitZ()) {
  if (!(B0 >= 0)) throw DataError("static field must be >= 0");
  const auto& o = detail::spin_operators();
  const Mat8 h = hyperfine_hamiltonian(c, B0);
  LevelSet ls;
  ls.B0 = B0;
  ls.axis = axis.normalized();
  for (int m = -2; m <= 2; ++m) {
    std::vector<int> idx;
    for (int k = 0; k < 8; ++k)
      if (o.twice_m[k] == 2 * m) idx.push_back(k);
    if (idx.size() == 1) {
      Level& lv = ls.levels[level_index({2, m})];
      lv.label = {2, m};
      lv.energy = h(idx[0], idx[0]);
      lv.state = Vec8::Zero();
      lv.state(idx[0]) = 1.0;
      continue;
    }
    Eigen::Matrix2d blk;
    blk << h(idx[0], idx[0]), h(idx[0], idx[1]), h(idx[1], idx[0]), h(idx[1], idx[1]);
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(blk);
    const int f2 = c.A_hfs < 0 ? 0 : 1;
    for (int k = 0; k < 2; ++k) {
      const LevelLabel label{k == f2 ? 2 : 1, m};
      Level& lv = ls.levels[level_index(label)];
      lv.label = label;
      lv.energy = es.eigenvalues()(k);
      Eigen::Vector2d v = es.eigenvectors().col(k);
      // Deterministic phase: largest component positive.
      const int lead = std::abs(v(0)) >= std::abs(v(1)) ? 0 : 1;
      if (v(lead) < 0) v = -v;
      lv.state = Vec8::Zero();
      lv.state(idx[0]) = v(0);
      lv.state(idx[1]) = v(1);
    }
  }
  Mat8 u;
  for (std::size_t i = 0; i < n_levels; ++i) u.col(i) = ls.levels[i].state;
  ls.moment_z = u.transpose() * (c.gJ * o.Jz + c.gI_prime * o.Iz) * u;
  ls.moment_plus = u.transpose() * (c.gJ * o.Jp + c.gI_prime * o.Ip) * u;
  ls.moment_minus = ls.moment_plus.transpose();
  return ls;
}

// Positive frequency |E_upper - E_lower|.
inline double transition_frequency(const LevelSet& ls, const TransitionSpec& t) {
  if (std::abs(t.delta_m()) > 1) throw DataError("transition " + to_string(t) + " violates |dm| <= 1");
  return std::abs(ls[t.upper].energy - ls[t.lower].energy);
}

struct TransitionLine {
  TransitionSpec spec;  // lower/upper ordered by energy
  double freq = 0;      // MHz
};

// All |dm| <= 1 pairs, ordered by level index.
inline std::vector<TransitionLine> all_transitions(const LevelSet& ls) {
  std::vector<TransitionLine> out;
  for (std::size_t i = 0; i < n_levels; ++i)
    for (std::size_t j = i + 1; j < n_levels; ++j) {
      const auto& a = ls.levels[i];
      const auto& b = ls.levels[j];
      if (std::abs(a.label.m - b.label.m) > 1) continue;
      TransitionLine tl;
      tl.spec = a.energy <= b.energy ? TransitionSpec{a.label, b.label} : TransitionSpec{b.label, a.label};
      tl.freq = std::abs(b.energy - a.energy);
      out.push_back(tl);
    }
  return out;
}

// Static field where the transition frequency is stationary, by bisection on
// a centered-difference derivative.
inline double clock_field(const HyperfineConstants& c, const TransitionSpec& t, double lo, double hi,
                          double tol = 1e-4) {
  const double h = 1e-3;
  auto freq = [&](double b) { return transition_frequency(diagonalize_ground_state(c, std::max(b, 0.0)), t); };
  auto slope = [&](double b) { return (freq(b + h) - freq(b - h)) / (2 * h); };
  double slo = slope(lo), shi = slope(hi);
  if (slo == 0) return lo;
  if (shi == 0) return hi;
  if ((slo > 0) == (shi > 0))
    throw NoSignChange("df/dB0 of " + to_string(t) + " keeps its sign on [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "] mT");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double sm = slope(mid);
    if ((sm > 0) == (slo > 0)) {
      lo = mid;
      slo = sm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Spherical components of an oscillating field relative to the quantization axis.
struct PolarizationAmplitudes {
  cplx b_pi{};
  cplx b_plus{};
  cplx b_minus{};
  double norm2() const { return std::norm(b_pi) + std::norm(b_plus) + std::norm(b_minus); }
};

// Right-handed triad (e1, e2, n): e1 is x projected perpendicular to n (y if
// that projection vanishes), e2 = n x e1.
inline std::array<Eigen::Vector3d, 3> polarization_triad(const Eigen::Vector3d& axis) {
  const Eigen::Vector3d n = axis.normalized();
  Eigen::Vector3d e1 = Eigen::Vector3d::UnitX() - n.x() * n;
  if (e1.norm() < 1e-6) e1 = Eigen::Vector3d::UnitY() - n.y() * n;
  e1.normalize();
  return {e1, n.cross(e1), n};
}

inline PolarizationAmplitudes decompose_polarization(const Eigen::Vector3cd& b, const Eigen::Vector3d& axis) {
  const auto triad = polarization_triad(axis);
  auto project = [&](const Eigen::Vector3d& e) { return b(0) * e(0) + b(1) * e(1) + b(2) * e(2); };
  const cplx b1 = project(triad[0]), b2 = project(triad[1]);
  const cplx i{0, 1};
  PolarizationAmplitudes p;
  p.b_pi = project(triad[2]);
  p.b_plus = (b1 - i * b2) / std::sqrt(2.0);
  p.b_minus = (b1 + i * b2) / std::sqrt(2.0);
  return p;
}

// Embeds an in-plane (x, z) phasor as (Bx, 0, Bz).
inline PolarizationAmplitudes decompose_polarization(const ComplexVec2& v, const Eigen::Vector3d& axis) {
  return decompose_polarization(Eigen::Vector3cd(v.x, 0.0, v.z), axis);
}

// Phasor coupling V/h in MHz between eigenstates; pol in uT.
inline Mat8c coupling_matrix(const LevelSet& ls, const HyperfineConstants& c, const PolarizationAmplitudes& pol) {
  const double k = c.muB * 1e-3;  // MHz per uT
  const double r2 = 1.0 / std::sqrt(2.0);
  return k * (pol.b_pi * ls.moment_z.cast<cplx>() + (pol.b_plus * r2) * ls.moment_plus.cast<cplx>() +
              (pol.b_minus * r2) * ls.moment_minus.cast<cplx>());
}

struct ShiftOptions {
  bool rwa_only = false;
  double resonance_guard = 0.01;  // MHz
};

// Second-order shift of every level for H(t) = H0 + (V e^{iwt} + V^+ e^{-iwt}) / 2:
//   dE_i = 1/4 sum_j [ |V_ij|^2 / (E_i - E_j + f) + |V_ji|^2 / (E_i - E_j - f) ].
// With rwa_only, only the term with the smaller denominator of each pair is kept.
template <class Energies, class Coupling>
Eigen::VectorXd second_order_shifts(const Energies& e, const Coupling& v, double f_drive,
                                    const ShiftOptions& opt = {}) {
  const auto n = e.size();
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double absorb = std::norm(v(i, j)), emit = std::norm(v(j, i));
      if (absorb == 0 && emit == 0) continue;
      const double d1 = e(i) - e(j) + f_drive, d2 = e(i) - e(j) - f_drive;
      if ((absorb > 0 && std::abs(d1) < opt.resonance_guard) || (emit > 0 && std::abs(d2) < opt.resonance_guard))
        throw ResonanceProximity("drive at " + std::to_string(f_drive) + " MHz within " +
                                 std::to_string(opt.resonance_guard) + " MHz of a coupled transition");
      double t1 = absorb / d1, t2 = emit / d2;
      if (opt.rwa_only) (std::abs(d1) < std::abs(d2) ? t2 : t1) = 0.0;
      d(i) += 0.25 * (t1 + t2);
    }
  }
  return d;
}

inline Vec8 ac_zeeman_shifts(const LevelSet& ls, const HyperfineConstants& c, const PolarizationAmplitudes& pol,
                             double f_drive, const ShiftOptions& opt = {}) {
  return second_order_shifts(ls.energies(), coupling_matrix(ls, c, pol), f_drive, opt);
}

// Shift of the transition frequency |E_upper - E_lower|, in MHz.
inline double transition_shift(const LevelSet& ls, const Vec8& level_shifts, const TransitionSpec& t) {
  const std::size_t a = level_index(t.lower), b = level_index(t.upper);
  const bool ordered = ls.levels[b].energy >= ls.levels[a].energy;
  const double s = level_shifts(b) - level_shifts(a);
  return ordered ? s : -s;
}

// Because every pair couples through exactly one spherical component, the
// second-order transition shift is linear in |b_pi|^2, |b_+|^2 and |b_-|^2.
// These weights (MHz per uT^2) make map evaluation cheap.
struct ShiftWeights {
  double pi = 0, plus = 0, minus = 0;

  double operator()(const PolarizationAmplitudes& p) const {
    return pi * std::norm(p.b_pi) + plus * std::norm(p.b_plus) + minus * std::norm(p.b_minus);
  }
  double pi_part(const PolarizationAmplitudes& p) const { return pi * std::norm(p.b_pi); }
  double sigma_part(const PolarizationAmplitudes& p) const {
    return plus * std::norm(p.b_plus) + minus * std::norm(p.b_minus);
  }
};

inline ShiftWeights transition_shift_weights(const LevelSet& ls, const HyperfineConstants& c, const TransitionSpec& t,
                                             double f_drive, const ShiftOptions& opt = {}) {
  ShiftWeights w;
  PolarizationAmplitudes unit_pol;
  unit_pol.b_pi = 1.0;
  w.pi = transition_shift(ls, ac_zeeman_shifts(ls, c, unit_pol, f_drive, opt), t);
  unit_pol = {0.0, 1.0, 0.0};
  w.plus = transition_shift(ls, ac_zeeman_shifts(ls, c, unit_pol, f_drive, opt), t);
  unit_pol = {0.0, 0.0, 1.0};
  w.minus = transition_shift(ls, ac_zeeman_shifts(ls, c, unit_pol, f_drive, opt), t);
  return w;
}

// Quasi-energies of H0 + (V e^{iwt} + V^+ e^{-iwt}) / 2 from the truncated
// Floquet matrix with photon blocks -harmonics..harmonics, each assigned to
// the unperturbed level with which its eigenvector overlaps most in block 0.
inline Eigen::VectorXd floquet_quasi_energies(const Eigen::VectorXd& e, const Eigen::MatrixXcd& v, double f_drive,
                                              int harmonics, double min_overlap = 0.7) {
  if (harmonics < 2) throw DataError("floquet truncation needs at least 2 harmonics");
  const Eigen::Index n = e.size();
  const Eigen::Index blocks = 2 * harmonics + 1;
  Eigen::MatrixXcd f = Eigen::MatrixXcd::Zero(n * blocks, n * blocks);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const double photon = static_cast<double>(b - harmonics);
    for (Eigen::Index i = 0; i < n; ++i) f(b * n + i, b * n + i) = e(i) - photon * f_drive;
    if (b + 1 < blocks) {
      f.block(b * n, (b + 1) * n, n, n) = 0.5 * v;
      f.block((b + 1) * n, b * n, n, n) = 0.5 * v.adjoint();
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(f);
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index row = harmonics * n + i;
    Eigen::Index best = 0;
    double overlap = -1;
    for (Eigen::Index k = 0; k < f.rows(); ++k) {
      const double o = std::norm(es.eigenvectors()(row, k));
      if (o > overlap) {
        overlap = o;
        best = k;
      }
    }
    if (overlap < min_overlap)
      throw AmbiguousConnection("level " + std::to_string(i) + " has maximum overlap " + std::to_string(overlap));
    out(i) = es.eigenvalues()(best);
  }
  return out;
}

inline Vec8 floquet_quasi_energies(const LevelSet& ls, const HyperfineConstants& c, const PolarizationAmplitudes& pol,
                                   double f_drive, int harmonics) {
  const Eigen::VectorXd e = ls.energies();
  const Eigen::MatrixXcd v = coupling_matrix(ls, c, pol);
  return floquet_quasi_energies(e, v, f_drive, harmonics);
}

// Best-effort mapping of the letter names used for the 22.3 mT level diagram.
// (B) is the field-independent (2,1) <-> (1,1) line; (A), (C), (D) are the
// sigma lines sharing a level with (B); (E) is a pi line driven far red of
// all its couplings. (A), (C), (D) and (E) are assumptions.
inline TransitionSpec transition_by_letter(char letter) {
  switch (letter) {
    case 'A': return {{2, 2}, {1, 1}};
    case 'B': return {{2, 1}, {1, 1}};
    case 'C': return {{2, 1}, {1, 0}};
    case 'D': return {{2, 0}, {1, 1}};
    case 'E': return {{2, 0}, {1, 0}};
    default: throw UnknownLevel(std::string("no transition named '") + letter + "'");
  }
}

}  // namespace nearfield
