#pragma once

// Five-parameter description of a 2D oscillating near-field around an
// intensity minimum, and the reduction of a general first-order expansion
// (offset + traceless symmetric gradient, both complex) to that form.
//
// Phasor convention: the physical field is Re{ v * exp(i w t) }.
// Units: uT for fields, uT/um for gradients, um for positions, MHz, radians.

#include <cmath>
#include <complex>
#include <numbers>

#include <Eigen/Dense>

namespace nearfield {

using cplx = std::complex<double>;
inline constexpr double pi = std::numbers::pi;
inline constexpr double deg = pi / 180.0;

struct ComplexVec2 {
  cplx x{};
  cplx z{};

  ComplexVec2 operator+(const ComplexVec2& o) const { return {x + o.x, z + o.z}; }
  ComplexVec2 operator-(const ComplexVec2& o) const { return {x - o.x, z - o.z}; }
  ComplexVec2 operator*(cplx s) const { return {x * s, z * s}; }
  ComplexVec2& operator+=(const ComplexVec2& o) {
    x += o.x;
    z += o.z;
    return *this;
  }

  double norm2() const { return std::norm(x) + std::norm(z); }
  double norm() const { return std::sqrt(norm2()); }
  Eigen::Vector2d real() const { return {x.real(), z.real()}; }
  Eigen::Vector2d imag() const { return {x.imag(), z.imag()}; }
  bool finite() const {
    return std::isfinite(x.real()) && std::isfinite(x.imag()) && std::isfinite(z.real()) &&
           std::isfinite(z.imag());
  }
};

// General first-order expansion with the near-field condition already imposed:
//   v(r) = (B_r e_{alpha_r} + i B_i e_{alpha_i}) + (Bp_r Q_{beta_r} + i Bp_i Q_{beta_i}) r
struct RawExpansion {
  double B_r = 0, B_i = 0;
  double alpha_r = 0, alpha_i = 0;
  double Bp_r = 0, Bp_i = 0;
  double beta_r = 0, beta_i = 0;
};

struct QuadrupoleParams {
  double B = 0;      // offset field, uT (sign carries the alpha <-> alpha+pi identification)
  double Bp = 0;     // gradient, uT/um
  double alpha = 0;  // offset orientation, [0, pi)
  double beta = 0;   // gradient orientation, [0, pi)
  double psi = 0;    // polarization angle
  double x0 = 0, z0 = 0;  // position of the |B| minimum, um
  double freq = 0;        // drive frequency, MHz

  // Offset-to-gradient length scale in um.
  double ratio() const { return B / Bp; }
};

struct CanonicalDiagnostics {
  double phase_applied = 0;
  double residual_alpha_orthogonality = 0;
  double residual_phi_psi = 0;
  // Relative size of the trace / antisymmetric part discarded when projecting a
  // fitted gradient onto the traceless symmetric subspace.
  double gradient_trace_defect = 0;
  double gradient_symmetry_defect = 0;
  bool degenerate_offset = false;
  bool degenerate_gradient = false;
  bool ambiguous_phase = false;
  bool within_tolerance = true;
};

struct CanonicalizeOptions {
  double residual_tol = 1e-6;        // rad
  double degenerate_rel_tol = 1e-9;  // relative to the larger of |offset| and |gradient|*1um
};

// Complex offset and complex 2x2 Jacobian d(B_k)/d(r_l) with r = (x, z).
struct FirstOrderField {
  ComplexVec2 offset;
  Eigen::Matrix2cd gradient = Eigen::Matrix2cd::Zero();
};

inline Eigen::Vector2d unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

inline Eigen::Matrix2d quadrupole_matrix(double beta) {
  const double c = std::cos(beta), s = std::sin(beta);
  Eigen::Matrix2d q;
  q << c, s, s, -c;
  return q;
}

// Maps an angle into [0, pi). Returns the number of pi steps taken, so callers
// can absorb the sign flip into the associated amplitude.
inline long wrap_half_turn(double& angle) {
  const double k = std::floor(angle / pi);
  angle -= k * pi;
  if (angle >= pi) {  // rounding at the upper edge
    angle -= pi;
    return static_cast<long>(k) + 1;
  }
  if (angle < 0) angle = 0;
  return static_cast<long>(k);
}

inline double parity_sign(long k) { return (k % 2 == 0) ? 1.0 : -1.0; }

// Maps an angle into [-pi/2, pi/2).
inline double wrap_symmetric_half_turn(double angle) {
  double a = angle + pi / 2;
  wrap_half_turn(a);
  return a - pi / 2;
}

inline FirstOrderField first_order_field(const QuadrupoleParams& p) {
  const double s = std::sin(p.psi), c = std::cos(p.psi);
  const Eigen::Vector2d ea = unit(p.alpha);
  const Eigen::Vector2d ea_perp = unit(p.alpha - pi / 2);
  FirstOrderField f;
  f.offset.x = p.B * cplx(ea(0) * s, -ea_perp(0) * c);
  f.offset.z = p.B * cplx(ea(1) * s, -ea_perp(1) * c);
  const Eigen::Matrix2d qr = quadrupole_matrix(p.beta) * (p.Bp * c);
  const Eigen::Matrix2d qi = quadrupole_matrix(p.beta - pi / 2) * (p.Bp * s);
  f.gradient.real() = qr;
  f.gradient.imag() = qi;
  return f;
}

inline ComplexVec2 evaluate(const FirstOrderField& f, const Eigen::Vector2d& r) {
  return {f.offset.x + f.gradient(0, 0) * r(0) + f.gradient(0, 1) * r(1),
          f.offset.z + f.gradient(1, 0) * r(0) + f.gradient(1, 1) * r(1)};
}

// Phasor at displacement r (um) from the minimum.
inline ComplexVec2 synthesize_phasor(const QuadrupoleParams& p, const Eigen::Vector2d& r) {
  return evaluate(first_order_field(p), r);
}

// Phasor at absolute position (x, z).
inline ComplexVec2 field_at(const QuadrupoleParams& p, double x, double z) {
  return synthesize_phasor(p, Eigen::Vector2d(x - p.x0, z - p.z0));
}

namespace detail {

// Magnitude >= 0 and angle of a real 2-vector.
inline void polar(const Eigen::Vector2d& v, double& mag, double& angle) {
  mag = v.norm();
  angle = (mag > 0) ? std::atan2(v(1), v(0)) : 0.0;
}

// Coordinates of a traceless symmetric matrix in the (Q_0, Q_{pi/2}) basis.
inline Eigen::Vector2cd quadrupole_coords(const Eigen::Matrix2cd& g) {
  return {0.5 * (g(0, 0) - g(1, 1)), 0.5 * (g(0, 1) + g(1, 0))};
}

}  // namespace detail

// Projects a first-order field onto the near-field form. Discarded trace and
// antisymmetric parts are reported relative to the gradient norm.
inline RawExpansion raw_expansion(const FirstOrderField& f, double* trace_defect = nullptr,
                                  double* symmetry_defect = nullptr) {
  RawExpansion raw;
  detail::polar(f.offset.real(), raw.B_r, raw.alpha_r);
  detail::polar(f.offset.imag(), raw.B_i, raw.alpha_i);
  const Eigen::Vector2cd c = detail::quadrupole_coords(f.gradient);
  detail::polar(c.real(), raw.Bp_r, raw.beta_r);
  detail::polar(c.imag(), raw.Bp_i, raw.beta_i);
  const double gnorm = f.gradient.norm();
  if (trace_defect) *trace_defect = gnorm > 0 ? std::abs(f.gradient.trace()) / gnorm : 0.0;
  if (symmetry_defect)
    *symmetry_defect = gnorm > 0 ? std::abs(f.gradient(0, 1) - f.gradient(1, 0)) / gnorm : 0.0;
  return raw;
}

inline RawExpansion decompose(const QuadrupoleParams& p) { return raw_expansion(first_order_field(p)); }

struct Canonical {
  QuadrupoleParams params;
  CanonicalDiagnostics diagnostics;
};

// Reduces eight raw parameters to five: picks the global phase maximizing the
// real part of the gradient, then reads B, alpha from the offset under the
// minimum-at-origin constraints and reports how well those constraints hold.
inline Canonical canonicalize(const RawExpansion& raw, const CanonicalizeOptions& opt = {}) {
  Canonical out;
  auto& p = out.params;
  auto& d = out.diagnostics;

  Eigen::Vector2cd v0 = unit(raw.alpha_r).cast<cplx>() * raw.B_r +
                        unit(raw.alpha_i).cast<cplx>() * cplx(0, raw.B_i);
  Eigen::Vector2cd c = unit(raw.beta_r).cast<cplx>() * raw.Bp_r +
                       unit(raw.beta_i).cast<cplx>() * cplx(0, raw.Bp_i);

  const double gnorm = c.norm();  // equals B' for any phase
  const double onorm = v0.norm();
  const double scale = std::max(onorm, gnorm);
  d.degenerate_gradient = gnorm <= opt.degenerate_rel_tol * scale || gnorm == 0.0;

  auto apply_phase = [&](double chi) {
    const cplx rot = std::polar(1.0, -chi);
    v0 *= rot;
    c *= rot;
    d.phase_applied += chi;
  };

  if (d.degenerate_gradient) {
    // Only the offset is left; treat it as a psi = 0 field, v0 = i B e_{alpha+pi/2}.
    const cplx s = v0(0) * v0(0) + v0(1) * v0(1);
    apply_phase(0.5 * std::arg(s) + pi / 2);
    p.Bp = 0;
    p.beta = 0;
    p.psi = 0;
    double mag = 0, ang = 0;
    detail::polar(v0.imag(), mag, ang);
    p.alpha = ang - pi / 2;
    wrap_half_turn(p.alpha);
    p.B = mag;  // the sign is a global phase without a gradient to refer to
    d.degenerate_offset = onorm == 0.0;
    d.within_tolerance = true;
    return out;
  }

  const cplx s = c(0) * c(0) + c(1) * c(1);
  double chi = 0;
  if (std::abs(s) <= 1e-12 * gnorm * gnorm) {
    d.ambiguous_phase = true;
  } else {
    chi = 0.5 * std::arg(s);
    double chi_wrapped = chi;
    wrap_half_turn(chi_wrapped);
    chi = chi_wrapped;
  }
  apply_phase(chi);

  Eigen::Vector2d a = c.real();
  if (std::atan2(a(1), a(0)) < 0) {
    apply_phase(pi);
    a = c.real();
  }
  double bp_r = 0;
  detail::polar(a, bp_r, p.beta);
  if (p.beta >= pi) p.beta -= pi;
  const double bp_i = c.imag().dot(unit(p.beta - pi / 2));
  p.Bp = std::hypot(bp_r, bp_i);
  p.psi = std::atan2(bp_i, bp_r);

  // Offset: least-squares B e_alpha from v0 = B (sin psi I - i cos psi J) e_alpha,
  // with J e_alpha = e_{alpha - pi/2}. The stacked real system is orthonormal.
  const double sp = std::sin(p.psi), cp = std::cos(p.psi);
  const Eigen::Vector2d re = v0.real(), im = v0.imag();
  const Eigen::Vector2d w = sp * re + cp * Eigen::Vector2d(im(1), -im(0));
  double bmag = 0;
  detail::polar(w, bmag, p.alpha);
  p.B = bmag * parity_sign(wrap_half_turn(p.alpha));

  d.degenerate_offset = std::abs(p.B) <= opt.degenerate_rel_tol * scale;
  if (!d.degenerate_offset) {
    const double nr = re.norm(), ni = im.norm();
    if (nr > opt.degenerate_rel_tol * onorm && ni > opt.degenerate_rel_tol * onorm)
      d.residual_alpha_orthogonality = std::asin(std::min(1.0, std::abs(re.dot(im)) / (nr * ni)));
    const double b_r = re.dot(unit(p.alpha));
    const double b_i = im.dot(unit(p.alpha - pi / 2));
    d.residual_phi_psi = wrap_symmetric_half_turn(std::atan2(b_i, b_r) - (p.psi - pi / 2));
  }
  d.within_tolerance = std::abs(d.residual_alpha_orthogonality) <= opt.residual_tol &&
                       std::abs(d.residual_phi_psi) <= opt.residual_tol;
  return out;
}

inline Canonical canonicalize(const FirstOrderField& f, const CanonicalizeOptions& opt = {}) {
  double trace = 0, sym = 0;
  Canonical out = canonicalize(raw_expansion(f, &trace, &sym), opt);
  out.diagnostics.gradient_trace_defect = trace;
  out.diagnostics.gradient_symmetry_defect = sym;
  return out;
}

// Brings (B, Bp, alpha, beta, psi) into the canonical domains without changing
// the field up to a global sign: alpha, beta in [0, pi), Bp >= 0.
inline QuadrupoleParams normalize_domains(QuadrupoleParams p) {
  const long kpsi = static_cast<long>(std::floor((p.psi + pi / 2) / pi));
  p.psi -= kpsi * pi;
  if (kpsi % 2 != 0) {
    p.B = -p.B;
    p.Bp = -p.Bp;
  }
  p.B *= parity_sign(wrap_half_turn(p.alpha));
  p.Bp *= parity_sign(wrap_half_turn(p.beta));
  if (p.Bp < 0) {
    p.Bp = -p.Bp;
    p.B = -p.B;
  }
  return p;
}

// Full canonical form of an arbitrary parameter vector, including the
// psi -> pi/2 - psi reflection that applies when |psi| > pi/4.
inline QuadrupoleParams canonical_form(const QuadrupoleParams& p, const CanonicalizeOptions& opt = {}) {
  if (p.Bp == 0.0) return normalize_domains(p);
  QuadrupoleParams out = canonicalize(decompose(p), opt).params;
  out.x0 = p.x0;
  out.z0 = p.z0;
  out.freq = p.freq;
  return out;
}

// Same field expressed in axes rotated by theta.
inline QuadrupoleParams rotate_frame(QuadrupoleParams p, double theta) {
  p.alpha += theta;
  p.beta += 2 * theta;
  return normalize_domains(p);
}

struct Ellipse {
  double major = 0;
  double minor = 0;
  double orientation = 0;  // [0, pi); 0 when circular
  bool circular = false;
};

// Ellipse traced by Re{v exp(i w t)}.
inline Ellipse polarization_ellipse(const ComplexVec2& v) {
  Ellipse e;
  const cplx s = v.x * v.x + v.z * v.z;
  const double n2 = v.norm2();
  if (n2 == 0.0) {
    e.circular = true;
    return e;
  }
  if (std::abs(s) <= 1e-12 * n2) {
    e.circular = true;
    e.major = e.minor = std::sqrt(n2 / 2);
    return e;
  }
  const cplx rot = std::polar(1.0, -0.5 * std::arg(s));
  const Eigen::Vector2d a{(v.x * rot).real(), (v.z * rot).real()};
  const Eigen::Vector2d b{(v.x * rot).imag(), (v.z * rot).imag()};
  e.major = a.norm();
  e.minor = b.norm();
  e.orientation = std::atan2(a(1), a(0));
  wrap_half_turn(e.orientation);
  return e;
}

}  // namespace nearfield
