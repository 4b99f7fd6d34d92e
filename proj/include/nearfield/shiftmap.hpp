#pragma once

// Forward model: AC Zeeman transition shifts over a spatial grid, plus the
// shift-map CSV format and masking.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "nearfield/errors.hpp"
#include "nearfield/field_grid.hpp"
#include "nearfield/hyperfine.hpp"
#include "nearfield/model.hpp"
#include "nearfield/wires.hpp"

namespace nearfield {

// Static bias field direction: in the yz plane, tilted from z towards y.
inline Eigen::Vector3d bias_axis(double tilt) { return {0.0, std::sin(tilt), std::cos(tilt)}; }

struct Probe {
  HyperfineConstants constants;
  double B0 = 22.3;  // mT
  Eigen::Vector3d axis = bias_axis(12.0 * deg);
};

struct ShiftMap {
  std::vector<double> xs, zs;  // um
  std::vector<double> shift;   // kHz, row-major in z; NaN = masked
  std::vector<double> sigma;   // kHz, same layout, or empty
  TransitionSpec transition;
  double f_drive = 0;   // MHz
  double B0 = 0;        // mT
  std::optional<Eigen::Vector3d> axis;
  double power_dB = 0;

  std::size_t nx() const { return xs.size(); }
  std::size_t nz() const { return zs.size(); }
  double at(std::size_t ix, std::size_t iz) const { return shift[iz * xs.size() + ix]; }
  std::size_t unmasked() const {
    std::size_t n = 0;
    for (double s : shift) n += std::isnan(s) ? 0 : 1;
    return n;
  }
};

inline double amplitude_factor(double power_dB) { return std::pow(10.0, power_dB / 20.0); }

struct ForwardOptions {
  bool signed_values = false;  // keep the sign instead of |shift|
  ShiftOptions shift;
};

// Pointwise evaluation; `field(x, z)` returns the phasor in uT.
template <class Field>
  requires std::invocable<Field&, double, double>
ShiftMap forward_shift_map(Field&& field, const TransitionSpec& t, const Probe& probe, double f_drive,
                           std::vector<double> xs, std::vector<double> zs, double power_dB = 0,
                           const ForwardOptions& opt = {}) {
  ShiftMap map;
  map.xs = std::move(xs);
  map.zs = std::move(zs);
  map.transition = t;
  map.f_drive = f_drive;
  map.B0 = probe.B0;
  map.axis = probe.axis;
  map.power_dB = power_dB;
  const LevelSet ls = diagonalize_ground_state(probe.constants, probe.B0, probe.axis);
  ShiftWeights w;
  try {
    w = transition_shift_weights(ls, probe.constants, t, f_drive, opt.shift);
  } catch (const ResonanceProximity& e) {
    throw ResonanceProximity(std::string(e.what()) + " at node (" + detail::format_double(map.xs.at(0)) + ", " +
                             detail::format_double(map.zs.at(0)) + ")");
  }
  const double amp = amplitude_factor(power_dB);
  map.shift.reserve(map.xs.size() * map.zs.size());
  for (double z : map.zs)
    for (double x : map.xs) {
      const ComplexVec2 v = field(x, z) * amp;
      const double s = 1e3 * w(decompose_polarization(v, probe.axis));
      map.shift.push_back(opt.signed_values ? s : std::abs(s));
    }
  return map;
}

inline ShiftMap forward_shift_map(const QuadrupoleParams& p, const TransitionSpec& t, const Probe& probe,
                                  double f_drive, std::vector<double> xs, std::vector<double> zs,
                                  double power_dB = 0, const ForwardOptions& opt = {}) {
  const FirstOrderField f = first_order_field(p);
  return forward_shift_map(
      [&](double x, double z) { return evaluate(f, Eigen::Vector2d(x - p.x0, z - p.z0)); }, t, probe, f_drive,
      std::move(xs), std::move(zs), power_dB, opt);
}

inline ShiftMap forward_shift_map(const WireSet& ws, const TransitionSpec& t, const Probe& probe, double f_drive,
                                  std::vector<double> xs, std::vector<double> zs, double power_dB = 0,
                                  const ForwardOptions& opt = {}) {
  return forward_shift_map([&](double x, double z) { return field_of_wires(ws, x, z); }, t, probe, f_drive,
                           std::move(xs), std::move(zs), power_dB, opt);
}

// Signed pi-only and sigma-only contributions (kHz); they add up to the
// signed shift because each level pair couples through one component only.
struct ShiftParts {
  std::vector<double> pi, sigma;
};

inline ShiftParts shift_components(const QuadrupoleParams& p, const TransitionSpec& t, const Probe& probe,
                                   double f_drive, const std::vector<double>& xs, const std::vector<double>& zs,
                                   double power_dB = 0) {
  const LevelSet ls = diagonalize_ground_state(probe.constants, probe.B0, probe.axis);
  const ShiftWeights w = transition_shift_weights(ls, probe.constants, t, f_drive);
  const double amp = amplitude_factor(power_dB);
  ShiftParts parts;
  for (double z : zs)
    for (double x : xs) {
      const auto pol = decompose_polarization(field_at(p, x, z) * amp, probe.axis);
      parts.pi.push_back(1e3 * w.pi_part(pol));
      parts.sigma.push_back(1e3 * w.sigma_part(pol));
    }
  return parts;
}

inline ShiftMap apply_mask(ShiftMap map, const std::function<bool(double, double)>& keep) {
  for (std::size_t iz = 0; iz < map.nz(); ++iz)
    for (std::size_t ix = 0; ix < map.nx(); ++ix)
      if (!keep(map.xs[ix], map.zs[iz])) {
        const std::size_t i = iz * map.nx() + ix;
        map.shift[i] = std::nan("");
        if (!map.sigma.empty()) map.sigma[i] = std::nan("");
      }
  return map;
}

// Gaussian noise with standard deviation rel * shift per node; sigma is set to
// the same value. Noisy values are folded to |.| since maps hold magnitudes.
inline ShiftMap add_relative_noise(ShiftMap map, double rel, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  map.sigma.assign(map.shift.size(), std::nan(""));
  for (std::size_t i = 0; i < map.shift.size(); ++i) {
    if (std::isnan(map.shift[i])) continue;
    const double s = rel * map.shift[i];
    map.sigma[i] = s;
    map.shift[i] = std::abs(map.shift[i] + s * gauss(rng));
  }
  return map;
}

// "B" style letters or explicit "F,m:F,m" (lower:upper).
inline TransitionSpec parse_transition(const std::string& text) {
  if (text.size() == 1) return transition_by_letter(text[0]);
  int f1, m1, f2, m2;
  char tail;
  if (std::sscanf(text.c_str(), "%d,%d:%d,%d%c", &f1, &m1, &f2, &m2, &tail) != 4)
    throw FormatError("cannot parse transition '" + text + "'");
  TransitionSpec t{{f1, m1}, {f2, m2}};
  level_index(t.lower);
  level_index(t.upper);
  if (std::abs(t.delta_m()) > 1) throw DataError("transition " + text + " violates |dm| <= 1");
  return t;
}

inline constexpr const char* shift_csv_header = "x_um,z_um,shift_kHz,sigma_kHz";

inline void write_shift_map(const ShiftMap& m, std::ostream& out) {
  using detail::format_double;
  out << "# transition=" << to_string(m.transition) << "\n"
      << "# f_drive_MHz=" << format_double(m.f_drive) << "\n"
      << "# B0_mT=" << format_double(m.B0) << "\n"
      << "# power_dB=" << format_double(m.power_dB) << "\n";
  if (m.axis)
    out << "# axis=" << format_double((*m.axis)(0)) << ',' << format_double((*m.axis)(1)) << ','
        << format_double((*m.axis)(2)) << "\n";
  out << shift_csv_header << "\n";
  for (std::size_t iz = 0; iz < m.nz(); ++iz)
    for (std::size_t ix = 0; ix < m.nx(); ++ix) {
      const std::size_t i = iz * m.nx() + ix;
      out << format_double(m.xs[ix]) << ',' << format_double(m.zs[iz]) << ',' << format_double(m.shift[i]) << ','
          << format_double(m.sigma.empty() ? std::nan("") : m.sigma[i]) << '\n';
    }
}

// Nodes may be omitted (treated as masked); rows may come in any order.
inline ShiftMap load_shift_map(std::istream& in) {
  ShiftMap m;
  struct Row {
    double x, z, s, sig;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header = false, have_transition = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto kv = detail::comment_kv(line);
      if (!kv) continue;
      const auto& [k, v] = *kv;
      if (k == "transition") {
        m.transition = parse_transition(v);
        have_transition = true;
      } else if (k == "f_drive_MHz") {
        m.f_drive = detail::parse_double(v, lineno);
      } else if (k == "B0_mT") {
        m.B0 = detail::parse_double(v, lineno);
      } else if (k == "power_dB") {
        m.power_dB = detail::parse_double(v, lineno);
      } else if (k == "axis") {
        const auto parts = detail::split_csv(v);
        if (parts.size() != 3) throw FormatError("line " + std::to_string(lineno) + ": axis needs 3 components");
        m.axis = Eigen::Vector3d(detail::parse_double(parts[0], lineno), detail::parse_double(parts[1], lineno),
                                 detail::parse_double(parts[2], lineno));
      }
      continue;
    }
    if (!header) {
      if (line != shift_csv_header)
        throw FormatError("line " + std::to_string(lineno) + ": unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto cols = detail::split_csv(line);
    if (cols.size() != 4)
      throw FormatError("line " + std::to_string(lineno) + ": expected 4 columns, got " + std::to_string(cols.size()));
    Row r{detail::parse_double(cols[0], lineno), detail::parse_double(cols[1], lineno),
          detail::parse_double(cols[2], lineno), detail::parse_double(cols[3], lineno)};
    if (!std::isfinite(r.x) || !std::isfinite(r.z)) throw FormatError("line " + std::to_string(lineno) + ": bad coordinate");
    rows.push_back(r);
  }
  if (!header) throw FormatError("missing header");
  if (!have_transition) throw FormatError("missing '# transition=' metadata");
  if (rows.empty()) throw FormatError("no data rows");
  std::vector<double> xs, zs;
  for (const auto& r : rows) {
    xs.push_back(r.x);
    zs.push_back(r.z);
  }
  m.xs = detail::unique_axis(std::move(xs));
  m.zs = detail::unique_axis(std::move(zs));
  const std::size_t n = m.xs.size() * m.zs.size();
  m.shift.assign(n, std::nan(""));
  std::vector<double> sigma(n, std::nan(""));
  std::vector<char> seen(n, 0);
  bool any_sigma = false;
  for (const auto& r : rows) {
    const std::size_t i = detail::axis_index(m.zs, r.z) * m.xs.size() + detail::axis_index(m.xs, r.x);
    if (seen[i]) throw FormatError("duplicate node (" + detail::format_double(r.x) + ", " + detail::format_double(r.z) + ")");
    seen[i] = 1;
    m.shift[i] = r.s;
    sigma[i] = r.sig;
    any_sigma = any_sigma || !std::isnan(r.sig);
  }
  if (any_sigma) m.sigma = std::move(sigma);
  return m;
}

}  // namespace nearfield
