#pragma once

// Analytic 2D near-fields of infinitely long line currents along y.
// Complex amplitudes carry the drive phase of each conductor.

#include <cmath>
#include <concepts>
#include <string>
#include <string_view>
#include <vector>

#include "nearfield/errors.hpp"
#include "nearfield/model.hpp"

namespace nearfield {

// mu0 / (2 pi) in uT * um / A.
inline constexpr double mu0_over_2pi = 2.0e5;
inline constexpr double min_wire_distance = 1.0;  // um

struct LineCurrent {
  double x = 0;  // um
  double z = 0;  // um
  cplx amplitude{};  // A
};

struct WireSet {
  std::vector<LineCurrent> wires;
  double freq = 0;  // MHz

  WireSet scaled(cplx factor) const {
    WireSet out = *this;
    for (auto& w : out.wires) w.amplitude *= factor;
    return out;
  }
};

inline void validate(const WireSet& ws) {
  if (ws.wires.empty()) throw DataError("wire set is empty");
  for (std::size_t i = 0; i < ws.wires.size(); ++i) {
    const auto& a = ws.wires[i];
    if (!std::isfinite(a.x) || !std::isfinite(a.z) || !std::isfinite(a.amplitude.real()) ||
        !std::isfinite(a.amplitude.imag()))
      throw DataError("wire " + std::to_string(i) + " has non-finite data");
    if (std::abs(a.amplitude) == 0.0) throw DataError("wire " + std::to_string(i) + " carries no current");
    for (std::size_t j = 0; j < i; ++j)
      if (ws.wires[j].x == a.x && ws.wires[j].z == a.z)
        throw DataError("wires " + std::to_string(j) + " and " + std::to_string(i) + " coincide");
  }
}

inline void check_clearance(const WireSet& ws, double x, double z) {
  for (const auto& w : ws.wires)
    if (std::hypot(x - w.x, z - w.z) < min_wire_distance)
      throw TooCloseToWire("point (" + std::to_string(x) + ", " + std::to_string(z) +
                           ") um is within " + std::to_string(min_wire_distance) + " um of a wire");
}

inline ComplexVec2 field_of_wires(const WireSet& ws, double x, double z) {
  check_clearance(ws, x, z);
  ComplexVec2 b;
  for (const auto& w : ws.wires) {
    const double dx = x - w.x, dz = z - w.z;
    const double k = mu0_over_2pi / (dx * dx + dz * dz);
    b.x += w.amplitude * (-dz * k);
    b.z += w.amplitude * (dx * k);
  }
  return b;
}

// Closed-form Jacobian d(B_k)/d(r_l), r = (x, z).
inline Eigen::Matrix2cd gradient_of_wires(const WireSet& ws, double x, double z) {
  check_clearance(ws, x, z);
  Eigen::Matrix2cd g = Eigen::Matrix2cd::Zero();
  for (const auto& w : ws.wires) {
    const double dx = x - w.x, dz = z - w.z;
    const double r2 = dx * dx + dz * dz;
    const double k = mu0_over_2pi / (r2 * r2);
    const cplx a = w.amplitude * k;
    g(0, 0) += a * (2 * dx * dz);
    g(0, 1) += a * (dz * dz - dx * dx);
    g(1, 0) += a * (dz * dz - dx * dx);
    g(1, 1) += a * (-2 * dx * dz);
  }
  return g;
}

struct NearfieldResiduals {
  double max_div = 0;       // uT/um
  double max_curl = 0;      // uT/um
  double max_rel_div = 0;   // relative to the local gradient norm
  double max_rel_curl = 0;
};

// Central-difference divergence and curl of an arbitrary phasor field
// `field(x, z) -> ComplexVec2`, maximized over the grid nodes.
template <class Field>
  requires std::invocable<Field&, double, double>
NearfieldResiduals nearfield_residuals(Field&& field, const std::vector<double>& xs,
                                       const std::vector<double>& zs, double step) {
  NearfieldResiduals res;
  for (double z : zs) {
    for (double x : xs) {
      const ComplexVec2 dxb = (field(x + step, z) - field(x - step, z)) * (0.5 / step);
      const ComplexVec2 dzb = (field(x, z + step) - field(x, z - step)) * (0.5 / step);
      const double div = std::abs(dxb.x + dzb.z);
      const double curl = std::abs(dzb.x - dxb.z);
      const double gnorm = std::sqrt(dxb.norm2() + dzb.norm2());
      res.max_div = std::max(res.max_div, div);
      res.max_curl = std::max(res.max_curl, curl);
      if (gnorm > 0) {
        res.max_rel_div = std::max(res.max_rel_div, div / gnorm);
        res.max_rel_curl = std::max(res.max_rel_curl, curl / gnorm);
      }
    }
  }
  return res;
}

inline NearfieldResiduals nearfield_residuals(const WireSet& ws, const std::vector<double>& xs,
                                              const std::vector<double>& zs, double step) {
  return nearfield_residuals([&](double x, double z) { return field_of_wires(ws, x, z); }, xs, zs,
                             step);
}

enum class Preset { single, parallel_pair, meander, meander_eddy };

inline Preset parse_preset(std::string_view name) {
  if (name == "single") return Preset::single;
  if (name == "parallel-pair") return Preset::parallel_pair;
  if (name == "meander") return Preset::meander;
  if (name == "meander-eddy") return Preset::meander_eddy;
  throw UnknownPreset(std::string(name));
}

// Meander: center conductor at +1 A, outer conductors at x = +-50 um carrying
// -(2500 + 45^2) / (2 * 45^2) A each, which puts the field zero at (0, 45) um.
inline constexpr double meander_outer_current = -(2500.0 + 2025.0) / (2.0 * 2025.0);
inline constexpr double meander_eddy_amplitude = 0.05;  // A, in quadrature
inline constexpr double meander_eddy_left_x = -80.0;
inline constexpr double meander_eddy_right_x = 110.0;

inline WireSet meander_eddy(double eddy_amplitude) {
  WireSet ws;
  ws.freq = 1000.0;
  ws.wires = {{-50.0, 0.0, meander_outer_current},
              {0.0, 0.0, 1.0},
              {50.0, 0.0, meander_outer_current}};
  if (eddy_amplitude != 0.0) {
    ws.wires.push_back({meander_eddy_left_x, 0.0, cplx(0, eddy_amplitude)});
    ws.wires.push_back({meander_eddy_right_x, 0.0, cplx(0, eddy_amplitude)});
  }
  return ws;
}

inline WireSet preset_scenario(Preset preset) {
  WireSet ws;
  ws.freq = 1000.0;
  switch (preset) {
    case Preset::single:
      ws.wires = {{0.0, 0.0, 1.0}};
      break;
    case Preset::parallel_pair:
      ws.wires = {{-100.0, 0.0, 1.0}, {100.0, 0.0, 1.0}};
      break;
    case Preset::meander:
      ws = meander_eddy(0.0);
      break;
    case Preset::meander_eddy:
      ws = meander_eddy(meander_eddy_amplitude);
      break;
  }
  return ws;
}

inline WireSet preset_scenario(std::string_view name) { return preset_scenario(parse_preset(name)); }

}  // namespace nearfield
