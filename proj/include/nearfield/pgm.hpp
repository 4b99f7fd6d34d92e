#pragma once

// 16-bit binary PGM heatmaps: x increases left to right, z bottom to top,
// linear from 0 to the largest unmasked value, masked cells black.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "nearfield/errors.hpp"
#include "nearfield/field_grid.hpp"
#include "nearfield/shiftmap.hpp"

namespace nearfield {

struct Heatmap {
  std::size_t width = 0, height = 0;
  std::vector<std::uint16_t> pixels;  // top row first
  double scale_max = 0;               // value mapped to 65535
};

// values: row-major in z (index iz * nx + ix); NaN = masked.
inline Heatmap make_heatmap(const std::vector<double>& values, std::size_t nx, std::size_t nz) {
  double vmax = -INFINITY;
  std::size_t valid = 0;
  for (double v : values)
    if (!std::isnan(v)) {
      vmax = std::max(vmax, v);
      ++valid;
    }
  if (valid == 0) throw EmptyMap("no unmasked cells");
  Heatmap h;
  h.width = nx;
  h.height = nz;
  h.scale_max = vmax;
  h.pixels.resize(nx * nz);
  for (std::size_t row = 0; row < nz; ++row) {
    const std::size_t iz = nz - 1 - row;
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double v = values[iz * nx + ix];
      std::uint16_t px = 0;
      if (!std::isnan(v) && vmax > 0) px = static_cast<std::uint16_t>(std::floor(std::clamp(v / vmax, 0.0, 1.0) * 65535.0));
      h.pixels[row * nx + ix] = px;
    }
  }
  return h;
}

inline Heatmap make_heatmap(const ShiftMap& m) { return make_heatmap(m.shift, m.nx(), m.nz()); }

inline Heatmap make_heatmap(const FieldGrid& g) {
  std::vector<double> v;
  v.reserve(g.samples.size());
  for (const auto& s : g.samples) v.push_back(s.norm());
  return make_heatmap(v, g.nx(), g.nz());
}

inline void write_pgm(const Heatmap& h, std::ostream& out) {
  out << "P5\n" << h.width << ' ' << h.height << "\n65535\n";
  for (std::uint16_t p : h.pixels) {
    const char bytes[2] = {static_cast<char>(p >> 8), static_cast<char>(p & 0xff)};
    out.write(bytes, 2);
  }
}

}  // namespace nearfield
