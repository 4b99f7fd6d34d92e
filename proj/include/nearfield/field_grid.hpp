#pragma once

// Sampled complex fields on rectangular (x, z) grids: CSV I/O, 2D complex
// polynomial fits, minimum location and extraction of the five-parameter
// quadrupole description around the minimum.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nearfield/errors.hpp"
#include "nearfield/model.hpp"

namespace nearfield {

struct FieldGrid {
  std::vector<double> xs;  // um, strictly increasing
  std::vector<double> zs;  // um, strictly increasing
  std::vector<ComplexVec2> samples;  // row-major in z: index = iz * xs.size() + ix
  double freq = 0;                   // MHz
  // Largest |By| / |(Bx, Bz)| seen when the source carried a y component.
  std::optional<double> max_y_fraction;

  std::size_t nx() const { return xs.size(); }
  std::size_t nz() const { return zs.size(); }
  const ComplexVec2& at(std::size_t ix, std::size_t iz) const { return samples[iz * xs.size() + ix]; }
  ComplexVec2& at(std::size_t ix, std::size_t iz) { return samples[iz * xs.size() + ix]; }
};

// lo, lo + step, ... up to hi (inclusive within 1e-9 step).
inline std::vector<double> axis_range(double lo, double hi, double step) {
  if (!(step > 0) || !(hi >= lo)) throw DataError("invalid axis range");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = lo + static_cast<double>(i) * step;
  return out;
}

inline std::vector<double> centered_axis(double center, double halfwidth, double step) {
  const auto half = static_cast<long>(std::floor(halfwidth / step + 1e-9));
  std::vector<double> out;
  for (long i = -half; i <= half; ++i) out.push_back(center + static_cast<double>(i) * step);
  return out;
}

template <class Field>
FieldGrid sample_field(Field&& field, std::vector<double> xs, std::vector<double> zs, double freq) {
  FieldGrid g;
  g.xs = std::move(xs);
  g.zs = std::move(zs);
  g.freq = freq;
  g.samples.reserve(g.xs.size() * g.zs.size());
  for (double z : g.zs)
    for (double x : g.xs) g.samples.push_back(field(x, z));
  return g;
}

inline constexpr const char* field_csv_header = "x_um,z_um,re_Bx_uT,im_Bx_uT,re_Bz_uT,im_Bz_uT";
inline constexpr const char* field_csv_header_y =
    "x_um,z_um,re_Bx_uT,im_Bx_uT,re_Bz_uT,im_Bz_uT,re_By_uT,im_By_uT";

namespace detail {

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

inline double parse_double(const std::string& field, std::size_t line) {
  std::string s = trim(field);
  if (s == "nan" || s == "NaN") return std::nan("");
  double v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty())
    throw FormatError("line " + std::to_string(line) + ": cannot parse number '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// "# key=value" comment -> (key, value).
inline std::optional<std::pair<std::string, std::string>> comment_kv(const std::string& line) {
  std::string body = trim(line.substr(1));
  const auto eq = body.find('=');
  if (eq == std::string::npos) return std::nullopt;
  return std::make_pair(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
}

// Sorted unique coordinates; values closer than 1e-9 um are merged.
inline std::vector<double> unique_axis(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  for (double x : v)
    if (out.empty() || x - out.back() > 1e-9) out.push_back(x);
  return out;
}

inline std::size_t axis_index(const std::vector<double>& axis, double v) {
  auto it = std::lower_bound(axis.begin(), axis.end(), v - 1e-9);
  return static_cast<std::size_t>(it - axis.begin());
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

// Parses a field CSV. Rows may come in any order but must cover every node of
// the rectangular grid spanned by the distinct coordinates exactly once.
inline FieldGrid load_grid(std::istream& in) {
  struct Row {
    double x, z;
    ComplexVec2 b;
    double by2;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false, has_y = false;
  double freq = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (auto kv = detail::comment_kv(line); kv && kv->first == "freq_MHz")
        freq = detail::parse_double(kv->second, lineno);
      continue;
    }
    if (!header_seen) {
      if (line == field_csv_header) {
        has_y = false;
      } else if (line == field_csv_header_y) {
        has_y = true;
      } else {
        throw FormatError("line " + std::to_string(lineno) + ": unexpected header '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    const auto cols = detail::split_csv(line);
    const std::size_t want = has_y ? 8 : 6;
    if (cols.size() != want)
      throw FormatError("line " + std::to_string(lineno) + ": expected " + std::to_string(want) +
                        " columns, got " + std::to_string(cols.size()));
    double v[8];
    for (std::size_t i = 0; i < want; ++i) {
      v[i] = detail::parse_double(cols[i], lineno);
      if (!std::isfinite(v[i])) throw FormatError("line " + std::to_string(lineno) + ": non-finite value");
    }
    rows.push_back({v[0], v[1], {cplx(v[2], v[3]), cplx(v[4], v[5])},
                    has_y ? v[6] * v[6] + v[7] * v[7] : 0.0});
  }
  if (!header_seen) throw FormatError("missing header");
  if (rows.empty()) throw FormatError("no data rows");

  FieldGrid g;
  g.freq = freq;
  std::vector<double> xs, zs;
  for (const auto& r : rows) {
    xs.push_back(r.x);
    zs.push_back(r.z);
  }
  g.xs = detail::unique_axis(std::move(xs));
  g.zs = detail::unique_axis(std::move(zs));
  const std::size_t nodes = g.xs.size() * g.zs.size();
  g.samples.assign(nodes, ComplexVec2{});
  std::vector<char> filled(nodes, 0);
  double yfrac = 0;
  for (const auto& r : rows) {
    const std::size_t idx = detail::axis_index(g.zs, r.z) * g.xs.size() + detail::axis_index(g.xs, r.x);
    if (filled[idx]) throw FormatError("duplicate node (" + detail::format_double(r.x) + ", " +
                                       detail::format_double(r.z) + ")");
    filled[idx] = 1;
    g.samples[idx] = r.b;
    const double inplane = r.b.norm2();
    if (has_y && r.by2 > 0) yfrac = std::max(yfrac, inplane > 0 ? std::sqrt(r.by2 / inplane) : INFINITY);
  }
  if (rows.size() != nodes)
    throw NonRectangular(std::to_string(nodes - rows.size()) + " of " + std::to_string(nodes) +
                         " grid nodes missing");
  if (has_y) g.max_y_fraction = yfrac;
  return g;
}

inline FieldGrid load_grid_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return load_grid(in);
}

inline void write_grid(const FieldGrid& g, std::ostream& out) {
  out << "# freq_MHz=" << detail::format_double(g.freq) << "\n" << field_csv_header << "\n";
  for (std::size_t iz = 0; iz < g.nz(); ++iz)
    for (std::size_t ix = 0; ix < g.nx(); ++ix) {
      const auto& b = g.at(ix, iz);
      out << detail::format_double(g.xs[ix]) << ',' << detail::format_double(g.zs[iz]) << ','
          << detail::format_double(b.x.real()) << ',' << detail::format_double(b.x.imag()) << ','
          << detail::format_double(b.z.real()) << ',' << detail::format_double(b.z.imag()) << '\n';
    }
}

// Complex polynomial sum_{i+j<=order} c_ij u^i w^j per field component, in the
// window coordinates u = (x - cx) / h, w = (z - cz) / h.
struct PolyFit {
  int order = 0;
  double cx = 0, cz = 0;  // window center, um
  double halfwidth = 1;   // h, um
  std::vector<std::pair<int, int>> exponents;
  std::vector<cplx> coeffs_x, coeffs_z;
  double residual_rel = 0;  // ||A c - y|| / ||y||
  double condition = 0;
  std::size_t n_samples = 0;

  static std::size_t coefficient_count(int order) {
    return static_cast<std::size_t>((order + 1) * (order + 2) / 2);
  }

  cplx coeff_x(int i, int j) const { return coeffs_x[index(i, j)]; }
  cplx coeff_z(int i, int j) const { return coeffs_z[index(i, j)]; }

  static std::size_t index(int i, int j) {
    const int d = i + j;
    return static_cast<std::size_t>(d * (d + 1) / 2 + j);
  }

  // Value, gradient and Hessian in physical coordinates.
  struct Eval {
    ComplexVec2 value;
    ComplexVec2 d[2];       // d/dx, d/dz
    ComplexVec2 dd[2][2];
  };

  Eval evaluate(double x, double z) const {
    const double u = (x - cx) / halfwidth, w = (z - cz) / halfwidth;
    std::vector<double> pu(order + 1, 1.0), pw(order + 1, 1.0);
    for (int k = 1; k <= order; ++k) {
      pu[k] = pu[k - 1] * u;
      pw[k] = pw[k - 1] * w;
    }
    auto p = [](const std::vector<double>& pows, int k) { return k < 0 ? 0.0 : pows[k]; };
    Eval e;
    const double ih = 1.0 / halfwidth, ih2 = ih * ih;
    for (std::size_t n = 0; n < exponents.size(); ++n) {
      const auto [i, j] = exponents[n];
      const ComplexVec2 c{coeffs_x[n], coeffs_z[n]};
      e.value += c * (p(pu, i) * p(pw, j));
      e.d[0] += c * (i * p(pu, i - 1) * p(pw, j) * ih);
      e.d[1] += c * (j * p(pu, i) * p(pw, j - 1) * ih);
      e.dd[0][0] += c * (i * (i - 1) * p(pu, i - 2) * p(pw, j) * ih2);
      e.dd[1][1] += c * (j * (j - 1) * p(pu, i) * p(pw, j - 2) * ih2);
      e.dd[0][1] += c * (i * j * p(pu, i - 1) * p(pw, j - 1) * ih2);
    }
    e.dd[1][0] = e.dd[0][1];
    return e;
  }

  ComplexVec2 value(double x, double z) const { return evaluate(x, z).value; }

  // Zeroth and first order terms about the window center.
  FirstOrderField first_order() const {
    FirstOrderField f;
    f.offset = {coeff_x(0, 0), coeff_z(0, 0)};
    if (order >= 1) {
      f.gradient(0, 0) = coeff_x(1, 0) / halfwidth;
      f.gradient(0, 1) = coeff_x(0, 1) / halfwidth;
      f.gradient(1, 0) = coeff_z(1, 0) / halfwidth;
      f.gradient(1, 1) = coeff_z(0, 1) / halfwidth;
    }
    return f;
  }
};

inline constexpr double max_fit_condition = 1e12;

// Linear least squares (column-pivoted Householder QR) on the samples inside
// the square window |x - cx| <= h, |z - cz| <= h.
inline PolyFit fit_complex_polynomial(const FieldGrid& g, double cx, double cz, double halfwidth,
                                      int order) {
  if (order < 1) throw DataError("polynomial order must be >= 1");
  if (!(halfwidth > 0)) throw DataError("window halfwidth must be positive");
  PolyFit fit;
  fit.order = order;
  fit.cx = cx;
  fit.cz = cz;
  fit.halfwidth = halfwidth;
  for (int d = 0; d <= order; ++d)
    for (int j = 0; j <= d; ++j) fit.exponents.emplace_back(d - j, j);
  const std::size_t m = fit.exponents.size();

  const double slack = 1e-9 * halfwidth;
  std::vector<std::pair<std::size_t, std::size_t>> nodes;
  for (std::size_t iz = 0; iz < g.nz(); ++iz)
    for (std::size_t ix = 0; ix < g.nx(); ++ix)
      if (std::abs(g.xs[ix] - cx) <= halfwidth + slack && std::abs(g.zs[iz] - cz) <= halfwidth + slack)
        nodes.emplace_back(ix, iz);
  fit.n_samples = nodes.size();
  if (nodes.size() < m)
    throw Underdetermined(std::to_string(nodes.size()) + " samples in window, order " +
                          std::to_string(order) + " needs " + std::to_string(m));

  Eigen::MatrixXd a(nodes.size(), m);
  Eigen::MatrixXd y(nodes.size(), 4);
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    const auto [ix, iz] = nodes[r];
    const double u = (g.xs[ix] - cx) / halfwidth, w = (g.zs[iz] - cz) / halfwidth;
    for (std::size_t n = 0; n < m; ++n)
      a(r, n) = std::pow(u, fit.exponents[n].first) * std::pow(w, fit.exponents[n].second);
    const auto& b = g.at(ix, iz);
    y.row(r) << b.x.real(), b.x.imag(), b.z.real(), b.z.imag();
  }

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  fit.condition = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
  if (!(fit.condition < max_fit_condition))
    throw IllConditioned("polynomial design matrix condition estimate " + detail::format_double(fit.condition));

  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  const Eigen::MatrixXd c = qr.solve(y);
  const double ynorm = y.norm();
  fit.residual_rel = ynorm > 0 ? (a * c - y).norm() / ynorm : 0.0;
  fit.coeffs_x.resize(m);
  fit.coeffs_z.resize(m);
  for (std::size_t n = 0; n < m; ++n) {
    fit.coeffs_x[n] = cplx(c(n, 0), c(n, 1));
    fit.coeffs_z[n] = cplx(c(n, 2), c(n, 3));
  }
  return fit;
}

struct MinimumOptions {
  double halfwidth = 4.0;  // um
  int order = 10;
  double max_step = 0.5;  // um per iteration
  int max_iterations = 100;
};

struct Point {
  double x = 0, z = 0;
};

// Newton iteration on the time-averaged intensity |P|^2 / 2 of a fitted
// polynomial, with a bounded step and gradient fallback away from convexity.
inline Point locate_minimum(const PolyFit& fit, const MinimumOptions& opt = {}) {
  Point p{fit.cx, fit.cz};
  auto intensity = [&](double x, double z) { return 0.5 * fit.value(x, z).norm2(); };
  for (int it = 0; it < opt.max_iterations; ++it) {
    const auto e = fit.evaluate(p.x, p.z);
    auto dot = [](const ComplexVec2& a, const ComplexVec2& b) {
      return (std::conj(a.x) * b.x + std::conj(a.z) * b.z).real();
    };
    Eigen::Vector2d grad{dot(e.value, e.d[0]), dot(e.value, e.d[1])};
    Eigen::Matrix2d hess;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) hess(a, b) = dot(e.d[a], e.d[b]) + dot(e.value, e.dd[a][b]);
    Eigen::Vector2d step;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(hess);
    if (es.eigenvalues()(0) > 1e-14 * std::max(1.0, es.eigenvalues()(1))) {
      step = -hess.ldlt().solve(grad);
    } else {
      const double gn = grad.norm();
      if (gn == 0) break;
      step = -grad / gn * opt.max_step;
    }
    if (step.norm() > opt.max_step) step *= opt.max_step / step.norm();
    // Backtrack until the intensity does not increase.
    const double f0 = intensity(p.x, p.z);
    for (int k = 0; k < 30 && intensity(p.x + step(0), p.z + step(1)) > f0 * (1 + 1e-15) + 1e-300; ++k)
      step *= 0.5;
    p.x += step(0);
    p.z += step(1);
    if (step.norm() < 1e-11) break;
  }
  return p;
}

// Coarse argmin over the nodes followed by polynomial refinement.
inline Point locate_minimum(const FieldGrid& g, const MinimumOptions& opt = {}) {
  if (g.nx() < 3 || g.nz() < 3) throw NoInteriorMinimum("grid too small");
  std::size_t best = 0;
  double fmin = INFINITY, fmax = 0;
  for (std::size_t i = 0; i < g.samples.size(); ++i) {
    const double f = 0.5 * g.samples[i].norm2();
    if (f < fmin) {
      fmin = f;
      best = i;
    }
    fmax = std::max(fmax, f);
  }
  const std::size_t ix = best % g.nx(), iz = best / g.nx();
  if (fmax - fmin <= 1e-12 * fmax) throw NoInteriorMinimum("intensity is flat over the grid");
  if (ix == 0 || iz == 0 || ix + 1 == g.nx() || iz + 1 == g.nz())
    throw NoInteriorMinimum("grid argmin at boundary node (" + detail::format_double(g.xs[ix]) + ", " +
                            detail::format_double(g.zs[iz]) + ")");

  Point p{g.xs[ix], g.zs[iz]};
  for (int pass = 0; pass < 3; ++pass) {
    // Reduce the order if the window holds too few samples (small grids).
    int order = opt.order;
    std::optional<PolyFit> fit;
    while (order >= 1 && !fit) {
      try {
        fit = fit_complex_polynomial(g, p.x, p.z, opt.halfwidth, order);
      } catch (const Underdetermined&) {
        --order;
      } catch (const IllConditioned&) {
        --order;
      }
    }
    if (!fit) throw NoInteriorMinimum("too few samples around the coarse minimum");
    const Point q = locate_minimum(*fit, opt);
    const double moved = std::max(std::abs(q.x - p.x), std::abs(q.z - p.z));
    p = q;
    if (moved < 0.25 * opt.halfwidth) break;
  }
  if (p.x < g.xs.front() || p.x > g.xs.back() || p.z < g.zs.front() || p.z > g.zs.back())
    throw NoInteriorMinimum("refined minimum left the grid");
  return p;
}

struct Extraction {
  QuadrupoleParams params;
  CanonicalDiagnostics diagnostics;
  PolyFit fit;
};

// Locate the minimum, refit a window centered on it and canonicalize the
// zeroth and first order terms.
inline Extraction extract_quadrupole(const FieldGrid& g, double halfwidth = 4.0, int order = 10,
                                     const CanonicalizeOptions& copt = {}) {
  Extraction ex;
  double fmin = INFINITY, fmax = 0;
  for (const auto& s : g.samples) {
    fmin = std::min(fmin, s.norm2());
    fmax = std::max(fmax, s.norm2());
  }
  Point center;
  if (fmax - fmin <= 1e-10 * fmax) {
    // Uniform field: no minimum to find; expand about the grid center.
    center = {0.5 * (g.xs.front() + g.xs.back()), 0.5 * (g.zs.front() + g.zs.back())};
    const int n = static_cast<int>(std::min(g.nx(), g.nz()));
    order = std::max(1, std::min(order, n - 1));
  } else {
    MinimumOptions mopt;
    mopt.halfwidth = halfwidth;
    mopt.order = order;
    center = locate_minimum(g, mopt);
  }
  ex.fit = fit_complex_polynomial(g, center.x, center.z, halfwidth, order);
  const Canonical c = canonicalize(ex.fit.first_order(), copt);
  ex.params = c.params;
  ex.diagnostics = c.diagnostics;
  ex.params.x0 = center.x;
  ex.params.z0 = center.z;
  ex.params.freq = g.freq;
  return ex;
}

}  // namespace nearfield
