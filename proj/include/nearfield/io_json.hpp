#pragma once

// JSON forms of QuadrupoleParams, WireSet and fit reports. Angles are in
// degrees on this boundary.

#include <fstream>
#include <string>

#include <json.hpp>

#include "nearfield/errors.hpp"
#include "nearfield/inverse_fit.hpp"
#include "nearfield/model.hpp"
#include "nearfield/wires.hpp"

namespace nearfield {

using json = nlohmann::ordered_json;

inline json to_json(const QuadrupoleParams& p) {
  return json{{"B_uT", p.B},         {"Bp_uT_per_um", p.Bp}, {"alpha_deg", p.alpha / deg},
              {"beta_deg", p.beta / deg}, {"psi_deg", p.psi / deg},  {"x0_um", p.x0},
              {"z0_um", p.z0},       {"freq_MHz", p.freq}};
}

namespace detail {
inline double number(const json& j, const char* key, bool required = true, double fallback = 0) {
  if (!j.contains(key)) {
    if (required) throw FormatError(std::string("missing key '") + key + "'");
    return fallback;
  }
  if (!j.at(key).is_number()) throw FormatError(std::string("key '") + key + "' is not a number");
  return j.at(key).get<double>();
}
}  // namespace detail

inline QuadrupoleParams params_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("params must be a JSON object");
  QuadrupoleParams p;
  p.B = detail::number(j, "B_uT");
  p.Bp = detail::number(j, "Bp_uT_per_um");
  p.alpha = detail::number(j, "alpha_deg") * deg;
  p.beta = detail::number(j, "beta_deg") * deg;
  p.psi = detail::number(j, "psi_deg") * deg;
  p.x0 = detail::number(j, "x0_um", false);
  p.z0 = detail::number(j, "z0_um", false);
  p.freq = detail::number(j, "freq_MHz", false);
  return p;
}

inline json to_json(const WireSet& ws) {
  json wires = json::array();
  for (const auto& w : ws.wires)
    wires.push_back({{"x_um", w.x}, {"z_um", w.z}, {"re_I_A", w.amplitude.real()}, {"im_I_A", w.amplitude.imag()}});
  return json{{"freq_MHz", ws.freq}, {"wires", wires}};
}

inline WireSet wireset_from_json(const json& j) {
  if (!j.is_object() || !j.contains("wires") || !j.at("wires").is_array())
    throw FormatError("wire set needs a 'wires' array");
  WireSet ws;
  ws.freq = detail::number(j, "freq_MHz", false);
  for (const auto& w : j.at("wires"))
    ws.wires.push_back({detail::number(w, "x_um"), detail::number(w, "z_um"),
                        cplx(detail::number(w, "re_I_A"), detail::number(w, "im_I_A", false))});
  validate(ws);
  return ws;
}

inline json to_json(const CanonicalDiagnostics& d) {
  return json{{"phase_applied_deg", d.phase_applied / deg},
              {"residual_alpha_orthogonality", d.residual_alpha_orthogonality},
              {"residual_phi_psi", d.residual_phi_psi},
              {"gradient_trace_defect", d.gradient_trace_defect},
              {"gradient_symmetry_defect", d.gradient_symmetry_defect},
              {"degenerate_offset", d.degenerate_offset},
              {"degenerate_gradient", d.degenerate_gradient},
              {"ambiguous_phase", d.ambiguous_phase},
              {"within_tolerance", d.within_tolerance}};
}

// Standard errors use the units of the params object (degrees for angles).
inline json to_json(const FitResult& r) {
  json errs = json::object();
  for (std::size_t i = 0; i < r.free_names.size(); ++i) {
    const std::string& n = r.free_names[i];
    double v = r.std_errors(static_cast<Eigen::Index>(i));
    std::string key = n;
    if (n == "B") key = "B_uT";
    else if (n == "Bp") key = "Bp_uT_per_um";
    else if (n == "alpha" || n == "beta" || n == "psi") key = n + "_deg", v /= deg;
    else if (n == "x0" || n == "z0") key = n + "_um";
    errs[key] = v;
  }
  errs["ratio_um"] = r.ratio_std_error;
  return json{{"params", to_json(r.params)},
              {"power_ratio_dB", r.power_ratio_dB},
              {"std_errors", errs},
              {"chi2", r.chi2},
              {"n_points", r.n_points},
              {"converged", r.converged},
              {"starts_tried", r.starts_tried},
              {"ratio_um", r.params.ratio()},
              {"covariance_status", r.covariance_status}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace nearfield
