#pragma once

// nearfield-cli: gen-field, extract, levels, shiftmap, fit, render.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "nearfield/nearfield.hpp"

namespace nearfield::cli {

enum ExitCode : int { ok = 0, usage_error = 1, data_error = 2, numerical_error = 3 };

// Presets carry 1 A on the center conductor; the CLI scales them so that
// gradients are a few uT/um and shift maps land in the tens of kHz.
inline constexpr double preset_current_scale = 0.05;

namespace detail {

// Write to a temporary file next to `path`, then rename over it.
inline void write_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("cannot rename onto " + path + ": " + ec.message());
  }
}

inline void emit(const std::string& path, const std::string& bytes, std::ostream& out) {
  if (path.empty() || path == "-")
    out << bytes;
  else
    write_atomic(path, bytes);
}

inline void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw CLI::ValidationError(path + ": no such file");
}

inline void require_output_dir(const std::string& path) {
  if (path.empty() || path == "-") return;
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty() && !std::filesystem::is_directory(dir))
    throw CLI::ValidationError(path + ": directory does not exist");
}

inline std::string json_text(const json& j) { return j.dump(2) + "\n"; }

inline std::optional<char> letter_of(const TransitionSpec& t) {
  for (char c : std::string("ABCDE"))
    if (transition_by_letter(c) == t) return c;
  return std::nullopt;
}

// Field source shared by gen-field and shiftmap.
struct Source {
  std::string wires_path, params_path, preset;
  std::optional<double> scale;

  void add_options(CLI::App* sub) {
    auto* w = sub->add_option("--wires", wires_path, "wire set JSON");
    auto* p = sub->add_option("--params", params_path, "quadrupole parameters JSON");
    auto* s = sub->add_option("--preset", preset, "single | parallel-pair | meander | meander-eddy");
    w->excludes(p)->excludes(s);
    p->excludes(s);
    sub->add_option("--scale", scale, "current scale for wire sources (presets default to 0.05)");
  }

  void validate() const {
    const int n = !wires_path.empty() + !params_path.empty() + !preset.empty();
    if (n != 1) throw CLI::ValidationError("exactly one of --wires, --params, --preset is required");
    if (!wires_path.empty()) require_file(wires_path);
    if (!params_path.empty()) require_file(params_path);
    if (!preset.empty()) parse_preset(preset);
  }

  bool is_params() const { return !params_path.empty(); }
  QuadrupoleParams params() const { return params_from_json(read_json_file(params_path)); }

  WireSet wires() const {
    if (!preset.empty()) return preset_scenario(preset).scaled(scale.value_or(preset_current_scale));
    return wireset_from_json(read_json_file(wires_path)).scaled(scale.value_or(1.0));
  }

  // Default window center: the parameter minimum, or the preset's field zero.
  std::array<double, 2> default_center() const {
    if (is_params()) {
      const QuadrupoleParams p = params();
      return {p.x0, p.z0};
    }
    if (preset == "parallel-pair") return {0.0, 0.0};
    if (!preset.empty()) return {0.0, 45.0};
    throw CLI::ValidationError("--center is required with --wires");
  }
};

struct Window {
  std::vector<double> center;
  double halfwidth;
  double step;

  Window(double hw, double st) : halfwidth(hw), step(st) {}

  void add_options(CLI::App* sub) {
    sub->add_option("--center", center, "window center x z (um)")->expected(2);
    sub->add_option("--halfwidth", halfwidth, "window half width (um)")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--step", step, "grid spacing (um)")->capture_default_str()->check(CLI::PositiveNumber);
  }

  std::pair<std::vector<double>, std::vector<double>> axes(const Source& src) const {
    const auto c = center.empty() ? src.default_center() : std::array<double, 2>{center[0], center[1]};
    return {centered_axis(c[0], halfwidth, step), centered_axis(c[1], halfwidth, step)};
  }
};

struct ProbeFlags {
  double B0 = 22.3;
  double tilt_deg = 12.0;
  void add_options(CLI::App* sub) {
    sub->add_option("--B0", B0, "static field (mT)")->capture_default_str()->check(CLI::NonNegativeNumber);
    sub->add_option("--tilt-deg", tilt_deg, "bias axis tilt from z towards y (deg)")->capture_default_str();
  }
  Probe probe() const {
    Probe p;
    p.B0 = B0;
    p.axis = bias_axis(tilt_deg * deg);
    return p;
  }
};

inline std::string shift_csv(const ShiftMap& m) {
  std::ostringstream ss;
  write_shift_map(m, ss);
  return ss.str();
}

inline bool is_shift_csv(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    return nearfield::detail::trim(line) == shift_csv_header;
  }
  return false;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Microwave near-field quadrupole toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  std::string output;

  // gen-field
  auto* gen = app.add_subcommand("gen-field", "sample a wire set or parameter set into a field CSV");
  Source gen_src;
  Window gen_win(4.0, 0.25);
  gen_src.add_options(gen);
  gen_win.add_options(gen);
  gen->add_option("-o,--output", output, "output CSV (default stdout)");

  // extract
  auto* ext = app.add_subcommand("extract", "extract quadrupole parameters from a field CSV");
  std::string ext_in;
  double ext_window = 4.0;
  int ext_order = 10;
  ext->add_option("-i,--input", ext_in, "field CSV")->required();
  ext->add_option("--window", ext_window, "fit window half width (um)")->capture_default_str()->check(CLI::PositiveNumber);
  ext->add_option("--order", ext_order, "polynomial order")->capture_default_str()->check(CLI::Range(1, 20));
  ext->add_option("-o,--output", output, "output JSON (default stdout)");

  // levels
  auto* lev = app.add_subcommand("levels", "hyperfine levels and transitions at a static field");
  ProbeFlags lev_probe;
  bool lev_clock = false;
  lev->add_option("--B0", lev_probe.B0, "static field (mT)")->capture_default_str()->check(CLI::NonNegativeNumber);
  lev->add_flag("--clock", lev_clock, "also report the field-independent point of transition B");
  lev->add_option("-o,--output", output, "output JSON (default stdout)");

  // shiftmap
  auto* shm = app.add_subcommand("shiftmap", "forward AC Zeeman shift map");
  Source shm_src;
  Window shm_win(10.0, 1.0);
  ProbeFlags shm_probe;
  std::string shm_transition = "B";
  std::optional<double> shm_fdrive;
  double shm_power = 0, shm_noise = 0;
  std::optional<std::uint64_t> seed;
  bool shm_signed = false;
  std::vector<double> keep_rect;
  shm_src.add_options(shm);
  shm_win.add_options(shm);
  shm_probe.add_options(shm);
  shm->add_option("--transition", shm_transition, "letter A-E or F,m:F,m (lower:upper)")->capture_default_str();
  shm->add_option("--f-drive", shm_fdrive, "drive frequency (MHz); default 10 MHz above transition B");
  shm->add_option("--power-dB", shm_power, "relative drive power (dB)")->capture_default_str();
  shm->add_option("--noise", shm_noise, "relative Gaussian noise per node (needs --seed)")->check(CLI::NonNegativeNumber);
  shm->add_option("--seed", seed, "noise seed");
  shm->add_flag("--signed", shm_signed, "keep signed shifts (diagnostic)");
  shm->add_option("--keep-rect", keep_rect, "unmasked region xmin xmax zmin zmax (um)")->expected(4);
  shm->add_option("-o,--output", output, "output CSV (default stdout)");

  // fit
  auto* fit = app.add_subcommand("fit", "fit quadrupole parameters to one or more shift maps");
  std::vector<std::string> fit_maps, fit_fix;
  std::optional<double> fit_B0, fit_tilt;
  int fit_iter = 200;
  fit->add_option("-m,--map", fit_maps, "shift CSV (repeatable; power offsets are relative to the first)")->required();
  fit->add_option("--fix", fit_fix, "hold a parameter: NAME=VALUE with NAME in B Bp alpha beta psi x0 z0 power_dB_k "
                                    "(angles in deg)");
  fit->add_option("--B0", fit_B0, "static field (mT); default from map metadata");
  fit->add_option("--tilt-deg", fit_tilt, "bias axis tilt (deg); default from map metadata");
  fit->add_option("--max-iter", fit_iter, "iterations per start")->capture_default_str()->check(CLI::PositiveNumber);
  fit->add_option("-o,--output", output, "report JSON (default stdout)");

  // render
  auto* ren = app.add_subcommand("render", "16-bit PGM heatmap of a shift or field CSV");
  std::string ren_in;
  ren->add_option("-i,--input", ren_in, "shift or field CSV")->required();
  ren->add_option("-o,--output", output, "output PGM; the scale goes to <output>.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage_error;
  }

  try {
    require_output_dir(output);
    if (gen->parsed()) {
      gen_src.validate();
      const auto [xs, zs] = gen_win.axes(gen_src);
      FieldGrid g;
      if (gen_src.is_params()) {
        const QuadrupoleParams p = gen_src.params();
        g = sample_field([&](double x, double z) { return field_at(p, x, z); }, xs, zs, p.freq);
      } else {
        const WireSet ws = gen_src.wires();
        g = sample_field([&](double x, double z) { return field_of_wires(ws, x, z); }, xs, zs, ws.freq);
      }
      std::ostringstream ss;
      write_grid(g, ss);
      emit(output, ss.str(), out);
    } else if (ext->parsed()) {
      require_file(ext_in);
      const FieldGrid g = load_grid_file(ext_in);
      if (g.max_y_fraction && *g.max_y_fraction > 0.01)
        err << "warning: y component reaches " << *g.max_y_fraction * 100 << "% of the in-plane field\n";
      const Extraction ex = extract_quadrupole(g, ext_window, ext_order);
      json j = to_json(ex.params);
      j["ratio_um"] = ex.params.ratio();
      j["diagnostics"] = to_json(ex.diagnostics);
      j["fit_residual_rel"] = ex.fit.residual_rel;
      emit(output, json_text(j), out);
    } else if (lev->parsed()) {
      const Probe probe = lev_probe.probe();
      const LevelSet ls = diagonalize_ground_state(probe.constants, lev_probe.B0);
      json levels = json::array();
      double e2 = 0, e1 = 0;
      for (const auto& l : ls.levels) {
        levels.push_back({{"F", l.label.F}, {"m", l.label.m}, {"energy_MHz", l.energy}});
        (l.label.F == 2 ? e2 : e1) += l.energy / (2 * l.label.F + 1);
      }
      json lines = json::array();
      for (const auto& t : all_transitions(ls)) {
        json line{{"lower", to_string(t.spec.lower)}, {"upper", to_string(t.spec.upper)}, {"freq_MHz", t.freq}};
        if (auto c = letter_of(t.spec)) line["letter"] = std::string(1, *c);
        lines.push_back(line);
      }
      json j{{"B0_mT", lev_probe.B0}, {"F_splitting_MHz", e1 - e2}, {"levels", levels}, {"transitions", lines}};
      if (lev_clock) j["clock_field_mT"] = clock_field(probe.constants, transition_by_letter('B'), 10.0, 30.0);
      emit(output, json_text(j), out);
    } else if (shm->parsed()) {
      shm_src.validate();
      if (shm_noise > 0 && !seed) throw CLI::ValidationError("--noise needs an explicit --seed");
      const Probe probe = shm_probe.probe();
      const TransitionSpec t = parse_transition(shm_transition);
      const auto [xs, zs] = shm_win.axes(shm_src);
      double f = 0;
      if (shm_fdrive) {
        f = *shm_fdrive;
      } else {
        const LevelSet ls = diagonalize_ground_state(probe.constants, probe.B0, probe.axis);
        f = transition_frequency(ls, transition_by_letter('B')) + 10.0;
      }
      ForwardOptions opt;
      opt.signed_values = shm_signed;
      ShiftMap m = shm_src.is_params()
                       ? forward_shift_map(shm_src.params(), t, probe, f, xs, zs, shm_power, opt)
                       : forward_shift_map(shm_src.wires(), t, probe, f, xs, zs, shm_power, opt);
      if (shm_noise > 0) m = add_relative_noise(std::move(m), shm_noise, *seed);
      if (!keep_rect.empty())
        m = apply_mask(std::move(m), [&](double x, double z) {
          return x >= keep_rect[0] && x <= keep_rect[1] && z >= keep_rect[2] && z <= keep_rect[3];
        });
      emit(output, shift_csv(m), out);
    } else if (fit->parsed()) {
      for (const auto& p : fit_maps) require_file(p);
      FitProblem prob;
      for (const auto& p : fit_maps) {
        std::ifstream in(p);
        try {
          prob.maps.push_back(load_shift_map(in));
        } catch (const DataError& e) {
          throw FormatError(p + ": " + e.what());
        }
      }
      const ShiftMap& first = prob.maps.front();
      prob.probe.B0 = fit_B0.value_or(first.B0 > 0 ? first.B0 : 22.3);
      prob.probe.axis = fit_tilt ? bias_axis(*fit_tilt * deg) : first.axis.value_or(bias_axis(12 * deg));
      prob.options.max_iterations = fit_iter;
      for (const auto& spec : fit_fix) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--fix expects NAME=VALUE, got " + spec);
        const std::string name = spec.substr(0, eq);
        double v = 0;
        try {
          v = std::stod(spec.substr(eq + 1));
        } catch (...) {
          throw CLI::ValidationError("--fix value is not a number: " + spec);
        }
        bool known = false;
        for (int k = 0; k < n_field_params; ++k)
          if (parameter_name(k) == name) {
            prob.free[k] = false;
            const double value = (k == fit_alpha || k == fit_beta || k == fit_psi) ? v * deg : v;
            switch (k) {
              case fit_B: prob.fixed.B = value; break;
              case fit_Bp: prob.fixed.Bp = value; break;
              case fit_alpha: prob.fixed.alpha = value; break;
              case fit_beta: prob.fixed.beta = value; break;
              case fit_psi: prob.fixed.psi = value; break;
              case fit_x0: prob.fixed.x0 = value; break;
              case fit_z0: prob.fixed.z0 = value; break;
            }
            known = true;
          }
        for (std::size_t k = 1; k < prob.maps.size() && !known; ++k)
          if (parameter_name(static_cast<int>(n_field_params + k - 1)) == name) {
            prob.power_free.resize(prob.maps.size() - 1, true);
            prob.fixed_power_dB.resize(prob.maps.size() - 1, 0.0);
            prob.power_free[k - 1] = false;
            prob.fixed_power_dB[k - 1] = v;
            known = true;
          }
        if (!known) throw CLI::ValidationError("--fix: unknown parameter " + name);
      }
      const FitResult res = fit_parameters(prob);
      json j = to_json(res);
      j["free_parameters"] = res.free_names;
      emit(output, json_text(j), out);
      if (!res.converged) {
        err << "NotConverged: best-so-far parameters reported\n";
        return numerical_error;
      }
    } else if (ren->parsed()) {
      require_file(ren_in);
      Heatmap h;
      std::string kind;
      if (is_shift_csv(ren_in)) {
        std::ifstream in(ren_in);
        h = make_heatmap(load_shift_map(in));
        kind = "shift_kHz";
      } else {
        h = make_heatmap(load_grid_file(ren_in));
        kind = "field_magnitude_uT";
      }
      std::ostringstream ss;
      write_pgm(h, ss);
      write_atomic(output, ss.str());
      const json side{{"source", ren_in}, {"quantity", kind},   {"scale_min", 0.0},
                      {"scale_max", h.scale_max}, {"width", h.width}, {"height", h.height}};
      write_atomic(output + ".json", json_text(side));
    }
  } catch (const CLI::ValidationError& e) {
    err << "usage: " << e.what() << "\n";
    return usage_error;
  } catch (const DataError& e) {
    err << e.what() << "\n";
    return data_error;
  } catch (const NumericalError& e) {
    err << e.what() << "\n";
    return numerical_error;
  } catch (const json::exception& e) {
    err << "FormatError: " << e.what() << "\n";
    return data_error;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return numerical_error;
  }
  return ok;
}

}  // namespace nearfield::cli
