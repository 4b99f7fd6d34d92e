#pragma once

// Estimation of the quadrupole parameters (and relative map powers) from
// measured shift-magnitude maps by damped least squares with a numerically
// differentiated Jacobian, multi-start, and covariance-based uncertainties.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nearfield/errors.hpp"
#include "nearfield/hyperfine.hpp"
#include "nearfield/model.hpp"
#include "nearfield/parallel.hpp"
#include "nearfield/shiftmap.hpp"

namespace nearfield {

// Layout of the full parameter vector: seven field parameters followed by one
// power offset (dB) per map after the first.
enum FitIndex : int { fit_B = 0, fit_Bp, fit_alpha, fit_beta, fit_psi, fit_x0, fit_z0, n_field_params };

inline std::string parameter_name(int k) {
  static const std::array<const char*, n_field_params> names{"B", "Bp", "alpha", "beta", "psi", "x0", "z0"};
  return k < n_field_params ? names[k] : "power_dB_" + std::to_string(k - n_field_params + 1);
}

// Residual used for nodes whose transition cannot be evaluated (drive within
// the resonance guard of a coupled line).
inline constexpr double resonance_penalty = 1e6;

struct FitOptions {
  int max_iterations = 200;
  double rel_tol = 1e-12;  // relative chi2 decrease that ends the iteration
  std::vector<double> alpha_starts{0.0, 45 * deg, 90 * deg, 135 * deg};
  std::vector<double> beta_starts{0.0, 45 * deg, 90 * deg, 135 * deg};
  std::vector<double> psi_starts{-30 * deg, 0.0, 30 * deg};
};

struct FitProblem {
  std::vector<ShiftMap> maps;
  Probe probe;
  std::array<bool, n_field_params> free{true, true, true, true, true, true, true};
  std::vector<bool> power_free;  // per map after the first; empty = all free
  QuadrupoleParams fixed;        // values of fixed field parameters; freq is copied to the result
  std::vector<double> fixed_power_dB;
  std::vector<double> lower, upper;              // full-vector bounds; empty = unbounded
  std::vector<Eigen::VectorXd> initial_guesses;  // full vectors; empty = deterministic start grid
  FitOptions options;

  std::size_t n_params() const { return n_field_params + (maps.empty() ? 0 : maps.size() - 1); }
};

inline Eigen::VectorXd to_vector(const QuadrupoleParams& p, const std::vector<double>& power_dB) {
  Eigen::VectorXd v(n_field_params + power_dB.size());
  v << p.B, p.Bp, p.alpha, p.beta, p.psi, p.x0, p.z0, Eigen::Map<const Eigen::VectorXd>(power_dB.data(), power_dB.size());
  return v;
}

inline QuadrupoleParams to_params(const Eigen::VectorXd& v, double freq = 0) {
  QuadrupoleParams p;
  p.B = v(fit_B);
  p.Bp = v(fit_Bp);
  p.alpha = v(fit_alpha);
  p.beta = v(fit_beta);
  p.psi = v(fit_psi);
  p.x0 = v(fit_x0);
  p.z0 = v(fit_z0);
  p.freq = freq;
  return p;
}

// Precomputed per-map shift weights and unmasked nodes.
class ShiftModel {
 public:
  explicit ShiftModel(const FitProblem& prob) : axis_(prob.probe.axis.normalized()) {
    if (prob.maps.empty()) throw DataError("fit needs at least one map");
    triad_ = polarization_triad(axis_);
    const LevelSet ls = diagonalize_ground_state(prob.probe.constants, prob.probe.B0, axis_);
    for (const auto& m : prob.maps) {
      MapData md;
      try {
        md.weights = transition_shift_weights(ls, prob.probe.constants, m.transition, m.f_drive);
      } catch (const ResonanceProximity&) {
        md.resonant = true;
      }
      for (std::size_t iz = 0; iz < m.nz(); ++iz)
        for (std::size_t ix = 0; ix < m.nx(); ++ix) {
          const std::size_t i = iz * m.nx() + ix;
          if (std::isnan(m.shift[i])) continue;
          double sig = m.sigma.empty() ? 1.0 : m.sigma[i];
          if (!(sig > 0) || !std::isfinite(sig)) sig = 1.0;
          md.nodes.push_back({m.xs[ix], m.zs[iz], m.shift[i], sig});
        }
      n_points_ += md.nodes.size();
      maps_.push_back(std::move(md));
    }
  }

  std::size_t n_points() const { return n_points_; }
  std::size_t n_maps() const { return maps_.size(); }
  const ShiftWeights& weights(std::size_t k) const { return maps_[k].weights; }
  bool resonant(std::size_t k) const { return maps_[k].resonant; }

  // Signed model shift in kHz at (x, z) for map k, with amplitude factor amp.
  double signed_shift(std::size_t k, const FirstOrderField& f, double x0, double z0, double x, double z,
                      double amp) const {
    const ComplexVec2 v = evaluate(f, Eigen::Vector2d(x - x0, z - z0)) * amp;
    return 1e3 * maps_[k].weights(polarization(v));
  }

  // Residuals (|model| - data) / sigma in map order, then row-major node order.
  Eigen::VectorXd residuals(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd r(n_points_);
    const FirstOrderField f = first_order_field(to_params(theta));
    std::size_t row = 0;
    for (std::size_t k = 0; k < maps_.size(); ++k) {
      const auto& md = maps_[k];
      const double amp = k == 0 ? 1.0 : amplitude_factor(theta(n_field_params + k - 1));
      for (const auto& n : md.nodes) {
        if (md.resonant) {
          r(row++) = resonance_penalty;
          continue;
        }
        const double model = std::abs(signed_shift(k, f, theta(fit_x0), theta(fit_z0), n.x, n.z, amp));
        r(row++) = (model - n.data) / n.sigma;
      }
    }
    return r;
  }

  struct Node {
    double x, z, data, sigma;
  };
  const std::vector<Node>& nodes(std::size_t k) const { return maps_[k].nodes; }

  PolarizationAmplitudes polarization(const ComplexVec2& v) const {
    auto project = [&](const Eigen::Vector3d& e) { return v.x * e(0) + v.z * e(2); };
    const cplx b1 = project(triad_[0]), b2 = project(triad_[1]);
    const cplx i{0, 1};
    const double r2 = 1.0 / std::sqrt(2.0);
    return {project(triad_[2]), (b1 - i * b2) * r2, (b1 + i * b2) * r2};
  }

 private:
  struct MapData {
    ShiftWeights weights;
    bool resonant = false;
    std::vector<Node> nodes;
  };
  Eigen::Vector3d axis_;
  std::array<Eigen::Vector3d, 3> triad_;
  std::vector<MapData> maps_;
  std::size_t n_points_ = 0;
};

// Central-difference step for parameter k at value v.
inline double jacobian_step(int k, double v) {
  double floor = 1e-3;  // uT, uT/um, um, dB
  if (k == fit_alpha || k == fit_beta || k == fit_psi) floor = 1e-4;  // rad
  return std::max(1e-3 * std::abs(v), floor);
}

struct Covariance {
  Eigen::MatrixXd matrix;
  Eigen::VectorXd std_errors;
  double sigma2 = 0;  // chi2 / (n - k)
};

// sigma^2 (J^T J)^{-1}; names label the Jacobian columns for diagnostics.
inline Covariance parameter_covariance(const Eigen::MatrixXd& jac, const Eigen::VectorXd& residuals,
                                       const std::vector<std::string>& names) {
  const auto n = jac.rows(), k = jac.cols();
  if (n <= k) throw RankDeficient("need more points than parameters");
  // Column scaling so the rank test is unit independent.
  Eigen::VectorXd scale = jac.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < k; ++j)
    if (scale(j) == 0) throw RankDeficient("parameter " + names[j] + " does not affect the residuals");
  const Eigen::MatrixXd js = jac * scale.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd a = js.transpose() * js;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const double lmin = es.eigenvalues()(0), lmax = es.eigenvalues()(k - 1);
  if (!(lmin > 1e-14 * lmax)) {
    const Eigen::VectorXd v = es.eigenvectors().col(0);
    std::string combo;
    for (Eigen::Index j = 0; j < k; ++j)
      if (std::abs(v(j)) > 0.1) combo += (combo.empty() ? "" : " ") + std::string(v(j) > 0 ? "+" : "-") + names[j];
    throw RankDeficient("degenerate combination: " + combo);
  }
  Covariance c;
  c.sigma2 = residuals.squaredNorm() / static_cast<double>(n - k);
  const Eigen::MatrixXd inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                              es.eigenvectors().transpose();
  c.matrix = c.sigma2 * (scale.cwiseInverse().asDiagonal() * inv * scale.cwiseInverse().asDiagonal());
  c.matrix = 0.5 * (c.matrix + c.matrix.transpose());
  c.std_errors = c.matrix.diagonal().cwiseMax(0.0).cwiseSqrt();
  return c;
}

struct FitResult {
  QuadrupoleParams params;
  std::vector<double> power_ratio_dB;
  std::vector<std::string> free_names;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd std_errors;  // aligned with free_names
  double ratio_std_error = std::numeric_limits<double>::quiet_NaN();  // of B / Bp, um
  std::string covariance_status = "ok";
  double chi2 = 0;
  std::size_t n_points = 0;
  bool converged = false;
  int starts_tried = 0;
  int iterations = 0;
  std::vector<double> start_chi2;  // final chi2 of each start

  double std_error(const std::string& name) const {
    for (std::size_t i = 0; i < free_names.size(); ++i)
      if (free_names[i] == name) return std_errors(static_cast<Eigen::Index>(i));
    return 0.0;
  }
};

namespace detail {

struct LmOutcome {
  Eigen::VectorXd theta;
  double chi2 = 0;
  bool converged = false;
  int iterations = 0;
};

class FreeParameters {
 public:
  FreeParameters(const FitProblem& prob) : n_(prob.n_params()) {
    for (int k = 0; k < n_field_params; ++k)
      if (prob.free[k]) idx_.push_back(k);
    for (std::size_t m = 1; m < prob.maps.size(); ++m)
      if (prob.power_free.empty() || prob.power_free.at(m - 1)) idx_.push_back(static_cast<int>(n_field_params + m - 1));
    lower_ = prob.lower.empty() ? std::vector<double>(n_, -INFINITY) : prob.lower;
    upper_ = prob.upper.empty() ? std::vector<double>(n_, INFINITY) : prob.upper;
  }
  const std::vector<int>& indices() const { return idx_; }
  std::size_t size() const { return idx_.size(); }
  void clamp(Eigen::VectorXd& theta) const {
    for (int k : idx_) theta(k) = std::clamp(theta(k), lower_[k], upper_[k]);
  }

 private:
  std::size_t n_;
  std::vector<int> idx_;
  std::vector<double> lower_, upper_;
};

inline Eigen::MatrixXd numeric_jacobian(const ShiftModel& model, const FreeParameters& fp, const Eigen::VectorXd& theta) {
  Eigen::MatrixXd jac(model.n_points(), fp.size());
  for (std::size_t c = 0; c < fp.size(); ++c) {
    const int k = fp.indices()[c];
    const double h = jacobian_step(k, theta(k));
    Eigen::VectorXd tp = theta, tm = theta;
    tp(k) += h;
    tm(k) -= h;
    jac.col(static_cast<Eigen::Index>(c)) = (model.residuals(tp) - model.residuals(tm)) / (2 * h);
  }
  return jac;
}

inline LmOutcome levenberg_marquardt(const ShiftModel& model, const FreeParameters& fp, Eigen::VectorXd theta,
                                     const FitOptions& opt) {
  LmOutcome out;
  fp.clamp(theta);
  Eigen::VectorXd r = model.residuals(theta);
  double chi2 = r.squaredNorm();
  double lambda = 1e-3;
  const double tiny = 1e-28 * static_cast<double>(std::max<std::size_t>(1, model.n_points()));
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (chi2 <= tiny) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd jac = numeric_jacobian(model, fp, theta);
    const Eigen::MatrixXd a = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;
    Eigen::VectorXd d = a.diagonal();
    const double dmax = std::max(d.maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = std::max(d(i), 1e-12 * dmax);
    bool accepted = false;
    double new_chi2 = chi2;
    Eigen::VectorXd new_theta, new_r;
    while (lambda < 1e12) {
      Eigen::MatrixXd m = a;
      m.diagonal() += lambda * d;
      const Eigen::VectorXd step = m.ldlt().solve(-g);
      new_theta = theta;
      for (std::size_t c = 0; c < fp.size(); ++c) new_theta(fp.indices()[c]) += step(static_cast<Eigen::Index>(c));
      fp.clamp(new_theta);
      new_r = model.residuals(new_theta);
      new_chi2 = new_r.squaredNorm();
      if (std::isfinite(new_chi2) && new_chi2 < chi2) {
        accepted = true;
        break;
      }
      lambda *= 4;
    }
    if (!accepted) {
      out.converged = true;  // no descent direction left at machine precision
      break;
    }
    const double gain = (chi2 - new_chi2) / chi2;
    theta = new_theta;
    r = new_r;
    chi2 = new_chi2;
    lambda = std::max(lambda / 5, 1e-12);
    if (gain < opt.rel_tol) {
      out.converged = true;
      break;
    }
  }
  out.theta = theta;
  out.chi2 = chi2;
  out.iterations = it;
  return out;
}

// Index of a map whose shifts keep one sign for any polarization (all
// couplings detuned to the same side); such a map is used for initialization.
inline std::size_t preferred_map(const ShiftModel& model) {
  for (std::size_t k = 0; k < model.n_maps(); ++k) {
    if (model.resonant(k) || model.nodes(k).empty()) continue;
    const auto& w = model.weights(k);
    if ((w.pi >= 0 && w.plus >= 0 && w.minus >= 0) || (w.pi <= 0 && w.plus <= 0 && w.minus <= 0)) return k;
  }
  for (std::size_t k = 0; k < model.n_maps(); ++k)
    if (!model.nodes(k).empty()) return k;
  return 0;
}

// Fills B, Bp and the power offsets of a start vector. The signed shift is a
// quadratic form in (B, Bp), so its coefficients follow from a linear fit.
inline void initialize_scales(const ShiftModel& model, const FitProblem& prob, Eigen::VectorXd& theta) {
  const std::size_t pref = preferred_map(model);
  const auto& nodes = model.nodes(pref);
  QuadrupoleParams p = to_params(theta);
  const bool scale_free = prob.free[fit_B] || prob.free[fit_Bp];
  if (scale_free && nodes.size() >= 3 && !model.resonant(pref)) {
    QuadrupoleParams pu = p, pw = p, pb = p;
    pu.B = 1, pu.Bp = 0;
    pw.B = 0, pw.Bp = 1;
    pb.B = 1, pb.Bp = 1;
    const FirstOrderField fu = first_order_field(pu), fw = first_order_field(pw), fb = first_order_field(pb);
    Eigen::MatrixXd a(nodes.size(), 3);
    Eigen::VectorXd y(nodes.size());
    double sgn_sum = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      const double su = model.signed_shift(pref, fu, p.x0, p.z0, n.x, n.z, 1.0);
      const double sw = model.signed_shift(pref, fw, p.x0, p.z0, n.x, n.z, 1.0);
      const double sb = model.signed_shift(pref, fb, p.x0, p.z0, n.x, n.z, 1.0);
      a.row(static_cast<Eigen::Index>(i)) << su, sb - su - sw, sw;
      a.row(static_cast<Eigen::Index>(i)) /= n.sigma;
      y(static_cast<Eigen::Index>(i)) = n.data / n.sigma;
      sgn_sum += su + sw;
    }
    if (sgn_sum < 0) a = -a;
    const Eigen::Vector3d c = a.colPivHouseholderQr().solve(y);
    double bp = prob.free[fit_Bp] ? std::sqrt(std::max(c(2), 1e-6 * std::abs(c(0)) + 1e-12)) : p.Bp;
    double b = prob.free[fit_B] ? (bp != 0 ? 0.5 * c(1) / bp : std::sqrt(std::max(c(0), 0.0))) : p.B;
    if (prob.free[fit_B] && std::abs(b) < 1e-9 * std::abs(bp)) b = std::sqrt(std::max(c(0), 0.0));
    p.B = b;
    p.Bp = bp;
  }
  // Relative scales of all maps at 0 dB.
  const FirstOrderField f = first_order_field(p);
  std::vector<double> scale(model.n_maps(), 1.0);
  for (std::size_t k = 0; k < model.n_maps(); ++k) {
    double num = 0, den = 0;
    for (const auto& n : model.nodes(k)) {
      const double m = std::abs(model.signed_shift(k, f, p.x0, p.z0, n.x, n.z, 1.0)) / n.sigma;
      num += m * n.data / n.sigma;
      den += m * m;
    }
    if (den > 0 && num > 0) scale[k] = num / den;
  }
  const double s0 = scale[0] / (pref == 0 ? scale[0] : 1.0);
  if (pref != 0 && scale_free) {
    // Make map 0 the power reference.
    if (prob.free[fit_B]) p.B *= std::sqrt(scale[0] / scale[pref]);
    if (prob.free[fit_Bp]) p.Bp *= std::sqrt(scale[0] / scale[pref]);
  }
  (void)s0;
  theta(fit_B) = p.B;
  theta(fit_Bp) = p.Bp;
  for (std::size_t k = 1; k < model.n_maps(); ++k) {
    const int idx = static_cast<int>(n_field_params + k - 1);
    const bool free = prob.power_free.empty() || prob.power_free.at(k - 1);
    if (free) theta(idx) = 10.0 * std::log10(scale[k] / scale[0]);
  }
}

inline Eigen::VectorXd base_vector(const FitProblem& prob) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob.n_params()));
  theta.head(n_field_params) = to_vector(prob.fixed, {});
  for (std::size_t k = 1; k < prob.maps.size(); ++k)
    theta(static_cast<Eigen::Index>(n_field_params + k - 1)) =
        k - 1 < prob.fixed_power_dB.size() ? prob.fixed_power_dB[k - 1] : 0.0;
  return theta;
}

inline std::vector<Eigen::VectorXd> start_grid(const ShiftModel& model, const FitProblem& prob) {
  if (!prob.initial_guesses.empty()) return prob.initial_guesses;
  Eigen::VectorXd base = base_vector(prob);
  // Minimum position from the argmin of the preferred map.
  const std::size_t pref = preferred_map(model);
  if (prob.free[fit_x0] || prob.free[fit_z0]) {
    double best = INFINITY;
    for (const auto& n : model.nodes(pref))
      if (n.data < best) {
        best = n.data;
        if (prob.free[fit_x0]) base(fit_x0) = n.x;
        if (prob.free[fit_z0]) base(fit_z0) = n.z;
      }
  }
  const std::vector<double> fixed_alpha{prob.fixed.alpha}, fixed_beta{prob.fixed.beta}, fixed_psi{prob.fixed.psi};
  const auto& as = prob.free[fit_alpha] ? prob.options.alpha_starts : fixed_alpha;
  const auto& bs = prob.free[fit_beta] ? prob.options.beta_starts : fixed_beta;
  const auto& ps = prob.free[fit_psi] ? prob.options.psi_starts : fixed_psi;
  std::vector<Eigen::VectorXd> starts;
  for (double a : as)
    for (double b : bs)
      for (double s : ps) {
        Eigen::VectorXd t = base;
        t(fit_alpha) = a;
        t(fit_beta) = b;
        t(fit_psi) = s;
        initialize_scales(model, prob, t);
        starts.push_back(t);
      }
  return starts;
}

}  // namespace detail

// Multi-start damped least squares; the lowest chi2 wins (ties by start
// index). Parameters are returned in canonical domains and the covariance is
// evaluated there.
inline FitResult fit_parameters(const FitProblem& prob) {
  const ShiftModel model(prob);
  const detail::FreeParameters fp(prob);
  if (fp.size() == 0) throw DataError("no free parameters");
  if (model.n_points() <= fp.size())
    throw Underdetermined(std::to_string(model.n_points()) + " unmasked points for " + std::to_string(fp.size()) +
                          " free parameters");

  const auto starts = detail::start_grid(model, prob);
  std::vector<detail::LmOutcome> outcomes(starts.size());
  parallel_for(starts.size(), [&](std::size_t i) {
    outcomes[i] = detail::levenberg_marquardt(model, fp, starts[i], prob.options);
  });

  FitResult res;
  res.starts_tried = static_cast<int>(starts.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    res.start_chi2.push_back(outcomes[i].chi2);
    if (outcomes[i].chi2 < outcomes[best].chi2) best = i;
  }
  const auto& win = outcomes[best];
  res.converged = win.converged;
  res.iterations = win.iterations;

  // Canonical representative of the same field.
  Eigen::VectorXd theta = win.theta;
  const QuadrupoleParams canon = canonical_form(to_params(theta));
  theta(fit_B) = canon.B;
  theta(fit_Bp) = canon.Bp;
  theta(fit_alpha) = canon.alpha;
  theta(fit_beta) = canon.beta;
  theta(fit_psi) = canon.psi;
  const Eigen::VectorXd r = model.residuals(theta);
  res.chi2 = std::min(r.squaredNorm(), win.chi2);
  res.n_points = model.n_points();
  res.params = to_params(theta, prob.maps.front().f_drive);
  if (prob.fixed.freq != 0) res.params.freq = prob.fixed.freq;
  for (std::size_t k = 1; k < prob.maps.size(); ++k)
    res.power_ratio_dB.push_back(theta(static_cast<Eigen::Index>(n_field_params + k - 1)));

  for (int k : fp.indices()) res.free_names.push_back(parameter_name(k));
  try {
    const Eigen::MatrixXd jac = detail::numeric_jacobian(model, fp, theta);
    const Covariance cov = parameter_covariance(jac, r, res.free_names);
    res.covariance = cov.matrix;
    res.std_errors = cov.std_errors;
    const auto pos = [&](int k) {
      const auto& idx = fp.indices();
      const auto it = std::find(idx.begin(), idx.end(), k);
      return it == idx.end() ? -1 : static_cast<int>(it - idx.begin());
    };
    const int ib = pos(fit_B), ip = pos(fit_Bp);
    const double b = theta(fit_B), bp = theta(fit_Bp);
    double var = 0;
    if (ib >= 0) var += cov.matrix(ib, ib) / (bp * bp);
    if (ip >= 0) var += cov.matrix(ip, ip) * b * b / (bp * bp * bp * bp);
    if (ib >= 0 && ip >= 0) var -= 2 * cov.matrix(ib, ip) * b / (bp * bp * bp);
    res.ratio_std_error = std::sqrt(std::max(var, 0.0));
  } catch (const RankDeficient& e) {
    res.covariance_status = e.what();
    res.std_errors = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(fp.size()), std::nan(""));
    res.covariance = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(fp.size()),
                                               static_cast<Eigen::Index>(fp.size()), std::nan(""));
  }
  return res;
}

}  // namespace nearfield
