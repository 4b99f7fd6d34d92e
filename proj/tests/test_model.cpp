#include <gtest/gtest.h>

#include <random>

#include "nearfield/model.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace nearfield;

namespace {

double angle_diff(double a, double b) {
  double d = std::fmod(a - b, pi);
  if (d > pi / 2) d -= pi;
  if (d < -pi / 2) d += pi;
  return std::abs(d);
}

void expect_params_near(const QuadrupoleParams& got, const QuadrupoleParams& want, double rel) {
  const double s = std::max(std::abs(want.B), std::abs(want.Bp));
  EXPECT_NEAR(got.B, want.B, rel * s);
  EXPECT_NEAR(got.Bp, want.Bp, rel * s);
  EXPECT_NEAR(got.alpha, want.alpha, rel);
  EXPECT_NEAR(got.beta, want.beta, rel);
  EXPECT_NEAR(got.psi, want.psi, rel);
}

QuadrupoleParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  QuadrupoleParams p;
  p.Bp = 0.1 + 10 * u(rng);
  p.B = (u(rng) - 0.5) * 40;
  p.alpha = pi * u(rng);
  p.beta = pi * u(rng);
  p.psi = (u(rng) - 0.5) * 0.49 * pi;
  return p;
}

// Same field expressed in axes rotated by theta.
FirstOrderField rotated(const FirstOrderField& f, double theta) {
  Eigen::Matrix2d r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  FirstOrderField g;
  const Eigen::Vector2cd v0 = r.cast<cplx>() * Eigen::Vector2cd(f.offset.x, f.offset.z);
  g.offset = {v0(0), v0(1)};
  g.gradient = r.cast<cplx>() * f.gradient * r.transpose().cast<cplx>();
  return g;
}

}  // namespace

TEST(QuadrupoleMatrix, KnownAngles) {
  const Eigen::Matrix2d q0 = quadrupole_matrix(0);
  EXPECT_DOUBLE_EQ(q0(0, 0), 1);
  EXPECT_DOUBLE_EQ(q0(1, 1), -1);
  EXPECT_NEAR(q0(0, 1), 0, 1e-16);
  const Eigen::Matrix2d q90 = quadrupole_matrix(pi / 2);
  EXPECT_NEAR(q90(0, 0), 0, 1e-16);
  EXPECT_DOUBLE_EQ(q90(0, 1), 1);
  EXPECT_DOUBLE_EQ(q90(1, 0), 1);
  EXPECT_NEAR(quadrupole_matrix(99.9 * deg)(0, 0), -0.171929, 1e-6);
}

TEST(QuadrupoleMatrix, TracelessSymmetric) {
  for (double b = -7; b < 7; b += 0.37) {
    const Eigen::Matrix2d q = quadrupole_matrix(b);
    EXPECT_EQ(q.trace(), 0.0);
    EXPECT_EQ(q(0, 1), q(1, 0));
  }
}

TEST(Synthesize, PureRealQuadrupole) {
  QuadrupoleParams p;
  p.Bp = 1;
  const ComplexVec2 v = synthesize_phasor(p, {1, 0});
  EXPECT_NEAR(std::abs(v.x - cplx(1, 0)), 0, 1e-15);
  EXPECT_NEAR(std::abs(v.z), 0, 1e-15);
}

TEST(Synthesize, OffsetOnlyAtPsiQuarterTurn) {
  QuadrupoleParams p;
  p.B = 1;
  p.psi = pi / 2;
  for (const Eigen::Vector2d r : {Eigen::Vector2d(0, 0), Eigen::Vector2d(3, -2)}) {
    const ComplexVec2 v = synthesize_phasor(p, r);
    EXPECT_NEAR(std::abs(v.x - cplx(1, 0)), 0, 1e-15);
    EXPECT_NEAR(std::abs(v.z), 0, 1e-15);
  }
}

TEST(Synthesize, Table1OffsetMagnitude) {
  const QuadrupoleParams p = scenario::table1_simulation(1.0);
  EXPECT_NEAR(synthesize_phasor(p, {0, 0}).norm(), 8.5, 1e-12);
}

TEST(Synthesize, NearFieldConditionExact) {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 20; ++k) {
    const QuadrupoleParams p = random_params(rng);
    const double h = 0.1;
    for (double x = -2; x <= 2; x += 1)
      for (double z = -2; z <= 2; z += 1) {
        auto f = [&](double a, double b) { return synthesize_phasor(p, {a, b}); };
        const ComplexVec2 dx = (f(x + h, z) - f(x - h, z)) * (0.5 / h);
        const ComplexVec2 dz = (f(x, z + h) - f(x, z - h)) * (0.5 / h);
        EXPECT_LT(std::abs(dx.x + dz.z), 1e-10 * p.Bp);
        EXPECT_LT(std::abs(dz.x - dx.z), 1e-10 * p.Bp);
      }
  }
}

TEST(Synthesize, MinimumAtOrigin) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 50; ++k) {
    const QuadrupoleParams p = random_params(rng);
    const double at0 = synthesize_phasor(p, {0, 0}).norm2() / 2;
    EXPECT_NEAR(at0, p.B * p.B / 2, 1e-12 * p.B * p.B + 1e-14);
    for (double t = 0; t < 2 * pi; t += 0.3) {
      const Eigen::Vector2d r = 1e-3 * unit(t);
      EXPECT_GT(synthesize_phasor(p, r).norm2() / 2, at0);
    }
  }
}

TEST(Canonicalize, Table1RoundTrip) {
  const QuadrupoleParams p = scenario::table1_simulation(1.0);
  const Canonical c = canonicalize(decompose(p));
  EXPECT_NEAR(c.params.ratio(), 8.5, 1e-12);
  EXPECT_NEAR(c.params.psi / deg, 6.4, 1e-10);
  EXPECT_NEAR(c.params.alpha / deg, 24.3, 1e-10);
  EXPECT_NEAR(c.params.beta / deg, 99.9, 1e-10);
  EXPECT_LT(std::abs(c.diagnostics.residual_alpha_orthogonality), 1e-12);
  EXPECT_LT(std::abs(c.diagnostics.residual_phi_psi), 1e-12);
  EXPECT_TRUE(c.diagnostics.within_tolerance);
}

TEST(Canonicalize, PureRealGradient) {
  RawExpansion raw;
  raw.Bp_r = 2;
  raw.beta_r = 0.3;
  const Canonical c = canonicalize(raw);
  EXPECT_NEAR(c.params.psi, 0, 1e-15);
  EXPECT_NEAR(c.params.Bp, 2, 1e-15);
  EXPECT_NEAR(c.params.beta, 0.3, 1e-15);
  EXPECT_TRUE(c.diagnostics.degenerate_offset);
}

TEST(Canonicalize, RandomRoundTrip) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 500; ++k) {
    const QuadrupoleParams p = random_params(rng);
    expect_params_near(canonicalize(decompose(p)).params, p, 1e-9);
  }
}

TEST(Canonicalize, GlobalPhaseInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 2 * pi);
  for (int k = 0; k < 200; ++k) {
    const QuadrupoleParams p = random_params(rng);
    FirstOrderField f = first_order_field(p);
    const cplx ph = std::polar(1.0, u(rng));
    f.offset = f.offset * ph;
    f.gradient *= ph;
    expect_params_near(canonicalize(f).params, canonicalize(decompose(p)).params, 1e-9);
  }
}

TEST(Canonicalize, RandomRawPhaseInvariance) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 200; ++k) {
    RawExpansion raw{u(rng) * 5, u(rng) * 5, u(rng) * 6, u(rng) * 6, 0.5 + u(rng), u(rng), u(rng) * 6, u(rng) * 6};
    FirstOrderField f;
    f.offset = {raw.B_r * std::cos(raw.alpha_r) + cplx(0, raw.B_i * std::cos(raw.alpha_i)),
                raw.B_r * std::sin(raw.alpha_r) + cplx(0, raw.B_i * std::sin(raw.alpha_i))};
    const cplx c1 = raw.Bp_r * std::cos(raw.beta_r) + cplx(0, raw.Bp_i * std::cos(raw.beta_i));
    const cplx c2 = raw.Bp_r * std::sin(raw.beta_r) + cplx(0, raw.Bp_i * std::sin(raw.beta_i));
    f.gradient << c1, c2, c2, -c1;
    const Canonical a = canonicalize(f);
    const cplx ph = std::polar(1.0, 2 * pi * u(rng));
    f.offset = f.offset * ph;
    f.gradient *= ph;
    const Canonical b = canonicalize(f);
    expect_params_near(b.params, a.params, 1e-9);
    EXPECT_NEAR(b.diagnostics.residual_phi_psi, a.diagnostics.residual_phi_psi, 1e-9);
  }
}

TEST(Canonicalize, SignIdentifications) {
  const QuadrupoleParams p = scenario::table1_simulation();
  QuadrupoleParams q = p;
  q.B = -q.B;
  q.alpha += pi;
  expect_params_near(canonical_form(q), p, 1e-12);
  q = p;
  q.Bp = -q.Bp;
  q.beta += pi;
  expect_params_near(canonical_form(q), p, 1e-12);
}

TEST(Canonicalize, DegenerateGradientFlagged) {
  QuadrupoleParams p;
  p.B = 3;
  p.alpha = 0.4;
  const Canonical c = canonicalize(decompose(p));
  EXPECT_TRUE(c.diagnostics.degenerate_gradient);
  EXPECT_NEAR(c.params.B, 3, 1e-12);
  EXPECT_NEAR(c.params.alpha, 0.4, 1e-12);
}

TEST(Canonicalize, CircularGradientFlagsAmbiguousPhase) {
  QuadrupoleParams p;
  p.Bp = 1;
  p.psi = pi / 4;
  const Canonical c = canonicalize(decompose(p));
  EXPECT_TRUE(c.diagnostics.ambiguous_phase);
  EXPECT_NEAR(std::abs(c.params.psi), pi / 4, 1e-9);
}

TEST(Canonicalize, OffMinimumConditionReported) {
  FirstOrderField f = first_order_field(scenario::table1_simulation());
  f.offset.x += cplx(0.5, 0.0);
  const Canonical c = canonicalize(f);
  EXPECT_FALSE(c.diagnostics.within_tolerance);
  EXPECT_GT(std::abs(c.diagnostics.residual_alpha_orthogonality) + std::abs(c.diagnostics.residual_phi_psi), 1e-3);
}

TEST(RotateFrame, Identity) {
  const QuadrupoleParams p = scenario::table1_simulation();
  expect_params_near(rotate_frame(p, 0), p, 1e-15);
  // A half turn is a point reflection about the minimum: the offset flips
  // relative to the gradient.
  QuadrupoleParams flipped = p;
  flipped.B = -p.B;
  expect_params_near(rotate_frame(p, pi), flipped, 1e-12);
  expect_params_near(canonicalize(rotated(first_order_field(p), pi)).params, flipped, 1e-12);
  QuadrupoleParams g = p;
  g.B = 0;
  expect_params_near(rotate_frame(g, pi), g, 1e-12);
}

TEST(RotateFrame, ThirtyDegrees) {
  const QuadrupoleParams p = scenario::table1_simulation();
  const QuadrupoleParams q = rotate_frame(p, 30 * deg);
  EXPECT_NEAR(q.alpha / deg, 54.3, 1e-10);
  EXPECT_NEAR(q.beta / deg, 159.9, 1e-10);
  expect_params_near(canonicalize(rotated(first_order_field(p), 30 * deg)).params, q, 1e-9);
}

TEST(RotateFrame, EquivarianceRandom) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-pi, pi);
  for (int k = 0; k < 200; ++k) {
    const QuadrupoleParams p = random_params(rng);
    const double t = u(rng);
    const QuadrupoleParams want = rotate_frame(canonicalize(decompose(p)).params, t);
    const QuadrupoleParams got = canonicalize(rotated(first_order_field(p), t)).params;
    expect_params_near(got, want, 1e-9);
  }
}

TEST(Ellipse, LinearAlongX) {
  const Ellipse e = polarization_ellipse({1.0, 0.0});
  EXPECT_NEAR(e.major, 1, 1e-15);
  EXPECT_NEAR(e.minor, 0, 1e-15);
  EXPECT_NEAR(e.orientation, 0, 1e-15);
  EXPECT_FALSE(e.circular);
}

TEST(Ellipse, Circular) {
  const Ellipse e = polarization_ellipse({1.0, cplx(0, 1)});
  EXPECT_TRUE(e.circular);
  EXPECT_NEAR(e.major, 1, 1e-15);
  EXPECT_NEAR(e.minor, 1, 1e-15);
}

TEST(Ellipse, MatchesTimeSampling) {
  const Ellipse e = polarization_ellipse({1.0, cplx(0, 0.5)});
  const auto s = oracle::sample_ellipse(1.0, cplx(0, 0.5));
  EXPECT_NEAR(e.major, 1, 1e-12);
  EXPECT_NEAR(e.minor, 0.5, 1e-12);
  EXPECT_NEAR(e.orientation, 0, 1e-12);
  EXPECT_NEAR(e.major, s.major, 1e-8);
  EXPECT_NEAR(e.minor, s.minor, 1e-8);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int k = 0; k < 20; ++k) {
    const ComplexVec2 v{cplx(g(rng), g(rng)), cplx(g(rng), g(rng))};
    const Ellipse a = polarization_ellipse(v);
    const auto b = oracle::sample_ellipse(v.x, v.z);
    EXPECT_NEAR(a.major, b.major, 1e-6 * b.major);
    EXPECT_NEAR(a.minor, b.minor, 1e-6 * b.major);
    EXPECT_LT(angle_diff(a.orientation, b.orientation), 1e-3);
  }
}

TEST(Ellipse, GradientLinearEverywhereAtPsiZero) {
  QuadrupoleParams p = scenario::table1_simulation();
  p.psi = 0;
  p.B = 0;
  for (double x = -5; x <= 5; x += 2.5)
    for (double z = -5; z <= 5; z += 2.5) {
      if (x == 0 && z == 0) continue;
      const ComplexVec2 v = synthesize_phasor(p, {x, z});
      EXPECT_LT(polarization_ellipse(v).minor, 1e-12 * v.norm());
      EXPECT_LT(std::abs(std::imag(v.x * std::conj(v.z))), 1e-10 * v.norm2());
    }
}

TEST(Ellipse, QuadratureOffsetMakesMinimumElliptical) {
  QuadrupoleParams p = scenario::table1_simulation();
  p.psi = 0;
  const Ellipse e = polarization_ellipse(synthesize_phasor(p, {6.0, 6.0}));
  EXPECT_GT(e.minor, 0.1 * e.major);
}

TEST(Ellipse, CircularGradientAtPsiQuarterTurn) {
  QuadrupoleParams p;
  p.Bp = 2;
  p.beta = 0.7;
  p.psi = pi / 4;
  for (double x = -3; x <= 3; x += 1.5)
    for (double z = -3; z <= 3; z += 1.5) {
      if (x == 0 && z == 0) continue;
      const Ellipse e = polarization_ellipse(synthesize_phasor(p, {x, z}));
      EXPECT_NEAR(e.minor, e.major, 1e-9 * e.major);
    }
}
