#include <gtest/gtest.h>

#include <sstream>

#include "nearfield/field_grid.hpp"
#include "nearfield/wires.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace nearfield;

namespace {

FieldGrid from_params(const QuadrupoleParams& p, double half = 8, double step = 0.25) {
  return sample_field([&](double x, double z) { return field_at(p, x, z); }, centered_axis(p.x0 + 0.3, half, step),
                      centered_axis(p.z0 - 0.2, half, step), p.freq);
}

FieldGrid wire_window(const WireSet& ws, double cx, double cz) {
  return sample_field([&](double x, double z) { return field_of_wires(ws, x, z); }, centered_axis(cx, 8, 0.25),
                      centered_axis(cz, 8, 0.25), ws.freq);
}

void expect_same(const QuadrupoleParams& a, const QuadrupoleParams& b, double rel) {
  EXPECT_NEAR(a.B, b.B, rel * std::abs(b.Bp));
  EXPECT_NEAR(a.Bp, b.Bp, rel * std::abs(b.Bp));
  EXPECT_NEAR(a.alpha, b.alpha, rel);
  EXPECT_NEAR(a.beta, b.beta, rel);
  EXPECT_NEAR(a.psi, b.psi, rel);
}

const char* small_csv =
    "# freq_MHz=1000\n"
    "x_um,z_um,re_Bx_uT,im_Bx_uT,re_Bz_uT,im_Bz_uT\n"
    "1,0,1,0,0,0\n0,0,0,0,0,0\n-1,0,1,0,0,0\n"
    "-1,1,1,0,0,1\n0,1,0,0,0,1\n1,1,1,0,0,1\n"
    "0,-1,0,0,0,-1\n-1,-1,1,0,0,-1\n1,-1,1,0,0,-1\n";

}  // namespace

TEST(LoadGrid, ThreeByThreeAnyOrder) {
  std::istringstream in(small_csv);
  const FieldGrid g = load_grid(in);
  EXPECT_EQ(g.nx(), 3u);
  EXPECT_EQ(g.nz(), 3u);
  EXPECT_EQ(g.freq, 1000.0);
  EXPECT_EQ(g.at(2, 2).z, cplx(0, 1));
  EXPECT_FALSE(g.max_y_fraction.has_value());
}

TEST(LoadGrid, MissingNode) {
  std::string text = small_csv;
  text.erase(text.rfind("1,-1"));
  std::istringstream in(text);
  EXPECT_THROW(load_grid(in), NonRectangular);
}

TEST(LoadGrid, BadInput) {
  std::istringstream bad_header("x,z,bx\n0,0,1\n");
  EXPECT_THROW(load_grid(bad_header), FormatError);
  std::istringstream bad_row("x_um,z_um,re_Bx_uT,im_Bx_uT,re_Bz_uT,im_Bz_uT\n0,0,1,2\n");
  EXPECT_THROW(load_grid(bad_row), FormatError);
  std::istringstream bad_number("x_um,z_um,re_Bx_uT,im_Bx_uT,re_Bz_uT,im_Bz_uT\n0,0,1,2,x,4\n");
  EXPECT_THROW(load_grid(bad_number), FormatError);
  std::istringstream dup("x_um,z_um,re_Bx_uT,im_Bx_uT,re_Bz_uT,im_Bz_uT\n0,0,1,2,3,4\n0,0,1,2,3,4\n");
  EXPECT_THROW(load_grid(dup), FormatError);
  std::istringstream empty("");
  EXPECT_THROW(load_grid(empty), FormatError);
}

TEST(LoadGrid, YColumnFraction) {
  std::istringstream in(
      "x_um,z_um,re_Bx_uT,im_Bx_uT,re_Bz_uT,im_Bz_uT,re_By_uT,im_By_uT\n"
      "0,0,3,0,4,0,0.05,0\n1,0,3,0,4,0,0,0.1\n");
  const FieldGrid g = load_grid(in);
  ASSERT_TRUE(g.max_y_fraction.has_value());
  EXPECT_NEAR(*g.max_y_fraction, 0.02, 1e-15);
}

TEST(LoadGrid, WriteRoundTrip) {
  const FieldGrid g = wire_window(preset_scenario(Preset::meander_eddy), 0, 45);
  std::stringstream s;
  write_grid(g, s);
  const FieldGrid h = load_grid(s);
  ASSERT_EQ(h.samples.size(), g.samples.size());
  EXPECT_EQ(h.xs, g.xs);
  EXPECT_EQ(h.zs, g.zs);
  EXPECT_EQ(h.freq, g.freq);
  for (std::size_t i = 0; i < g.samples.size(); ++i) {
    EXPECT_EQ(h.samples[i].x, g.samples[i].x);
    EXPECT_EQ(h.samples[i].z, g.samples[i].z);
  }
}

TEST(LoadGrid, PairExportCenterIsZero) {
  std::stringstream s;
  write_grid(wire_window(preset_scenario("parallel-pair"), 0, 0), s);
  const FieldGrid g = load_grid(s);
  EXPECT_LT(g.at(g.nx() / 2, g.nz() / 2).norm(), 1e-12);
}

TEST(PolyFit, ExactFirstOrderAnyOrder) {
  const QuadrupoleParams p = scenario::table1_simulation();
  const FieldGrid g = from_params(p);
  for (int order : {1, 2, 5, 10}) {
    const PolyFit f = fit_complex_polynomial(g, p.x0, p.z0, 4, order);
    EXPECT_LT(f.residual_rel, 1e-10);
    const FirstOrderField want = first_order_field(p);
    EXPECT_LT((f.first_order().gradient - want.gradient).norm(), 1e-9 * p.Bp);
    EXPECT_EQ(f.coeffs_x.size(), PolyFit::coefficient_count(order));
  }
}

TEST(PolyFit, ThirdOrderSourceWithOrderTwo) {
  auto cubic = [](double x, double z) { return ComplexVec2{cplx(x * x * x, 0), cplx(z * z * z - x, 0)}; };
  const FieldGrid g = sample_field(cubic, axis_range(-2, 2, 0.25), axis_range(-2, 2, 0.25), 0);
  EXPECT_GT(fit_complex_polynomial(g, 0, 0, 2, 2).residual_rel, 1e-3);
  EXPECT_LT(fit_complex_polynomial(g, 0, 0, 2, 3).residual_rel, 1e-12);
}

TEST(PolyFit, MeanderWindowOrderTen) {
  const FieldGrid g = wire_window(preset_scenario(Preset::meander), 0, 45);
  EXPECT_LT(fit_complex_polynomial(g, 0, 45, 4, 10).residual_rel, 1e-6);
}

TEST(PolyFit, Underdetermined) {
  const FieldGrid g = from_params(scenario::table1_simulation(), 1, 0.5);
  EXPECT_THROW(fit_complex_polynomial(g, 45.8, -1.0, 1, 10), Underdetermined);
}

TEST(LocateMinimum, Table1Field) {
  const QuadrupoleParams p = scenario::table1_simulation();
  const Point m = locate_minimum(from_params(p));
  EXPECT_NEAR(m.x, 45.5, 0.01);
  EXPECT_NEAR(m.z, -0.8, 0.01);
}

TEST(LocateMinimum, PureOffsetHasNoMinimum) {
  QuadrupoleParams p = scenario::table1_simulation();
  p.Bp = 0;
  EXPECT_THROW(locate_minimum(from_params(p)), NoInteriorMinimum);
}

TEST(LocateMinimum, BoundaryArgmin) {
  QuadrupoleParams p = scenario::table1_simulation();
  const FieldGrid g = sample_field([&](double x, double z) { return field_at(p, x, z); }, axis_range(50, 60, 0.5),
                                   axis_range(-5, 5, 0.5), 0);
  EXPECT_THROW(locate_minimum(g), NoInteriorMinimum);
}

TEST(LocateMinimum, ParallelPairMidpoint) {
  const Point m = locate_minimum(wire_window(preset_scenario("parallel-pair"), 0.3, -0.4));
  EXPECT_NEAR(m.x, 0, 0.01);
  EXPECT_NEAR(m.z, 0, 0.01);
}

TEST(Extract, Table1Parameters) {
  const QuadrupoleParams p = scenario::table1_simulation();
  const Extraction ex = extract_quadrupole(from_params(p));
  expect_same(ex.params, p, 1e-6);
  EXPECT_NEAR(ex.params.ratio(), 8.5, 8.5e-6);
  EXPECT_NEAR(ex.params.x0, p.x0, 1e-6);
  EXPECT_NEAR(ex.params.z0, p.z0, 1e-6);
  EXPECT_EQ(ex.params.freq, p.freq);
  EXPECT_TRUE(ex.diagnostics.within_tolerance);
}

TEST(Extract, IdentityForAnyWindowAndOrder) {
  const QuadrupoleParams p = scenario::table1_experiment();
  for (double half : {2.0, 3.0, 4.0})
    for (int order : {1, 3, 10}) {
      const Extraction ex = extract_quadrupole(from_params(p), half, order);
      expect_same(ex.params, p, 1e-9);
    }
}

TEST(Extract, WindowScalingInvariance) {
  const QuadrupoleParams p = scenario::table1_simulation();
  const FieldGrid g = from_params(p);
  const PolyFit a = fit_complex_polynomial(g, p.x0, p.z0, 3, 6);
  const PolyFit b = fit_complex_polynomial(g, p.x0, p.z0, 3.5, 6);
  const QuadrupoleParams qa = canonicalize(a.first_order()).params, qb = canonicalize(b.first_order()).params;
  expect_same(qa, qb, 1e-9);
}

TEST(Extract, UniformFieldDegenerate) {
  const FieldGrid g =
      sample_field([](double, double) { return ComplexVec2{cplx(1, 2), cplx(-0.5, 0)}; }, axis_range(0, 4, 0.5),
                   axis_range(0, 4, 0.5), 0);
  EXPECT_TRUE(extract_quadrupole(g).diagnostics.degenerate_gradient);
}

TEST(Extract, WireFieldNearFieldDefectsSmall) {
  const Extraction ex = extract_quadrupole(wire_window(preset_scenario(Preset::meander_eddy), 0, 45));
  const Canonical c = canonicalize(ex.fit.first_order());
  EXPECT_LT(c.diagnostics.gradient_trace_defect, 1e-8);
  EXPECT_LT(c.diagnostics.gradient_symmetry_defect, 1e-8);
}

TEST(Extract, MeanderEddyRatioMatchesAnalyticGradient) {
  const WireSet ws = preset_scenario(Preset::meander_eddy);
  const Extraction ex = extract_quadrupole(wire_window(ws, 0, 45));
  std::vector<std::array<double, 2>> pos;
  std::vector<cplx> amp;
  for (const auto& w : ws.wires) {
    pos.push_back({w.x, w.z});
    amp.push_back(w.amplitude);
  }
  FirstOrderField f;
  const Eigen::Vector2cd b = oracle::wire_field(pos, amp, ex.params.x0, ex.params.z0);
  f.offset = {b(0), b(1)};
  f.gradient = oracle::wire_gradient(pos, amp, ex.params.x0, ex.params.z0);
  const QuadrupoleParams want = canonicalize(f).params;
  ASSERT_GT(std::abs(want.ratio()), 0.1);
  EXPECT_NEAR(ex.params.ratio(), want.ratio(), 0.05 * std::abs(want.ratio()));
  EXPECT_NEAR(ex.params.Bp, want.Bp, 1e-6 * want.Bp);
}
