#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fbc/barrier.hpp"
#include "fbc/foliation.hpp"
#include "fbc/minimizer.hpp"

using namespace fbc;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTheta32 = 1.1071487177940904;  // arctan 2

struct ConeFixture {
  HomogeneousSolution sol;
  SpectralData sd;
};

const ConeFixture& cone32() {
  static const ConeFixture f = [] {
    auto sol =
        solve_degree_one(DomainSpec::double_rotation(7, 3, 2, kTheta32));
    auto sd = compute_spectral(sol);
    return ConeFixture{std::move(sol), std::move(sd)};
  }();
  return f;
}

// half-space solution in n = 3: U0 = r cos(theta), aperture pi / 2
const HomogeneousSolution& half_space3() {
  static const HomogeneousSolution sol =
      solve_degree_one(DomainSpec::single_cap(3, kPi / 2));
  return sol;
}

// U0 + a V_{gamma-} nodewise; positive everywhere since vbar > 0 on the
// closed cap and the clamped extension keeps it positive beyond
Field upper_family_stand_in(const HomogeneousSolution& sol,
                            const SpectralData& sd, MeshPtr m, double a) {
  Field f(m, FieldKind::SignedLinearized);
  for (std::size_t i = 0; i < m->nr(); ++i)
    for (std::size_t j = 0; j < m->ntheta(); ++j)
      f.at(i, j) = m->r(i) * sol.phi_at(m->theta(j)) +
                   a * std::pow(m->r(i), -sd.gamma_minus) *
                       sd.vbar.eval(m->theta(j));
  return f;
}

Field lower_family_stand_in(const HomogeneousSolution& sol,
                            const SpectralData& sd, MeshPtr m, double a) {
  Field f(m, FieldKind::SignedLinearized);
  for (std::size_t i = 0; i < m->nr(); ++i)
    for (std::size_t j = 0; j < m->ntheta(); ++j)
      f.at(i, j) = std::max(m->r(i) * sol.phi_at(m->theta(j)) -
                                a * std::pow(m->r(i), -sd.gamma_minus) *
                                    sd.vbar.eval(m->theta(j)),
                            0.0);
  return f;
}

}  // namespace

TEST_CASE("extract_fb_graph: cone itself has zero displacement") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 128, 256, 0.5, 4.0);
  Field u0 = sol.evaluate(m);
  auto g = extract_fb_graph(u0, sol, {0.8, 1.5, 3.0});
  REQUIRE(g.samples.size() == 3);
  CHECK(g.failures() == 0);
  const double dth = m->theta(1) - m->theta(0);
  for (const auto& s : g.samples) {
    CHECK(s.ok);
    CHECK(std::abs(s.psi) < 1.5 * s.r * dth);  // sub-cell
  }
  CHECK(g.to_json().find("samples") != std::string::npos);
}

TEST_CASE("extract_fb_graph: imposed shift recovered, dilation consistent") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 128, 256, 0.5, 4.0);
  const double dth = m->theta(1) - m->theta(0);
  const double c = 0.03;  // constant arc displacement, inside the collar

  Field u(m, FieldKind::NonnegMinimizer);
  for (std::size_t i = 0; i < m->nr(); ++i)
    for (std::size_t j = 0; j < m->ntheta(); ++j)
      u.at(i, j) = m->r(i) * sol.phi_at(m->theta(j) - c / m->r(i));

  std::vector<double> radii = {0.8, 1.2, 1.8};
  auto g = extract_fb_graph(u, sol, radii);
  for (const auto& s : g.samples) {
    REQUIRE(s.ok);
    CHECK(std::abs(s.psi - c) < 2.0 * s.r * dth);
  }

  // graph consistency: the dilation u_2 carries the displacement c / 2
  // (on a half-size ball so that 2x stays inside the source mesh)
  auto mhalf = build_mesh(sol.domain, 128, 256, 0.5, 2.0);
  Field u2 = rescale_field(u, 2.0, mhalf);
  auto g2 = extract_fb_graph(u2, sol, radii);
  for (const auto& s : g2.samples) {
    REQUIRE(s.ok);
    CHECK(std::abs(s.psi - 0.5 * c) < 2.0 * s.r * dth);
  }

  CHECK_THROWS_AS(extract_fb_graph(u, sol, {100.0}), FoliationError);
}

TEST_CASE("expansion_check: manufactured psi = v gives C = 0") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 64, 64, 0.5, 4.0);
  Field v = eval_V(sd, Branch::Minus, m);
  FreeBoundaryGraph g;
  g.theta0 = kTheta32;
  for (double r : {0.8, 1.5, 3.0}) {
    GraphSample s;
    s.r = r;
    s.psi = v.interp(r, kTheta32);
    s.ok = true;
    g.samples.push_back(s);
  }
  auto rep = expansion_check(g, v);
  CHECK(rep.used == 3);
  CHECK(rep.admissible_c == 0.0);

  GraphSample far;
  far.r = 50.0;
  far.ok = true;
  g.samples.push_back(far);
  CHECK_THROWS_AS(expansion_check(g, v), FoliationError);
}

TEST_CASE("expansion_check: flat-strip residual is quadratic") {
  const auto& sol = half_space3();
  auto m = build_mesh(sol.domain, 96, 512, 1.0, 4.0);
  auto profile = [](double th) { return 1.0 + 0.5 * (th - kPi / 2); };

  std::vector<double> ts = {0.01, 0.02, 0.04, 0.08};
  std::vector<double> res;
  std::vector<double> cs;
  for (double t : ts) {
    Field u(m, FieldKind::NonnegMinimizer);
    Field v(m, FieldKind::SignedLinearized);
    for (std::size_t i = 0; i < m->nr(); ++i)
      for (std::size_t j = 0; j < m->ntheta(); ++j) {
        const double th = m->theta(j);
        u.at(i, j) = std::max(
            m->r(i) * std::cos(th) + t * profile(th), 0.0);
        v.at(i, j) = t * profile(th);
      }
    auto g = extract_fb_graph(u, sol, {1.5, 2.0, 3.0});
    auto rep = expansion_check(g, v);
    REQUIRE(rep.used == 3);
    res.push_back(rep.residual[1]);  // the r = 2 sample
    cs.push_back(rep.admissible_c);
  }

  // least-squares slope of log residual vs log t
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const double x = std::log(ts[k]), y = std::log(res[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double nn = double(ts.size());
  const double slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
  CHECK(slope == doctest::Approx(2.0).epsilon(0.05));

  // the admissible constant is stable across perturbation sizes
  for (double c : cs) {
    CHECK(c > 0.5 * cs.front());
    CHECK(c < 2.0 * cs.front());
  }
}

TEST_CASE("ray_monotonicity: homogeneous field is neutral") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 128, 128, 1.0, 4.0);
  Field u0 = sol.evaluate(m);
  auto rep = ray_monotonicity(u0, Region::all(*m));
  CHECK(std::abs(rep.max_value) < 1e-10);  // Euler relation
  CHECK(rep.nodes > 0);
}

TEST_CASE("ray_monotonicity: decaying supersolution is strictly negative") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 128, 128, 1.0, 4.0);
  Field u = upper_family_stand_in(sol, sd, m, 1.0);
  auto rep = ray_monotonicity(u, Region::all(*m));
  CHECK(rep.passed);
  CHECK(rep.strict_fraction == doctest::Approx(1.0));

  // r u_r - u = -(gamma- + 1) V_{gamma-}; its max is at the largest radius
  // and the smallest angular profile value
  double vb_min = 1e300;
  for (std::size_t j = 0; j < m->ntheta(); ++j)
    vb_min = std::min(vb_min, sd.vbar.eval(m->theta(j)));
  const double expected =
      -(sd.gamma_minus + 1.0) * std::pow(4.0, -sd.gamma_minus) * vb_min;
  CHECK(rep.max_value == doctest::Approx(expected).epsilon(0.02));

  Region outside{9.0, 10.0, 0.0, 0.5};
  CHECK_THROWS_AS(ray_monotonicity(u, outside), FoliationError);
}

TEST_CASE("ordering_check: trivial, constructed triple, mesh mismatch") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 64, 64, 0.5, 4.0);
  Field u0 = sol.evaluate(m);
  auto trivial = ordering_check(u0, u0, u0);
  CHECK(trivial.ok);
  CHECK(trivial.max_low_violation <= 0.0);
  CHECK(trivial.max_high_violation <= 0.0);

  Field low = lower_family_stand_in(sol, sd, m, 0.1);
  Field high = upper_family_stand_in(sol, sd, m, 0.1);
  CHECK(ordering_check(low, u0, high).ok);

  // swapped triple fails and reports the worst location
  auto bad = ordering_check(high, u0, low);
  CHECK_FALSE(bad.ok);
  CHECK(bad.violations > 0);
  CHECK(bad.max_low_violation > 0.0);

  auto m2 = build_mesh(sol.domain, 32, 32, 0.5, 4.0);
  Field other = sol.evaluate(m2);
  CHECK_THROWS_AS(ordering_check(other, u0, u0), FoliationError);
}

TEST_CASE("foliation_sample: coverage, uniqueness, and classification") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 256, 64, 0.01, 16.0);
  Field upper = upper_family_stand_in(sol, sd, m, 1.0);
  Field lower = lower_family_stand_in(sol, sd, m, 1.0);

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> ur(1.2, 2.5);
  std::uniform_real_distribution<double> uth(0.0, 0.8 * kTheta32);
  std::uniform_real_distribution<double> uoff(0.2, 1.0);
  std::vector<SamplePoint> pts;
  std::size_t above_count = 0;
  for (int k = 0; k < 50; ++k) {
    SamplePoint p;
    p.r = ur(rng);
    p.theta = uth(rng);
    const double u0 = p.r * sol.phi_at(p.theta);
    const bool above = k % 2 == 0;
    p.z = above ? u0 * (1.0 + uoff(rng)) : u0 * (1.0 - uoff(rng));
    if (above) ++above_count;
    pts.push_back(p);
  }
  auto rep = foliation_sample(upper, lower, sol, pts);
  CHECK(rep.ok);
  CHECK(rep.failed == 0);
  CHECK(rep.matched == pts.size());
  std::size_t upper_matched = 0;
  for (const auto& rec : rep.records) {
    CHECK(rec.unique);
    if (rec.kind == CoverKind::Upper) ++upper_matched;
    // the matched dilation reproduces the sample height
    const Field& fam = rec.kind == CoverKind::Upper ? upper : lower;
    const double val =
        fam.interp(rec.t * rec.point.r, rec.point.theta) / rec.t;
    CHECK(val == doctest::Approx(rec.point.z).epsilon(1e-4));
  }
  CHECK(upper_matched == above_count);

  // golden dilation parameter: z manufactured from the family itself
  const double that = 1.7, rr = 1.5, th = 0.3;
  SamplePoint exact{rr, th,
                    rr * sol.phi_at(th) +
                        std::pow(that, -sd.gamma_minus - 1.0) *
                            std::pow(rr, -sd.gamma_minus) *
                            sd.vbar.eval(th)};
  auto one = foliation_sample(upper, lower, sol, {exact});
  REQUIRE(one.matched == 1);
  CHECK(one.records[0].kind == CoverKind::Upper);
  CHECK(one.records[0].t == doctest::Approx(that).epsilon(0.02));

  // points on the cone graph are the shared asymptote of both families
  SamplePoint asym{1.5, 0.3, 1.5 * sol.phi_at(0.3)};
  auto ar = foliation_sample(upper, lower, sol, {asym});
  CHECK(ar.asymptotic == 1);
  CHECK(ar.records[0].note == "boundary-of-foliation");

  SamplePoint neg{1.5, 0.3, -1.0};
  auto nr = foliation_sample(upper, lower, sol, {neg});
  CHECK(nr.failed == 1);
  CHECK(nr.to_json().find("records") != std::string::npos);
}

TEST_CASE("dilation_distance_probe: identity and constructed dilation") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 256, 64, 0.01, 16.0);
  Field upper = upper_family_stand_in(sol, sd, m, 1.0);

  auto self_probe = dilation_distance_probe(upper, upper, 0.5, 2.0);
  CHECK(self_probe.t_star == doctest::Approx(1.0).epsilon(0.01));
  CHECK(self_probe.distance < 1e-4);

  // the dilated candidate lives on a smaller ball so that 2x stays inside
  // the reference mesh
  auto m2 = build_mesh(sol.domain, 128, 64, 0.01, 8.0);
  Field dilated = rescale_field(upper, 2.0, m2);
  auto probe = dilation_distance_probe(dilated, upper, 1.0, 4.0);
  CHECK(probe.t_star == doctest::Approx(2.0).epsilon(0.01));
  CHECK(probe.distance < 1e-3);

  CHECK_THROWS_AS(dilation_distance_probe(upper, upper, 2.0, 1.0),
                  FoliationError);
}

TEST_CASE("computed one-sided construction: outward graph and ordering") {
  const auto& [sol, sd] = cone32();
  auto bump = [](double th) {
    const double c = 0.55, w = 0.35;
    const double x = (th - c) / w;
    return std::abs(x) < 1.0 ? std::exp(-1.0 / (1.0 - x * x)) * std::exp(1.)
                             : 0.0;
  };
  PerturbConfig cfg;
  cfg.eps = {0.1};
  cfg.target_radius = 2.0;
  cfg.nr = cfg.ntheta = 64;
  cfg.target_nr = cfg.target_ntheta = 96;
  auto res = construct_perturbed(sol, bump, PerturbSide::Above, cfg);

  // the free boundary is displaced outward at every radius where the
  // graph enters the search collar (closer in, the displacement still
  // exceeds the collar at this modest perturbation size)
  auto g = extract_fb_graph(res.u, sol, {1.4, 1.6, 1.8});
  for (const auto& s : g.samples) {
    REQUIRE(s.ok);
    CHECK(s.psi > 0.0);
  }

  // ordering against the cone within a grid tolerance
  Field u0 = sol.evaluate(res.u.mesh_ptr());
  const double h = 2.0 / 96;
  CHECK(ordering_check(u0, u0, res.u, 2.0 * h).ok);
}
