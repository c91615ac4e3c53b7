#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fbc/barrier.hpp"

using namespace fbc;
constexpr double kPi = std::numbers::pi;
constexpr double kTheta32 = 1.1071487177940904;

namespace {

struct ConeData {
  HomogeneousSolution sol;
  SpectralData sd;
};

const ConeData& half_space7() {
  static ConeData d = [] {
    auto sol = solve_degree_one(DomainSpec::single_cap(7, kPi / 2));
    return ConeData{sol, compute_spectral(sol)};
  }();
  return d;
}

const ConeData& cone32() {
  static ConeData d = [] {
    // fine resolution: the Robin-consistency defect H1 vbar(t0) - vbar'(t0)
    // enters the boundary residual multiplied by |A| ~ 10, so it must sit
    // well below 1e-6 (it decays at h^2: ~1.5e-8 at 32768 cells)
    SpectralOptions opt;
    opt.cells = 32768;
    auto sol =
        solve_degree_one(DomainSpec::double_rotation(7, 3, 2, kTheta32), opt);
    return ConeData{sol, compute_spectral(sol, opt)};
  }();
  return d;
}

SpectralData synthetic_equal_roots() {
  SpectralData s;
  s.n = 7;
  s.theta0 = 1.0;
  s.H1 = 1.0;
  s.lambda = 6.25;
  s.vbar.theta = {0.0, 1.0};
  s.vbar.values = {1.0, 1.0};
  s.gamma_minus = s.gamma_plus = 2.5;
  s.equal_roots = true;
  s.stable = true;
  return s;
}

}  // namespace

TEST_CASE("eval_V: half-space branches are 1 and r^-(n-2)") {
  const auto& [sol, sd] = half_space7();
  CHECK(sd.gamma_minus == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(sd.gamma_plus == doctest::Approx(5.0).epsilon(1e-6));
  for (double r : {0.5, 1.0, 2.0})
    for (double t : {0.2, 0.8, 1.4}) {
      CHECK(eval_V_at(sd, Branch::Minus, r, t) ==
            doctest::Approx(1.0).epsilon(1e-6));
      CHECK(eval_V_at(sd, Branch::Plus, r, t) ==
            doctest::Approx(std::pow(r, -5.0)).epsilon(1e-6));
    }
  auto m = build_mesh(sol.domain, 16, 16, 0.5, 2.0);
  Field v = eval_V(sd, Branch::Plus, m);
  CHECK(v(3, 5) == eval_V_at(sd, Branch::Plus, m->r(3), m->theta(5)));
}

TEST_CASE("eval_V: equal roots switch to the log pair") {
  auto s = synthetic_equal_roots();
  const double e = std::exp(1.0);
  // ln e + 1 = 2
  CHECK(eval_V_at(s, Branch::Minus, e, 0.5) ==
        doctest::Approx(2.0 * std::pow(e, -2.5)).epsilon(1e-12));
  CHECK(eval_V_at(s, Branch::Plus, e, 0.5) ==
        doctest::Approx(std::pow(e, -2.5)).epsilon(1e-12));
  // the ratio is ln r + 1 at every sample
  for (double r : {0.3, 1.0, 2.0, 7.5})
    CHECK(eval_V_at(s, Branch::Minus, r, 0.2) /
              eval_V_at(s, Branch::Plus, r, 0.2) ==
          doctest::Approx(std::log(r) + 1.0).epsilon(1e-14));
}

TEST_CASE("eval_V rejects unstable data") {
  auto s = synthetic_equal_roots();
  s.stable = false;
  CHECK_THROWS_AS(eval_V_at(s, Branch::Minus, 1.0, 0.5), BarrierError);
}

TEST_CASE("eval_u0: degree-0 trace of the cone solution") {
  const auto& [sol, sd] = half_space7();
  for (double t : {0.1, 0.7, 1.3})
    CHECK(eval_u0_at(sol, t) == doctest::Approx(std::cos(t)).epsilon(1e-7));
  // r-independence and zero extension
  const auto& [sol32, sd32] = cone32();
  auto m = build_mesh(sol32.domain, 8, 32, 0.5, 4.0, 0.0, kTheta32);
  Field u0 = eval_u0(sol32, m);
  for (std::size_t j = 0; j < m->ntheta(); ++j)
    CHECK(u0(0, j) == u0(7, j));
  CHECK(eval_u0_at(sol32, kTheta32 + 0.1) == 0.0);
}

TEST_CASE("min_amplitude_A: half-space at gamma = (n-2)/2") {
  const auto& [sol, sd] = half_space7();
  // Q = -6.25, P = -12.25, vbar = 1, u0 = cos theta: the threshold is
  // -12.25/6.25 = -1.96 attained at the pole
  auto a = min_amplitude_A(sd, sol, 2.5);
  CHECK(a.A == doctest::Approx(-1.96).epsilon(1e-6));
  CHECK(a.theta_max == doctest::Approx(0.0).epsilon(1e-3));
  // dense independent scan of the same ratio
  double scan = 0.0;
  const double Q = bracket_Q(7, sd.lambda, 2.5), P = bracket_P(7, 2.5);
  for (int k = 0; k <= 20000; ++k) {
    const double t = kPi / 2 * k / 20000.0;
    scan = std::min(scan, -P * eval_u0_at(sol, t) / (Q * sd.vbar.eval(t)));
  }
  CHECK(a.A == doctest::Approx(scan).epsilon(1e-9));
}

TEST_CASE("min_amplitude_A: blow-up towards gamma-") {
  const auto& [sol, sd] = cone32();
  const double g0 = sd.gamma_minus;
  double prev = 0.0;
  for (double d : {1e-1, 1e-2, 1e-3}) {
    const double a = std::abs(min_amplitude_A(sd, sol, g0 - d).A);
    CHECK(a > prev);
    prev = a;
  }
  CHECK(prev > 1e2);
  CHECK_THROWS_AS(min_amplitude_A(sd, sol, sd.gamma_minus), BarrierError);
}

TEST_CASE("barrier params: regime and sign validation") {
  const auto& [sol, sd] = cone32();
  auto below = BarrierParams::make(sd, sd.gamma_minus / 2, 1.0);
  CHECK(below.regime == Regime::BelowGammaMinus);
  auto between = BarrierParams::make(sd, 2.5, -3.0);
  CHECK(between.regime == Regime::Between);
  auto above = BarrierParams::make(sd, sd.gamma_plus + 0.5, 1.0, 0.7);
  CHECK(above.regime == Regime::AboveGammaPlus);

  CHECK_THROWS_AS(BarrierParams::make(sd, sd.gamma_minus / 2, -1.0),
                  BarrierError);
  CHECK_THROWS_AS(BarrierParams::make(sd, 2.5, 3.0), BarrierError);
  CHECK_THROWS_AS(BarrierParams::make(sd, sd.gamma_minus, 1.0), BarrierError);
  CHECK_THROWS_AS(BarrierParams::make(sd, 2.5, -3.0, 0.5), BarrierError);
}

TEST_CASE("check_barrier: half-space between regime at 256^2") {
  const auto& [sol, sd] = half_space7();
  auto m = build_mesh(sol.domain, 256, 256, 0.5, 1.5);
  const double astar = min_amplitude_A(sd, sol, 2.5).A;

  auto good = BarrierParams::make(sd, 2.5, 2.0 * astar);
  auto rep = check_barrier(sd, sol, good, m, 1e-6);
  CHECK(rep.interior_ok);
  CHECK(rep.boundary_ok);
  CHECK(rep.sign_ok);  // W < 0: A vbar + u0 <= -3.92 + 1
  CHECK(rep.passed);
  CHECK(rep.measured_negativity_threshold ==
        doctest::Approx(-1.0).epsilon(1e-6));  // -max u0/vbar = -cos 0

  auto weak = BarrierParams::make(sd, 2.5, 0.5 * astar);
  auto rep2 = check_barrier(sd, sol, weak, m, 1e-6);
  CHECK_FALSE(rep2.interior_ok);
  CHECK(rep2.min_interior_residual < -1e-3);
  CHECK_FALSE(rep2.sign_ok);  // -0.98 + cos theta > 0 near the pole
  CHECK_FALSE(rep2.passed);
  CHECK(!rep2.sign_violations.empty());

  const std::string js = rep.to_json();
  CHECK(js.find("min_interior_residual") != std::string::npos);
  CHECK(js.find("\"passed\": true") != std::string::npos);
}

TEST_CASE("check_barrier: (3,2) below-gamma- positivity") {
  const auto& [sol, sd] = cone32();
  auto m = build_mesh(sol.domain, 128, 128, 0.5, 1.5, 0.0, kTheta32);
  const double g = sd.gamma_minus / 2;
  const double astar = min_amplitude_A(sd, sol, g).A;
  CHECK(astar > 0.0);
  auto p = BarrierParams::make(sd, g, 1.5 * astar);
  auto rep = check_barrier(sd, sol, p, m, 1e-6);
  CHECK(rep.passed);
  CHECK(rep.sign_violations.empty());
  // both summands positive: W > 0 sampled directly
  CHECK(eval_W_at(sd, sol, p, 1.2, 0.3) > 0.0);
}

TEST_CASE("closed-form Delta W agrees with the grid Laplacian") {
  const auto& [sol, sd] = cone32();
  const double g = sd.gamma_minus / 2;
  const double astar = min_amplitude_A(sd, sol, g).A;
  auto p = BarrierParams::make(sd, g, 1.5 * astar);
  const double Q = bracket_Q(sd.n, sd.lambda, g), P = bracket_P(sd.n, g);

  auto m = build_mesh(sol.domain, 128, 128, 0.5, 1.5, 0.0, kTheta32);
  Field w = eval_W(sd, sol, p, m);
  Field lap = laplacian_residual(w);
  for (std::size_t i = 8; i + 8 < m->nr(); i += 16)
    for (std::size_t j = 8; j + 8 < m->ntheta(); j += 16) {
      const double closed =
          std::pow(m->r(i), -g - 2.0) *
          (p.A * Q * sd.vbar.eval(m->theta(j)) +
           P * eval_u0_at(sol, m->theta(j)));
      CHECK(lap(i, j) == doctest::Approx(closed).epsilon(5e-3));
    }
}

TEST_CASE("boundary identity: finite-difference residual decays at h^2") {
  const auto& [sol, sd] = cone32();
  const double g = sd.gamma_minus / 2;
  auto p = BarrierParams::make(sd, g,
                               1.5 * min_amplitude_A(sd, sol, g).A);
  auto fd_residual = [&](std::size_t cells) {
    auto m = build_mesh(sol.domain, cells, cells, 0.5, 1.5, 0.0, kTheta32);
    Field w = eval_W(sd, sol, p, m);
    auto grad = gradient(w);
    const std::size_t jb = m->ntheta() - 1;
    double worst = 0.0;
    for (std::size_t i = 0; i < m->nr(); ++i) {
      const double r = m->r(i);
      // interior normal is -theta for side Below
      const double res = -grad.dtheta(i, jb) / r + sd.H1 / r * w(i, jb) -
                         std::pow(r, -g - 1.0);
      worst = std::max(worst, std::abs(res) * std::pow(r, g + 1.0));
    }
    return worst;
  };
  const double r64 = fd_residual(64), r128 = fd_residual(128);
  CHECK(r128 < 0.05);
  CHECK(r64 / r128 > 3.4);
}

TEST_CASE("beta correction: residual-independent, scale covariance") {
  const auto& [sol, sd] = cone32();
  const double g = sd.gamma_plus + 0.5;
  const double astar = min_amplitude_A(sd, sol, g).A;
  auto m = build_mesh(sol.domain, 64, 64, 0.5, 1.5, 0.0, kTheta32);

  auto p0 = BarrierParams::make(sd, g, astar + 1.0, 0.0);
  auto p1 = BarrierParams::make(sd, g, astar + 1.0, 0.7);
  auto r0 = check_barrier(sd, sol, p0, m, 1e-6);
  auto r1 = check_barrier(sd, sol, p1, m, 1e-6);
  CHECK(r0.interior_ok);
  CHECK(r1.interior_ok);
  CHECK(r1.min_interior_residual ==
        doctest::Approx(r0.min_interior_residual).epsilon(1e-9));
  // the beta term can add at most beta * |H1 vbar(t0) - vbar'(t0)| * r^0.5
  // to the boundary residual (V_{gamma+} satisfies the Robin condition only
  // up to the numerical defect of the spectral data)
  const double combo =
      sd.H1 * sd.vbar.eval(sd.theta0) - sd.dvbar_boundary;
  CHECK(r0.boundary_ok);
  CHECK(r1.boundary_ok);
  CHECK(r1.max_boundary_residual <=
        r0.max_boundary_residual +
            0.7 * std::abs(combo) * std::pow(1.5, 0.5) + 1e-12);

  // pure power part: W(t x) = t^-gamma W(x)
  for (double t : {0.5, 1.3})
    for (double r : {0.8, 1.1})
      CHECK(eval_W_at(sd, sol, p0, t * r, 0.4) ==
            doctest::Approx(std::pow(t, -g) * eval_W_at(sd, sol, p0, r, 0.4))
                .epsilon(1e-13));
}
