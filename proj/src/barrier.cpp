#include "fbc/barrier.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace fbc {

namespace {

constexpr double kRootGuard = 1e-9;

void require_stable(const SpectralData& s) {
  if (!s.stable)
    throw BarrierError("unstable-spectral-data: no real exponents");
}

double log_branch(double r) { return std::log(r) + 1.0; }

}  // namespace

double bracket_Q(int n, double lambda, double gamma) {
  return gamma * gamma - (n - 2) * gamma + lambda;
}

double bracket_P(int n, double gamma) {
  return gamma * gamma - (n - 2) * gamma - (n - 1);
}

BarrierParams BarrierParams::make(const SpectralData& s, double gamma,
                                  double A, double beta) {
  require_stable(s);
  if (gamma <= 0.0) throw BarrierError("gamma must be positive");
  if (std::abs(gamma - s.gamma_minus) < kRootGuard ||
      std::abs(gamma - s.gamma_plus) < kRootGuard)
    throw BarrierError("gamma coincides with an exponent root");
  BarrierParams p;
  p.gamma = gamma;
  p.A = A;
  p.beta = beta;
  if (gamma < s.gamma_minus)
    p.regime = Regime::BelowGammaMinus;
  else if (gamma < s.gamma_plus)
    p.regime = Regime::Between;
  else
    p.regime = Regime::AboveGammaPlus;
  const bool want_positive = (p.regime != Regime::Between);
  if (want_positive && A <= 0.0)
    throw BarrierError("regime requires A > 0");
  if (!want_positive && A >= 0.0)
    throw BarrierError("between regime requires A < 0");
  if (beta != 0.0 && p.regime != Regime::AboveGammaPlus)
    throw BarrierError("beta correction only applies above gamma+");
  return p;
}

double eval_V_at(const SpectralData& s, Branch branch, double r,
                 double theta) {
  require_stable(s);
  const double vb = s.vbar.eval(theta);
  if (s.equal_roots) {
    const double base = std::pow(r, -s.gamma_minus);
    return branch == Branch::Minus ? base * log_branch(r) * vb : base * vb;
  }
  const double g = (branch == Branch::Minus) ? s.gamma_minus : s.gamma_plus;
  return std::pow(r, -g) * vb;
}

Field eval_V(const SpectralData& s, Branch branch, MeshPtr mesh) {
  Field f(mesh, FieldKind::Barrier);
  for (std::size_t i = 0; i < mesh->nr(); ++i)
    for (std::size_t j = 0; j < mesh->ntheta(); ++j)
      f.at(i, j) = eval_V_at(s, branch, mesh->r(i), mesh->theta(j));
  return f;
}

double eval_u0_at(const HomogeneousSolution& sol, double theta) {
  return sol.phi_at(theta);
}

Field eval_u0(const HomogeneousSolution& sol, MeshPtr mesh) {
  Field f(mesh, FieldKind::Barrier);
  for (std::size_t i = 0; i < mesh->nr(); ++i)
    for (std::size_t j = 0; j < mesh->ntheta(); ++j)
      f.at(i, j) = eval_u0_at(sol, mesh->theta(j));
  return f;
}

double eval_W_at(const SpectralData& s, const HomogeneousSolution& sol,
                 const BarrierParams& p, double r, double theta) {
  double w = std::pow(r, -p.gamma) *
             (p.A * s.vbar.eval(theta) + eval_u0_at(sol, theta));
  if (p.beta != 0.0) w += p.beta * eval_V_at(s, Branch::Plus, r, theta);
  return w;
}

Field eval_W(const SpectralData& s, const HomogeneousSolution& sol,
             const BarrierParams& p, MeshPtr mesh) {
  Field f(mesh, FieldKind::Barrier);
  for (std::size_t i = 0; i < mesh->nr(); ++i)
    for (std::size_t j = 0; j < mesh->ntheta(); ++j)
      f.at(i, j) = eval_W_at(s, sol, p, mesh->r(i), mesh->theta(j));
  return f;
}

AmplitudeResult min_amplitude_A(const SpectralData& s,
                                const HomogeneousSolution& sol,
                                double gamma) {
  require_stable(s);
  const double Q = bracket_Q(s.n, s.lambda, gamma);
  const double P = bracket_P(s.n, gamma);
  if (std::abs(Q) < 1e-12 * (1.0 + s.lambda))
    throw BarrierError("degenerate-denominator: gamma at an exponent root");
  // bracket A Q vbar + P u0 >= 0  <=>  A >= ratio (Q > 0) or A <= ratio
  // (Q < 0) pointwise, with ratio = -P u0 / (Q vbar)
  AmplitudeResult best{0.0, s.vbar.theta.front()};
  bool first = true;
  for (std::size_t k = 0; k < s.vbar.theta.size(); ++k) {
    const double th = s.vbar.theta[k];
    const double ratio =
        -P * eval_u0_at(sol, th) / (Q * s.vbar.values[k]);
    const bool better = first || (Q > 0.0 ? ratio > best.A : ratio < best.A);
    if (better) {
      best.A = ratio;
      best.theta_max = th;
      first = false;
    }
  }
  return best;
}

BarrierReport check_barrier(const SpectralData& s,
                            const HomogeneousSolution& sol,
                            const BarrierParams& p, MeshPtr mesh,
                            double tol) {
  BarrierReport rep;
  const double Q = bracket_Q(s.n, s.lambda, p.gamma);
  const double P = bracket_P(s.n, p.gamma);
  const double Qplus = bracket_Q(s.n, s.lambda, s.gamma_plus);  // ~ 0

  // (a) interior: Delta W via the separated closed form
  bool first = true;
  for (std::size_t i = 0; i < mesh->nr(); ++i) {
    const double r = mesh->r(i);
    for (std::size_t j = 0; j < mesh->ntheta(); ++j) {
      const double th = mesh->theta(j);
      const double vb = s.vbar.eval(th);
      double lap = std::pow(r, -p.gamma - 2.0) *
                   (p.A * Q * vb + P * eval_u0_at(sol, th));
      if (p.beta != 0.0)
        lap += p.beta * std::pow(r, -s.gamma_plus - 2.0) * Qplus * vb;
      if (first || lap < rep.min_interior_residual)
        rep.min_interior_residual = lap;
      first = false;
    }
  }
  rep.interior_ok = rep.min_interior_residual >= -tol;

  // (b) boundary identity, relative to r^(-gamma-1): with the interior
  // normal, d_nu W + (H1/r) W - r^(-gamma-1) collapses to
  //   A (s vbar' + H1 vbar) + (s phi' - 1),  s = -1 below / +1 above,
  // plus the same Robin combination for the beta V_{gamma+} term
  const double sdir = (s.side == Side::Below) ? -1.0 : 1.0;
  const double vb0 = s.vbar.eval(s.theta0);
  const double robin_combo = sdir * s.dvbar_boundary + s.H1 * vb0;
  const double main_res = p.A * robin_combo + (sdir * sol.dphi_boundary - 1.0);
  rep.max_boundary_residual = 0.0;
  for (std::size_t i = 0; i < mesh->nr(); ++i) {
    double res = main_res;
    if (p.beta != 0.0)
      res += p.beta * robin_combo *
             std::pow(mesh->r(i), p.gamma - s.gamma_plus);
    rep.max_boundary_residual =
        std::max(rep.max_boundary_residual, std::abs(res));
  }
  rep.boundary_ok = rep.max_boundary_residual <= tol;

  // (c) sign profile: W > 0 below gamma-, W < 0 between (for |A| large),
  // no claim above gamma+
  rep.sign_ok = true;
  if (p.regime == Regime::Between) {
    double worst = 0.0;  // amplitude below which A vbar + u0 < 0 on the cap
    for (std::size_t k = 0; k < s.vbar.theta.size(); ++k)
      worst = std::min(worst, -eval_u0_at(sol, s.vbar.theta[k]) /
                                  s.vbar.values[k]);
    rep.measured_negativity_threshold = worst;
  }
  if (p.regime != Regime::AboveGammaPlus) {
    const bool want_positive = (p.regime == Regime::BelowGammaMinus);
    for (std::size_t i = 0; i < mesh->nr(); ++i)
      for (std::size_t j = 0; j < mesh->ntheta(); ++j) {
        const double w =
            eval_W_at(s, sol, p, mesh->r(i), mesh->theta(j));
        const bool ok = want_positive ? w > 0.0 : w < 0.0;
        if (!ok) {
          rep.sign_ok = false;
          if (rep.sign_violations.size() < 100)
            rep.sign_violations.emplace_back(mesh->r(i), mesh->theta(j));
        }
      }
  }

  rep.passed = rep.interior_ok && rep.boundary_ok && rep.sign_ok;
  return rep;
}

std::string BarrierReport::to_json() const {
  nlohmann::json j;
  j["min_interior_residual"] = min_interior_residual;
  j["max_boundary_residual"] = max_boundary_residual;
  auto& arr = j["sign_violations"] = nlohmann::json::array();
  for (const auto& [r, th] : sign_violations) arr.push_back({r, th});
  j["passed"] = passed;
  if (measured_negativity_threshold != 0.0)
    j["measured_negativity_threshold"] = measured_negativity_threshold;
  return j.dump(2);
}

}  // namespace fbc
