#include "fbc/annulus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <nlohmann/json.hpp>

namespace fbc {

namespace {

constexpr double kResidualTol = 1e-10;
constexpr double kNoiseFloor = 1e-10;

double trapezoid_weight(const std::vector<double>& x, std::size_t k) {
  if (x.size() < 2) return 0.0;
  if (k == 0) return 0.5 * (x[1] - x[0]);
  if (k + 1 == x.size()) return 0.5 * (x[k] - x[k - 1]);
  return 0.5 * (x[k + 1] - x[k - 1]);
}

// projection of v(r, .) onto vbar in the weighted angular inner product
double vbar_projection(const Field& v, const SpectralData& s, double r) {
  const Mesh& m = v.mesh();
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < m.ntheta(); ++j) {
    const double th = m.theta(j);
    const double vb = s.vbar.eval(th);
    const double wq = m.weight(j) * trapezoid_weight(m.theta_nodes(), j);
    num += v.interp(r, th) * vb * wq;
    den += vb * vb * wq;
  }
  if (den <= 0.0) throw AnnulusError("degenerate angular weight");
  return num / den;
}

}  // namespace

PerturbationModel PerturbationModel::zero() { return {}; }

PerturbationModel PerturbationModel::bounded(double delta) {
  PerturbationModel p;
  p.kind = PerturbationKind::Bounded;
  p.delta = delta;
  return p;
}

PerturbationModel PerturbationModel::power_decay(double delta, double alpha0) {
  PerturbationModel p;
  p.kind = PerturbationKind::PowerDecay;
  p.delta = delta;
  p.alpha0 = alpha0;
  return p;
}

PerturbationModel PerturbationModel::field_derived(Field prev) {
  PerturbationModel p;
  p.kind = PerturbationKind::FieldDerived;
  p.reference = std::move(prev);
  return p;
}

void PerturbationModel::validate() const {
  if (!std::isfinite(delta) || !std::isfinite(alpha0))
    throw AnnulusError("perturbation parameters must be finite");
  if (alpha0 < 0.0) throw AnnulusError("alpha0 must be nonnegative");
  if (kind == PerturbationKind::FieldDerived && !reference)
    throw AnnulusError("field-derived perturbation needs a reference field");
}

double PerturbationModel::eval(double r, double theta0) const {
  switch (kind) {
    case PerturbationKind::Zero:
      return 0.0;
    case PerturbationKind::Bounded:
      return delta;
    case PerturbationKind::PowerDecay:
      return delta * std::pow(r, -alpha0);
    case PerturbationKind::FieldDerived:
      return reference->interp(r, theta0) / r;
  }
  return 0.0;
}

DomainSpec AnnulusProblem::domain() const {
  DomainSpec d = spectral.symmetry == Symmetry::SingleCap
                     ? DomainSpec::single_cap(spectral.n, spectral.theta0,
                                              spectral.side)
                     : DomainSpec::double_rotation(spectral.n, spectral.p,
                                                   spectral.q, spectral.theta0,
                                                   spectral.side);
  return d;
}

void AnnulusProblem::validate() const {
  if (!(r_in > 0.0) || !(r_out > r_in))
    throw AnnulusError("need 0 < r_in < r_out");
  if (nr < 4 || ntheta < 4) throw AnnulusError("mesh too coarse");
  if (!inner_data || !outer_data)
    throw AnnulusError("inner and outer boundary data required");
  perturbation.validate();
}

Field solve_annulus(const AnnulusProblem& problem) {
  problem.validate();
  const DomainSpec spec = problem.domain();
  const auto [tlo, thi] = spec.cap_interval();
  MeshPtr mp = build_mesh(spec, problem.nr, problem.ntheta, problem.r_in,
                          problem.r_out, tlo, thi);
  const Mesh& m = *mp;
  const std::size_t nr = m.nr(), nt = m.ntheta(), N = nr * nt;
  const int n = spec.n;

  // edge form of int |grad v|^2 r^(n-1) w dr dtheta (orbit factor dropped:
  // it scales the whole system)
  std::vector<Eigen::Triplet<double>> trips;
  auto add_edge = [&](std::size_t a, std::size_t b, double c) {
    trips.emplace_back(a, a, c);
    trips.emplace_back(b, b, c);
    trips.emplace_back(a, b, -c);
    trips.emplace_back(b, a, -c);
  };
  // per-cell angular moments of the weight by 5-point Gauss quadrature:
  // wlo/whi carry the hat-function weights int w*(1-s) and int w*s over the
  // cell (s the local angular coordinate).  A midpoint value or a 50/50
  // split has O(1) relative error in the cells touching a pole of the
  // weight and costs an order of sup-norm accuracy there.
  auto weight_moments = [&](double a, double b, double& wavg, double& wlo,
                            double& whi) {
    static const double xg[5] = {-0.9061798459386640, -0.5384693101056831,
                                 0.0, 0.5384693101056831, 0.9061798459386640};
    static const double wg[5] = {0.2369268850561891, 0.4786286704993665,
                                 0.5688888888888889, 0.4786286704993665,
                                 0.2369268850561891};
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    wavg = wlo = whi = 0.0;
    for (int k = 0; k < 5; ++k) {
      const double s = 0.5 * (1.0 + xg[k]);
      const double w = wg[k] * spec.weight(mid + half * xg[k]);
      wavg += w;
      wlo += w * (1.0 - s);
      whi += w * s;
    }
    wavg *= 0.5;
    wlo *= 0.5;
    whi *= 0.5;
  };
  for (std::size_t i = 0; i + 1 < nr; ++i)
    for (std::size_t j = 0; j + 1 < nt; ++j) {
      const double dr = m.r(i + 1) - m.r(i);
      const double dt = m.theta(j + 1) - m.theta(j);
      const double rm = 0.5 * (m.r(i) + m.r(i + 1));
      double wavg, wlo, whi;
      weight_moments(m.theta(j), m.theta(j + 1), wavg, wlo, whi);
      const double rn = std::pow(rm, n - 1);
      add_edge(m.idx(i, j), m.idx(i + 1, j), rn * wlo * dt / dr);
      add_edge(m.idx(i, j + 1), m.idx(i + 1, j + 1), rn * whi * dt / dr);
      const double ctt = 0.5 * rn * wavg * dr / (rm * rm * dt);
      add_edge(m.idx(i, j), m.idx(i, j + 1), ctt);
      add_edge(m.idx(i + 1, j), m.idx(i + 1, j + 1), ctt);
    }

  // Robin boundary term on theta = theta0: v_theta = H1 (1 + eps(r)) v
  // (interior-normal convention d_nu vbar + H vbar = 0 with the cap on
  // theta < theta0), entering the weak form as a negative boundary term
  const bool below = spec.side == Side::Below;
  const std::size_t J = below ? nt - 1 : 0;
  const double th_fb = below ? m.theta_hi() : m.theta_lo();
  const double w0 = spec.weight(th_fb);
  for (std::size_t i = 0; i < nr; ++i) {
    const double r = m.r(i);
    const double eps = problem.perturbation.eval(r, th_fb);
    const double c = std::pow(r, n - 3) * w0 * problem.spectral.H1 *
                     (1.0 + eps) * trapezoid_weight(m.r_nodes(), i);
    trips.emplace_back(m.idx(i, J), m.idx(i, J), -c);
  }

  Eigen::SparseMatrix<double> A(N, N);
  A.setFromTriplets(trips.begin(), trips.end());

  // Dirichlet on the two radial arcs; all theta rows are free
  std::vector<int> uidx(N, -1);
  std::size_t nu = 0;
  for (std::size_t i = 1; i + 1 < nr; ++i)
    for (std::size_t j = 0; j < nt; ++j)
      uidx[m.idx(i, j)] = static_cast<int>(nu++);

  Eigen::VectorXd full = Eigen::VectorXd::Zero(N);
  for (std::size_t j = 0; j < nt; ++j) {
    full[m.idx(0, j)] = problem.inner_data(m.theta(j));
    full[m.idx(nr - 1, j)] = problem.outer_data(m.theta(j));
    if (!std::isfinite(full[m.idx(0, j)]) ||
        !std::isfinite(full[m.idx(nr - 1, j)]))
      throw AnnulusError("boundary data must be finite");
  }

  std::vector<Eigen::Triplet<double>> tu;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nu);
  for (int col = 0; col < A.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, col); it; ++it) {
      const int iu = uidx[it.row()], ju = uidx[it.col()];
      if (iu >= 0 && ju >= 0)
        tu.emplace_back(iu, ju, it.value());
      else if (iu >= 0)
        rhs[iu] -= it.value() * full[it.col()];
    }
  Eigen::SparseMatrix<double> Auu(nu, nu);
  Auu.setFromTriplets(tu.begin(), tu.end());

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(Auu);
  if (lu.info() != Eigen::Success)
    throw AnnulusError("solver-breakdown: factorization failed");
  Eigen::VectorXd x = lu.solve(rhs);
  if (lu.info() != Eigen::Success)
    throw AnnulusError("solver-breakdown: solve failed");
  const double resid = (Auu * x - rhs).cwiseAbs().maxCoeff();
  if (!(resid <= kResidualTol * (1.0 + rhs.cwiseAbs().maxCoeff())))
    throw AnnulusError("solver-breakdown: residual above tolerance");

  for (std::size_t k = 0; k < N; ++k)
    if (uidx[k] >= 0) full[k] = x[uidx[k]];
  return Field(mp, FieldKind::SignedLinearized,
               std::vector<double>(full.data(), full.data() + N));
}

ComparisonVerdict comparison_check(const Field& sub, const Field& super,
                                   const Field& positive_ref,
                                   const Region& region, double tol) {
  const Mesh& m = sub.mesh();
  if (&super.mesh() != &m || &positive_ref.mesh() != &m)
    throw AnnulusError("fields must share a mesh");

  auto inside = [&](std::size_t i, std::size_t j) {
    const double eps = 1e-12;
    return m.r(i) >= region.r_lo - eps && m.r(i) <= region.r_hi + eps &&
           m.theta(j) >= region.theta_lo - eps &&
           m.theta(j) <= region.theta_hi + eps;
  };

  ComparisonVerdict verdict;
  bool any = false;
  for (std::size_t i = 0; i < m.nr(); ++i)
    for (std::size_t j = 0; j < m.ntheta(); ++j)
      if (inside(i, j)) {
        any = true;
        if (!(positive_ref(i, j) > 0.0))
          throw AnnulusError(
              "hypothesis-failure: reference not strictly positive on the "
              "closed region");
      }
  if (!any) throw AnnulusError("empty-region");

  // the Robin side is the theta_hi arc; ordering is prescribed on the rest
  // of the region boundary
  const double dth =
      m.ntheta() > 1 ? m.theta(1) - m.theta(0) : 0.0;
  auto on_nonrobin_boundary = [&](std::size_t i, std::size_t j) {
    const double eps = 1e-12;
    const bool radial_arc = std::abs(m.r(i) - region.r_lo) < eps ||
                            std::abs(m.r(i) - region.r_hi) < eps;
    const bool lower_arc = std::abs(m.theta(j) - region.theta_lo) < eps &&
                           region.theta_lo > m.theta_lo() + 0.5 * dth;
    return radial_arc || lower_arc;
  };

  verdict.ordered_on_boundary = true;
  verdict.ok = true;
  for (std::size_t i = 0; i < m.nr(); ++i)
    for (std::size_t j = 0; j < m.ntheta(); ++j) {
      if (!inside(i, j)) continue;
      const double gap = sub(i, j) - super(i, j);
      if (on_nonrobin_boundary(i, j) && gap > tol)
        verdict.ordered_on_boundary = false;
      if (gap > verdict.max_violation) {
        verdict.max_violation = gap;
        verdict.r_at = m.r(i);
        verdict.theta_at = m.theta(j);
      }
      if (gap > tol) verdict.ok = false;
    }
  if (!verdict.ordered_on_boundary)
    verdict.note = "sub exceeds super already on the non-Robin boundary";
  else if (!verdict.ok)
    verdict.note = "interior ordering violation";
  return verdict;
}

FitReport fit_decay(const Field& v, const SpectralData& s,
                    const std::vector<double>& window_radii) {
  if (window_radii.size() < 4)
    throw AnnulusError("window too narrow: need at least 4 radii");
  std::vector<double> radii = window_radii;
  std::sort(radii.begin(), radii.end());
  if (!(radii.front() > 0.0)) throw AnnulusError("radii must be positive");
  if (radii.back() < 4.0 * radii.front() * (1.0 - 1e-9))
    throw AnnulusError("window too narrow: span at least two dyadic levels");
  const Mesh& m = v.mesh();
  if (radii.front() < m.r_min() * (1.0 - 1e-9) ||
      radii.back() > m.r_max() * (1.0 + 1e-9))
    throw AnnulusError("window leaves the mesh");

  FitReport rep;
  const bool eq = s.equal_roots;
  auto f1 = [&](double r) {
    return eq ? std::pow(r, -s.gamma_minus) * (std::log(r) + 1.0)
              : std::pow(r, -s.gamma_minus);
  };
  auto f2 = [&](double r) { return std::pow(r, -s.gamma_plus); };

  std::vector<double> c(radii.size());
  double cnorm2 = 0.0;
  for (std::size_t k = 0; k < radii.size(); ++k) {
    c[k] = vbar_projection(v, s, radii[k]);
    cnorm2 += c[k] * c[k];
  }

  {
    Eigen::Matrix2d M2 = Eigen::Matrix2d::Zero();
    for (std::size_t k = 0; k < radii.size(); ++k) {
      const Eigen::Vector2d phi(f1(radii[k]), f2(radii[k]));
      M2 += phi * phi.transpose();
    }
    const double cond = M2.operatorNorm() * M2.inverse().operatorNorm();
    if (!std::isfinite(cond) || cond > 1e12)
      throw AnnulusError("ill-conditioned-fit: window cannot separate the "
                         "two exponents");
  }
  if (!eq && s.gamma_plus - s.gamma_minus < 0.05)
    rep.warning = "near-equal roots: two-exponent fit poorly conditioned";

  // least squares with an optional third basis element r^(-gamma_b - alpha)
  // modelling the next remainder order; alpha fitted by a golden-section
  // search (an unmodelled remainder would otherwise bias the leading
  // coefficients at the percent level)
  auto lsq = [&](double gb_alpha, Eigen::Vector3d& coef) {
    const bool use3 = gb_alpha > 0.0;
    Eigen::Matrix3d M = Eigen::Matrix3d::Identity() * 1e-300;
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    for (std::size_t k = 0; k < radii.size(); ++k) {
      const Eigen::Vector3d phi(
          f1(radii[k]), f2(radii[k]),
          use3 ? std::pow(radii[k], -gb_alpha) : 0.0);
      M += phi * phi.transpose();
      b += c[k] * phi;
    }
    M += Eigen::Matrix3d::Identity() * (1e-12 * M.trace());
    coef = M.ldlt().solve(b);
    double res2 = 0.0;
    for (std::size_t k = 0; k < radii.size(); ++k) {
      const double fit =
          coef[0] * f1(radii[k]) + coef[1] * f2(radii[k]) +
          (use3 ? coef[2] * std::pow(radii[k], -gb_alpha) : 0.0);
      res2 += (c[k] - fit) * (c[k] - fit);
    }
    return res2;
  };

  Eigen::Vector3d a;
  double res2 = lsq(0.0, a);
  const double rel_res =
      cnorm2 > 0.0 ? std::sqrt(res2 / cnorm2) : 0.0;

  auto pick_branch = [&](const Eigen::Vector3d& coef) {
    if (eq) return FitBranch::EqualRootsPair;
    const double R = radii.back();
    return std::abs(coef[0]) * std::pow(R, -s.gamma_minus) >=
                   std::abs(coef[1]) * std::pow(R, -s.gamma_plus)
               ? FitBranch::Minus
               : FitBranch::Plus;
  };

  if (rel_res < 1e-9) {
    rep.alpha_prime = 0.0;
    if (rep.warning.empty()) rep.warning = "remainder at noise floor";
  } else {
    // refine: branch exponent + alpha for the third basis element
    double gb = pick_branch(a) == FitBranch::Plus ? s.gamma_plus
                                                  : s.gamma_minus;
    for (int pass = 0; pass < 2; ++pass) {
      double lo = 0.05, hi = 3.0;
      const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
      double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
      Eigen::Vector3d t;
      double fx1 = lsq(gb + x1, t), fx2 = lsq(gb + x2, t);
      for (int it = 0; it < 80; ++it) {
        if (fx1 < fx2) {
          hi = x2;
          x2 = x1;
          fx2 = fx1;
          x1 = hi - gr * (hi - lo);
          fx1 = lsq(gb + x1, t);
        } else {
          lo = x1;
          x1 = x2;
          fx1 = fx2;
          x2 = lo + gr * (hi - lo);
          fx2 = lsq(gb + x2, t);
        }
      }
      const double alpha = 0.5 * (lo + hi);
      res2 = lsq(gb + alpha, a);
      rep.alpha_prime = alpha;
      const double gb_new = pick_branch(a) == FitBranch::Plus
                                ? s.gamma_plus
                                : s.gamma_minus;
      if (gb_new == gb) break;
      gb = gb_new;  // branch flipped after refinement: redo once
    }
  }

  rep.goodness =
      cnorm2 > 0.0 ? 1.0 - std::sqrt(res2 / cnorm2) : 1.0;
  rep.branch = pick_branch(a);
  if (eq) {
    rep.a_minus = a[0];
    rep.b_bar = a[1];
  } else {
    rep.a_minus = a[0];
    rep.a_plus = a[1];
  }
  return rep;
}

OscillationReport oscillation_decay(const Field& v, const SpectralData& s,
                                    double r0, std::size_t levels) {
  if (levels < 1) throw AnnulusError("need at least one dyadic level");
  const Mesh& m = v.mesh();
  const double r_top = r0 * std::pow(2.0, double(levels));
  if (r0 < m.r_min() * (1.0 - 1e-9) || r_top > m.r_max() * (1.0 + 1e-9))
    throw AnnulusError("dyadic levels leave the mesh");

  // subtract the fitted slow branch first when it dominates; the fit
  // window is snapped to mesh node radii so the projection samples exact
  // nodal values instead of radially interpolated ones
  std::vector<double> window;
  for (int k = 0; k <= 8 * int(levels); ++k) {
    const double target = r0 * std::pow(2.0, double(k) / 8.0);
    std::size_t best = 0;
    for (std::size_t i = 1; i < m.nr(); ++i)
      if (std::abs(m.r(i) - target) < std::abs(m.r(best) - target))
        best = i;
    if (window.empty() || m.r(best) > window.back() + 1e-12)
      window.push_back(m.r(best));
  }
  FitReport fit = fit_decay(v, s, window);

  OscillationReport rep;
  double ratio_scale = 0.0;
  std::vector<std::vector<double>> ratios_by_level(levels);
  for (std::size_t i = 0; i < m.nr(); ++i) {
    const double r = m.r(i);
    if (r < r0 * (1.0 - 1e-9) || r > r_top * (1.0 + 1e-9)) continue;
    const int lvl = std::min<int>(
        int(levels) - 1,
        int(std::floor(std::log2(std::max(r / r0, 1.0)))));
    for (std::size_t j = 0; j < m.ntheta(); ++j) {
      const double vb = s.vbar.eval(m.theta(j));
      if (vb <= 1e-8) continue;  // outside the cap closure
      double val = v(i, j);
      if (fit.branch == FitBranch::Minus)
        val -= fit.a_minus * std::pow(r, -s.gamma_minus) * vb;
      const double q = val / (std::pow(r, -s.gamma_plus) * vb);
      ratios_by_level[lvl].push_back(q);
      ratio_scale = std::max(ratio_scale, std::abs(q));
    }
  }
  for (std::size_t k = 0; k < levels; ++k) {
    if (ratios_by_level[k].empty())
      throw AnnulusError("empty dyadic level: mesh too coarse");
    const auto [mn, mx] = std::minmax_element(ratios_by_level[k].begin(),
                                              ratios_by_level[k].end());
    rep.levels.push_back(r0 * std::pow(2.0, double(k)));
    rep.oscillation.push_back(*mx - *mn);
    if (*mn < -1e-8 * std::max(1.0, ratio_scale)) rep.sign_ok = false;
  }
  const double floor = kNoiseFloor * std::max(1.0, ratio_scale);
  rep.converged = std::all_of(rep.oscillation.begin(), rep.oscillation.end(),
                              [&](double o) { return o < floor; });
  if (!rep.converged)
    for (std::size_t k = 0; k + 1 < levels; ++k)
      rep.ratios.push_back(rep.oscillation[k + 1] /
                           std::max(rep.oscillation[k], floor));
  return rep;
}

double harnack_ratio(const Field& v, const Region& region) {
  const Mesh& m = v.mesh();
  const double dth = m.ntheta() > 1 ? m.theta(1) - m.theta(0) : 0.0;
  double mn = std::numeric_limits<double>::infinity();
  double mx = -mn;
  bool any = false;
  for (std::size_t i = 0; i < m.nr(); ++i)
    for (std::size_t j = 0; j < m.ntheta(); ++j) {
      const double eps = 1e-12;
      if (m.r(i) < region.r_lo - eps || m.r(i) > region.r_hi + eps)
        continue;
      if (m.theta(j) < region.theta_lo - eps ||
          m.theta(j) > region.theta_hi + eps)
        continue;
      // one-cell collar at the Robin boundary excluded
      if (m.theta(j) > m.theta_hi() - 1.001 * dth) continue;
      const double val = v(i, j);
      if (val < -1e-12) throw AnnulusError("harnack requires v >= 0");
      mn = std::min(mn, val);
      mx = std::max(mx, val);
      any = true;
    }
  if (!any) throw AnnulusError("empty-region");
  if (mn <= 0.0) return std::numeric_limits<double>::infinity();
  return mx / mn;
}

std::string FitReport::to_json() const {
  nlohmann::json j;
  j["branch"] = branch == FitBranch::Minus   ? "minus"
                : branch == FitBranch::Plus ? "plus"
                                            : "equal-roots-pair";
  j["a_minus"] = a_minus;
  j["a_plus"] = a_plus;
  j["b_bar"] = b_bar;
  j["alpha_prime"] = alpha_prime;
  j["goodness"] = goodness;
  if (!warning.empty()) j["warning"] = warning;
  return j.dump(2);
}

std::string OscillationReport::to_json() const {
  nlohmann::json j;
  j["levels"] = levels;
  j["oscillation"] = oscillation;
  j["ratios"] = ratios;
  j["converged"] = converged;
  j["sign_ok"] = sign_ok;
  return j.dump(2);
}

void write_csv(const FitReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw AnnulusError("cannot open " + path);
  out << "branch,a_minus,a_plus,b_bar,alpha_prime,goodness\n";
  out << (report.branch == FitBranch::Minus   ? "minus"
          : report.branch == FitBranch::Plus ? "plus"
                                             : "equal-roots-pair")
      << ',' << report.a_minus << ',' << report.a_plus << ',' << report.b_bar
      << ',' << report.alpha_prime << ',' << report.goodness << '\n';
}

void write_csv(const OscillationReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw AnnulusError("cannot open " + path);
  out << "level_inner_radius,oscillation,ratio_to_next\n";
  for (std::size_t k = 0; k < report.levels.size(); ++k) {
    out << report.levels[k] << ',' << report.oscillation[k] << ',';
    if (k < report.ratios.size()) out << report.ratios[k];
    out << '\n';
  }
}

}  // namespace fbc
