#include "fbc/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fbc {

double AngularProfile::eval(double th) const {
  if (theta.empty()) throw SpectralError("empty profile");
  if (th <= theta.front()) return values.front();
  if (th >= theta.back()) return values.back();
  auto it = std::upper_bound(theta.begin(), theta.end(), th);
  std::size_t k = static_cast<std::size_t>(it - theta.begin()) - 1;
  const double s = (th - theta[k]) / (theta[k + 1] - theta[k]);
  return (1 - s) * values[k] + s * values[k + 1];
}

double AngularProfile::max_value() const {
  return *std::max_element(values.begin(), values.end());
}

double AngularProfile::min_value() const {
  return *std::min_element(values.begin(), values.end());
}

namespace {

// --- node-centered discretization of  -(w u')' = mu w u  on [a, b] ---
//
// Nodes t_i = a + i h.  Dirichlet ends are imposed exactly (the end node is
// removed from the unknowns), Robin ends  u'(b) = +H u(b) / u'(a) = -H u(a)
// (from d_nu u + H u = 0 with interior normal nu) via a central ghost node,
// and pole ends (w ~ dist^s, s >= 1) via the symmetric limit
// (1+s) u'' + mu u = 0.  Every row is second-order consistent, so the
// discrete eigenvector error is a smooth O(h^2) function up to the
// boundary and end derivatives can be read off by local cubic fits.
// Ghost rows are rescaled to keep the pencil symmetric positive.

enum class EndBC { NoFlux, Dirichlet, Robin };

struct Tridiag {
  std::vector<double> main, off;  // symmetric; off has size N-1
  std::vector<double> mass;       // diagonal of M
};

struct CapProblem {
  double a, b;
  EndBC left, right;
  double robin_h = 0.0;  // H for the Robin end
};

// sin/cos vanishing exponent if t sits at a pole of the angular extent,
// -1 for an interior endpoint
int pole_exponent(const DomainSpec& spec, double t) {
  if (t < 1e-12) return spec.p;
  if (t > spec.theta_max() - 1e-12)
    return (spec.symmetry == Symmetry::SingleCap) ? spec.p : spec.q;
  return -1;
}

struct NodeAssembly {
  Tridiag T;
  std::vector<double> t;  // all node angles, size N+1
  std::size_t i0, i1;     // inclusive node range of the unknowns
};

NodeAssembly assemble(const DomainSpec& spec, const CapProblem& cp,
                      std::size_t N) {
  const double h = (cp.b - cp.a) / static_cast<double>(N);
  const double ih2 = 1.0 / (h * h);
  NodeAssembly A;
  A.t.resize(N + 1);
  for (std::size_t i = 0; i <= N; ++i) A.t[i] = cp.a + i * h;
  A.i0 = (cp.left == EndBC::Dirichlet) ? 1 : 0;
  A.i1 = (cp.right == EndBC::Dirichlet) ? N - 1 : N;
  const std::size_t M = A.i1 - A.i0 + 1;
  Tridiag& T = A.T;
  T.main.assign(M, 0.0);
  T.off.assign(M - 1, 0.0);
  T.mass.assign(M, 0.0);

  // weight at a face, falling back to the mirrored inner face if the ghost
  // face would leave the angular extent
  auto face_w = [&](double x, double inner) {
    if (x < 0.0 || x > spec.theta_max()) return spec.weight(inner);
    return spec.weight(x);
  };

  for (std::size_t g = std::max<std::size_t>(A.i0, 1);
       g <= std::min(A.i1, N - 1); ++g) {
    const std::size_t k = g - A.i0;
    const double wl = spec.weight(A.t[g] - 0.5 * h);
    const double wr = spec.weight(A.t[g] + 0.5 * h);
    T.main[k] = (wl + wr) * ih2;
    T.mass[k] = spec.weight(A.t[g]);
    if (g > A.i0) T.off[k - 1] = -wl * ih2;
  }
  // Robin (or no-flux = Robin with H 0) end row via a central ghost,
  // rescaled so the coupling matches the neighbouring interior row
  auto ghost_row = [&](std::size_t k, double tend, double win, double sgn_in,
                       double H) {
    const double wout = face_w(tend - sgn_in * 0.5 * h, tend + sgn_in * 0.5 * h);
    const double c = win / (win + wout);
    T.main[k] = win * ih2 - 2.0 * H * wout * c / h;
    T.mass[k] = c * spec.weight(tend);
  };
  if (cp.left != EndBC::Dirichlet) {
    const double win = spec.weight(A.t[0] + 0.5 * h);
    const int s = pole_exponent(spec, A.t[0]);
    if (s >= 1) {  // symmetric limit (1+s) u'' + mu u = 0
      T.main[0] = win * ih2;
      T.mass[0] = win / (2.0 * (1 + s));
    } else {
      ghost_row(0, A.t[0], win, +1.0,
                cp.left == EndBC::Robin ? cp.robin_h : 0.0);
    }
    if (M > 1) T.off[0] = -win * ih2;
  }
  if (cp.right != EndBC::Dirichlet) {
    const std::size_t k = M - 1;
    const double win = spec.weight(A.t[N] - 0.5 * h);
    const int s = pole_exponent(spec, A.t[N]);
    if (s >= 1) {
      T.main[k] = win * ih2;
      T.mass[k] = win / (2.0 * (1 + s));
    } else {
      ghost_row(k, A.t[N], win, -1.0,
                cp.right == EndBC::Robin ? cp.robin_h : 0.0);
    }
    if (M > 1) T.off[k - 1] = -win * ih2;
  }
  return A;
}

// number of eigenvalues of (A - sigma M) below zero, by LDL pivots
int sturm_count(const Tridiag& T, double sigma) {
  int count = 0;
  double d = T.main[0] - sigma * T.mass[0];
  if (d == 0.0) d = -1e-300;
  if (d < 0.0) ++count;
  for (std::size_t i = 1; i < T.main.size(); ++i) {
    double di = T.main[i] - sigma * T.mass[i] - T.off[i - 1] * T.off[i - 1] / d;
    if (di == 0.0) di = -1e-300;
    if (di < 0.0) ++count;
    d = di;
  }
  return count;
}

double smallest_eigenvalue(const Tridiag& T) {
  // Gershgorin bounds for M^{-1/2} A M^{-1/2}
  double lo = std::numeric_limits<double>::max(), hi = -lo;
  const std::size_t N = T.main.size();
  for (std::size_t i = 0; i < N; ++i) {
    double rad = 0.0;
    if (i > 0) rad += std::abs(T.off[i - 1]) / std::sqrt(T.mass[i - 1] * T.mass[i]);
    if (i + 1 < N) rad += std::abs(T.off[i]) / std::sqrt(T.mass[i + 1] * T.mass[i]);
    const double c = T.main[i] / T.mass[i];
    lo = std::min(lo, c - rad);
    hi = std::max(hi, c + rad);
  }
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (sturm_count(T, mid) >= 1)
      hi = mid;
    else
      lo = mid;
    if (hi - lo < 1e-13 * std::max(1.0, std::abs(mid))) break;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> eigenvector_at(const Tridiag& T, double sigma) {
  const std::size_t N = T.main.size();
  std::vector<double> x(N, 1.0);
  // inverse iteration on (A - sigma M); Thomas with pivot guard
  for (int pass = 0; pass < 4; ++pass) {
    std::vector<double> rhs(N);
    for (std::size_t i = 0; i < N; ++i) rhs[i] = T.mass[i] * x[i];
    std::vector<double> c(N), d(N);
    double piv = T.main[0] - sigma * T.mass[0];
    if (std::abs(piv) < 1e-300) piv = 1e-300;
    c[0] = (N > 1) ? T.off[0] / piv : 0.0;
    d[0] = rhs[0] / piv;
    for (std::size_t i = 1; i < N; ++i) {
      piv = T.main[i] - sigma * T.mass[i] - T.off[i - 1] * c[i - 1];
      if (std::abs(piv) < 1e-300) piv = 1e-300;
      if (i + 1 < N) c[i] = T.off[i] / piv;
      d[i] = (rhs[i] - T.off[i - 1] * d[i - 1]) / piv;
    }
    x[N - 1] = d[N - 1];
    for (std::size_t i = N - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
    double nrm = 0.0;
    for (double v : x) nrm = std::max(nrm, std::abs(v));
    if (nrm == 0.0) throw SpectralError("nonconvergence: inverse iteration");
    for (double& v : x) v /= nrm;
  }
  // fix overall sign: positive principal eigenfunction
  double s = 0.0;
  for (double v : x) s += v;
  if (s < 0.0)
    for (double& v : x) v = -v;
  return x;
}

// cubic through 4 (x, y) samples; returns value/derivs at xq via
// Newton divided differences
struct CubicFit {
  double c0, c1, c2, c3, x0, x1, x2;  // Newton form
  double value(double x) const {
    return c0 + (x - x0) * (c1 + (x - x1) * (c2 + (x - x2) * c3));
  }
  double deriv(double x) const {
    // d/dx of the Newton form
    const double a = x - x0, b = x - x1, c = x - x2;
    return c1 + c2 * (a + b) + c3 * (a * b + a * c + b * c);
  }
  double second_deriv(double x) const {
    return 2.0 * c2 + 2.0 * c3 * ((x - x0) + (x - x1) + (x - x2));
  }
};

CubicFit fit_cubic(const double xs[4], const double ys[4]) {
  double d01 = (ys[1] - ys[0]) / (xs[1] - xs[0]);
  double d12 = (ys[2] - ys[1]) / (xs[2] - xs[1]);
  double d23 = (ys[3] - ys[2]) / (xs[3] - xs[2]);
  double d012 = (d12 - d01) / (xs[2] - xs[0]);
  double d123 = (d23 - d12) / (xs[3] - xs[1]);
  double d0123 = (d123 - d012) / (xs[3] - xs[0]);
  return {ys[0], d01, d012, d0123, xs[0], xs[1], xs[2]};
}

struct CapSolve {
  double mu;                    // extrapolated eigenvalue
  AngularProfile profile;       // face-to-face nodes: [a, centers..., b]
  double value_a, value_b;      // face values
  double deriv_a, deriv_b;      // one-sided derivatives at the faces
  double second_deriv_boundary; // at the cap (non-pole) end
};

CapSolve solve_cap(const DomainSpec& spec, const CapProblem& cp,
                   std::size_t N) {
  const NodeAssembly coarse = assemble(spec, cp, N / 2);
  const NodeAssembly fine = assemble(spec, cp, N);
  const double mu_c = smallest_eigenvalue(coarse.T);
  const double mu_f = smallest_eigenvalue(fine.T);
  const double mu = mu_f + (mu_f - mu_c) / 3.0;  // h^2 Richardson

  auto vec = eigenvector_at(fine.T, mu_f);

  CapSolve out;
  out.mu = mu;
  out.profile.theta = fine.t;
  out.profile.values.assign(N + 1, 0.0);  // Dirichlet end nodes stay 0
  for (std::size_t k = 0; k < vec.size(); ++k)
    out.profile.values[fine.i0 + k] = vec[k];

  // end values and one-sided derivatives from a cubic through the 4 nodes
  // nearest each end (the node values carry a smooth O(h^2) error)
  auto end_fit = [&](bool left) {
    double xs[4], ys[4];
    for (int k = 0; k < 4; ++k) {
      const std::size_t i = left ? static_cast<std::size_t>(k) : N - k;
      xs[k] = out.profile.theta[i];
      ys[k] = out.profile.values[i];
    }
    return fit_cubic(xs, ys);
  };
  const CubicFit fa = end_fit(true);
  const CubicFit fb = end_fit(false);
  out.value_a = out.profile.values.front();
  out.value_b = out.profile.values.back();
  out.deriv_a = fa.deriv(cp.a);
  out.deriv_b = fb.deriv(cp.b);
  const bool boundary_right = (cp.right != EndBC::NoFlux);
  out.second_deriv_boundary =
      boundary_right ? fb.second_deriv(cp.b) : fa.second_deriv(cp.a);
  return out;
}

CapProblem cap_problem(const DomainSpec& spec, double theta0, EndBC cap_bc,
                       double robin_h = 0.0) {
  CapProblem cp;
  if (spec.side == Side::Below) {
    cp.a = 0.0;
    cp.b = theta0;
    cp.left = EndBC::NoFlux;
    cp.right = cap_bc;
  } else {
    cp.a = theta0;
    cp.b = spec.theta_max();
    cp.left = cap_bc;
    cp.right = EndBC::NoFlux;
  }
  cp.robin_h = robin_h;
  return cp;
}

}  // namespace

double cap_dirichlet_eigenvalue(const DomainSpec& spec, double theta0,
                                std::size_t cells) {
  DomainSpec s = spec;
  s.theta0 = theta0;
  s.validate();
  return solve_cap(s, cap_problem(s, theta0, EndBC::Dirichlet), cells).mu;
}

double find_critical_aperture(const DomainSpec& spec,
                              const SpectralOptions& opt) {
  if (spec.symmetry != Symmetry::DoubleRotation)
    throw SpectralError("find_critical_aperture expects a double-rotation spec");
  const double target = spec.n - 1;
  // mu1 is monotone in the aperture (decreasing for side Below)
  auto gap = [&](double t) {
    return cap_dirichlet_eigenvalue(spec, t, opt.cells) - target;
  };
  double lo = opt.search_lo, hi = spec.theta_max() - opt.search_hi_margin;
  double glo = gap(lo), ghi = gap(hi);
  if (glo * ghi > 0.0) {
    // widen once before giving up
    lo = 1e-3;
    hi = spec.theta_max() - 1e-3;
    glo = gap(lo);
    ghi = gap(hi);
    if (glo * ghi > 0.0)
      throw SpectralError("no-root-in-interval: eigenvalue never crosses n-1");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double g = gap(mid);
    if (std::abs(g) < opt.aperture_tol) return mid;
    if ((g > 0.0) == (glo > 0.0)) {
      lo = mid;
      glo = g;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-14) break;
  }
  return 0.5 * (lo + hi);
}

HomogeneousSolution solve_degree_one(const DomainSpec& spec,
                                     const SpectralOptions& opt) {
  if (!spec.theta0) throw SpectralError("solve_degree_one: theta0 not set");
  spec.validate();
  const double theta0 = *spec.theta0;
  CapSolve cs = solve_cap(spec, cap_problem(spec, theta0, EndBC::Dirichlet),
                          opt.cells);
  const double target = spec.n - 1;
  if (std::abs(cs.mu - target) > opt.mismatch_tol)
    throw EigenvalueMismatch(cs.mu, target);

  HomogeneousSolution sol;
  sol.domain = spec;
  sol.eigenvalue = cs.mu;
  const double dphi = (spec.side == Side::Below) ? cs.deriv_b : cs.deriv_a;
  // |grad U0| at the free boundary equals |phi'(theta0)|
  sol.grad_before_norm = std::abs(dphi);
  if (sol.grad_before_norm < 1e-300)
    throw SpectralError("degenerate profile: zero boundary slope");
  sol.phi = cs.profile;
  double scale = 1.0 / sol.grad_before_norm;
  // phi > 0 inside the cap
  double interior = cs.profile.values[cs.profile.values.size() / 2];
  if (interior < 0.0) scale = -scale;
  for (double& v : sol.phi.values) v *= scale;
  sol.dphi_boundary = (spec.side == Side::Below) ? -1.0 : 1.0;
  return sol;
}

double HomogeneousSolution::phi_at(double theta) const {
  const auto [lo, hi] = domain.cap_interval();
  if (theta < lo || theta > hi) return 0.0;
  return std::max(phi.eval(theta), 0.0);
}

Field HomogeneousSolution::evaluate(MeshPtr mesh) const {
  Field f(mesh, FieldKind::NonnegMinimizer);
  for (std::size_t i = 0; i < mesh->nr(); ++i)
    for (std::size_t j = 0; j < mesh->ntheta(); ++j)
      f.at(i, j) = mesh->r(i) * phi_at(mesh->theta(j));
  return f;
}

double mean_curvature_closed_form(const DomainSpec& spec) {
  if (!spec.theta0) throw SpectralError("theta0 not set");
  const double t0 = *spec.theta0;
  const double sgn = (spec.side == Side::Below) ? -1.0 : 1.0;
  return sgn * spec.dlog_weight(t0);
}

double mean_curvature(const HomogeneousSolution& sol) {
  // second difference of the profile along the normal: H1 = -phi''(theta0)
  const auto& th = sol.phi.theta;
  const auto& v = sol.phi.values;
  const std::size_t n = th.size();
  const bool right = (sol.domain.side == Side::Below);
  const double t0 = *sol.domain.theta0;
  // cubic fits through boundary nodes with stride 1 and stride 2; the fit
  // error is O(h^2) in the stride, so Richardson removes the leading term
  auto fit_with_stride = [&](std::size_t stride) {
    double xs[4], ys[4];
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t off = k * stride;
      const std::size_t i = right ? n - 1 - off : off;
      xs[k] = th[i];
      ys[k] = v[i];
    }
    return -fit_cubic(xs, ys).second_deriv(t0);
  };
  const double h1 = fit_with_stride(1), h2 = fit_with_stride(2);
  const double numeric = h1 + (h1 - h2) / 3.0;
  const double closed = mean_curvature_closed_form(sol.domain);
  if (std::abs(numeric - closed) > 1e-5 * (1.0 + std::abs(closed)))
    throw SpectralError("mean-curvature cross-check failed: second differences " +
                        std::to_string(numeric) + " vs closed form " +
                        std::to_string(closed));
  if (numeric < -1e-8)
    throw SpectralError("nonpositive-H: orientation or side inconsistency, H1 = " +
                        std::to_string(numeric));
  return std::abs(numeric) < 1e-8 ? 0.0 : numeric;
}

RobinEigenpair robin_principal_eigen(const HomogeneousSolution& sol, double H1,
                                     const SpectralOptions& opt) {
  if (H1 < 0.0) throw SpectralError("robin_principal_eigen: H1 must be >= 0");
  const DomainSpec& spec = sol.domain;
  const double theta0 = *spec.theta0;
  const EndBC bc = (H1 == 0.0) ? EndBC::NoFlux : EndBC::Robin;
  CapSolve cs = solve_cap(spec, cap_problem(spec, theta0, bc, H1), opt.cells);
  const double lambda = -cs.mu;
  if (H1 > 0.0 && lambda < -1e-8)
    throw SpectralError(
        "negative-lambda-beyond-tolerance: discretization failure, lambda = " +
        std::to_string(lambda));
  RobinEigenpair out;
  out.lambda = (H1 == 0.0 && std::abs(lambda) < 1e-12) ? 0.0 : lambda;
  out.vbar = cs.profile;
  double sup = out.vbar.max_value();
  if (sup <= 0.0) throw SpectralError("nonconvergence: eigenfunction sign");
  for (double& v : out.vbar.values) v /= sup;
  if (out.vbar.min_value() <= 0.0)
    throw SpectralError("eigenfunction not positive on the closed cap");
  out.dvbar_boundary =
      ((spec.side == Side::Below) ? cs.deriv_b : cs.deriv_a) / sup;
  return out;
}

GammaRoots gamma_roots(int n, double lambda) {
  if (lambda < 0.0) throw SpectralError("gamma_roots: lambda must be >= 0");
  GammaRoots g;
  const double disc = static_cast<double>(n - 2) * (n - 2) - 4.0 * lambda;
  g.stable = disc >= 0.0;
  g.equal_roots = std::abs(disc) <= 1e-12;
  if (!g.stable) {
    g.gamma_minus = g.gamma_plus = std::numeric_limits<double>::quiet_NaN();
    return g;
  }
  const double s = 0.5 * (n - 2), d = 0.5 * std::sqrt(std::max(disc, 0.0));
  g.gamma_minus = s - d;
  g.gamma_plus = s + d;
  return g;
}

SpectralData compute_spectral(const HomogeneousSolution& sol,
                              const SpectralOptions& opt) {
  SpectralData sd;
  const DomainSpec& spec = sol.domain;
  sd.n = spec.n;
  sd.p = spec.p;
  sd.q = spec.q;
  sd.symmetry = spec.symmetry;
  sd.side = spec.side;
  sd.theta0 = *spec.theta0;
  sd.H1 = mean_curvature(sol);
  auto pair = robin_principal_eigen(sol, sd.H1, opt);
  sd.lambda = pair.lambda;
  sd.vbar = std::move(pair.vbar);
  sd.dvbar_boundary = pair.dvbar_boundary;
  auto g = gamma_roots(spec.n, std::max(sd.lambda, 0.0));
  sd.gamma_minus = g.gamma_minus;
  sd.gamma_plus = g.gamma_plus;
  sd.equal_roots = g.equal_roots;
  sd.stable = g.stable;
  return sd;
}

std::string SpectralData::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  j["p"] = p;
  j["q"] = q;
  j["theta0"] = theta0;
  j["H1"] = H1;
  j["lambda"] = lambda;
  j["gamma_minus"] = gamma_minus;
  j["gamma_plus"] = gamma_plus;
  j["equal_roots"] = equal_roots;
  j["stable"] = stable;
  return j.dump(2);
}

void SpectralData::write_csv(const HomogeneousSolution& sol,
                             const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw SpectralError("cannot open " + path);
  os << "theta,phi,vbar\n";
  os.precision(17);
  for (std::size_t k = 0; k < vbar.theta.size(); ++k)
    os << vbar.theta[k] << ',' << sol.phi.values[k] << ',' << vbar.values[k]
       << '\n';
}

}  // namespace fbc
