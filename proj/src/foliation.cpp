#include "fbc/foliation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace fbc {

namespace {

// outward angular direction (away from the positivity side of theta0)
double outward_sign(Side side) {
  return side == Side::Below ? 1.0 : -1.0;
}

// dilation family member u_t(x) = u(t x) / t at a reduced point
double dilate_at(const Field& u, double t, double r, double theta) {
  return u.interp(t * r, theta) / t;
}

}  // namespace

std::size_t FreeBoundaryGraph::failures() const {
  std::size_t n = 0;
  for (const auto& s : samples)
    if (!s.ok) ++n;
  return n;
}

FreeBoundaryGraph extract_fb_graph(const Field& u,
                                   const HomogeneousSolution& cone,
                                   const std::vector<double>& radii) {
  if (!cone.domain.theta0)
    throw FoliationError("cone aperture not set");
  const Mesh& m = u.mesh();
  const double theta0 = *cone.domain.theta0;
  if (theta0 < m.theta_lo() - 1e-12 || theta0 > m.theta_hi() + 1e-12)
    throw FoliationError("boundary ray outside the mesh extent");
  const double dth = m.ntheta() > 1 ? m.theta(1) - m.theta(0) : 0.0;
  if (dth <= 0.0) throw FoliationError("degenerate angular grid");

  FreeBoundaryGraph g;
  g.theta0 = theta0;
  g.side = cone.domain.side;
  const double dir = outward_sign(g.side);

  for (double r : radii) {
    GraphSample s;
    s.r = r;
    if (r < m.r_min() - 1e-12 || r > m.r_max() + 1e-12)
      throw FoliationError("sample radius outside the mesh");

    // collar of arc length min(10 cells, 0.2 r) on both sides of theta0,
    // clipped to the angular extent
    const double collar = std::min(10.0 * r * dth, 0.2 * r);
    auto theta_at = [&](double arc) { return theta0 + dir * arc / r; };
    double lo = -collar, hi = collar;
    while (theta_at(lo) < m.theta_lo() || theta_at(lo) > m.theta_hi())
      lo += 0.25 * r * dth;
    while (theta_at(hi) < m.theta_lo() || theta_at(hi) > m.theta_hi())
      hi -= 0.25 * r * dth;
    const double ds = 0.25 * r * dth;  // four samples per angular cell
    if (hi - lo < 2.0 * ds) {
      s.note = "no-anchor";
      g.samples.push_back(s);
      continue;
    }

    // march outward from deep inside the positivity side
    double prev_s = lo;
    double prev_v = u.interp(r, theta_at(lo));
    if (prev_v <= 0.0) {
      s.note = "no-anchor";
      g.samples.push_back(s);
      continue;
    }
    int crossings = 0;
    double psi = 0.0;
    const double cell = r * dth;
    for (double arc = lo + ds; arc <= hi + 1e-12; arc += ds) {
      const double v = u.interp(r, theta_at(arc));
      if (prev_v > 0.0 && v <= 0.0) {
        if (crossings == 0) {
          // the interpolant of a clipped field reaches zero only at the
          // first zero-valued node, up to one cell beyond the true
          // boundary; extrapolate the linear positive part from samples
          // clear of that corrupted cell instead
          const double b = arc - 1.25 * cell, a = arc - 2.25 * cell;
          const double vb = a >= lo ? u.interp(r, theta_at(b)) : 0.0;
          const double va = a >= lo ? u.interp(r, theta_at(a)) : 0.0;
          if (va > vb && vb > 0.0)
            psi = b + vb * (b - a) / (va - vb);
          else
            psi = prev_s + prev_v / (prev_v - v) * (arc - prev_s);
        }
        ++crossings;
      }
      prev_s = arc;
      prev_v = v;
    }
    if (crossings == 0) {
      s.note = "no-crossing";
    } else if (crossings > 1) {
      s.note = "multiple-crossing";
    } else {
      s.ok = true;
      s.psi = psi;
    }
    g.samples.push_back(s);
  }
  return g;
}

ExpansionReport expansion_check(const FreeBoundaryGraph& graph,
                                const Field& v) {
  const Mesh& m = v.mesh();
  ExpansionReport rep;
  for (const auto& s : graph.samples) {
    if (!s.ok) {
      ++rep.skipped;
      continue;
    }
    const double r = s.r * graph.scale;
    if (r < m.r_min() - 1e-12 || r > m.r_max() + 1e-12)
      throw FoliationError("mismatched-scales: graph radius outside the "
                           "linearized field's mesh");
    const double vi = v.interp(r, graph.theta0);
    if (std::abs(vi) < 1e-12) {
      ++rep.skipped;
      continue;
    }
    const double res = std::abs(s.psi - vi);
    rep.r.push_back(r);
    rep.psi.push_back(s.psi);
    rep.linearized.push_back(vi);
    rep.residual.push_back(res);
    rep.admissible_c = std::max(rep.admissible_c, res * r / (vi * vi));
    ++rep.used;
  }
  return rep;
}

RayMonotonicityReport ray_monotonicity(const Field& u, const Region& annulus,
                                       double margin) {
  const Mesh& m = u.mesh();
  GradientPair g = gradient(u);
  RayMonotonicityReport rep;
  rep.max_value = -std::numeric_limits<double>::infinity();
  std::size_t strict = 0;
  for (std::size_t i = 0; i < m.nr(); ++i) {
    if (m.r(i) < annulus.r_lo - 1e-12 || m.r(i) > annulus.r_hi + 1e-12)
      continue;
    for (std::size_t j = 0; j < m.ntheta(); ++j) {
      if (m.theta(j) < annulus.theta_lo - 1e-12 ||
          m.theta(j) > annulus.theta_hi + 1e-12)
        continue;
      // the dilation derivative is meaningful on the positivity set only:
      // free boundary nodes carry q = 0 identically and would make a
      // strict sign verdict unattainable by construction
      if (!(u(i, j) > 0.0)) continue;
      const double q = m.r(i) * g.dr(i, j) - u(i, j);
      rep.max_value = std::max(rep.max_value, q);
      if (q < -margin) ++strict;
      ++rep.nodes;
    }
  }
  if (rep.nodes == 0) throw FoliationError("empty-region");
  rep.strict_fraction = double(strict) / double(rep.nodes);
  rep.passed = rep.max_value < 0.0;
  return rep;
}

OrderingReport ordering_check(const Field& low, const Field& mid,
                              const Field& high, double tol) {
  const Mesh& m = mid.mesh();
  if (low.mesh().nr() != m.nr() || low.mesh().ntheta() != m.ntheta() ||
      high.mesh().nr() != m.nr() || high.mesh().ntheta() != m.ntheta())
    throw FoliationError("ordering requires a common mesh");
  OrderingReport rep;
  double worst = 0.0;
  for (std::size_t i = 0; i < m.nr(); ++i)
    for (std::size_t j = 0; j < m.ntheta(); ++j) {
      const double dl = low(i, j) - mid(i, j);
      const double dh = mid(i, j) - high(i, j);
      rep.max_low_violation = std::max(rep.max_low_violation, dl);
      rep.max_high_violation = std::max(rep.max_high_violation, dh);
      const double d = std::max(dl, dh);
      if (d > tol) {
        ++rep.violations;
        if (d > worst) {
          worst = d;
          rep.r_at = m.r(i);
          rep.theta_at = m.theta(j);
        }
      }
    }
  rep.ok = rep.violations == 0;
  return rep;
}

CoverageReport foliation_sample(const Field& upper, const Field& lower,
                                const HomogeneousSolution& cone,
                                const std::vector<SamplePoint>& samples,
                                const CoverageConfig& cfg) {
  if (cfg.bisect_tol <= 0.0 || cfg.asym_tol < 0.0)
    throw FoliationError("invalid coverage tolerances");
  CoverageReport rep;
  for (const auto& pt : samples) {
    CoverRecord rec;
    rec.point = pt;
    if (pt.z < 0.0 || pt.r <= 0.0) {
      rec.note = "outside-half-space";
      rep.records.push_back(rec);
      ++rep.failed;
      continue;
    }
    const double u0 = pt.r * cone.phi_at(pt.theta);
    if (std::abs(pt.z - u0) <= cfg.asym_tol) {
      rec.kind = CoverKind::Asymptotic;
      rec.note = "boundary-of-foliation";
      rep.records.push_back(rec);
      ++rep.asymptotic;
      continue;
    }

    const bool above = pt.z > u0;
    const Field& fam = above ? upper : lower;
    const Mesh& fm = fam.mesh();
    double t_lo = std::max(1e-6, fm.r_min() / pt.r);
    double t_hi = fm.r_max() / pt.r;
    if (t_hi <= t_lo * (1.0 + 1e-9)) {
      rec.note = "outside-representable-region";
      rep.records.push_back(rec);
      ++rep.failed;
      continue;
    }

    auto f = [&](double t) { return dilate_at(fam, t, pt.r, pt.theta); };
    // the family is monotone in t by ray monotonicity: decreasing to the
    // cone for the upper family, increasing for the lower one
    const double sgn = above ? 1.0 : -1.0;
    bool monotone = true;
    double prev = sgn * f(t_lo);
    for (int k = 1; k <= 8; ++k) {
      const double t = t_lo * std::pow(t_hi / t_lo, double(k) / 8.0);
      const double cur = sgn * f(t);
      if (cur > prev + 1e-9 * (std::abs(prev) + 1.0)) monotone = false;
      prev = cur;
    }
    if (!monotone) {
      rec.note = "non-monotone-ray";
      rep.records.push_back(rec);
      ++rep.failed;
      continue;
    }

    double g_lo = sgn * (f(t_lo) - pt.z);
    double g_hi = sgn * (f(t_hi) - pt.z);
    if (!(g_lo >= 0.0 && g_hi <= 0.0)) {
      rec.note = "outside-representable-region";
      rep.records.push_back(rec);
      ++rep.failed;
      continue;
    }
    while (t_hi - t_lo > cfg.bisect_tol * t_hi) {
      const double t = 0.5 * (t_lo + t_hi);
      if (sgn * (f(t) - pt.z) >= 0.0)
        t_lo = t;
      else
        t_hi = t;
    }
    rec.kind = above ? CoverKind::Upper : CoverKind::Lower;
    rec.t = 0.5 * (t_lo + t_hi);
    rec.unique = true;  // monotonicity verified above
    rep.records.push_back(rec);
    ++rep.matched;
  }
  rep.ok = rep.failed == 0;
  return rep;
}

DilationProbe dilation_distance_probe(const Field& candidate,
                                      const Field& upper, double t_lo,
                                      double t_hi) {
  if (t_lo <= 0.0 || t_hi <= t_lo)
    throw FoliationError("invalid dilation range");
  const Mesh& m = candidate.mesh();
  const Mesh& um = upper.mesh();

  auto dist = [&](double t) {
    double sup = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < m.nr(); ++i) {
      const double r = m.r(i);
      // compare away from the vertex and only where the dilation is
      // defined on the reference mesh
      if (r < 0.25 * m.r_max()) continue;
      if (t * r < um.r_min() - 1e-12 || t * r > um.r_max() + 1e-12)
        continue;
      for (std::size_t j = 0; j < m.ntheta(); ++j) {
        sup = std::max(sup, std::abs(candidate(i, j) -
                                     dilate_at(upper, t, r, m.theta(j))));
        any = true;
      }
    }
    return any ? sup : std::numeric_limits<double>::infinity();
  };

  // coarse geometric grid, then golden-section in the bracketing interval
  const int coarse = 41;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  std::vector<double> ts(coarse);
  for (int k = 0; k < coarse; ++k) {
    ts[k] = t_lo * std::pow(t_hi / t_lo, double(k) / double(coarse - 1));
    const double d = dist(ts[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (!std::isfinite(best_d))
    throw FoliationError("empty comparison window for every t");
  double a = ts[std::max(best - 1, 0)];
  double b = ts[std::min(best + 1, coarse - 1)];
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = dist(x1), f2 = dist(x2);
  for (int it = 0; it < 60; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = dist(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = dist(x2);
    }
  }
  DilationProbe probe;
  probe.t_star = 0.5 * (a + b);
  probe.distance = dist(probe.t_star);
  return probe;
}

std::string FreeBoundaryGraph::to_json() const {
  nlohmann::json j;
  j["scale"] = scale;
  j["theta0"] = theta0;
  j["side"] = side == Side::Below ? "below" : "above";
  j["failures"] = failures();
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const auto& s : samples)
    arr.push_back({{"r", s.r},
                   {"psi", s.psi},
                   {"ok", s.ok},
                   {"note", s.note}});
  return j.dump(2);
}

std::string ExpansionReport::to_json() const {
  nlohmann::json j;
  j["admissible_c"] = admissible_c;
  j["used"] = used;
  j["skipped"] = skipped;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (std::size_t k = 0; k < r.size(); ++k)
    arr.push_back({{"r", r[k]},
                   {"psi", psi[k]},
                   {"linearized", linearized[k]},
                   {"residual", residual[k]}});
  return j.dump(2);
}

std::string RayMonotonicityReport::to_json() const {
  nlohmann::json j;
  j["max_value"] = max_value;
  j["strict_fraction"] = strict_fraction;
  j["nodes"] = nodes;
  j["passed"] = passed;
  return j.dump(2);
}

std::string OrderingReport::to_json() const {
  nlohmann::json j;
  j["ok"] = ok;
  j["max_low_violation"] = max_low_violation;
  j["max_high_violation"] = max_high_violation;
  j["violations"] = violations;
  j["r_at"] = r_at;
  j["theta_at"] = theta_at;
  return j.dump(2);
}

std::string CoverageReport::to_json() const {
  nlohmann::json j;
  j["matched"] = matched;
  j["asymptotic"] = asymptotic;
  j["failed"] = failed;
  j["ok"] = ok;
  auto& arr = j["records"] = nlohmann::json::array();
  for (const auto& rec : records) {
    const char* kind = rec.kind == CoverKind::Upper      ? "upper"
                       : rec.kind == CoverKind::Lower    ? "lower"
                       : rec.kind == CoverKind::Asymptotic ? "asymptotic"
                                                           : "failed";
    arr.push_back({{"r", rec.point.r},
                   {"theta", rec.point.theta},
                   {"z", rec.point.z},
                   {"kind", kind},
                   {"t", rec.t},
                   {"unique", rec.unique},
                   {"note", rec.note}});
  }
  return j.dump(2);
}

void write_csv(const FreeBoundaryGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FoliationError("cannot open " + path);
  out << "r,psi,ok,note\n";
  for (const auto& s : graph.samples)
    out << s.r << ',' << s.psi << ',' << (s.ok ? 1 : 0) << ',' << s.note
        << '\n';
}

void write_csv(const ExpansionReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FoliationError("cannot open " + path);
  out << "r,psi,linearized,residual\n";
  for (std::size_t k = 0; k < report.r.size(); ++k)
    out << report.r[k] << ',' << report.psi[k] << ','
        << report.linearized[k] << ',' << report.residual[k] << '\n';
}

}  // namespace fbc
