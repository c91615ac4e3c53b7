#pragma once

#include <string>
#include <vector>

#include "fbc/spectral.hpp"

// Geometric verification tools for the constructed one-sided solutions:
// free boundary graph extraction over the cone boundary, the first-order
// expansion of that graph against a linearized field, radial-ray
// monotonicity, nodewise ordering, foliation coverage by the dilation
// families, and a dilation-distance probe.

namespace fbc {

struct FoliationError : std::runtime_error {
  explicit FoliationError(const std::string& what)
      : std::runtime_error(what) {}
};

// One sampled base point x on the cone boundary ray theta = theta0 at
// radius r; the perturbed free boundary point is reached from x by moving
// the signed arc length psi along the outward normal (away from the
// positivity side), so psi > 0 means outward displacement.
struct GraphSample {
  double r = 0.0;
  double psi = 0.0;
  bool ok = false;
  std::string note;  // "no-crossing" / "multiple-crossing" / "no-anchor"
};

struct FreeBoundaryGraph {
  std::vector<GraphSample> samples;
  double scale = 1.0;   // dilation at which the graph was extracted
  double theta0 = 0.0;  // boundary ray of the reference cone
  Side side = Side::Below;

  std::size_t failures() const;
  std::string to_json() const;
};

// Normal displacement of the free boundary of u over the cone boundary at
// the given radii, by marching along the normal ray within a collar of
// width min(10 angular cells, 0.2 r) and locating the positive-to-zero
// crossing with sub-cell linear interpolation.  No crossing or multiple
// crossings inside the collar are reported per sample; the run continues.
FreeBoundaryGraph extract_fb_graph(const Field& u,
                                   const HomogeneousSolution& cone,
                                   const std::vector<double>& radii);

struct ExpansionReport {
  std::vector<double> r;           // retained sample radii
  std::vector<double> psi;         // measured displacement
  std::vector<double> linearized;  // v on the boundary ray
  std::vector<double> residual;    // |psi - v|
  double admissible_c = 0.0;  // smallest C with |psi - v| <= C v^2 / r
  std::size_t used = 0, skipped = 0;

  std::string to_json() const;
};

// First-order expansion check: the graph displacement should match the
// linearized field up to a quadratic remainder; reports the smallest
// admissible constant over the retained samples.
ExpansionReport expansion_check(const FreeBoundaryGraph& graph,
                                const Field& v);

struct RayMonotonicityReport {
  double max_value = 0.0;        // max of r u_r - u on the positivity set
  double strict_fraction = 0.0;  // fraction of nodes with r u_r - u < -margin
  std::size_t nodes = 0;
  bool passed = false;  // max_value < 0

  std::string to_json() const;
};

// Nodewise r u_r - u (the derivative of the dilation family in t) over the
// positivity set of u restricted to the annulus region.
RayMonotonicityReport ray_monotonicity(const Field& u, const Region& annulus,
                                       double margin = 0.0);

struct OrderingReport {
  bool ok = false;
  double max_low_violation = 0.0;   // max(low - mid)
  double max_high_violation = 0.0;  // max(mid - high)
  double r_at = 0.0, theta_at = 0.0;
  std::size_t violations = 0;

  std::string to_json() const;
};

// low <= mid <= high nodewise within tol; fields must share a mesh.
OrderingReport ordering_check(const Field& low, const Field& mid,
                              const Field& high, double tol = 0.0);

struct SamplePoint {
  double r = 0.0, theta = 0.0, z = 0.0;  // point (x, z) over the cone graph
};

enum class CoverKind { Upper, Lower, Asymptotic, Failed };

struct CoverRecord {
  SamplePoint point;
  CoverKind kind = CoverKind::Failed;
  double t = 0.0;  // matched dilation parameter
  bool unique = false;
  std::string note;
};

struct CoverageConfig {
  double bisect_tol = 1e-6;  // relative width of the final t bracket
  double asym_tol = 0.02;    // |z - U0| band classified as asymptotic
};

struct CoverageReport {
  std::vector<CoverRecord> records;
  std::size_t matched = 0, asymptotic = 0, failed = 0;
  bool ok = false;  // every non-asymptotic sample matched uniquely

  std::string to_json() const;
};

// For each sample (x, z): find t with upper_t(x) = z (z above the cone
// graph) or lower_t(x) = z (below) by monotone bisection in t, where
// u_t(x) = u(t x) / t.  Samples within asym_tol of the cone graph are the
// shared asymptote of both families and are classified, not matched.
CoverageReport foliation_sample(const Field& upper, const Field& lower,
                                const HomogeneousSolution& cone,
                                const std::vector<SamplePoint>& samples,
                                const CoverageConfig& cfg = {});

struct DilationProbe {
  double t_star = 1.0;
  double distance = 0.0;  // sup |candidate - upper_t*| on the window
};

// Sup-distance between the candidate and the dilations upper_t over a
// coarse t grid followed by golden-section refinement.
DilationProbe dilation_distance_probe(const Field& candidate,
                                      const Field& upper, double t_lo,
                                      double t_hi);

void write_csv(const FreeBoundaryGraph& graph, const std::string& path);
void write_csv(const ExpansionReport& report, const std::string& path);

}  // namespace fbc
