#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fbc/spectral.hpp"

// Discrete one-phase energy J(u) = int |grad u|^2 + chi_{u>0}, its
// minimization with prescribed boundary data, the Weiss density, and the
// perturb-rescale construction of the inhomogeneous global solutions.
//
// Discretization: cell-based quadrature on the (r, theta) grid.  The
// Dirichlet part is an edge stiffness form (each cell's measure split
// between its edges), the indicator chi is counted per cell (any corner
// positive).  minimize replaces chi by a smoothstep ramp of width eps,
// runs projected descent preconditioned by the stiffness factorization,
// shrinks eps along a graduated schedule, and finishes with a hard
// threshold at eta * h plus one harmonic-replacement sweep.  Every outer
// stage is accepted only if the exact (hard-chi) energy did not increase,
// so the reported history is nonincreasing by construction.

namespace fbc {

struct MinimizeError : std::runtime_error {
  explicit MinimizeError(const std::string& what)
      : std::runtime_error(what) {}
};

struct EnergyConfig {
  // strictly decreasing ramp widths; empty selects {8h, 4h, 2h, h, h/2}
  // from the radial spacing h (floor clamped to h/4)
  std::vector<double> eps_schedule;
  std::size_t max_inner = 200;  // descent iterations per ramp width
  double tol = 1e-10;           // relative energy-decrease stopping level
  double eta = 0.5;             // hard-threshold level, multiples of h

  void validate(double h) const;  // throws MinimizeError
};

// interface cells between {u > 0} and {u = 0}, with sub-cell zero
// crossings along grid lines
struct FreeBoundarySet {
  std::vector<std::pair<std::size_t, std::size_t>> cells;  // (i, j) cell ids
  std::vector<std::pair<double, double>> points;           // (r, theta)

  bool empty() const { return points.empty(); }
  double min_distance_to_origin() const;  // min r; throws if empty
};

struct MinimizeResult {
  Field u;
  std::vector<double> energy_history;  // exact energy per outer stage
  bool converged = false;
  FreeBoundarySet fb;
  double max_gradient = 0.0;  // Lipschitz diagnostic
  bool lipschitz_flagged = false;  // max_gradient > 3

  std::string to_json() const;
};

// Exact discrete energy: edge-stiffness Dirichlet part + per-cell hard
// indicator, over the sub-rectangle (fractional cells weighted linearly).
double energy(const Field& u, const Region& region);
double energy(const Field& u);

// Boundary data is read off the outer radial column of `boundary_data`
// (and the inner column when r_min > 0); the rest of the field seeds the
// descent.  Angular ends are natural (symmetry) boundaries.
MinimizeResult minimize(const Field& boundary_data, const EnergyConfig& cfg);

FreeBoundarySet free_boundary(const Field& u);

struct WeissCurve {
  std::vector<double> radii;
  std::vector<double> values;
  double max_increase_violation = 0.0;  // max over i of Phi(r_i) - Phi(r_i+1)
  double max_spread = 0.0;              // max |Phi(r_i) - Phi(r_j)|
  bool nondecreasing = false;           // within the tolerance passed to scan
  bool homogeneous = false;             // max_spread below tolerance
};

// Phi_u(r) = r^-n J_{B_r}(u) - r^-(n+1) int_{dB_r} u^2
double weiss(const Field& u, double r);
WeissCurve weiss_scan(const Field& u, const std::vector<double>& radii,
                      double tol = 1e-3);

struct NondegeneracyReport {
  double c_min = 0.0;       // min over samples of sup_{B_r(x0)} u / r
  std::size_t samples = 0;  // (x0, r) pairs tested
  bool passed = false;
  std::string note;
};

// sup_{B_r(x0)} u / r over sampled free boundary points x0 and dyadic r;
// balls are taken in the meridian metric
// d((r1,t1),(r2,t2))^2 = r1^2 + r2^2 - 2 r1 r2 cos(t1 - t2).
NondegeneracyReport nondegeneracy_check(const Field& u, double floor = 0.1);

struct InscribedRadius {
  double radius = 0.0;
  bool origin_positive = false;  // false signals the zero-radius case
};

// Largest origin-centered open ball with all mesh nodes strictly positive.
InscribedRadius largest_inscribed_radius(const Field& u);

enum class PerturbSide { Above, Below };  // data U0 + eps g / U0 - eps g

struct PerturbConfig {
  std::vector<double> eps;       // decreasing perturbation sizes
  double target_radius = 8.0;    // K: rescaled fields live on B_K
  std::size_t nr = 192, ntheta = 192;   // unit-ball minimization grid
  std::size_t target_nr = 128, target_ntheta = 128;
  double stop_tol = 1e-3;        // sup-difference of successive rescalings
  EnergyConfig energy;
};

struct PerturbDiagnostics {
  double eps = 0.0;
  double r_j = 0.0;        // min distance from origin to the free boundary
  double energy = 0.0;     // exact energy of the unit-ball minimizer
  double sup_diff = 0.0;   // sup |rescaled - U0| on the target mesh
  double step_change = 0.0;  // sup diff to the previous rescaled iterate
};

struct PerturbedResult {
  Field u;  // approximation of the rescaled limit on the B_K target mesh
  bool converged = false;
  std::vector<PerturbDiagnostics> diagnostics;
  std::string warning;  // e.g. r_j stagnation across the eps sequence
};

// For each eps_j: minimize on B_1 with data U0 +- eps_j g on the outer
// arc, locate r_j = dist(F(u), 0), rescale u(r_j x)/r_j onto the fixed
// target mesh; stop once successive rescalings differ by < stop_tol.
PerturbedResult construct_perturbed(const HomogeneousSolution& cone,
                                    const std::function<double(double)>& g,
                                    PerturbSide side,
                                    const PerturbConfig& cfg);

struct BlowDownReport {
  std::vector<double> t;
  std::vector<double> gap;  // sup |u(t x)/t - U0(x)| on the window
  bool decreasing = false;
  double fitted_slope = 0.0;  // d log gap / d log t
};

// Convergence of the rescalings u_t to the cone on the compact annular
// window 0.5 <= |x| <= 1.
BlowDownReport blow_down(const Field& u, const HomogeneousSolution& cone,
                         const std::vector<double>& ts);

}  // namespace fbc
