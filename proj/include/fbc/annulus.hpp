#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbc/spectral.hpp"

// Linearized Robin problems on annuli inside the positivity cone: the
// weighted Laplace equation with Dirichlet data on the two radial arcs, a
// natural (symmetry) condition on the axis side and the Robin condition
//   d_nu v + H (1 + eps(x)) v = 0,    H(x) = H1 / |x|
// on the cone boundary theta = theta0.  On top of the solver sit the
// verification tools: comparison checks, decay-exponent fits against the
// homogeneous pair V_{gamma-}, V_{gamma+}, dyadic oscillation contraction
// factors and Harnack ratios.

namespace fbc {

struct AnnulusError : std::runtime_error {
  explicit AnnulusError(const std::string& what)
      : std::runtime_error(what) {}
};

enum class PerturbationKind { Zero, Bounded, PowerDecay, FieldDerived };

// Coefficient model eps(r) entering the Robin condition.  Bounded is the
// constant-amplitude class, PowerDecay is delta * r^(-alpha0), and
// FieldDerived freezes eps := v_prev(r, theta0) / r from a previous
// iterate (one Picard sweep of the quasilinear condition; iterable).
struct PerturbationModel {
  PerturbationKind kind = PerturbationKind::Zero;
  double delta = 0.0;
  double alpha0 = 0.0;
  std::optional<Field> reference;

  static PerturbationModel zero();
  static PerturbationModel bounded(double delta);
  static PerturbationModel power_decay(double delta, double alpha0);
  static PerturbationModel field_derived(Field prev);

  // coefficient on the Robin arc at radius r
  double eval(double r, double theta0) const;
  void validate() const;  // |eps| bound finite, alpha0 >= 0
};

struct AnnulusProblem {
  SpectralData spectral;
  double r_in = 1.0, r_out = 2.0;
  std::size_t nr = 128, ntheta = 128;
  PerturbationModel perturbation;
  std::function<double(double)> inner_data;  // theta -> v(r_in, theta)
  std::function<double(double)> outer_data;  // theta -> v(r_out, theta)

  DomainSpec domain() const;  // reduced domain rebuilt from the spectral data
  void validate() const;      // throws AnnulusError
};

// Second-order conservative finite-difference solve; linear in the data.
// The discrete residual is verified to 1e-10 (throws solver-breakdown
// otherwise).
Field solve_annulus(const AnnulusProblem& problem);

struct ComparisonVerdict {
  bool ordered_on_boundary = false;  // sub <= super on the non-Robin boundary
  bool ok = false;                   // sub <= super + tol on the region
  double max_violation = 0.0;
  double r_at = 0.0, theta_at = 0.0;  // location of the worst violation
  std::string note;
};

// Nodewise comparison-principle check: requires positive_ref > 0 on the
// closed region (throws hypothesis-failure otherwise); verifies that
// ordering on the non-Robin part of the region boundary propagates inside.
ComparisonVerdict comparison_check(const Field& sub, const Field& super,
                                   const Field& positive_ref,
                                   const Region& region, double tol = 1e-10);

enum class FitBranch { Minus, Plus, EqualRootsPair };

struct FitReport {
  FitBranch branch = FitBranch::Minus;
  double a_minus = 0.0;
  double a_plus = 0.0;
  double b_bar = 0.0;        // second coefficient in the equal-roots pair
  double alpha_prime = 0.0;  // decay exponent of the post-fit remainder
  double goodness = 0.0;     // 1 - relative fit residual
  std::string warning;       // e.g. near-equal roots conditioning

  std::string to_json() const;
};

// Least-squares fit of the vbar-projection of v against r^(-gamma-) and
// r^(-gamma+) (log-corrected pair when equal_roots) over the window radii;
// branch selected by which term dominates at the outer window edge.
// Window must span at least two dyadic levels.
FitReport fit_decay(const Field& v, const SpectralData& s,
                    const std::vector<double>& window_radii);

struct OscillationReport {
  std::vector<double> levels;       // inner radii of the dyadic annuli
  std::vector<double> oscillation;  // max - min of v / V_{gamma+} per level
  std::vector<double> ratios;       // osc_{k+1} / osc_k
  bool converged = false;           // all oscillations at the noise floor
  bool sign_ok = true;              // v / V_{gamma+} bounded below by 0
  std::string to_json() const;
};

// Oscillation of v / V_{gamma+} over the dyadic annuli
// [r0 2^k, r0 2^(k+1)], k = 0..levels-1; when the minus branch dominates,
// the fitted a- V_{gamma-} part is subtracted first.
OscillationReport oscillation_decay(const Field& v, const SpectralData& s,
                                    double r0, std::size_t levels);

// max / min of v over the closed region, excluding a one-cell collar at
// the Robin boundary (the discrete min there is dominated by interpolation
// error).  Requires v >= 0 and a nonempty region after exclusion.
double harnack_ratio(const Field& v, const Region& region);

void write_csv(const FitReport& report, const std::string& path);
void write_csv(const OscillationReport& report, const std::string& path);

}  // namespace fbc
