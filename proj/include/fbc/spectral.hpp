#pragma once

#include <string>
#include <vector>

#include "fbc/mesh.hpp"

// Homogeneous cone solutions U0 = r phi(theta), the boundary mean curvature
// H, the Robin principal eigenpair (lambda, vbar) and the decay exponents
// gamma_-, gamma_+.
//
// Sign conventions follow the linearized free boundary problem: the
// eigenvalue is stored as lambda with  Delta_S vbar = lambda vbar  and
// Robin condition  d_nu vbar + H vbar = 0 (nu the interior normal), so
// lambda = -(principal eigenvalue of -Delta_S with that Robin condition)
// and lambda > 0 whenever H > 0.  This is the opposite sign of the usual
// spectral convention for -Delta_S.

namespace fbc {

struct SpectralError : std::runtime_error {
  explicit SpectralError(const std::string& what)
      : std::runtime_error(what) {}
};

// Thrown by solve_degree_one when the cap's principal Dirichlet eigenvalue
// differs from n-1: the aperture is not degree-1 critical.
struct EigenvalueMismatch : SpectralError {
  double measured;  // the cap's actual principal eigenvalue
  double expected;  // n - 1
  EigenvalueMismatch(double m, double e)
      : SpectralError("eigenvalue-mismatch: measured " + std::to_string(m) +
                      ", expected " + std::to_string(e)),
        measured(m),
        expected(e) {}
};

// Samples over an angular interval; piecewise-linear evaluation.
struct AngularProfile {
  std::vector<double> theta;   // strictly increasing
  std::vector<double> values;
  double eval(double th) const;       // clamped linear interpolation
  double max_value() const;
  double min_value() const;
};

struct HomogeneousSolution {
  DomainSpec domain;        // theta0 set
  AngularProfile phi;       // U0(r, theta) = r phi(theta) on the cap
  double dphi_boundary;     // phi'(theta0), equals -1 (Below) / +1 (Above)
  double grad_before_norm;  // |grad U0| on the boundary orbit pre-rescale
  double eigenvalue;        // measured cap eigenvalue (should be n-1)

  // phi extended by zero outside the cap
  double phi_at(double theta) const;
  // U0 sampled on a mesh
  Field evaluate(MeshPtr mesh) const;
};

struct GammaRoots {
  double gamma_minus = 0.0;
  double gamma_plus = 0.0;
  bool equal_roots = false;
  bool stable = false;
};

struct SpectralData {
  int n = 0, p = 0, q = 0;
  Symmetry symmetry = Symmetry::SingleCap;
  Side side = Side::Below;
  double theta0 = 0.0;
  double H1 = 0.0;          // mean curvature at |x| = 1; H(x) = H1/|x|
  double lambda = 0.0;      // paper convention, lambda > 0 for H1 > 0
  AngularProfile vbar;      // sup-normalized, > 0 on the closed cap
  double dvbar_boundary = 0.0;  // vbar'(theta0) from the discrete solve
  double gamma_minus = 0.0, gamma_plus = 0.0;
  bool equal_roots = false;
  bool stable = false;

  std::string to_json() const;
  void write_csv(const HomogeneousSolution& sol,
                 const std::string& path) const;  // theta, phi, vbar
};

struct SpectralOptions {
  // angular resolution of the 1D solver; Richardson extrapolation removes
  // the h^2 truncation term, while assembly roundoff grows like 1/h^2, so
  // moderate resolutions beat very fine ones
  std::size_t cells = 8192;
  double mismatch_tol = 1e-5;     // allowed |mu1 - (n-1)| in solve_degree_one
  double aperture_tol = 1e-10;    // eigenvalue-gap tolerance for bisection
  double search_lo = 0.05;        // aperture search interval
  double search_hi_margin = 0.05;
};

// Principal Dirichlet eigenvalue of the symmetric-class spherical cap,
// Richardson-extrapolated.  Exposed for cross-checks and the sweep table.
double cap_dirichlet_eigenvalue(const DomainSpec& spec, double theta0,
                                std::size_t cells = 32768);

double find_critical_aperture(const DomainSpec& spec,
                              const SpectralOptions& opt = {});

HomogeneousSolution solve_degree_one(const DomainSpec& spec,
                                     const SpectralOptions& opt = {});

// H1 = -(d_nu d_nu U0) at r = 1, from one-sided differences of the profile;
// cross-checked against the closed form +-(q tan t0 - p cot t0).
double mean_curvature(const HomogeneousSolution& sol);
double mean_curvature_closed_form(const DomainSpec& spec);

struct RobinEigenpair {
  double lambda;
  AngularProfile vbar;
  double dvbar_boundary;
};

RobinEigenpair robin_principal_eigen(const HomogeneousSolution& sol, double H1,
                                     const SpectralOptions& opt = {});

GammaRoots gamma_roots(int n, double lambda);

// Full pipeline: solve_degree_one -> mean_curvature -> robin eigen -> roots.
SpectralData compute_spectral(const HomogeneousSolution& sol,
                              const SpectralOptions& opt = {});

}  // namespace fbc
