#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Symmetry-reduced computational domains on (r, theta), scalar fields on
// them, weighted quadrature and differential operators.
//
// Every cone handled here is invariant under a rotation group, so all
// dimensions n >= 2 live on a 2-variable grid with the angular weight
//   w(theta) = sin^p(theta) cos^q(theta)   (double rotation, p+q = n-2)
//   w(theta) = sin^(n-2)(theta)            (single cap)
// and the volume element  orbit * r^(n-1) w(theta) dr dtheta.

namespace fbc {

struct MeshError : std::runtime_error {
  explicit MeshError(const std::string& what) : std::runtime_error(what) {}
};

enum class Symmetry { SingleCap, DoubleRotation };

// Which angular side of theta0 is the positivity set of the cone.
enum class Side { Below, Above };  // {theta < theta0} / {theta > theta0}

struct DomainSpec {
  int n = 2;                      // ambient dimension
  Symmetry symmetry = Symmetry::SingleCap;
  int p = 0;                      // sin exponent (n-2 for single cap)
  int q = 0;                      // cos exponent (0 for single cap)
  std::optional<double> theta0;   // aperture, unset until solved
  Side side = Side::Below;

  static DomainSpec single_cap(int n, std::optional<double> theta0 = {},
                               Side side = Side::Below);
  static DomainSpec double_rotation(int n, int p, int q,
                                    std::optional<double> theta0 = {},
                                    Side side = Side::Below);

  // sin^p cos^q or sin^(n-2); strictly positive on the open angular extent
  double weight(double theta) const;
  // d/dtheta log w = p cot(theta) - q tan(theta)
  double dlog_weight(double theta) const;
  // full angular extent of the reduced coordinate: pi/2 or pi
  double theta_max() const;
  // |S^p| |S^q| resp. |S^(n-2)|
  double orbit_factor() const;
  // angular interval of the positivity-side cap [lo, hi]; requires theta0
  std::pair<double, double> cap_interval() const;

  void validate() const;  // throws MeshError on p+q != n-2 etc.
};

class Mesh;
using MeshPtr = std::shared_ptr<const Mesh>;

// Tensor-product (r, theta) grid. Immutable after construction.
class Mesh {
 public:
  Mesh(DomainSpec spec, std::vector<double> r_nodes,
       std::vector<double> theta_nodes);

  const DomainSpec& domain() const { return spec_; }
  std::size_t nr() const { return r_.size(); }
  std::size_t ntheta() const { return theta_.size(); }
  std::size_t size() const { return r_.size() * theta_.size(); }
  double r(std::size_t i) const { return r_[i]; }
  double theta(std::size_t j) const { return theta_[j]; }
  const std::vector<double>& r_nodes() const { return r_; }
  const std::vector<double>& theta_nodes() const { return theta_; }
  double weight(std::size_t j) const { return w_[j]; }
  double orbit_factor() const { return orbit_; }
  std::size_t idx(std::size_t i, std::size_t j) const {
    return i * theta_.size() + j;
  }
  // trapezoid node measure: orbit * r^(n-1) w(theta) * dr * dtheta
  double node_measure(std::size_t i, std::size_t j) const;

  double r_min() const { return r_.front(); }
  double r_max() const { return r_.back(); }
  double theta_lo() const { return theta_.front(); }
  double theta_hi() const { return theta_.back(); }

 private:
  DomainSpec spec_;
  std::vector<double> r_, theta_, w_;
  double orbit_ = 1.0;
};

// Uniform grid; Nr, Ntheta are cell counts (Nr+1 nodes).
MeshPtr build_mesh(const DomainSpec& spec, std::size_t nr_cells,
                   std::size_t ntheta_cells, double r_min, double r_max);

// Same but with angular extent restricted to [theta_lo, theta_hi].
MeshPtr build_mesh(const DomainSpec& spec, std::size_t nr_cells,
                   std::size_t ntheta_cells, double r_min, double r_max,
                   double theta_lo, double theta_hi);

// Geometrically graded radial spacing (ratio = spacing growth per cell);
// used by the annulus decay studies.
MeshPtr build_graded_mesh(const DomainSpec& spec, std::size_t nr_cells,
                          std::size_t ntheta_cells, double r_min, double r_max,
                          double ratio);

enum class FieldKind { NonnegMinimizer, SignedLinearized, Barrier };

// One scalar per node, row-major over (r, theta). Immutable by convention:
// operations return new fields.
class Field {
 public:
  Field(MeshPtr mesh, FieldKind kind);
  Field(MeshPtr mesh, FieldKind kind, std::vector<double> values);

  const Mesh& mesh() const { return *mesh_; }
  MeshPtr mesh_ptr() const { return mesh_; }
  FieldKind kind() const { return kind_; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_[mesh_->idx(i, j)];
  }
  double& at(std::size_t i, std::size_t j) {
    return values_[mesh_->idx(i, j)];
  }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  // bilinear interpolation; clamps within one cell of the extent
  double interp(double r, double theta) const;

  void check_invariants() const;  // finite everywhere; >= 0 if NonnegMinimizer

 private:
  MeshPtr mesh_;
  FieldKind kind_;
  std::vector<double> values_;
};

struct Region {
  double r_lo, r_hi, theta_lo, theta_hi;
  static Region all(const Mesh& m) {
    return {m.r_min(), m.r_max(), m.theta_lo(), m.theta_hi()};
  }
};

// Weighted trapezoid quadrature of a node-indexed integrand over a
// sub-rectangle; fractional boundary cells handled by linear interpolation.
double integrate(const Mesh& mesh, const std::vector<double>& node_values,
                 const Region& region);
double integrate(const Field& f, const Region& region);
double integrate(const Field& f);

struct GradientPair {
  Field dr;      // f_r
  Field dtheta;  // f_theta  (|grad f|^2 = f_r^2 + f_theta^2 / r^2)
};

GradientPair gradient(const Field& f);
Field grad_norm_sq(const Field& f);

// Delta f = f_rr + (n-1) f_r / r + (f_tt + (dlog w) f_t) / r^2.
// Nodes at r = 0 are excluded (set to 0); poles use the symmetric limit.
Field laplacian_residual(const Field& f);

// u_t(x) = u(t x)/t interpolated onto the target mesh.
Field rescale_field(const Field& f, double t, MeshPtr target);

// --- serialization ---

void write_csv(const Field& f, const std::string& path);
// "CFLD" + version byte + dims + nodes + little-endian f64 row-major values
void write_cfld(const Field& f, const std::string& path);
Field read_cfld(const std::string& path, const DomainSpec& spec);

double sphere_area(int dim);  // |S^dim|

}  // namespace fbc
