#include "fbc/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

namespace fbc {

namespace {
constexpr double kPi = std::numbers::pi;
}

double sphere_area(int dim) {
  // |S^dim| = 2 pi^((dim+1)/2) / Gamma((dim+1)/2)
  const double a = 0.5 * (dim + 1);
  return 2.0 * std::pow(kPi, a) / std::tgamma(a);
}

DomainSpec DomainSpec::single_cap(int n, std::optional<double> theta0,
                                  Side side) {
  DomainSpec s;
  s.n = n;
  s.symmetry = Symmetry::SingleCap;
  s.p = n - 2;
  s.q = 0;
  s.theta0 = theta0;
  s.side = side;
  s.validate();
  return s;
}

DomainSpec DomainSpec::double_rotation(int n, int p, int q,
                                       std::optional<double> theta0,
                                       Side side) {
  DomainSpec s;
  s.n = n;
  s.symmetry = Symmetry::DoubleRotation;
  s.p = p;
  s.q = q;
  s.theta0 = theta0;
  s.side = side;
  s.validate();
  return s;
}

void DomainSpec::validate() const {
  if (n < 2) throw MeshError("invalid-spec: n must be >= 2");
  if (symmetry == Symmetry::DoubleRotation) {
    if (p < 1 || q < 1)
      throw MeshError("invalid-spec: double rotation needs p, q >= 1");
    if (p + q != n - 2)
      throw MeshError("invalid-spec: p+q = " + std::to_string(p + q) +
                      " but n-2 = " + std::to_string(n - 2));
  } else {
    if (p != n - 2 || q != 0)
      throw MeshError("invalid-spec: single cap needs p = n-2, q = 0");
  }
  if (theta0) {
    const double hi = theta_max();
    if (*theta0 <= 0.0 || *theta0 >= hi)
      throw MeshError("invalid-spec: theta0 out of (0, theta_max)");
  }
}

double DomainSpec::weight(double theta) const {
  double w = 1.0;
  if (p > 0) w *= std::pow(std::sin(theta), p);
  if (q > 0) w *= std::pow(std::cos(theta), q);
  return w;
}

double DomainSpec::dlog_weight(double theta) const {
  double d = 0.0;
  if (p > 0) d += p / std::tan(theta);
  if (q > 0) d -= q * std::tan(theta);
  return d;
}

double DomainSpec::theta_max() const {
  return symmetry == Symmetry::DoubleRotation ? 0.5 * kPi : kPi;
}

double DomainSpec::orbit_factor() const {
  if (symmetry == Symmetry::DoubleRotation)
    return sphere_area(p) * sphere_area(q);
  return sphere_area(n - 2);
}

std::pair<double, double> DomainSpec::cap_interval() const {
  if (!theta0) throw MeshError("cap_interval: theta0 not set");
  if (side == Side::Below) return {0.0, *theta0};
  return {*theta0, theta_max()};
}

Mesh::Mesh(DomainSpec spec, std::vector<double> r_nodes,
           std::vector<double> theta_nodes)
    : spec_(spec), r_(std::move(r_nodes)), theta_(std::move(theta_nodes)) {
  spec_.validate();
  if (r_.size() < 2 || theta_.size() < 2)
    throw MeshError("mesh needs at least 2 nodes per direction");
  for (std::size_t i = 1; i < r_.size(); ++i)
    if (r_[i] <= r_[i - 1]) throw MeshError("r nodes not strictly increasing");
  for (std::size_t j = 1; j < theta_.size(); ++j)
    if (theta_[j] <= theta_[j - 1])
      throw MeshError("theta nodes not strictly increasing");
  if (r_.front() < 0.0) throw MeshError("negative radius");
  w_.resize(theta_.size());
  for (std::size_t j = 0; j < theta_.size(); ++j)
    w_[j] = spec_.weight(theta_[j]);
  orbit_ = spec_.orbit_factor();
}

double Mesh::node_measure(std::size_t i, std::size_t j) const {
  const std::size_t Nr = r_.size() - 1, Nt = theta_.size() - 1;
  double dr = 0.0;
  if (i > 0) dr += 0.5 * (r_[i] - r_[i - 1]);
  if (i < Nr) dr += 0.5 * (r_[i + 1] - r_[i]);
  double dt = 0.0;
  if (j > 0) dt += 0.5 * (theta_[j] - theta_[j - 1]);
  if (j < Nt) dt += 0.5 * (theta_[j + 1] - theta_[j]);
  return orbit_ * std::pow(r_[i], spec_.n - 1) * w_[j] * dr * dt;
}

namespace {
std::vector<double> uniform_nodes(double lo, double hi, std::size_t cells) {
  std::vector<double> v(cells + 1);
  for (std::size_t i = 0; i <= cells; ++i)
    v[i] = lo + (hi - lo) * static_cast<double>(i) / cells;
  v.back() = hi;
  return v;
}
}  // namespace

MeshPtr build_mesh(const DomainSpec& spec, std::size_t nr_cells,
                   std::size_t ntheta_cells, double r_min, double r_max) {
  return build_mesh(spec, nr_cells, ntheta_cells, r_min, r_max, 0.0,
                    spec.theta_max());
}

MeshPtr build_mesh(const DomainSpec& spec, std::size_t nr_cells,
                   std::size_t ntheta_cells, double r_min, double r_max,
                   double theta_lo, double theta_hi) {
  spec.validate();
  if (r_min >= r_max) throw MeshError("degenerate-range: r_min >= r_max");
  if (theta_lo >= theta_hi) throw MeshError("degenerate-range: theta");
  if (nr_cells < 8 || ntheta_cells < 8)
    throw MeshError("degenerate-range: need at least 8 cells per direction");
  return std::make_shared<Mesh>(spec, uniform_nodes(r_min, r_max, nr_cells),
                                uniform_nodes(theta_lo, theta_hi, ntheta_cells));
}

MeshPtr build_graded_mesh(const DomainSpec& spec, std::size_t nr_cells,
                          std::size_t ntheta_cells, double r_min, double r_max,
                          double ratio) {
  spec.validate();
  if (r_min >= r_max) throw MeshError("degenerate-range: r_min >= r_max");
  if (ratio <= 0.0) throw MeshError("degenerate-range: grading ratio");
  std::vector<double> r(nr_cells + 1);
  // spacing h_k = h_0 * ratio^k; sum = r_max - r_min
  double s = 0.0, g = 1.0;
  for (std::size_t k = 0; k < nr_cells; ++k, g *= ratio) s += g;
  const double h0 = (r_max - r_min) / s;
  r[0] = r_min;
  g = 1.0;
  for (std::size_t k = 0; k < nr_cells; ++k, g *= ratio)
    r[k + 1] = r[k] + h0 * g;
  r.back() = r_max;
  return std::make_shared<Mesh>(spec, std::move(r),
                                uniform_nodes(0.0, spec.theta_max(),
                                              ntheta_cells));
}

Field::Field(MeshPtr mesh, FieldKind kind)
    : mesh_(std::move(mesh)), kind_(kind), values_(mesh_->size(), 0.0) {}

Field::Field(MeshPtr mesh, FieldKind kind, std::vector<double> values)
    : mesh_(std::move(mesh)), kind_(kind), values_(std::move(values)) {
  if (values_.size() != mesh_->size())
    throw MeshError("field/mesh size mismatch");
}

void Field::check_invariants() const {
  for (double v : values_) {
    if (!std::isfinite(v)) throw MeshError("field has non-finite values");
    if (kind_ == FieldKind::NonnegMinimizer && v < 0.0)
      throw MeshError("nonneg-minimizer field has negative values");
  }
}

namespace {
// locate x in strictly increasing nodes; returns cell index and barycentric s
std::pair<std::size_t, double> locate(const std::vector<double>& nodes,
                                      double x, double margin) {
  const double lo = nodes.front(), hi = nodes.back();
  if (x < lo - margin || x > hi + margin)
    throw MeshError("extent-exceeded: coordinate outside mesh");
  if (x <= lo) return {0, 0.0};
  if (x >= hi) return {nodes.size() - 2, 1.0};
  auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
  std::size_t c = static_cast<std::size_t>(it - nodes.begin()) - 1;
  if (c > nodes.size() - 2) c = nodes.size() - 2;
  return {c, (x - nodes[c]) / (nodes[c + 1] - nodes[c])};
}
}  // namespace

double Field::interp(double r, double theta) const {
  const auto& rn = mesh_->r_nodes();
  const auto& tn = mesh_->theta_nodes();
  const double mr = rn[1] - rn[0], mt = tn[1] - tn[0];
  auto [i, s] = locate(rn, r, mr);
  auto [j, t] = locate(tn, theta, mt);
  const double v00 = (*this)(i, j), v01 = (*this)(i, j + 1);
  const double v10 = (*this)(i + 1, j), v11 = (*this)(i + 1, j + 1);
  return (1 - s) * ((1 - t) * v00 + t * v01) + s * ((1 - t) * v10 + t * v11);
}

double integrate(const Mesh& mesh, const std::vector<double>& vals,
                 const Region& region) {
  if (vals.size() != mesh.size()) throw MeshError("integrand size mismatch");
  const double eps = 1e-12;
  if (region.r_lo < mesh.r_min() - eps || region.r_hi > mesh.r_max() + eps ||
      region.theta_lo < mesh.theta_lo() - eps ||
      region.theta_hi > mesh.theta_hi() + eps)
    throw MeshError("region-out-of-bounds");

  // 1D trapezoid weights on a clipped interval, with fractional end cells
  auto weights_1d = [](const std::vector<double>& nodes, double lo,
                       double hi) {
    std::vector<double> w(nodes.size(), 0.0);
    lo = std::max(lo, nodes.front());
    hi = std::min(hi, nodes.back());
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
      const double a = std::max(nodes[k], lo), b = std::min(nodes[k + 1], hi);
      if (b <= a) continue;
      const double h = nodes[k + 1] - nodes[k];
      // integral over [a,b] of the linear interpolant between nodes k, k+1
      const double sa = (a - nodes[k]) / h, sb = (b - nodes[k]) / h;
      const double len = b - a;
      const double mean_s = 0.5 * (sa + sb);
      w[k] += len * (1.0 - mean_s);
      w[k + 1] += len * mean_s;
    }
    return w;
  };
  const auto wr = weights_1d(mesh.r_nodes(), region.r_lo, region.r_hi);
  const auto wt = weights_1d(mesh.theta_nodes(), region.theta_lo,
                             region.theta_hi);
  const int n = mesh.domain().n;
  double sum = 0.0;
  for (std::size_t i = 0; i < mesh.nr(); ++i) {
    if (wr[i] == 0.0) continue;
    const double rw = wr[i] * std::pow(mesh.r(i), n - 1);
    double inner = 0.0;
    for (std::size_t j = 0; j < mesh.ntheta(); ++j)
      inner += wt[j] * mesh.weight(j) * vals[mesh.idx(i, j)];
    sum += rw * inner;
  }
  return mesh.orbit_factor() * sum;
}

double integrate(const Field& f, const Region& region) {
  return integrate(f.mesh(), f.values(), region);
}

double integrate(const Field& f) {
  return integrate(f, Region::all(f.mesh()));
}

namespace {
// second-order derivative along one index line, centered interior,
// one-sided (3-point) at the ends; supports nonuniform spacing
double deriv_at(const std::vector<double>& x, const std::vector<double>& v,
                std::size_t k) {
  const std::size_t n = x.size();
  if (k > 0 && k + 1 < n) {
    const double hm = x[k] - x[k - 1], hp = x[k + 1] - x[k];
    // difference form so constants give exactly zero
    return ((v[k + 1] - v[k]) * hm * hm + (v[k] - v[k - 1]) * hp * hp) /
           (hm * hp * (hm + hp));
  }
  if (k == 0) {
    const double h1 = x[1] - x[0], h2 = x[2] - x[1];
    const double b = (h1 + h2) / (h1 * h2);
    const double c = -h1 / (h2 * (h1 + h2));
    return b * (v[1] - v[0]) + c * (v[2] - v[0]);
  }
  const double h1 = x[n - 1] - x[n - 2], h2 = x[n - 2] - x[n - 3];
  const double b = -(h1 + h2) / (h1 * h2);
  const double c = h1 / (h2 * (h1 + h2));
  return b * (v[n - 2] - v[n - 1]) + c * (v[n - 3] - v[n - 1]);
}

double second_deriv_at(const std::vector<double>& x,
                       const std::vector<double>& v, std::size_t k) {
  const std::size_t n = x.size();
  std::size_t c = std::min(std::max<std::size_t>(k, 1), n - 2);
  const double hm = x[c] - x[c - 1], hp = x[c + 1] - x[c];
  return 2.0 * ((v[c - 1] - v[c]) * hp + (v[c + 1] - v[c]) * hm) /
         (hm * hp * (hm + hp));
}
}  // namespace

GradientPair gradient(const Field& f) {
  const Mesh& m = f.mesh();
  if (m.nr() < 3 || m.ntheta() < 3)
    throw MeshError("gradient needs >= 3 nodes per direction");
  Field dr(f.mesh_ptr(), FieldKind::SignedLinearized);
  Field dt(f.mesh_ptr(), FieldKind::SignedLinearized);
  std::vector<double> line(std::max(m.nr(), m.ntheta()));
  for (std::size_t j = 0; j < m.ntheta(); ++j) {
    line.resize(m.nr());
    for (std::size_t i = 0; i < m.nr(); ++i) line[i] = f(i, j);
    for (std::size_t i = 0; i < m.nr(); ++i)
      dr.at(i, j) = deriv_at(m.r_nodes(), line, i);
  }
  for (std::size_t i = 0; i < m.nr(); ++i) {
    line.resize(m.ntheta());
    for (std::size_t j = 0; j < m.ntheta(); ++j) line[j] = f(i, j);
    for (std::size_t j = 0; j < m.ntheta(); ++j)
      dt.at(i, j) = deriv_at(m.theta_nodes(), line, j);
  }
  return {std::move(dr), std::move(dt)};
}

Field grad_norm_sq(const Field& f) {
  auto g = gradient(f);
  const Mesh& m = f.mesh();
  Field out(f.mesh_ptr(), FieldKind::SignedLinearized);
  for (std::size_t i = 0; i < m.nr(); ++i) {
    const double r = m.r(i);
    for (std::size_t j = 0; j < m.ntheta(); ++j) {
      double v = g.dr(i, j) * g.dr(i, j);
      if (r > 0.0) v += g.dtheta(i, j) * g.dtheta(i, j) / (r * r);
      out.at(i, j) = v;
    }
  }
  return out;
}

Field laplacian_residual(const Field& f) {
  const Mesh& m = f.mesh();
  const DomainSpec& spec = m.domain();
  const double tmax = spec.theta_max();
  Field out(f.mesh_ptr(), FieldKind::SignedLinearized);
  std::vector<double> line;
  // radial part
  for (std::size_t j = 0; j < m.ntheta(); ++j) {
    line.resize(m.nr());
    for (std::size_t i = 0; i < m.nr(); ++i) line[i] = f(i, j);
    for (std::size_t i = 0; i < m.nr(); ++i) {
      const double r = m.r(i);
      if (r <= 0.0) continue;  // axis excluded from the residual set
      out.at(i, j) = second_deriv_at(m.r_nodes(), line, i) +
                     (spec.n - 1) * deriv_at(m.r_nodes(), line, i) / r;
    }
  }
  // angular part
  const double pole_tol = 1e-9;
  for (std::size_t i = 0; i < m.nr(); ++i) {
    const double r = m.r(i);
    if (r <= 0.0) continue;
    line.resize(m.ntheta());
    for (std::size_t j = 0; j < m.ntheta(); ++j) line[j] = f(i, j);
    for (std::size_t j = 0; j < m.ntheta(); ++j) {
      const double th = m.theta(j);
      const double ftt = second_deriv_at(m.theta_nodes(), line, j);
      double ang;
      const bool pole_sin = th < pole_tol ||
                            (spec.symmetry == Symmetry::SingleCap &&
                             th > tmax - pole_tol);
      const bool pole_cos =
          spec.symmetry == Symmetry::DoubleRotation && th > tmax - pole_tol;
      if (pole_sin) {
        // f_t -> 0 and cot(t) f_t -> f_tt at the pole: limit form (1+p) f_tt
        ang = (1.0 + spec.p) * ftt;
      } else if (pole_cos) {
        ang = (1.0 + spec.q) * ftt;
      } else {
        ang = ftt + spec.dlog_weight(th) * deriv_at(m.theta_nodes(), line, j);
      }
      out.at(i, j) += ang / (r * r);
    }
  }
  return out;
}

Field rescale_field(const Field& f, double t, MeshPtr target) {
  if (t <= 0.0) throw MeshError("rescale_field: t must be positive");
  const Mesh& src = f.mesh();
  const Mesh& dst = *target;
  const double margin = src.r_nodes()[1] - src.r_nodes()[0];
  if (t * dst.r_max() > src.r_max() + margin ||
      t * dst.r_min() < src.r_min() - margin)
    throw MeshError("extent-exceeded: rescale target outside source extent");
  Field out(target, f.kind());
  for (std::size_t i = 0; i < dst.nr(); ++i) {
    const double rs = std::clamp(t * dst.r(i), src.r_min(), src.r_max());
    for (std::size_t j = 0; j < dst.ntheta(); ++j) {
      const double th = std::clamp(dst.theta(j), src.theta_lo(),
                                   src.theta_hi());
      out.at(i, j) = f.interp(rs, th) / t;
    }
  }
  return out;
}

// --- serialization ---

void write_csv(const Field& f, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw MeshError("cannot open " + path);
  os << "r,theta,value\n";
  os.precision(17);
  const Mesh& m = f.mesh();
  for (std::size_t i = 0; i < m.nr(); ++i)
    for (std::size_t j = 0; j < m.ntheta(); ++j)
      os << m.r(i) << ',' << m.theta(j) << ',' << f(i, j) << '\n';
}

namespace {
void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (b[1] << 8) | (b[2] << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}
void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(u >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 8);
}
double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}
}  // namespace

void write_cfld(const Field& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw MeshError("cannot open " + path);
  os.write("CFLD", 4);
  const unsigned char version = 1;
  os.write(reinterpret_cast<const char*>(&version), 1);
  const Mesh& m = f.mesh();
  put_u32(os, static_cast<std::uint32_t>(m.nr()));
  put_u32(os, static_cast<std::uint32_t>(m.ntheta()));
  for (double r : m.r_nodes()) put_f64(os, r);
  for (double t : m.theta_nodes()) put_f64(os, t);
  for (double v : f.values()) put_f64(os, v);
}

Field read_cfld(const std::string& path, const DomainSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MeshError("missing-input: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::strncmp(magic, "CFLD", 4) != 0)
    throw MeshError("bad CFLD magic in " + path);
  unsigned char version;
  is.read(reinterpret_cast<char*>(&version), 1);
  if (version != 1) throw MeshError("unsupported CFLD version");
  const std::uint32_t nr = get_u32(is), nt = get_u32(is);
  if (!is || nr < 2 || nt < 2 || nr > (1u << 20) || nt > (1u << 20))
    throw MeshError("bad CFLD dims in " + path);
  std::vector<double> r(nr), th(nt), vals(static_cast<std::size_t>(nr) * nt);
  for (auto& x : r) x = get_f64(is);
  for (auto& x : th) x = get_f64(is);
  for (auto& x : vals) x = get_f64(is);
  if (!is) throw MeshError("truncated CFLD file " + path);
  auto mesh = std::make_shared<Mesh>(spec, std::move(r), std::move(th));
  return Field(mesh, FieldKind::SignedLinearized, std::move(vals));
}

}  // namespace fbc
