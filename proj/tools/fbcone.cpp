// Batch front-end: parses flat key-value configs, runs the named
// experiment, and persists JSON summaries, CSV tables and CFLD field files
// with content hashes.  Exit codes: 0 success, 1 config error, 2 numerical
// failure, 3 assertion failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fbc/annulus.hpp"
#include "fbc/barrier.hpp"
#include "fbc/foliation.hpp"
#include "fbc/minimizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fbc;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AssertionFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- config

// flat key = value lines with optional [section] prefixes; keys are stored
// as "section.key"
class Config {
 public:
  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    Config cfg;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string()
                                      : s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      cfg.kv_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  std::string require(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
  }
  double num(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      return std::stod(it->second);
    } catch (...) {
      throw ConfigError("config key " + key + ": not a number");
    }
  }
  long integer(const std::string& key, long dflt) const {
    const double v = num(key, double(dflt));
    return static_cast<long>(v);
  }
  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    auto it = kv_.find(key);
    if (it == kv_.end()) return out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
  }
  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }

 private:
  std::map<std::string, std::string> kv_;
};

// ---------------------------------------------------------------- output

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// collects artifacts (all written atomically: temp file + rename), the
// per-assertion outcomes and the summary
class RunOutput {
 public:
  RunOutput(fs::path dir, bool strict) : dir_(std::move(dir)), strict_(strict) {
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  void write_text(const std::string& name, const std::string& content) {
    const fs::path tmp = dir_ / (name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      out << content;
    }
    fs::rename(tmp, dir_ / name);
    record(name, fnv1a(content));
  }

  // for library writers (CSV / CFLD) that take a path
  template <typename Writer>
  void write_with(const std::string& name, Writer&& writer) {
    const fs::path tmp = dir_ / (name + ".tmp");
    writer(tmp.string());
    const std::string bytes = read_bytes(tmp);
    fs::rename(tmp, dir_ / name);
    record(name, fnv1a(bytes));
  }

  void check(const std::string& label, bool ok) {
    assertions_.push_back({{"assertion", label}, {"passed", ok}});
    if (!ok) {
      ++failed_;
      if (strict_) throw AssertionFailure("assertion failed: " + label);
    }
  }

  int finalize(json results) {
    json summary;
    summary["results"] = std::move(results);
    summary["artifacts"] = artifacts_;
    summary["assertions"] = assertions_;
    summary["assertions_failed"] = failed_;
    write_text("summary.json", summary.dump(2) + "\n");
    return failed_ == 0 ? 0 : 3;
  }

  void error_record(int code, const std::string& kind,
                    const std::string& message) {
    json err{{"exit", code}, {"error", kind}, {"message", message}};
    write_text("error.json", err.dump(2) + "\n");
  }

 private:
  void record(const std::string& name, std::uint64_t hash) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(hash));
    artifacts_.push_back({{"file", name}, {"fnv1a", buf}});
  }

  fs::path dir_;
  bool strict_;
  json artifacts_ = json::array();
  json assertions_ = json::array();
  std::size_t failed_ = 0;
};

// ---------------------------------------------------------------- domain

DomainSpec domain_from(const Config& cfg) {
  const int n = int(cfg.integer("domain.n", 7));
  const std::string sym = cfg.str("domain.symmetry", "double");
  std::optional<double> theta0;
  if (cfg.has("domain.theta0")) theta0 = cfg.num("domain.theta0", 0.0);
  const Side side =
      cfg.str("domain.side", "below") == "above" ? Side::Above : Side::Below;
  if (sym == "single") return DomainSpec::single_cap(n, theta0, side);
  const int p = int(cfg.integer("domain.p", 3));
  const int q = int(cfg.integer("domain.q", 2));
  return DomainSpec::double_rotation(n, p, q, theta0, side);
}

// solve_degree_one needs the aperture; search for it when the config does
// not pin one
HomogeneousSolution solve_cone(DomainSpec spec,
                               const SpectralOptions& opt = {}) {
  if (!spec.theta0) spec.theta0 = find_critical_aperture(spec, opt);
  return solve_degree_one(spec, opt);
}

// ------------------------------------------------------------ experiments

int run_eigen(const Config& cfg, RunOutput& out) {
  SpectralOptions opt;
  opt.cells = std::size_t(cfg.integer("eigen.cells", 8192));
  auto sol = solve_cone(domain_from(cfg), opt);
  auto sd = compute_spectral(sol, opt);

  out.write_text("spectral.json", sd.to_json() + "\n");
  out.write_with("profiles.csv",
                 [&](const std::string& p) { sd.write_csv(sol, p); });

  const double tol = cfg.num("expect.tol", 1e-6);
  if (cfg.has("expect.theta0"))
    out.check("theta0", std::abs(sd.theta0 - cfg.num("expect.theta0", 0)) <=
                            tol * std::abs(sd.theta0));
  if (cfg.has("expect.h1"))
    out.check("h1", std::abs(sd.H1 - cfg.num("expect.h1", 0)) <=
                        tol * std::abs(sd.H1));
  if (cfg.has("expect.lambda"))
    out.check("lambda", std::abs(sd.lambda - cfg.num("expect.lambda", 0)) <=
                            tol * std::abs(sd.lambda));
  if (cfg.has("expect.stable"))
    out.check("stable",
              sd.stable == (cfg.str("expect.stable", "true") == "true"));

  json res{{"theta0", sd.theta0}, {"H1", sd.H1},       {"lambda", sd.lambda},
           {"gamma_minus", sd.gamma_minus},
           {"gamma_plus", sd.gamma_plus},              {"stable", sd.stable}};
  return out.finalize(res);
}

int run_minimize(const Config& cfg, RunOutput& out) {
  const std::size_t nr = std::size_t(cfg.integer("mesh.nr", 128));
  const std::size_t nt = std::size_t(cfg.integer("mesh.ntheta", 128));
  const double rmax = cfg.num("mesh.rmax", 1.0);
  const std::string data = cfg.str("minimize.data", "cone");

  MeshPtr m;
  Field exact = [&] {
    if (data == "zero") {
      auto spec = domain_from(cfg);
      if (!spec.theta0) spec.theta0 = 0.5 * spec.theta_max();
      m = build_mesh(spec, nr, nt, 0.0, rmax);
      return Field(m, FieldKind::NonnegMinimizer);
    }
    auto sol = solve_cone(domain_from(cfg));
    m = build_mesh(sol.domain, nr, nt, 0.0, rmax);
    return sol.evaluate(m);
  }();

  auto res = minimize(exact, EnergyConfig{});
  out.write_with("field.cfld",
                 [&](const std::string& p) { write_cfld(res.u, p); });
  {
    std::ostringstream csv;
    csv << "stage,energy\n";
    for (std::size_t k = 0; k < res.energy_history.size(); ++k)
      csv << k << ',' << res.energy_history[k] << '\n';
    out.write_text("energy.csv", csv.str());
  }

  double sup = 0.0;
  for (std::size_t k = 0; k < exact.values().size(); ++k)
    sup = std::max(sup,
                   std::abs(res.u.values()[k] - exact.values()[k]));
  if (cfg.has("expect.sup_tol"))
    out.check("sup_distance", sup <= cfg.num("expect.sup_tol", 0.0));

  json r{{"energy", res.energy_history.back()},
         {"converged", res.converged},
         {"sup_distance_to_data", sup},
         {"max_gradient", res.max_gradient}};
  return out.finalize(r);
}

int run_perturb(const Config& cfg, RunOutput& out) {
  auto sol = solve_cone(domain_from(cfg));
  PerturbConfig pc;
  pc.eps = cfg.list("perturb.eps");
  if (pc.eps.empty()) pc.eps = {0.1, 0.05};
  pc.target_radius = cfg.num("perturb.target_radius", 2.0);
  pc.nr = pc.ntheta = std::size_t(cfg.integer("mesh.nr", 96));
  pc.target_nr = pc.target_ntheta =
      std::size_t(cfg.integer("mesh.target_nr", 96));
  pc.stop_tol = cfg.num("perturb.stop_tol", 0.05);
  const PerturbSide side = cfg.str("perturb.side", "above") == "below"
                               ? PerturbSide::Below
                               : PerturbSide::Above;

  const double bc = cfg.num("perturb.bump_center", 0.55);
  const double bw = cfg.num("perturb.bump_width", 0.35);
  auto bump = [bc, bw](double th) {
    const double x = (th - bc) / bw;
    return std::abs(x) < 1.0 ? std::exp(-1.0 / (1.0 - x * x)) * std::exp(1.0)
                             : 0.0;
  };

  auto res = construct_perturbed(sol, bump, side, pc);
  out.write_with("field.cfld",
                 [&](const std::string& p) { write_cfld(res.u, p); });
  {
    std::ostringstream csv;
    csv << "eps,r_j,energy,sup_diff,step_change\n";
    for (const auto& d : res.diagnostics)
      csv << d.eps << ',' << d.r_j << ',' << d.energy << ',' << d.sup_diff
          << ',' << d.step_change << '\n';
    out.write_text("diagnostics.csv", csv.str());
  }
  if (!res.converged && cfg.str("perturb.require_converged", "false") ==
                            "true") {
    out.error_record(2, "nonconvergence",
                     "perturbation sequence did not reach stop_tol");
    return 2;
  }
  json r{{"converged", res.converged}, {"warning", res.warning},
         {"steps", res.diagnostics.size()}};
  return out.finalize(r);
}

int run_annulus(const Config& cfg, RunOutput& out) {
  auto sol = solve_cone(domain_from(cfg));
  auto sd = compute_spectral(sol);

  AnnulusProblem p;
  p.spectral = sd;
  p.r_in = cfg.num("annulus.r_in", 1.0);
  p.r_out = cfg.num("annulus.r_out", 2.0);
  p.nr = std::size_t(cfg.integer("mesh.nr", 128));
  p.ntheta = std::size_t(cfg.integer("mesh.ntheta", 128));
  const std::string pk = cfg.str("annulus.perturbation", "none");
  if (pk == "bounded")
    p.perturbation = PerturbationModel::bounded(cfg.num("annulus.delta", 0.1));
  else if (pk == "power")
    p.perturbation = PerturbationModel::power_decay(
        cfg.num("annulus.delta", 0.1), cfg.num("annulus.alpha0", 0.5));
  const Branch br =
      cfg.str("annulus.data", "vminus") == "vplus" ? Branch::Plus
                                                   : Branch::Minus;
  p.inner_data = [&, br](double th) { return eval_V_at(sd, br, p.r_in, th); };
  p.outer_data = [&, br](double th) { return eval_V_at(sd, br, p.r_out, th); };

  Field v = solve_annulus(p);
  out.write_with("solution.cfld",
                 [&](const std::string& path) { write_cfld(v, path); });

  json r{{"r_in", p.r_in}, {"r_out", p.r_out}};
  if (pk == "none") {
    double err = 0.0;
    const Mesh& m = v.mesh();
    for (std::size_t i = 0; i < m.nr(); ++i)
      for (std::size_t j = 0; j < m.ntheta(); ++j)
        err = std::max(err, std::abs(v(i, j) - eval_V_at(sd, br, m.r(i),
                                                         m.theta(j))));
    r["reproduction_error"] = err;
    if (cfg.has("expect.reproduction_tol"))
      out.check("reproduction",
                err <= cfg.num("expect.reproduction_tol", 0.0));
  }
  return out.finalize(r);
}

int run_verify(const Config& cfg, RunOutput& out, unsigned seed) {
  const std::string field_path = cfg.require("verify.field");
  if (!fs::exists(field_path)) {
    out.error_record(1, "missing-input",
                     "field file not found: " + field_path);
    return 1;
  }
  auto sol = solve_cone(domain_from(cfg));
  Field u = read_cfld(field_path, sol.domain);
  Field u0 = sol.evaluate(u.mesh_ptr());

  json r;
  // ordering against the cone (side above: cone below the field)
  const double h =
      (u.mesh().r_max() - u.mesh().r_min()) / double(u.mesh().nr() - 1);
  auto ord = ordering_check(u0, u0, u, cfg.num("verify.ordering_tol", 2 * h));
  r["ordering"] = json::parse(ord.to_json());
  out.check("ordering", ord.ok);

  // ray monotonicity over a configured annulus
  Region reg = Region::all(u.mesh());
  reg.r_lo = cfg.num("verify.r_lo", 0.5 * u.mesh().r_max());
  reg.r_hi = cfg.num("verify.r_hi", u.mesh().r_max());
  auto ray = ray_monotonicity(u, reg);
  r["ray_monotonicity"] = json::parse(ray.to_json());
  if (cfg.str("verify.require_ray", "false") == "true")
    out.check("ray_monotonicity", ray.passed);

  // free boundary graph at configured radii plus seeded random ones
  std::vector<double> radii = cfg.list("verify.radii");
  std::mt19937 rng(seed);
  const long extra = cfg.integer("verify.random_radii", 0);
  std::uniform_real_distribution<double> ur(reg.r_lo,
                                            0.95 * u.mesh().r_max());
  for (long k = 0; k < extra; ++k) radii.push_back(ur(rng));
  if (!radii.empty()) {
    auto g = extract_fb_graph(u, sol, radii);
    out.write_with("fb_graph.csv",
                   [&](const std::string& p) { write_csv(g, p); });
    r["fb_graph_failures"] = g.failures();
    bool outward = true;
    for (const auto& s : g.samples)
      if (s.ok && s.psi <= 0.0) outward = false;
    if (cfg.str("verify.require_outward", "false") == "true")
      out.check("fb_outward", outward && g.failures() == 0);
  }
  return out.finalize(r);
}

int run_barrier(const Config& cfg, RunOutput& out) {
  auto sol = solve_cone(domain_from(cfg));
  auto sd = compute_spectral(sol);
  auto m = build_mesh(sol.domain, std::size_t(cfg.integer("mesh.nr", 128)),
                      std::size_t(cfg.integer("mesh.ntheta", 128)),
                      cfg.num("annulus.r_in", 1.0),
                      cfg.num("annulus.r_out", 2.0), 0.0, sd.theta0);
  const double gamma = cfg.num("barrier.gamma", 0.5 * sd.gamma_minus);
  const double astar = min_amplitude_A(sd, sol, gamma).A;
  auto params = BarrierParams::make(sd, gamma, 2.0 * astar);
  auto rep = check_barrier(sd, sol, params, m, cfg.num("barrier.tol", 1e-6));
  out.write_text("barrier.json", rep.to_json() + "\n");
  out.check("barrier", rep.passed);
  json r{{"gamma", gamma}, {"A", 2.0 * astar}, {"passed", rep.passed}};
  return out.finalize(r);
}

// one row of the aperture/spectral landscape
struct SweepRow {
  int n, p, q;
  bool ok = false;
  std::string error;
  double theta0 = 0, H1 = 0, lambda = 0, gm = 0, gp = 0;
  bool stable = false;
};

int run_sweep(const Config& cfg, RunOutput& out) {
  const auto ns = cfg.list("sweep.n");
  const std::size_t cells = std::size_t(cfg.integer("sweep.cells", 4096));

  std::vector<std::tuple<int, int, int>> grid;  // (n, p, q)
  for (double nd : ns) {
    const int n = int(nd);
    for (int p = 0; p <= n - 2; ++p) grid.emplace_back(n, p, n - 2 - p);
  }

  auto compute = [cells](int n, int p, int q) {
    SweepRow row{n, p, q};
    try {
      SpectralOptions opt;
      opt.cells = cells;
      // degenerate rotation factors reduce to the single cap, whose
      // degree-1-critical aperture is the half-space pi / 2
      const DomainSpec spec =
          (p == 0 || q == 0)
              ? DomainSpec::single_cap(n, 1.5707963267948966)
              : DomainSpec::double_rotation(n, p, q);
      auto sol = solve_cone(spec, opt);
      auto sd = compute_spectral(sol, opt);
      row.ok = true;
      row.theta0 = sd.theta0;
      row.H1 = sd.H1;
      row.lambda = sd.lambda;
      row.gm = sd.gamma_minus;
      row.gp = sd.gamma_plus;
      row.stable = sd.stable;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    return row;
  };

  std::vector<std::future<SweepRow>> futs;
  for (auto [n, p, q] : grid)
    futs.push_back(std::async(std::launch::async, compute, n, p, q));

  std::ostringstream csv;
  csv << "n,p,q,status,theta0,H1,lambda,gamma_minus,gamma_plus,stable\n";
  bool any_stable_n7 = false;
  for (auto& f : futs) {
    SweepRow row = f.get();
    if (row.ok) {
      csv << row.n << ',' << row.p << ',' << row.q << ",ok," << row.theta0
          << ',' << row.H1 << ',' << row.lambda << ',' << row.gm << ','
          << row.gp << ',' << (row.stable ? 1 : 0) << '\n';
      if (row.n == 7 && row.stable && row.H1 > 0.0) any_stable_n7 = true;
    } else {
      csv << row.n << ',' << row.p << ',' << row.q << ",invalid-spec,,,,,,\n";
    }
  }
  out.write_text("sweep.csv", csv.str());
  if (cfg.str("expect.stable_n7", "false") == "true")
    out.check("stable_entry_in_n7", any_stable_n7);
  json r{{"rows", grid.size()}};
  return out.finalize(r);
}

int dispatch(const Config& cfg, RunOutput& out, unsigned seed) {
  const std::string kind = cfg.require("kind");
  if (kind == "eigen") return run_eigen(cfg, out);
  if (kind == "minimize") return run_minimize(cfg, out);
  if (kind == "perturb") return run_perturb(cfg, out);
  if (kind == "annulus") return run_annulus(cfg, out);
  if (kind == "verify") return run_verify(cfg, out, seed);
  if (kind == "barrier") return run_barrier(cfg, out);
  if (kind == "sweep") return run_sweep(cfg, out);
  throw ConfigError("unknown experiment kind: " + kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"free boundary cone laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  unsigned seed = 0;
  long resolution = 0;
  bool strict = false;
  for (const char* name : {"run", "sweep", "verify"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("config", config_path, "config file")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "sampling seed");
    sub->add_option("--resolution", resolution, "override mesh resolution");
    sub->add_flag("--strict", strict, "assertion failures fatal");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string sub = app.get_subcommands().front()->get_name();

  std::unique_ptr<RunOutput> out;
  try {
    Config cfg = Config::load(config_path);
    if (sub == "sweep") cfg.set("kind", "sweep");
    if (sub == "verify") cfg.set("kind", "verify");
    if (resolution > 0) {
      const std::string r = std::to_string(resolution);
      cfg.set("mesh.nr", r);
      cfg.set("mesh.ntheta", r);
      cfg.set("eigen.cells", r);
      cfg.set("sweep.cells", r);
    }
    out = std::make_unique<RunOutput>(out_dir, strict);
    return dispatch(cfg, *out, seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    if (out) out->error_record(1, "config-error", e.what());
    return 1;
  } catch (const AssertionFailure& e) {
    std::fprintf(stderr, "%s\n", e.what());
    if (out) out->error_record(3, "assertion-failure", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    if (out) out->error_record(2, "numerical-failure", e.what());
    return 2;
  }
}
