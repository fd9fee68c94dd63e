/*
 Copyright 2026 The spavglp Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

/**
 * @file
 * @brief Run configuration and JSON serialization of solutions and certificates.
 *
 * Doubles are written in shortest round-trip form, so a saved certificate
 * reloads bit for bit and answers queries without re-solving its entries.
 * Wall-clock data lives only under "metadata".
 */

#include "averaging.hpp"
#include "sim.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace spavglp {

using Json = nlohmann::ordered_json;

/// A configuration problem, tagged with the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error(field.empty() ? message : "config field '" + field + "': " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct RunConfig {
  std::string problem_key = "gr-example";
  int degree_y = 5;
  int degree_z = 5;
  GridSpec grid;
  double epsilon = 0.01;
  /// Simulation horizon T.
  double horizon = 100.0;
  double warmup = 20.0;
  std::optional<double> delta;
  /// RK4 step of the perturbed system; default min(eps / 20, 1e-3).
  std::optional<double> dt;
  double averaged_dt = 0.1;
  AssociatedSettings associated;
  std::int64_t seed = 0;
  std::string output_dir = "out";
  /// Start of the slow state. Without it the support point nearest z_target
  /// is used, and without that the heaviest support point.
  std::optional<Vector> z0;
  std::optional<Vector> z_target;
  bool refine = false;
  int threads = 0;

  ScheduleParams schedule() const {
    ScheduleParams s = ScheduleParams::defaults(epsilon);
    if (delta) s.delta = *delta;
    if (dt) s.dt = *dt;
    return s;
  }

  int worker_count() const { return threads > 0 ? threads : default_threads(); }

  void validate() const {
    auto positive = [](const char* field, double v) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be positive");
    };
    if (problem_key.empty()) throw ConfigError("problem_key", "must not be empty");
    if (degree_y < 1) throw ConfigError("degree_y", "must be at least 1");
    if (degree_z < 1) throw ConfigError("degree_z", "must be at least 1");
    if (grid.points_u < 2) throw ConfigError("grid.points_u", "must be at least 2");
    if (grid.points_y < 2) throw ConfigError("grid.points_y", "must be at least 2");
    if (grid.points_z < 2) throw ConfigError("grid.points_z", "must be at least 2");
    positive("epsilon", epsilon);
    positive("horizon", horizon);
    positive("warmup", warmup);
    if (!(warmup < horizon)) throw ConfigError("warmup", "must be below the horizon");
    if (delta) positive("delta", *delta);
    if (dt) positive("dt", *dt);
    positive("averaged_dt", averaged_dt);
    positive("associated.horizon", associated.horizon);
    positive("associated.warmup", associated.warmup);
    positive("associated.dtau", associated.dtau);
    try {
      associated.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("associated", e.what());
    }
    if (seed < 0) throw ConfigError("seed", "must be nonnegative");
    if (threads < 0) throw ConfigError("threads", "must be nonnegative");
    if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
    try {
      schedule().validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(delta ? "delta" : "epsilon", e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Small JSON helpers.

inline Json to_json(ConstVecRef v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

namespace detail {

inline const Json& member(const Json& obj, const std::string& path, const char* key) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(path.empty() ? key : path + "." + key, "is missing");
  return *it;
}

inline std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

inline double as_number(const Json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "expected a number");
  return j.get<double>();
}

inline std::int64_t as_integer(const Json& j, const std::string& field) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) {
    const double d = j.get<double>();
    if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  throw ConfigError(field, "expected an integer");
}

inline int as_int(const Json& j, const std::string& field) {
  const std::int64_t v = as_integer(j, field);
  if (v < -1000000000 || v > 1000000000) throw ConfigError(field, "is out of range");
  return static_cast<int>(v);
}

inline std::string as_string(const Json& j, const std::string& field) {
  if (!j.is_string()) throw ConfigError(field, "expected a string");
  return j.get<std::string>();
}

inline bool as_bool(const Json& j, const std::string& field) {
  if (!j.is_boolean()) throw ConfigError(field, "expected true or false");
  return j.get<bool>();
}

inline Vector as_vector(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = as_number(j[i], field + "[" + std::to_string(i) + "]");
  return v;
}

inline void reject_unknown(const Json& obj, const std::string& path, const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(path.empty() ? it.key() : path + "." + it.key(), "unknown field");
}

inline Matrix columns_from_json(const Json& j, const std::string& field, int dim) {
  if (!j.is_array()) throw ConfigError(field, "expected an array");
  Matrix m(dim, static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    const Vector v = as_vector(j[k], field);
    if (v.size() != dim) throw ConfigError(field, "point has the wrong dimension");
    m.col(static_cast<Eigen::Index>(k)) = v;
  }
  return m;
}

inline Json measure_to_json(const DiscreteMeasure& m) {
  Json a = Json::array();
  for (Eigen::Index j = 0; j < m.size(); ++j)
    a.push_back(Json{{"u", to_json(m.u.col(j))}, {"y", to_json(m.y.col(j))}, {"q", m.weights[j]}});
  return a;
}

inline DiscreteMeasure measure_from_json(const Json& a, const std::string& field, int du, int dy, ConstVecRef z) {
  if (!a.is_array()) throw ConfigError(field, "expected an array");
  DiscreteMeasure m;
  const auto n = static_cast<Eigen::Index>(a.size());
  m.u.resize(du, n);
  m.y.resize(dy, n);
  m.z.resize(z.size(), n);
  m.weights.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Json& atom = a[static_cast<std::size_t>(j)];
    const Vector u = as_vector(member(atom, field, "u"), field + ".u");
    const Vector y = as_vector(member(atom, field, "y"), field + ".y");
    if (u.size() != du || y.size() != dy) throw ConfigError(field, "atom has the wrong dimension");
    m.u.col(j) = u;
    m.y.col(j) = y;
    m.z.col(j) = z;
    m.weights[j] = as_number(member(atom, field, "q"), field + ".q");
  }
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// RunConfig.

inline Json to_json(const RunConfig& c) {
  Json j;
  j["problem_key"] = c.problem_key;
  j["degree_y"] = c.degree_y;
  j["degree_z"] = c.degree_z;
  j["grid"] = Json{{"points_u", c.grid.points_u}, {"points_y", c.grid.points_y}, {"points_z", c.grid.points_z}};
  j["epsilon"] = c.epsilon;
  j["horizon"] = c.horizon;
  j["warmup"] = c.warmup;
  if (c.delta) j["delta"] = *c.delta;
  if (c.dt) j["dt"] = *c.dt;
  j["averaged_dt"] = c.averaged_dt;
  j["associated"] = Json{{"horizon", c.associated.horizon},
                         {"warmup", c.associated.warmup},
                         {"dtau", c.associated.dtau}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  if (c.z0) j["z0"] = to_json(*c.z0);
  if (c.z_target) j["z_target"] = to_json(*c.z_target);
  j["refine"] = c.refine;
  j["threads"] = c.threads;
  return j;
}

/// Missing fields keep their defaults; unknown or mistyped fields throw ConfigError.
inline RunConfig config_from_json(const Json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  reject_unknown(j, "",
                 {"problem_key", "degree_y", "degree_z", "grid", "epsilon", "horizon", "warmup", "delta", "dt",
                  "averaged_dt", "associated", "seed", "output_dir", "z0", "z_target", "refine", "threads"});
  RunConfig c;
  auto has = [&](const char* k) { return j.contains(k); };
  if (has("problem_key")) c.problem_key = as_string(j["problem_key"], "problem_key");
  if (has("degree_y")) c.degree_y = as_int(j["degree_y"], "degree_y");
  if (has("degree_z")) c.degree_z = as_int(j["degree_z"], "degree_z");
  if (has("grid")) {
    const Json& g = j["grid"];
    if (!g.is_object()) throw ConfigError("grid", "expected an object");
    reject_unknown(g, "grid", {"points_u", "points_y", "points_z"});
    if (g.contains("points_u")) c.grid.points_u = as_int(g["points_u"], "grid.points_u");
    if (g.contains("points_y")) c.grid.points_y = as_int(g["points_y"], "grid.points_y");
    if (g.contains("points_z")) c.grid.points_z = as_int(g["points_z"], "grid.points_z");
  }
  if (has("epsilon")) c.epsilon = as_number(j["epsilon"], "epsilon");
  if (has("horizon")) c.horizon = as_number(j["horizon"], "horizon");
  if (has("warmup")) c.warmup = as_number(j["warmup"], "warmup");
  if (has("delta") && !j["delta"].is_null()) c.delta = as_number(j["delta"], "delta");
  if (has("dt") && !j["dt"].is_null()) c.dt = as_number(j["dt"], "dt");
  if (has("averaged_dt")) c.averaged_dt = as_number(j["averaged_dt"], "averaged_dt");
  if (has("associated")) {
    const Json& a = j["associated"];
    if (!a.is_object()) throw ConfigError("associated", "expected an object");
    reject_unknown(a, "associated", {"horizon", "warmup", "dtau"});
    if (a.contains("horizon")) c.associated.horizon = as_number(a["horizon"], "associated.horizon");
    if (a.contains("warmup")) c.associated.warmup = as_number(a["warmup"], "associated.warmup");
    if (a.contains("dtau")) c.associated.dtau = as_number(a["dtau"], "associated.dtau");
  }
  if (has("seed")) c.seed = as_integer(j["seed"], "seed");
  if (has("output_dir")) c.output_dir = as_string(j["output_dir"], "output_dir");
  if (has("z0") && !j["z0"].is_null()) c.z0 = as_vector(j["z0"], "z0");
  if (has("z_target") && !j["z_target"].is_null()) c.z_target = as_vector(j["z_target"], "z_target");
  if (has("refine")) c.refine = as_bool(j["refine"], "refine");
  if (has("threads")) c.threads = as_int(j["threads"], "threads");
  c.validate();
  return c;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("", "cannot read " + path);
  try {
    return Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", path + " is not valid JSON: " + e.what());
  }
}

inline RunConfig load_config(const std::string& path) { return config_from_json(read_json_file(path)); }

/// Writes pretty-printed JSON with a trailing newline.
inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("error writing " + path);
}

/// UTC time as YYYY-MM-DDTHH:MM:SSZ.
inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// The document without its metadata member, for comparisons across runs.
inline Json without_metadata(Json j) {
  if (j.is_object()) j.erase("metadata");
  return j;
}

// ---------------------------------------------------------------------------
// Solutions and certificates.

/// What a saved solution was computed from.
struct SolutionSource {
  std::string problem_key;
  int degree_y = 0;
  int degree_z = 0;
  GridSpec grid;
};

namespace detail {

inline Json source_to_json(const SolutionSource& s) {
  return Json{{"problem_key", s.problem_key},
              {"degree_y", s.degree_y},
              {"degree_z", s.degree_z},
              {"grid", Json{{"points_u", s.grid.points_u}, {"points_y", s.grid.points_y},
                            {"points_z", s.grid.points_z}}}};
}

inline SolutionSource source_from_json(const Json& j) {
  SolutionSource s;
  s.problem_key = as_string(member(j, "", "problem_key"), "problem_key");
  s.degree_y = as_int(member(j, "", "degree_y"), "degree_y");
  s.degree_z = as_int(member(j, "", "degree_z"), "degree_z");
  const Json& g = member(j, "", "grid");
  s.grid.points_u = as_int(member(g, "grid", "points_u"), "grid.points_u");
  s.grid.points_y = as_int(member(g, "grid", "points_y"), "grid.points_y");
  s.grid.points_z = as_int(member(g, "grid", "points_z"), "grid.points_z");
  return s;
}

inline LpStatus status_from_string(const std::string& s) {
  if (s == "Optimal") return LpStatus::Optimal;
  if (s == "Infeasible") return LpStatus::Infeasible;
  if (s == "Unbounded") return LpStatus::Unbounded;
  throw ConfigError("status", "unknown status '" + s + "'");
}

inline Json index_list(const std::vector<Eigen::Index>& v) {
  Json a = Json::array();
  for (auto i : v) a.push_back(static_cast<std::int64_t>(i));
  return a;
}

}  // namespace detail

/// solution.json. sigma_by_z lists sigma(z_k) at every support point.
inline Json solution_to_json(const StructuredSolution& sol, const SolutionSource& src) {
  Json j;
  j["format"] = "spavglp-solution";
  j["version"] = 1;
  j["source"] = detail::source_to_json(src);
  j["status"] = to_string(sol.status);
  j["outer_value"] = sol.outer_value;
  j["theta"] = sol.certificate ? sol.certificate->theta() : sol.outer_value;
  j["lambda"] = sol.certificate ? to_json(sol.certificate->lambda()) : Json::array();
  Json groups = Json::array();
  for (const auto& g : sol.groups)
    groups.push_back(Json{{"z", to_json(g.z)}, {"p", g.p}, {"inner", detail::measure_to_json(g.inner)}});
  j["groups"] = groups;
  Json sigma = Json::array();
  if (sol.certificate)
    for (const auto& g : sol.groups) {
      const auto e = sol.certificate->entry(g.z);
      sigma.push_back(Json{{"z", to_json(g.z)}, {"sigma", e->sigma}});
    }
  j["sigma_by_z"] = sigma;
  j["rank_warning"] = sol.rank_warning;
  j["warnings"] = sol.warnings;
  j["stats"] = Json{{"rounds", sol.stats.rounds},
                    {"master_columns", static_cast<std::int64_t>(sol.stats.master_columns)},
                    {"pricing_points", static_cast<std::int64_t>(sol.stats.pricing_points)},
                    {"inner_solves", static_cast<std::int64_t>(sol.stats.inner_solves)},
                    {"value_before_refinement", sol.stats.value_before_refinement},
                    {"lower_bound", sol.stats.lower_bound}};
  j["metadata"] = Json{{"created", utc_timestamp()}, {"seconds", sol.stats.seconds}};
  return j;
}

/// certificate.json: lambda, theta and every cached associated-LP entry.
inline Json certificate_to_json(const DualCertificate& cert, const SolutionSource& src) {
  Json j;
  j["format"] = "spavglp-certificate";
  j["version"] = 1;
  j["source"] = detail::source_to_json(src);
  j["theta"] = cert.theta();
  j["lambda"] = to_json(cert.lambda());
  std::set<DualCertificate::Key> anchors;
  for (const auto& a : cert.anchors()) anchors.insert(DualCertificate::key(a->z));
  Json entries = Json::array();
  for (const auto& e : cert.entries())
    entries.push_back(Json{{"z", to_json(e->z)},
                           {"anchor", anchors.count(DualCertificate::key(e->z)) > 0},
                           {"sigma", e->sigma},
                           {"omega", to_json(e->omega)},
                           {"basis", detail::index_list(e->basis)},
                           {"measure", detail::measure_to_json(e->measure)}});
  j["entries"] = entries;
  j["metadata"] = Json{{"created", utc_timestamp()}};
  return j;
}

inline std::shared_ptr<DualCertificate> certificate_from_json(const Json& j,
                                                              ProblemRegistry& registry = ProblemRegistry::global(),
                                                              const SimplexOptions& lp_options = {}) {
  using namespace detail;
  if (!j.is_object() || j.value("format", "") != "spavglp-certificate")
    throw ConfigError("format", "not a certificate file");
  const SolutionSource src = source_from_json(member(j, "", "source"));
  if (!registry.contains(src.problem_key)) throw ConfigError("source.problem_key", "unknown problem");
  const ControlProblem p = registry.make(src.problem_key);
  auto inner = std::make_shared<InnerProblem>(p, src.grid, MonomialBasis(p.dim_y, src.degree_y),
                                              MonomialBasis(p.dim_z, src.degree_z), lp_options);
  const Vector lambda = as_vector(member(j, "", "lambda"), "lambda");
  if (lambda.size() != inner->basis_z().count()) throw ConfigError("lambda", "has the wrong length");
  auto cert = std::make_shared<DualCertificate>(inner, lambda, as_number(member(j, "", "theta"), "theta"));
  const Json& entries = member(j, "", "entries");
  if (!entries.is_array()) throw ConfigError("entries", "expected an array");
  for (const Json& ej : entries) {
    CertificateEntry e;
    e.z = as_vector(member(ej, "entries", "z"), "entries.z");
    if (e.z.size() != p.dim_z) throw ConfigError("entries.z", "has the wrong dimension");
    e.sigma = as_number(member(ej, "entries", "sigma"), "entries.sigma");
    e.omega = as_vector(member(ej, "entries", "omega"), "entries.omega");
    if (e.omega.size() != inner->basis_y().count()) throw ConfigError("entries.omega", "has the wrong length");
    for (const Json& b : member(ej, "entries", "basis")) e.basis.push_back(as_integer(b, "entries.basis"));
    e.measure = measure_from_json(member(ej, "entries", "measure"), "entries.measure", p.dim_u, p.dim_y, e.z);
    cert->insert(e, as_bool(member(ej, "entries", "anchor"), "entries.anchor"));
  }
  return cert;
}

struct LoadedSolution {
  SolutionSource source;
  StructuredSolution solution;
};

/// Rebuilds a StructuredSolution; the certificate is attached when given.
inline LoadedSolution solution_from_json(const Json& j, std::shared_ptr<DualCertificate> certificate = nullptr) {
  using namespace detail;
  if (!j.is_object() || j.value("format", "") != "spavglp-solution")
    throw ConfigError("format", "not a solution file");
  LoadedSolution out;
  out.source = source_from_json(member(j, "", "source"));
  if (!ProblemRegistry::global().contains(out.source.problem_key))
    throw ConfigError("source.problem_key", "unknown problem");
  const ControlProblem p = ProblemRegistry::global().make(out.source.problem_key);
  StructuredSolution& s = out.solution;
  s.status = status_from_string(as_string(member(j, "", "status"), "status"));
  s.outer_value = as_number(member(j, "", "outer_value"), "outer_value");
  for (const Json& g : member(j, "", "groups")) {
    ZGroup zg;
    zg.z = as_vector(member(g, "groups", "z"), "groups.z");
    if (zg.z.size() != p.dim_z) throw ConfigError("groups.z", "has the wrong dimension");
    zg.p = as_number(member(g, "groups", "p"), "groups.p");
    zg.inner = measure_from_json(member(g, "groups", "inner"), "groups.inner", p.dim_u, p.dim_y, zg.z);
    s.groups.push_back(std::move(zg));
  }
  s.rank_warning = j.value("rank_warning", false);
  if (j.contains("warnings"))
    for (const Json& w : j["warnings"]) s.warnings.push_back(as_string(w, "warnings"));
  if (j.contains("stats")) {
    const Json& st = j["stats"];
    s.stats.rounds = st.value("rounds", 0);
    s.stats.master_columns = st.value("master_columns", 0);
    s.stats.pricing_points = st.value("pricing_points", 0);
    s.stats.inner_solves = st.value("inner_solves", 0);
    s.stats.value_before_refinement = st.value("value_before_refinement", s.outer_value);
    s.stats.lower_bound = st.value("lower_bound", 0.0);
  }
  if (certificate) {
    if (certificate->problem().name != p.name) throw ConfigError("source.problem_key", "certificate is for another problem");
    s.certificate = std::move(certificate);
  }
  return out;
}

/// certificate.json next to the given solution.json.
inline std::string certificate_path_for(const std::string& solution_path) {
  return (std::filesystem::path(solution_path).parent_path() / "certificate.json").string();
}

inline LoadedSolution load_solution(const std::string& solution_path) {
  const Json sj = read_json_file(solution_path);
  const std::string cpath = certificate_path_for(solution_path);
  auto cert = certificate_from_json(read_json_file(cpath));
  return solution_from_json(sj, cert);
}

}  // namespace spavglp
