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
 * @brief Two-timescale control problem data: boxes, dynamics, running cost.
 *
 * The controlled system is
 *   eps * y' = f(u, y, z),   z' = g(u, y, z),   u in U,
 * with fast state y in Y, slow state z in Z and running cost G(u, y, z).
 * U, Y and Z are axis-aligned boxes.
 */

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace spavglp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ConstVecRef = Eigen::Ref<const Eigen::VectorXd>;
using VecRef = Eigen::Ref<Eigen::VectorXd>;

/// Membership slack used for every box test.
inline constexpr double kBoxTolerance = 1e-9;

class DomainViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Box {
  Vector lower;
  Vector upper;

  Box() = default;
  Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size())
      throw std::invalid_argument("Box: bound vectors differ in length");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
      if (!(lower[i] <= upper[i]))
        throw std::invalid_argument("Box: lower bound exceeds upper bound");
  }

  static Box cube(int dim, double lo, double hi) {
    return Box(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
  }

  int dim() const { return static_cast<int>(lower.size()); }

  /// Largest componentwise distance outside the box (0 when inside).
  double excess(ConstVecRef x) const {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
      worst = std::max(worst, lower[i] - x[i]);
      worst = std::max(worst, x[i] - upper[i]);
    }
    return worst;
  }

  bool contains(ConstVecRef x, double tol = kBoxTolerance) const {
    return x.size() == lower.size() && excess(x) <= tol;
  }

  Vector center() const { return 0.5 * (lower + upper); }
  Vector width() const { return upper - lower; }

  Vector clamp(ConstVecRef x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

/// Vector field writing its value into `out` (preallocated to the right size).
using VectorField =
    std::function<void(ConstVecRef u, ConstVecRef y, ConstVecRef z, VecRef out)>;
using CostFunction = std::function<double(ConstVecRef u, ConstVecRef y, ConstVecRef z)>;

struct ControlProblem {
  std::string name;
  int dim_u = 0;
  int dim_y = 0;
  int dim_z = 0;
  VectorField fast;  ///< f
  VectorField slow;  ///< g
  CostFunction cost; ///< G
  Box u_box;
  Box y_box;
  Box z_box;
  /// f does not depend on z.
  bool weakly_coupled = false;

  void fast_into(ConstVecRef u, ConstVecRef y, ConstVecRef z, VecRef out) const {
    fast(u, y, z, out);
  }
  void slow_into(ConstVecRef u, ConstVecRef y, ConstVecRef z, VecRef out) const {
    slow(u, y, z, out);
  }

  /**
   * Checks dimensions and samples the boxes to make sure f, g, G are finite
   * and deterministic, and that a weakly coupled f really ignores z.
   * Throws std::invalid_argument on any failure.
   */
  void validate(int samples = 64, unsigned seed = 7) const;
};

struct DynamicsValue {
  Vector f;
  Vector g;
  double G = 0.0;
};

inline void require_in_box(const Box& box, ConstVecRef x, const char* what) {
  if (x.size() != box.lower.size())
    throw DomainViolation(std::string(what) + ": dimension mismatch");
  if (box.excess(x) > kBoxTolerance)
    throw DomainViolation(std::string(what) + " outside its box");
}

/// Evaluates f, g and G at a point of U x Y x Z.
inline DynamicsValue eval_dynamics(const ControlProblem& problem, ConstVecRef u, ConstVecRef y,
                                   ConstVecRef z) {
  require_in_box(problem.u_box, u, "u");
  require_in_box(problem.y_box, y, "y");
  require_in_box(problem.z_box, z, "z");
  DynamicsValue out;
  out.f.resize(problem.dim_y);
  out.g.resize(problem.dim_z);
  problem.fast(u, y, z, out.f);
  problem.slow(u, y, z, out.g);
  out.G = problem.cost(u, y, z);
  return out;
}

namespace detail {

inline Vector sample_box(const Box& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector x(box.dim());
  for (int i = 0; i < box.dim(); ++i)
    x[i] = box.lower[i] + unit(rng) * (box.upper[i] - box.lower[i]);
  return x;
}

}  // namespace detail

inline void ControlProblem::validate(int samples, unsigned seed) const {
  if (dim_u < 1 || dim_y < 1 || dim_z < 1)
    throw std::invalid_argument(name + ": dimensions must be positive");
  if (u_box.dim() != dim_u || y_box.dim() != dim_y || z_box.dim() != dim_z)
    throw std::invalid_argument(name + ": box dimensions do not match");
  if (!fast || !slow || !cost) throw std::invalid_argument(name + ": missing f, g or G");

  std::mt19937_64 rng(seed);
  Vector f1(dim_y), f2(dim_y), g1(dim_z), g2(dim_z);
  for (int s = 0; s < samples; ++s) {
    const Vector u = detail::sample_box(u_box, rng);
    const Vector y = detail::sample_box(y_box, rng);
    const Vector z = detail::sample_box(z_box, rng);
    fast(u, y, z, f1);
    fast(u, y, z, f2);
    slow(u, y, z, g1);
    slow(u, y, z, g2);
    const double c1 = cost(u, y, z);
    const double c2 = cost(u, y, z);
    if (!f1.allFinite() || !g1.allFinite() || !std::isfinite(c1))
      throw std::invalid_argument(name + ": non-finite dynamics or cost");
    if (f1 != f2 || g1 != g2 || c1 != c2)
      throw std::invalid_argument(name + ": dynamics are not deterministic");
    if (weakly_coupled) {
      const Vector z2 = detail::sample_box(z_box, rng);
      fast(u, y, z2, f2);
      if ((f1 - f2).lpNorm<Eigen::Infinity>() > 1e-12)
        throw std::invalid_argument(name + ": flagged weakly coupled but f depends on z");
    }
  }
}

struct ContractionReport {
  bool fast_ok = false;
  /// max over samples of (f(u,y')-f(u,y''))^T (y'-y'') + |y'-y''|^2; <= 0 is contractive.
  double fast_margin = 0.0;
  /// Same quantity for g in z with (u, y) held fixed.
  double slow_margin = 0.0;
};

/**
 * Sampled sufficient check of the fast contraction condition with A1 = I.
 * Not a proof: it only looks at `samples` random triples.
 */
inline ContractionReport check_contraction(const ControlProblem& problem, int samples,
                                           unsigned long long seed) {
  if (samples < 1) throw std::invalid_argument("check_contraction: samples must be >= 1");
  std::mt19937_64 rng(seed);
  ContractionReport report;
  report.fast_margin = -std::numeric_limits<double>::infinity();
  report.slow_margin = -std::numeric_limits<double>::infinity();
  Vector fa(problem.dim_y), fb(problem.dim_y), ga(problem.dim_z), gb(problem.dim_z);
  for (int s = 0; s < samples; ++s) {
    const Vector u = detail::sample_box(problem.u_box, rng);
    const Vector y1 = detail::sample_box(problem.y_box, rng);
    const Vector y2 = detail::sample_box(problem.y_box, rng);
    const Vector z1 = detail::sample_box(problem.z_box, rng);
    const Vector z2 = detail::sample_box(problem.z_box, rng);
    problem.fast(u, y1, z1, fa);
    problem.fast(u, y2, z1, fb);
    const Vector dy = y1 - y2;
    report.fast_margin = std::max(report.fast_margin, (fa - fb).dot(dy) + dy.squaredNorm());
    problem.slow(u, y1, z1, ga);
    problem.slow(u, y1, z2, gb);
    const Vector dz = z1 - z2;
    report.slow_margin = std::max(report.slow_margin, (ga - gb).dot(dz) + dz.squaredNorm());
  }
  // f = -y + u hits the bound with equality; allow round-off.
  report.fast_ok = report.fast_margin <= 1e-12;
  return report;
}

/// The two-timescale oscillator example: fast filter y' = -y + u driving a damped slow oscillator.
inline ControlProblem make_gr_example() {
  ControlProblem p;
  p.name = "gr-example";
  p.dim_u = p.dim_y = p.dim_z = 2;
  p.fast = [](ConstVecRef u, ConstVecRef y, ConstVecRef, VecRef out) {
    out[0] = -y[0] + u[0];
    out[1] = -y[1] + u[1];
  };
  p.slow = [](ConstVecRef u, ConstVecRef y, ConstVecRef z, VecRef out) {
    out[0] = z[1];
    out[1] = -4.0 * z[0] - 0.3 * z[1] - y[0] * u[1] + y[1] * u[0];
  };
  p.cost = [](ConstVecRef u, ConstVecRef, ConstVecRef z) {
    return 0.1 * u[0] * u[0] + 0.1 * u[1] * u[1] - z[0] * z[0];
  };
  p.u_box = Box::cube(2, -1.0, 1.0);
  p.y_box = Box::cube(2, -1.0, 1.0);
  p.z_box = Box(Vector{{-2.5, -4.5}}, Vector{{2.5, 4.5}});
  p.weakly_coupled = true;
  return p;
}

/// One fast and one slow state, frozen slow dynamics, cost y^2. Minimum 0 at the origin.
inline ControlProblem make_toy_equilibrium() {
  ControlProblem p;
  p.name = "toy-equilibrium";
  p.dim_u = p.dim_y = p.dim_z = 1;
  p.fast = [](ConstVecRef u, ConstVecRef y, ConstVecRef, VecRef out) { out[0] = -y[0] + u[0]; };
  p.slow = [](ConstVecRef, ConstVecRef, ConstVecRef, VecRef out) { out[0] = 0.0; };
  p.cost = [](ConstVecRef, ConstVecRef y, ConstVecRef) { return y[0] * y[0]; };
  p.u_box = Box::cube(1, -1.0, 1.0);
  p.y_box = Box::cube(1, -1.0, 1.0);
  p.z_box = Box::cube(1, -1.0, 1.0);
  p.weakly_coupled = true;
  return p;
}

/// The example dynamics with its cost replaced by a constant.
inline ControlProblem make_constant_cost(double value) {
  ControlProblem p = make_gr_example();
  p.name = "constant-cost";
  p.cost = [value](ConstVecRef, ConstVecRef, ConstVecRef) { return value; };
  return p;
}

/// Problems selectable by name. Custom problems are added in code.
class ProblemRegistry {
 public:
  using Factory = std::function<ControlProblem()>;

  static ProblemRegistry& global() {
    static ProblemRegistry registry = [] {
      ProblemRegistry r;
      r.add("gr-example", make_gr_example);
      r.add("toy-equilibrium", make_toy_equilibrium);
      r.add("constant-cost", [] { return make_constant_cost(3.0); });
      return r;
    }();
    return registry;
  }

  void add(const std::string& key, Factory factory) { factories_[key] = std::move(factory); }

  bool contains(const std::string& key) const { return factories_.count(key) > 0; }

  ControlProblem make(const std::string& key) const {
    auto it = factories_.find(key);
    if (it == factories_.end()) throw std::invalid_argument("unknown problem '" + key + "'");
    return it->second();
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : factories_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, Factory> factories_;
};

}  // namespace spavglp
