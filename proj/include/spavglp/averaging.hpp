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
 * @brief The (N,M)-approximating averaged LP and its associated per-z LP.
 *
 * Measures live on uniform product grids over U x Y x Z. For a fixed z the
 * associated LP is
 *
 *   sigma(z) = min  sum_j mu_j [G + grad zeta(z)^T g](u_j, y_j, z)
 *              s.t. sum_j mu_j = 1,
 *                   sum_j mu_j grad phi_i(y_j)^T f(u_j, y_j, z) = 0,  i = 1..M,
 *                   mu >= 0.
 *
 * The averaged LP optimizes over mixtures sum_k p_k delta_(mu_k, z_k) with
 * mu_k feasible for the associated constraints at z_k and
 * sum_k p_k grad psi_i(z_k)^T g_bar(mu_k, z_k) = 0 for i = 1..N. It is solved
 * by Dantzig-Wolfe decomposition: the master has 1 + N rows and its columns
 * are (z, mu) pairs produced by pricing, and pricing at z is exactly the
 * associated LP above with zeta taken from the master duals. The final master
 * duals give zeta = sum lambda_i psi_i and theta; associated duals at z give
 * eta_z = sum omega_i phi_i and sigma(z).
 *
 * build_outer_lp() also offers the single flattened LP in which the fast
 * constraints are only imposed on the aggregate over z. It is a relaxation
 * (its value is a lower bound for the decomposed problem).
 */

#include "basis.hpp"
#include "lp.hpp"
#include "model.hpp"
#include "parallel.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace spavglp {

class GridTooCoarse : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  int points_u = 7;
  int points_y = 9;
  int points_z = 13;

  void validate() const {
    if (points_u < 2 || points_y < 2 || points_z < 2)
      throw std::invalid_argument("GridSpec: every grid needs at least 2 points per dimension");
  }
};

/// Uniform product grid over `box`, endpoints included; one point per column,
/// first coordinate varying slowest.
inline Matrix grid_points(const Box& box, int per_dim) {
  if (per_dim < 2) throw std::invalid_argument("grid_points: need at least 2 points per dimension");
  const int dim = box.dim();
  Eigen::Index total = 1;
  for (int d = 0; d < dim; ++d) total *= per_dim;
  Matrix pts(dim, total);
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  for (Eigen::Index k = 0; k < total; ++k) {
    for (int d = 0; d < dim; ++d) {
      const int i = idx[static_cast<std::size_t>(d)];
      // Endpoints are assigned directly so they are exact.
      pts(d, k) = i == per_dim - 1 ? box.upper[d]
                                   : box.lower[d] + (box.upper[d] - box.lower[d]) * i / (per_dim - 1);
    }
    for (int d = dim - 1; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < per_dim) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  return pts;
}

/// Finitely supported measure. Atoms are matrix columns; `z` has zero rows for
/// measures on U x Y.
struct DiscreteMeasure {
  Matrix u;
  Matrix y;
  Matrix z;
  Vector weights;

  Eigen::Index size() const { return weights.size(); }
  double total() const { return weights.sum(); }
  bool normalized(double tol = 1e-9) const {
    return (weights.size() == 0 || weights.minCoeff() >= 0.0) && std::abs(total() - 1.0) <= tol;
  }
};

struct InnerSolution {
  LpStatus status = LpStatus::Infeasible;
  Vector z;
  double sigma = 0.0;
  /// Coefficients of eta_z in the fast basis.
  Vector omega;
  DiscreteMeasure measure;
  /// Grid column of each atom of `measure`.
  std::vector<Eigen::Index> atoms;
  /// integral of g and G against the measure.
  Vector mean_g;
  double mean_G = 0.0;
  std::vector<Eigen::Index> basis;
};

/// Builds and solves the associated LP on the U x Y grid at any z.
class InnerProblem {
 public:
  InnerProblem(ControlProblem problem, GridSpec grids, MonomialBasis basis_y, MonomialBasis basis_z,
               SimplexOptions lp_options = {})
      : problem_(std::move(problem)),
        grids_(grids),
        basis_y_(std::move(basis_y)),
        basis_z_(std::move(basis_z)),
        lp_options_(std::move(lp_options)) {
    grids_.validate();
    if (basis_y_.dim() != problem_.dim_y || basis_z_.dim() != problem_.dim_z)
      throw std::invalid_argument("InnerProblem: basis dimension does not match the problem");
    u_points_ = grid_points(problem_.u_box, grids_.points_u);
    y_points_ = grid_points(problem_.y_box, grids_.points_y);
    y_gradients_.reserve(static_cast<std::size_t>(y_points_.cols()));
    for (Eigen::Index k = 0; k < y_points_.cols(); ++k) y_gradients_.push_back(basis_y_.gradients(y_points_.col(k)));
    if (cols() < rows())
      throw GridTooCoarse("associated LP has " + std::to_string(cols()) + " columns but " +
                          std::to_string(rows()) + " rows; refine the u/y grids");
  }

  const ControlProblem& problem() const { return problem_; }
  const GridSpec& grids() const { return grids_; }
  const MonomialBasis& basis_y() const { return basis_y_; }
  const MonomialBasis& basis_z() const { return basis_z_; }
  const Matrix& u_points() const { return u_points_; }
  const Matrix& y_points() const { return y_points_; }
  const SimplexOptions& lp_options() const { return lp_options_; }

  int rows() const { return 1 + basis_y_.count(); }
  Eigen::Index cols() const { return u_points_.cols() * y_points_.cols(); }
  Eigen::Index u_index(Eigen::Index col) const { return col % u_points_.cols(); }
  Eigen::Index y_index(Eigen::Index col) const { return col / u_points_.cols(); }

  Vector zeta_gradient(ConstVecRef lambda, ConstVecRef z) const {
    return basis_z_.combined_gradient(lambda, z);
  }

  /// Column j = y_index * |U grid| + u_index.
  LinearProgram build(ConstVecRef z, ConstVecRef lambda) const {
    require_in_box(problem_.z_box, z, "z");
    if (lambda.size() != basis_z_.count())
      throw std::invalid_argument("build_inner_lp: lambda has the wrong length");
    const Vector dzeta = zeta_gradient(lambda, z);
    const int m = rows();
    const Eigen::Index n = cols();
    Matrix A(m, n);
    Vector c(n);
    Vector f(problem_.dim_y), g(problem_.dim_z);
    for (Eigen::Index iy = 0; iy < y_points_.cols(); ++iy) {
      const auto y = y_points_.col(iy);
      for (Eigen::Index iu = 0; iu < u_points_.cols(); ++iu) {
        const auto u = u_points_.col(iu);
        const Eigen::Index j = iy * u_points_.cols() + iu;
        problem_.fast(u, y, z, f);
        problem_.slow(u, y, z, g);
        A(0, j) = 1.0;
        A.block(1, j, m - 1, 1) = y_gradients_[static_cast<std::size_t>(iy)] * f;
        c[j] = problem_.cost(u, y, z) + dzeta.dot(g);
      }
    }
    Vector b = Vector::Zero(m);
    b[0] = 1.0;
    return LinearProgram::dense(std::move(A), std::move(c), std::move(b));
  }

  InnerSolution solve(ConstVecRef z, ConstVecRef lambda,
                      const std::vector<Eigen::Index>* warm = nullptr) const {
    const LinearProgram lp = build(z, lambda);
    SimplexOptions opt = lp_options_;
    if (warm) opt.warm_basis = *warm;
    LpSolution sol;
    try {
      sol = spavglp::solve(lp, opt);
    } catch (const IterationLimit& e) {
      throw IterationLimit(std::string("associated LP: ") + e.what());
    }
    InnerSolution out;
    out.status = sol.status;
    out.z = z;
    if (sol.status != LpStatus::Optimal) return out;
    out.sigma = sol.duals[0];
    out.omega = -sol.duals.tail(basis_y_.count());
    out.basis = sol.basis();

    std::vector<BasicEntry> atoms;
    for (const auto& e : sol.basic_cols)
      if (e.value > 1e-10) atoms.push_back(e);
    double total = 0.0;
    for (const auto& e : atoms) total += e.value;
    const Eigen::Index k = static_cast<Eigen::Index>(atoms.size());
    out.measure.u.resize(problem_.dim_u, k);
    out.measure.y.resize(problem_.dim_y, k);
    out.measure.z.resize(0, k);
    out.measure.weights.resize(k);
    out.mean_g = Vector::Zero(problem_.dim_z);
    Vector g(problem_.dim_z);
    for (Eigen::Index a = 0; a < k; ++a) {
      const auto& e = atoms[static_cast<std::size_t>(a)];
      out.atoms.push_back(e.col);
      out.measure.u.col(a) = u_points_.col(u_index(e.col));
      out.measure.y.col(a) = y_points_.col(y_index(e.col));
      out.measure.weights[a] = e.value / total;
      problem_.slow(out.measure.u.col(a), out.measure.y.col(a), z, g);
      out.mean_g += out.measure.weights[a] * g;
      out.mean_G += out.measure.weights[a] * problem_.cost(out.measure.u.col(a), out.measure.y.col(a), z);
    }
    return out;
  }

 private:
  ControlProblem problem_;
  GridSpec grids_;
  MonomialBasis basis_y_;
  MonomialBasis basis_z_;
  SimplexOptions lp_options_;
  Matrix u_points_;
  Matrix y_points_;
  std::vector<Matrix> y_gradients_;
};

/// Cached associated-LP data at one z.
struct CertificateEntry {
  Vector z;
  Vector omega;
  double sigma = 0.0;
  DiscreteMeasure measure;
  std::vector<Eigen::Index> basis;
};

/**
 * zeta = sum lambda_i psi_i with value theta, plus eta_z and sigma(z) computed
 * on demand by associated LPs and cached on z rounded to 1e-6. Reads are
 * shared; insertion is exclusive. Misses are solved from a cold start, so an
 * entry depends only on z and never on the order of earlier queries.
 */
class DualCertificate {
 public:
  using Key = std::vector<long long>;
  static constexpr double kQuantum = 1e-6;

  DualCertificate(std::shared_ptr<const InnerProblem> inner, Vector lambda, double theta)
      : inner_(std::move(inner)), lambda_(std::move(lambda)), theta_(theta) {
    if (!inner_) throw std::invalid_argument("DualCertificate: missing associated problem");
    if (lambda_.size() != inner_->basis_z().count())
      throw std::invalid_argument("DualCertificate: lambda has the wrong length");
  }

  const InnerProblem& inner() const { return *inner_; }
  std::shared_ptr<const InnerProblem> inner_ptr() const { return inner_; }
  const ControlProblem& problem() const { return inner_->problem(); }
  const Vector& lambda() const { return lambda_; }
  double theta() const { return theta_; }

  static Key key(ConstVecRef z) {
    Key k(static_cast<std::size_t>(z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i) k[static_cast<std::size_t>(i)] = std::llround(z[i] / kQuantum);
    return k;
  }

  Vector zeta_gradient(ConstVecRef z) const { return inner_->zeta_gradient(lambda_, z); }

  double zeta(ConstVecRef z) const { return inner_->basis_z().combined_value(lambda_, z); }

  Vector eta_gradient(const CertificateEntry& e, ConstVecRef y) const {
    return inner_->basis_y().combined_gradient(e.omega, y);
  }

  /// Associated-LP data at z; solves and caches on a miss.
  std::shared_ptr<const CertificateEntry> entry(ConstVecRef z) const {
    require_in_box(problem().z_box, z, "z");
    const Key k = key(z);
    {
      std::shared_lock lock(mutex_);
      auto it = cache_.find(k);
      if (it != cache_.end()) return it->second;
    }
    auto fresh = std::make_shared<CertificateEntry>(compute(z));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = cache_.emplace(k, fresh);
    return it->second;
  }

  /// Registers a solved entry; anchors mark the support points of the solution.
  void insert(const CertificateEntry& e, bool anchor = false) {
    auto ptr = std::make_shared<CertificateEntry>(e);
    std::unique_lock lock(mutex_);
    cache_[key(e.z)] = ptr;
    if (anchor) anchors_.push_back(ptr);
  }

  std::vector<std::shared_ptr<const CertificateEntry>> entries() const {
    std::shared_lock lock(mutex_);
    std::vector<std::shared_ptr<const CertificateEntry>> out;
    for (const auto& [k, v] : cache_) out.push_back(v);
    return out;
  }

  std::vector<std::shared_ptr<const CertificateEntry>> anchors() const {
    std::shared_lock lock(mutex_);
    return anchors_;
  }

  std::size_t cache_size() const {
    std::shared_lock lock(mutex_);
    return cache_.size();
  }

 private:
  CertificateEntry compute(ConstVecRef z) const {
    InnerSolution s = inner_->solve(z, lambda_);
    if (s.status != LpStatus::Optimal)
      throw std::runtime_error("associated LP is " + std::string(to_string(s.status)) + " at z");
    CertificateEntry e;
    e.z = z;
    e.omega = std::move(s.omega);
    e.sigma = s.sigma;
    e.measure = std::move(s.measure);
    e.basis = std::move(s.basis);
    return e;
  }

  std::shared_ptr<const InnerProblem> inner_;
  Vector lambda_;
  double theta_ = 0.0;
  mutable std::shared_mutex mutex_;
  mutable std::map<Key, std::shared_ptr<const CertificateEntry>> cache_;
  std::vector<std::shared_ptr<const CertificateEntry>> anchors_;
};

/// sigma(z), the optimal value of the associated LP under the certificate's zeta.
inline double hamiltonian_sigma(const DualCertificate& certificate, ConstVecRef z) {
  return certificate.entry(z)->sigma;
}

struct ZGroup {
  Vector z;
  double p = 0.0;
  /// Measure on U x Y with weights q_j.
  DiscreteMeasure inner;
};

struct SolveStats {
  int rounds = 0;
  Eigen::Index master_columns = 0;
  Eigen::Index pricing_points = 0;
  Eigen::Index inner_solves = 0;
  double value_before_refinement = 0.0;
  /// theta + min_z (sigma(z) - theta) at termination, a lower bound.
  double lower_bound = 0.0;
  double seconds = 0.0;
};

struct StructuredSolution {
  LpStatus status = LpStatus::Infeasible;
  double outer_value = 0.0;
  std::vector<ZGroup> groups;
  std::shared_ptr<DualCertificate> certificate;
  /// The z points the decomposition priced over (grid plus refinement).
  std::vector<Vector> pricing_z;
  bool rank_warning = false;
  std::vector<std::string> warnings;
  SolveStats stats;

  /// Sum_k p_k q_j^k delta_(u_j^k, y_j^k, z_k).
  DiscreteMeasure flattened() const {
    Eigen::Index total = 0;
    for (const auto& g : groups) total += g.inner.size();
    DiscreteMeasure m;
    if (groups.empty()) return m;
    m.u.resize(groups[0].inner.u.rows(), total);
    m.y.resize(groups[0].inner.y.rows(), total);
    m.z.resize(groups[0].z.size(), total);
    m.weights.resize(total);
    Eigen::Index k = 0;
    for (const auto& g : groups)
      for (Eigen::Index j = 0; j < g.inner.size(); ++j, ++k) {
        m.u.col(k) = g.inner.u.col(j);
        m.y.col(k) = g.inner.y.col(j);
        m.z.col(k) = g.z;
        m.weights[k] = g.p * g.inner.weights[j];
      }
    return m;
  }

  /// Support point nearest to `target`, or -1.
  int nearest_group(ConstVecRef target) const {
    int best = -1;
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const double d = (groups[k].z - target).norm();
      if (d < dist) {
        dist = d;
        best = static_cast<int>(k);
      }
    }
    return best;
  }
};

struct AveragingOptions {
  SimplexOptions lp;
  int max_rounds = 500;
  /// Relative reduced-cost tolerance for adding master columns.
  double tolerance = 1e-9;
  /// One-shot local refinement of the z grid around support points.
  bool refine = false;
  int refine_factor = 3;
  int threads = default_threads();
  /// Penalty on slack columns that keep the master feasible, relative to max |G|.
  double penalty_scale = 1e3;
};

// ---------------------------------------------------------------------------

/**
 * Flattened LP over the full product grid: rows are the normalization, the M
 * fast-constraint rows aggregated over z, and the N slow-constraint rows.
 * Columns are generated on demand: j = (iz * |Y| + iy) * |U| + iu.
 */
inline LinearProgram build_outer_lp(const ControlProblem& problem, const GridSpec& grids,
                                    const MonomialBasis& basis_y, const MonomialBasis& basis_z) {
  grids.validate();
  if (basis_y.count() < 1 || basis_z.count() < 1) throw std::invalid_argument("build_outer_lp: empty basis");
  auto up = std::make_shared<Matrix>(grid_points(problem.u_box, grids.points_u));
  auto yp = std::make_shared<Matrix>(grid_points(problem.y_box, grids.points_y));
  auto zp = std::make_shared<Matrix>(grid_points(problem.z_box, grids.points_z));
  auto yg = std::make_shared<std::vector<Matrix>>();
  auto zg = std::make_shared<std::vector<Matrix>>();
  for (Eigen::Index k = 0; k < yp->cols(); ++k) yg->push_back(basis_y.gradients(yp->col(k)));
  for (Eigen::Index k = 0; k < zp->cols(); ++k) zg->push_back(basis_z.gradients(zp->col(k)));
  const int M = basis_y.count();
  const int N = basis_z.count();
  LinearProgram lp;
  lp.num_rows = 1 + M + N;
  lp.num_cols = up->cols() * yp->cols() * zp->cols();
  if (lp.num_cols < lp.num_rows)
    throw GridTooCoarse("flattened LP has fewer columns than rows");
  lp.b = Vector::Zero(lp.num_rows);
  lp.b[0] = 1.0;
  lp.column_source = [problem, up, yp, zp, yg, zg, M, N](Eigen::Index j, double* col, double& cost) {
    const Eigen::Index nu = up->cols(), ny = yp->cols();
    const Eigen::Index iu = j % nu;
    const Eigen::Index iy = (j / nu) % ny;
    const Eigen::Index iz = j / (nu * ny);
    thread_local Vector f, g;
    f.resize(problem.dim_y);
    g.resize(problem.dim_z);
    const auto u = up->col(iu);
    const auto y = yp->col(iy);
    const auto z = zp->col(iz);
    problem.fast(u, y, z, f);
    problem.slow(u, y, z, g);
    col[0] = 1.0;
    Eigen::Map<Vector>(col + 1, M) = (*yg)[static_cast<std::size_t>(iy)] * f;
    Eigen::Map<Vector>(col + 1 + M, N) = (*zg)[static_cast<std::size_t>(iz)] * g;
    cost = problem.cost(u, y, z);
  };
  return lp;
}

/// The associated LP at z with zeta = sum lambda_i psi_i.
inline LinearProgram build_inner_lp(const ControlProblem& problem, ConstVecRef z, ConstVecRef lambda,
                                    const GridSpec& grids, const MonomialBasis& basis_y,
                                    const MonomialBasis& basis_z) {
  require_in_box(problem.z_box, z, "z");
  return InnerProblem(problem, grids, basis_y, basis_z).build(z, lambda);
}

namespace detail {

struct MasterColumn {
  std::size_t z_index = 0;
  Vector mean_g;
  double mean_G = 0.0;
  std::vector<Eigen::Index> atoms;
  Vector weights;
};

inline std::vector<Vector> refine_points(const std::vector<Vector>& centers, const Box& box, int coarse,
                                         int factor) {
  std::vector<Vector> out;
  const int dim = box.dim();
  const Vector h = box.width() / (coarse - 1);
  const int span = factor;  // one coarse cell in each direction
  for (const auto& c : centers) {
    std::vector<int> idx(static_cast<std::size_t>(dim), -span);
    while (true) {
      Vector p(dim);
      for (int d = 0; d < dim; ++d) p[d] = c[d] + h[d] * idx[static_cast<std::size_t>(d)] / factor;
      if (box.contains(p, 1e-12)) out.push_back(box.clamp(p));
      int d = dim - 1;
      for (; d >= 0; --d) {
        if (++idx[static_cast<std::size_t>(d)] <= span) break;
        idx[static_cast<std::size_t>(d)] = -span;
      }
      if (d < 0) break;
    }
  }
  return out;
}

}  // namespace detail

/**
 * Solves the (N,M)-approximating averaged problem by column generation and
 * assembles the Dirac decomposition and the dual certificate.
 */
inline StructuredSolution solve_averaged(const ControlProblem& problem, const GridSpec& grids,
                                         const MonomialBasis& basis_y, const MonomialBasis& basis_z,
                                         const AveragingOptions& options = {}) {
  const auto start = std::chrono::steady_clock::now();
  auto inner = std::make_shared<InnerProblem>(problem, grids, basis_y, basis_z, options.lp);
  const int N = basis_z.count();

  StructuredSolution result;
  std::vector<Vector> zpts;
  {
    const Matrix g = grid_points(problem.z_box, grids.points_z);
    for (Eigen::Index k = 0; k < g.cols(); ++k) zpts.push_back(g.col(k));
  }
  std::map<DualCertificate::Key, std::size_t> zindex;
  for (std::size_t k = 0; k < zpts.size(); ++k) zindex[DualCertificate::key(zpts[k])] = k;
  std::vector<Matrix> zgrad;
  for (const auto& z : zpts) zgrad.push_back(basis_z.gradients(z));
  std::vector<bool> usable(zpts.size(), true);

  // Scale for the slack penalty.
  double gmax = 1.0;
  {
    const Matrix up = grid_points(problem.u_box, grids.points_u);
    const Matrix yp = grid_points(problem.y_box, grids.points_y);
    for (const auto& z : zpts)
      for (Eigen::Index iy = 0; iy < yp.cols(); iy += std::max<Eigen::Index>(1, yp.cols() / 7))
        for (Eigen::Index iu = 0; iu < up.cols(); iu += std::max<Eigen::Index>(1, up.cols() / 7))
          gmax = std::max(gmax, std::abs(problem.cost(up.col(iu), yp.col(iy), z)));
  }
  double penalty = options.penalty_scale * gmax;

  std::vector<detail::MasterColumn> columns;
  Vector lambda = Vector::Zero(N);
  double theta = 0.0;
  LpSolution master;

  auto price = [&](std::vector<InnerSolution>& out) {
    out.assign(zpts.size(), InnerSolution{});
    parallel_for(zpts.size(), options.threads, [&](std::size_t k) {
      if (!usable[k]) return;
      out[k] = inner->solve(zpts[k], lambda);
    });
    result.stats.inner_solves += static_cast<Eigen::Index>(zpts.size());
    for (std::size_t k = 0; k < zpts.size(); ++k)
      if (usable[k] && out[k].status != LpStatus::Optimal) usable[k] = false;
  };

  auto add_column = [&](std::size_t k, const InnerSolution& s) {
    detail::MasterColumn col;
    col.z_index = k;
    col.mean_g = s.mean_g;
    col.mean_G = s.mean_G;
    col.atoms = s.atoms;
    col.weights = s.measure.weights;
    columns.push_back(std::move(col));
  };

  auto solve_master = [&]() {
    const Eigen::Index slack = 2 * N;
    const Eigen::Index ncols = slack + static_cast<Eigen::Index>(columns.size());
    Matrix A = Matrix::Zero(1 + N, ncols);
    Vector c(ncols);
    for (int i = 0; i < N; ++i) {
      A(1 + i, 2 * i) = 1.0;
      A(1 + i, 2 * i + 1) = -1.0;
      c[2 * i] = c[2 * i + 1] = penalty;
    }
    for (std::size_t j = 0; j < columns.size(); ++j) {
      const auto& col = columns[j];
      const Eigen::Index jj = slack + static_cast<Eigen::Index>(j);
      A(0, jj) = 1.0;
      A.block(1, jj, N, 1) = zgrad[col.z_index] * col.mean_g;
      c[jj] = col.mean_G;
    }
    Vector b = Vector::Zero(1 + N);
    b[0] = 1.0;
    SimplexOptions opt = options.lp;
    opt.warm_basis = master.basis();
    try {
      master = spavglp::solve(LinearProgram::dense(std::move(A), std::move(c), std::move(b)), opt);
    } catch (const IterationLimit& e) {
      throw IterationLimit(std::string("master LP: ") + e.what());
    }
    if (master.status != LpStatus::Optimal)
      throw std::runtime_error("master LP is " + std::string(to_string(master.status)));
    theta = master.duals[0];
    lambda = -master.duals.tail(N);
  };

  auto slack_mass = [&]() {
    double s = 0.0;
    for (const auto& e : master.basic_cols)
      if (e.col < 2 * N) s += e.value;
    return s;
  };

  // Initial columns: cost-minimizing associated measures (zeta = 0).
  std::vector<InnerSolution> priced;
  price(priced);
  for (std::size_t k = 0; k < zpts.size(); ++k)
    if (usable[k]) add_column(k, priced[k]);
  if (columns.empty()) {
    result.status = LpStatus::Infeasible;
    result.warnings.push_back("associated LP infeasible at every z grid point");
    return result;
  }

  auto run_rounds = [&]() {
    while (true) {
      if (result.stats.rounds >= options.max_rounds)
        throw IterationLimit("column generation did not converge within max_rounds");
      ++result.stats.rounds;
      solve_master();
      price(priced);
      double min_rc = std::numeric_limits<double>::infinity();
      Eigen::Index added = 0;
      const double tol = options.tolerance * std::max(1.0, std::abs(theta));
      for (std::size_t k = 0; k < zpts.size(); ++k) {
        if (!usable[k]) continue;
        const double rc = priced[k].sigma - theta;
        min_rc = std::min(min_rc, rc);
        if (rc < -tol) {
          add_column(k, priced[k]);
          ++added;
        }
      }
      result.stats.lower_bound = theta + std::min(0.0, min_rc);
      if (added > 0) continue;
      if (slack_mass() > 1e-9) {
        // Penalty too weak to expel the slacks: the problem may be infeasible.
        penalty *= 100.0;
        if (penalty > 1e12 * gmax) return false;
        continue;
      }
      return true;
    }
  };

  if (!run_rounds()) {
    result.status = LpStatus::Infeasible;
    result.warnings.push_back("averaged LP infeasible: slow constraints cannot be met on this grid");
    return result;
  }

  auto support_z = [&]() {
    std::vector<std::size_t> ks;
    for (const auto& e : master.basic_cols) {
      if (e.col < 2 * N || e.value <= 1e-10) continue;
      const std::size_t k = columns[static_cast<std::size_t>(e.col - 2 * N)].z_index;
      if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
    }
    return ks;
  };

  result.stats.value_before_refinement = master.objective;
  if (options.refine) {
    std::vector<Vector> centers;
    for (std::size_t k : support_z()) centers.push_back(zpts[k]);
    for (auto& p : detail::refine_points(centers, problem.z_box, grids.points_z, options.refine_factor)) {
      const auto key = DualCertificate::key(p);
      if (zindex.count(key)) continue;
      zindex[key] = zpts.size();
      zpts.push_back(p);
      zgrad.push_back(basis_z.gradients(p));
      usable.push_back(true);
    }
    if (!run_rounds()) {
      result.status = LpStatus::Infeasible;
      return result;
    }
  }

  // Group the basic master columns by z.
  std::map<std::size_t, std::map<Eigen::Index, double>> mixtures;
  std::map<std::size_t, double> mass;
  for (const auto& e : master.basic_cols) {
    if (e.col < 2 * N || e.value <= 1e-10) continue;
    const auto& col = columns[static_cast<std::size_t>(e.col - 2 * N)];
    mass[col.z_index] += e.value;
    for (std::size_t a = 0; a < col.atoms.size(); ++a)
      mixtures[col.z_index][col.atoms[a]] += e.value * col.weights[static_cast<Eigen::Index>(a)];
  }
  double total = 0.0;
  for (const auto& [k, p] : mass) total += p;
  for (const auto& [k, p] : mass) {
    ZGroup grp;
    grp.z = zpts[k];
    grp.p = p / total;
    std::vector<std::pair<Eigen::Index, double>> atoms;
    double inner_total = 0.0;
    for (const auto& [col, w] : mixtures[k])
      if (w / p > 1e-10) {
        atoms.emplace_back(col, w);
        inner_total += w;
      }
    const Eigen::Index na = static_cast<Eigen::Index>(atoms.size());
    grp.inner.u.resize(problem.dim_u, na);
    grp.inner.y.resize(problem.dim_y, na);
    grp.inner.z.resize(0, na);
    grp.inner.weights.resize(na);
    for (Eigen::Index a = 0; a < na; ++a) {
      grp.inner.u.col(a) = inner->u_points().col(inner->u_index(atoms[static_cast<std::size_t>(a)].first));
      grp.inner.y.col(a) = inner->y_points().col(inner->y_index(atoms[static_cast<std::size_t>(a)].first));
      grp.inner.weights[a] = atoms[static_cast<std::size_t>(a)].second / inner_total;
    }
    result.groups.push_back(std::move(grp));
  }

  result.status = LpStatus::Optimal;
  result.outer_value = master.objective;
  result.pricing_z = zpts;
  result.rank_warning = master.rank_deficient;
  if (master.rank_deficient) result.warnings.push_back("master basis is rank deficient");
  result.stats.master_columns = static_cast<Eigen::Index>(columns.size());
  result.stats.pricing_points = static_cast<Eigen::Index>(zpts.size());

  result.certificate = std::make_shared<DualCertificate>(inner, lambda, theta);
  // Anchors: associated solutions at the support points under the final zeta.
  std::vector<InnerSolution> at_support(result.groups.size());
  parallel_for(result.groups.size(), options.threads, [&](std::size_t g) {
    at_support[g] = inner->solve(result.groups[g].z, lambda);
  });
  for (auto& s : at_support) {
    if (s.status != LpStatus::Optimal) throw std::runtime_error("associated LP failed at a support point");
    CertificateEntry e;
    e.z = s.z;
    e.omega = s.omega;
    e.sigma = s.sigma;
    e.measure = s.measure;
    e.basis = s.basis;
    result.certificate->insert(e, true);
  }
  result.stats.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Dual residuals of a solved certificate over the pricing grid.
struct CertificateReport {
  /// min over grid (u,y,z) of G + grad zeta^T g + grad eta_z^T f - theta.
  double min_grid_residual = std::numeric_limits<double>::infinity();
  /// max |residual| over the support atoms (u_j^k, y_j^k, z_k).
  double max_support_residual = 0.0;
  /// max_k sigma(z_k) - sum_j q_j^k [G + grad zeta^T g](u_j^k, y_j^k, z_k).
  double max_inner_excess = -std::numeric_limits<double>::infinity();
  /// min over pricing z of sigma(z) - theta.
  double min_sigma_gap = std::numeric_limits<double>::infinity();
  Eigen::Index points_checked = 0;
};

/// Q(u) - theta with Q = G + grad zeta^T g + grad eta_z^T f.
inline double certificate_residual(const DualCertificate& cert, const CertificateEntry& entry, ConstVecRef u,
                                   ConstVecRef y, ConstVecRef z) {
  const auto& p = cert.problem();
  Vector f(p.dim_y), g(p.dim_z);
  p.fast(u, y, z, f);
  p.slow(u, y, z, g);
  return p.cost(u, y, z) + cert.zeta_gradient(z).dot(g) + cert.eta_gradient(entry, y).dot(f) - cert.theta();
}

inline CertificateReport verify_certificate(const StructuredSolution& sol, int threads = default_threads()) {
  CertificateReport rep;
  if (!sol.certificate) return rep;
  const auto& cert = *sol.certificate;
  const auto& inner = cert.inner();
  const auto& p = cert.problem();
  std::vector<double> min_res(sol.pricing_z.size()), gap(sol.pricing_z.size());
  parallel_for(sol.pricing_z.size(), threads, [&](std::size_t k) {
    const Vector& z = sol.pricing_z[k];
    const auto e = cert.entry(z);
    double worst = std::numeric_limits<double>::infinity();
    const Vector dz = cert.zeta_gradient(z);
    Vector f(p.dim_y), g(p.dim_z);
    for (Eigen::Index iy = 0; iy < inner.y_points().cols(); ++iy) {
      const auto y = inner.y_points().col(iy);
      const Vector deta = cert.eta_gradient(*e, y);
      for (Eigen::Index iu = 0; iu < inner.u_points().cols(); ++iu) {
        const auto u = inner.u_points().col(iu);
        p.fast(u, y, z, f);
        p.slow(u, y, z, g);
        worst = std::min(worst, p.cost(u, y, z) + dz.dot(g) + deta.dot(f) - cert.theta());
      }
    }
    min_res[k] = worst;
    gap[k] = e->sigma - cert.theta();
  });
  for (std::size_t k = 0; k < sol.pricing_z.size(); ++k) {
    rep.min_grid_residual = std::min(rep.min_grid_residual, min_res[k]);
    rep.min_sigma_gap = std::min(rep.min_sigma_gap, gap[k]);
  }
  rep.points_checked = static_cast<Eigen::Index>(sol.pricing_z.size()) * inner.cols();
  Vector g(p.dim_z);
  for (const auto& grp : sol.groups) {
    const auto e = cert.entry(grp.z);
    const Vector dz = cert.zeta_gradient(grp.z);
    double mixture = 0.0;
    for (Eigen::Index j = 0; j < grp.inner.size(); ++j) {
      const auto u = grp.inner.u.col(j);
      const auto y = grp.inner.y.col(j);
      rep.max_support_residual =
          std::max(rep.max_support_residual, std::abs(certificate_residual(cert, *e, u, y, grp.z)));
      p.slow(u, y, grp.z, g);
      mixture += grp.inner.weights[j] * (p.cost(u, y, grp.z) + dz.dot(g));
    }
    rep.max_inner_excess = std::max(rep.max_inner_excess, e->sigma - mixture);
  }
  return rep;
}

}  // namespace spavglp
