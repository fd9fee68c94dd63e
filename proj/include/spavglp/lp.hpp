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
 * @brief Revised simplex for  min c^T x  s.t.  A x = b, x >= 0  with few rows
 *        and possibly very many implicitly generated columns.
 *
 * Columns are produced on demand by a pure generator. When the whole matrix
 * is small it is materialized once; otherwise pricing regenerates columns
 * block by block. The basis inverse is dense and rebuilt from scratch every
 * `refactor_interval` pivots.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace spavglp {

enum class LpStatus { Optimal, Infeasible, Unbounded };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "Optimal";
    case LpStatus::Infeasible: return "Infeasible";
    case LpStatus::Unbounded: return "Unbounded";
  }
  return "?";
}

/// Thrown when the pivot cap is reached (suspected cycling or stalling).
class IterationLimit : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes column `col` (num_rows entries) and its cost.
using ColumnSource = std::function<void(Eigen::Index col, double* column, double& cost)>;

struct LinearProgram {
  int num_rows = 0;
  Eigen::Index num_cols = 0;
  Eigen::VectorXd b;
  ColumnSource column_source;

  /// Wraps an explicit matrix; A is num_rows x num_cols.
  static LinearProgram dense(Eigen::MatrixXd A, Eigen::VectorXd c, Eigen::VectorXd b) {
    if (A.rows() != b.size() || A.cols() != c.size())
      throw std::invalid_argument("LinearProgram::dense: dimension mismatch");
    LinearProgram lp;
    lp.num_rows = static_cast<int>(A.rows());
    lp.num_cols = A.cols();
    lp.b = std::move(b);
    lp.column_source = [A = std::move(A), c = std::move(c)](Eigen::Index j, double* col,
                                                             double& cost) {
      for (Eigen::Index i = 0; i < A.rows(); ++i) col[i] = A(i, j);
      cost = c[j];
    };
    return lp;
  }

  void column(Eigen::Index j, Eigen::VectorXd& col, double& cost) const {
    col.resize(num_rows);
    column_source(j, col.data(), cost);
  }
};

struct BasicEntry {
  Eigen::Index col = 0;
  double value = 0.0;
};

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  double objective = 0.0;
  /// Basic structural columns and their values.
  std::vector<BasicEntry> basic_cols;
  /// Row prices y with reduced costs c_j - y^T A_j.
  Eigen::VectorXd duals;
  Eigen::Index iterations = 0;
  /// Rows removed as identically zero.
  std::vector<int> dropped_rows;
  /// Redundant rows kept an artificial in the basis, or the basis is near singular.
  bool rank_deficient = false;

  std::vector<Eigen::Index> basis() const {
    std::vector<Eigen::Index> out;
    for (const auto& e : basic_cols) out.push_back(e.col);
    return out;
  }

  double value_of(Eigen::Index col) const {
    for (const auto& e : basic_cols)
      if (e.col == col) return e.value;
    return 0.0;
  }
};

enum class PricingRule { Dantzig, Bland };

struct PricingResult {
  Eigen::Index col = -1;
  double reduced_cost = std::numeric_limits<double>::infinity();
};

struct SimplexOptions {
  /// 0 selects 10 * num_cols (at least 100).
  Eigen::Index max_iterations = 0;
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-9;
  double pivot_tol = 1e-9;
  int refactor_interval = 50;
  Eigen::Index block_size = 65536;
  int threads = 1;
  /// Materialize A when num_rows * num_cols does not exceed this.
  Eigen::Index materialize_limit = 6'000'000;
  /// Consecutive degenerate pivots before switching to Bland's rule. Shorter
  /// degenerate runs use a lexicographic ratio test.
  int degenerate_switch = 5000;
  /// Structural columns to crash into the starting basis.
  std::vector<Eigen::Index> warm_basis;
  /// Equilibrate rows by their largest coefficient.
  bool scale_rows = true;
  /// Solve against a slightly shifted b first to avoid degenerate stalling.
  bool perturb = true;
};

/**
 * Most negative reduced cost c_j - duals^T A_j over [begin, end). Ties go to
 * the lowest index. Pure: only reads the generator.
 */
inline PricingResult price_columns(const LinearProgram& lp, const Eigen::VectorXd& duals,
                                   Eigen::Index begin, Eigen::Index end) {
  if (begin < 0 || end > lp.num_cols || begin > end)
    throw std::invalid_argument("price_columns: block out of range");
  PricingResult best;
  Eigen::VectorXd col(lp.num_rows);
  for (Eigen::Index j = begin; j < end; ++j) {
    double cost = 0.0;
    lp.column_source(j, col.data(), cost);
    const double rc = cost - duals.dot(col);
    if (rc < best.reduced_cost) {
      best.reduced_cost = rc;
      best.col = j;
    }
  }
  return best;
}

namespace detail {

/// Working form of the LP: kept rows, scaled and sign-flipped so b >= 0.
class SimplexEngine {
 public:
  SimplexEngine(const LinearProgram& lp, const SimplexOptions& opt) : lp_(lp), opt_(opt) {}

  LpSolution run() {
    LpSolution sol;
    const Eigen::Index n = lp_.num_cols;
    max_iter_ = opt_.max_iterations > 0 ? opt_.max_iterations
                                        : std::max<Eigen::Index>(100, 10 * n);
    if (lp_.b.size() != lp_.num_rows) throw std::invalid_argument("simplex: b has wrong size");
    if (!lp_.b.allFinite()) throw std::invalid_argument("simplex: b is not finite");

    if (!preprocess(sol)) {
      sol.status = LpStatus::Infeasible;
      sol.duals = Eigen::VectorXd::Zero(lp_.num_rows);
      return sol;
    }
    const LpSolution base = sol;
    if (opt_.perturb && m_ > 0) {
      // Solve with b shifted by a tiny fixed pattern, then restore b. The
      // final basis stays dual feasible; accept it when it is also primal
      // feasible for the original b after a dual cleanup, else solve again
      // unperturbed from a cold start.
      const Eigen::VectorXd exact = bw_;
      for (int k = 0; k < m_; ++k) {
        const double frac = std::fmod(0.6180339887498949 * (k + 1), 1.0);
        bw_[k] += 1e-7 * (1.0 + std::abs(exact[k])) * (0.5 + frac);
      }
      bool ok = false;
      try {
        ok = solve_phases(sol) && sol.status == LpStatus::Optimal;
      } catch (const IterationLimit&) {
        ok = false;
      }
      bw_ = exact;
      if (ok) {
        refactor();
        ok = dual_cleanup();
      }
      if (ok) {
        finish_optimal(sol);
        return sol;
      }
      sol = base;
      iterations_ = 0;
      cold_ = true;
    }
    if (!solve_phases(sol)) throw IterationLimit("simplex: iteration limit reached in phase II");
    if (sol.status == LpStatus::Optimal) finish_optimal(sol);
    return sol;
  }

 private:
  // Phase I and II from a fresh start. Returns false at the iteration cap in
  // phase II; sets sol.status to Infeasible, Unbounded or Optimal otherwise.
  bool solve_phases(LpSolution& sol) {
    init_basis();
    phase_ = 1;
    if (!iterate(sol)) throw IterationLimit("simplex: iteration limit reached in phase I");
    double infeas = 0.0;
    for (int i = 0; i < m_; ++i)
      if (head_[i] < 0) infeas += std::max(0.0, xb_[i]);
    if (infeas > opt_.feasibility_tol * std::max(1.0, bw_.lpNorm<Eigen::Infinity>()) * 10.0) {
      sol.status = LpStatus::Infeasible;
      fill_duals(sol);
      sol.iterations = iterations_;
      return true;
    }
    drive_out_artificials(sol);

    phase_ = 2;
    if (!iterate(sol)) return false;
    sol.iterations = iterations_;
    if (unbounded_) {
      sol.status = LpStatus::Unbounded;
      fill_duals(sol);
      return true;
    }
    sol.status = LpStatus::Optimal;
    return true;
  }

  // Dual simplex from a dual feasible basis until xb >= 0. Returns false when
  // an artificial carries weight, the cap is hit, or no entering column exists.
  bool dual_cleanup() {
    const double tol = opt_.feasibility_tol * std::max(1.0, bw_.lpNorm<Eigen::Infinity>());
    const Eigen::Index n = lp_.num_cols;
    Eigen::VectorXd a(m_);
    for (Eigen::Index guard = 0; guard < max_iter_; ++guard) {
      int r = -1;
      double worst = -tol;
      for (int i = 0; i < m_; ++i) {
        if (head_[static_cast<std::size_t>(i)] < 0) {
          if (std::abs(xb_[i]) > tol) return false;
          continue;
        }
        if (xb_[i] < worst) {
          worst = xb_[i];
          r = i;
        }
      }
      if (r < 0) {
        for (int i = 0; i < m_; ++i)
          if (xb_[i] < 0) xb_[i] = 0.0;
        return true;
      }
      const Eigen::VectorXd y = current_duals();
      const Eigen::RowVectorXd rho = binv_.row(r);
      Eigen::Index enter = -1;
      double best = std::numeric_limits<double>::infinity();
      double best_alpha = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (in_basis_[static_cast<std::size_t>(j)]) continue;
        double cost = 0.0;
        column(j, a.data(), cost);
        const double alpha = rho.dot(a);
        if (alpha >= -opt_.pivot_tol) continue;
        const double d = std::max(0.0, reduced_cost(cost, a.data(), y));
        const double ratio = d / -alpha;
        if (ratio < best - 1e-12 * std::max(1.0, best) ||
            (ratio <= best + 1e-12 * std::max(1.0, best) && -alpha > best_alpha)) {
          best = ratio;
          best_alpha = -alpha;
          enter = j;
        }
      }
      if (enter < 0) return false;
      double cost = 0.0;
      column(enter, a.data(), cost);
      pivot(r, enter, binv_ * a);
      ++iterations_;
    }
    return false;
  }

  void finish_optimal(LpSolution& sol) {
    sol.iterations = iterations_;
    sol.objective = 0.0;
    sol.basic_cols.clear();
    Eigen::VectorXd col;
    for (int i = 0; i < m_; ++i) {
      if (head_[i] < 0) continue;
      double cost = 0.0;
      lp_.column(head_[i], col, cost);
      const double v = std::max(0.0, xb_[i]);
      sol.basic_cols.push_back({head_[i], v});
      sol.objective += cost * v;
    }
    std::sort(sol.basic_cols.begin(), sol.basic_cols.end(),
              [](const BasicEntry& a, const BasicEntry& b) { return a.col < b.col; });
    fill_duals(sol);
    check_rank(sol);
  }

  // ---- setup -------------------------------------------------------------

  bool preprocess(LpSolution& sol) {
    const int rows = lp_.num_rows;
    const Eigen::Index n = lp_.num_cols;
    Eigen::VectorXd rowmax = Eigen::VectorXd::Zero(rows);
    materialized_ = static_cast<Eigen::Index>(rows) * n <= opt_.materialize_limit;
    Eigen::MatrixXd full;
    Eigen::VectorXd fullc;
    if (materialized_) {
      full.resize(rows, n);
      fullc.resize(n);
    }
    Eigen::VectorXd col(rows);
    for (Eigen::Index j = 0; j < n; ++j) {
      double cost = 0.0;
      lp_.column_source(j, col.data(), cost);
      if (!col.allFinite() || !std::isfinite(cost))
        throw std::invalid_argument("simplex: column " + std::to_string(j) + " is not finite");
      rowmax = rowmax.cwiseMax(col.cwiseAbs());
      if (materialized_) {
        full.col(j) = col;
        fullc[j] = cost;
      }
    }
    bool feasible = true;
    for (int i = 0; i < rows; ++i) {
      if (rowmax[i] <= 1e-12) {
        if (std::abs(lp_.b[i]) <= 1e-12) {
          sol.dropped_rows.push_back(i);
          continue;
        }
        feasible = false;
      }
      kept_.push_back(i);
    }
    m_ = static_cast<int>(kept_.size());
    scale_.resize(m_);
    bw_.resize(m_);
    for (int k = 0; k < m_; ++k) {
      const int i = kept_[static_cast<std::size_t>(k)];
      double s = opt_.scale_rows && rowmax[i] > 1e-12 ? 1.0 / rowmax[i] : 1.0;
      if (lp_.b[i] < 0) s = -s;
      scale_[k] = s;
      bw_[k] = lp_.b[i] * s;
    }
    if (materialized_) {
      A_.resize(m_, n);
      for (int k = 0; k < m_; ++k) A_.row(k) = full.row(kept_[static_cast<std::size_t>(k)]) * scale_[k];
      c_ = std::move(fullc);
    }
    return feasible;
  }

  void column(Eigen::Index j, double* out, double& cost) const {
    if (materialized_) {
      for (int k = 0; k < m_; ++k) out[k] = A_(k, j);
      cost = c_[j];
      return;
    }
    thread_local std::vector<double> raw;
    raw.resize(static_cast<std::size_t>(lp_.num_rows));
    lp_.column_source(j, raw.data(), cost);
    for (int k = 0; k < m_; ++k) out[k] = raw[static_cast<std::size_t>(kept_[static_cast<std::size_t>(k)])] * scale_[k];
  }

  double structural_cost(Eigen::Index j) const {
    if (materialized_) return c_[j];
    thread_local std::vector<double> raw;
    raw.resize(static_cast<std::size_t>(lp_.num_rows));
    double cost = 0.0;
    lp_.column_source(j, raw.data(), cost);
    return cost;
  }

  void init_basis() {
    head_.assign(static_cast<std::size_t>(m_), -1);
    for (int i = 0; i < m_; ++i) head_[static_cast<std::size_t>(i)] = -(i + 1);
    in_basis_.assign(static_cast<std::size_t>(lp_.num_cols), false);
    binv_ = Eigen::MatrixXd::Identity(m_, m_);
    xb_ = bw_;
    if (!cold_ && !opt_.warm_basis.empty()) crash(opt_.warm_basis);
  }

  // Pivot the given columns into artificial slots; fall back to a slack basis
  // when the result is not primal feasible.
  void crash(const std::vector<Eigen::Index>& cols) {
    Eigen::VectorXd a(m_);
    for (Eigen::Index j : cols) {
      if (j < 0 || j >= lp_.num_cols || in_basis_[static_cast<std::size_t>(j)]) continue;
      double cost = 0.0;
      column(j, a.data(), cost);
      const Eigen::VectorXd w = binv_ * a;
      int r = -1;
      double best = 1e-7;
      for (int i = 0; i < m_; ++i)
        if (head_[static_cast<std::size_t>(i)] < 0 && std::abs(w[i]) > best) {
          best = std::abs(w[i]);
          r = i;
        }
      if (r < 0) continue;
      pivot(r, j, w);
    }
    refactor();
    for (int i = 0; i < m_; ++i) {
      if (xb_[i] < -opt_.feasibility_tol) {
        head_.assign(static_cast<std::size_t>(m_), -1);
        for (int k = 0; k < m_; ++k) head_[static_cast<std::size_t>(k)] = -(k + 1);
        in_basis_.assign(static_cast<std::size_t>(lp_.num_cols), false);
        binv_ = Eigen::MatrixXd::Identity(m_, m_);
        xb_ = bw_;
        return;
      }
    }
  }

  // ---- linear algebra ----------------------------------------------------

  void refactor() {
    Eigen::MatrixXd B(m_, m_);
    Eigen::VectorXd a(m_);
    for (int i = 0; i < m_; ++i) {
      const Eigen::Index h = head_[static_cast<std::size_t>(i)];
      if (h < 0) {
        B.col(i).setZero();
        B(-h - 1, i) = 1.0;
      } else {
        double cost = 0.0;
        column(h, a.data(), cost);
        B.col(i) = a;
      }
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
    binv_ = lu.inverse();
    xb_ = binv_ * bw_;
    for (int i = 0; i < m_; ++i)
      if (xb_[i] < 0 && xb_[i] > -opt_.feasibility_tol) xb_[i] = 0.0;
    since_refactor_ = 0;
  }

  void pivot(int r, Eigen::Index entering, const Eigen::VectorXd& w) {
    const double piv = w[r];
    const double theta = xb_[r] / piv;
    for (int i = 0; i < m_; ++i)
      if (i != r) xb_[i] -= theta * w[i];
    xb_[r] = theta;
    binv_.row(r) /= piv;
    for (int i = 0; i < m_; ++i)
      if (i != r && w[i] != 0.0) binv_.row(i) -= w[i] * binv_.row(r);
    const Eigen::Index leaving = head_[static_cast<std::size_t>(r)];
    if (leaving >= 0) in_basis_[static_cast<std::size_t>(leaving)] = false;
    head_[static_cast<std::size_t>(r)] = entering;
    in_basis_[static_cast<std::size_t>(entering)] = true;
    if (++since_refactor_ >= opt_.refactor_interval) refactor();
  }

  double basic_cost(int i) const {
    const Eigen::Index h = head_[static_cast<std::size_t>(i)];
    if (h < 0) return phase_ == 1 ? 1.0 : 0.0;
    return phase_ == 1 ? 0.0 : structural_cost(h);
  }

  Eigen::VectorXd current_duals() const {
    Eigen::VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb[i] = basic_cost(i);
    return binv_.transpose() * cb;
  }

  // ---- pricing -----------------------------------------------------------

  double reduced_cost(double cost, const double* a, const Eigen::VectorXd& y) const {
    double rc = phase_ == 1 ? 0.0 : cost;
    for (int k = 0; k < m_; ++k) rc -= y[k] * a[k];
    return rc;
  }

  PricingResult price_block(const Eigen::VectorXd& y, Eigen::Index begin, Eigen::Index end,
                            PricingRule rule) const {
    PricingResult best;
    const double tol = opt_.optimality_tol;
    if (materialized_) {
      Eigen::VectorXd rc = -(A_.middleCols(begin, end - begin).transpose() * y);
      if (phase_ == 2) rc += c_.segment(begin, end - begin);
      for (Eigen::Index j = begin; j < end; ++j) {
        if (in_basis_[static_cast<std::size_t>(j)]) continue;
        const double d = rc[j - begin];
        if (d >= -tol) continue;
        if (rule == PricingRule::Bland) return {j, d};
        if (d < best.reduced_cost) best = {j, d};
      }
      return best;
    }
    std::vector<double> a(static_cast<std::size_t>(m_));
    for (Eigen::Index j = begin; j < end; ++j) {
      if (in_basis_[static_cast<std::size_t>(j)]) continue;
      double cost = 0.0;
      column(j, a.data(), cost);
      const double d = reduced_cost(cost, a.data(), y);
      if (d >= -tol) continue;
      if (rule == PricingRule::Bland) return {j, d};
      if (d < best.reduced_cost) best = {j, d};
    }
    return best;
  }

  // Splits a block across worker threads; reduction keeps the lowest index on ties.
  PricingResult price_block_parallel(const Eigen::VectorXd& y, Eigen::Index begin,
                                     Eigen::Index end, PricingRule rule) const {
    const int threads = std::max(1, opt_.threads);
    if (threads == 1 || end - begin < 4096 || rule == PricingRule::Bland)
      return price_block(y, begin, end, rule);
    std::vector<PricingResult> parts(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    const Eigen::Index chunk = (end - begin + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const Eigen::Index lo = begin + t * chunk;
      const Eigen::Index hi = std::min(end, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([&, t, lo, hi] { parts[static_cast<std::size_t>(t)] = price_block(y, lo, hi, rule); });
    }
    for (auto& th : pool) th.join();
    PricingResult best;
    for (const auto& p : parts)
      if (p.col >= 0 && (p.reduced_cost < best.reduced_cost ||
                         (p.reduced_cost == best.reduced_cost && p.col < best.col)))
        best = p;
    return best;
  }

  // Partial pricing: Dantzig inside a block, blocks visited cyclically. Bland
  // scans from column 0 and returns the first improving column.
  PricingResult choose_entering(const Eigen::VectorXd& y, PricingRule rule) {
    const Eigen::Index n = lp_.num_cols;
    if (n == 0) return {};
    const Eigen::Index bs = std::max<Eigen::Index>(1, opt_.block_size);
    const Eigen::Index blocks = (n + bs - 1) / bs;
    if (rule == PricingRule::Bland) {
      for (Eigen::Index k = 0; k < blocks; ++k) {
        auto r = price_block(y, k * bs, std::min(n, (k + 1) * bs), rule);
        if (r.col >= 0) return r;
      }
      return {};
    }
    for (Eigen::Index step = 0; step < blocks; ++step) {
      const Eigen::Index k = (next_block_ + step) % blocks;
      auto r = price_block_parallel(y, k * bs, std::min(n, (k + 1) * bs), rule);
      if (r.col >= 0) {
        next_block_ = k;
        return r;
      }
    }
    return {};
  }

  // ---- main loop ---------------------------------------------------------

  // Returns false when the iteration cap is hit.
  bool iterate(LpSolution&) {
    unbounded_ = false;
    int degenerate_run = 0;
    Eigen::VectorXd a(m_);
    while (true) {
      if (iterations_ >= max_iter_) return false;
      const Eigen::VectorXd y = current_duals();
      const PricingRule rule =
          degenerate_run >= opt_.degenerate_switch ? PricingRule::Bland : PricingRule::Dantzig;
      const PricingResult enter = choose_entering(y, rule);
      if (enter.col < 0) return true;

      double cost = 0.0;
      column(enter.col, a.data(), cost);
      const Eigen::VectorXd w = binv_ * a;

      int r = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      Eigen::Index best_head = std::numeric_limits<Eigen::Index>::max();
      for (int i = 0; i < m_; ++i) {
        const Eigen::Index h = head_[static_cast<std::size_t>(i)];
        double ratio;
        if (phase_ == 2 && h < 0) {
          // Artificials left after phase I sit at zero and must stay there.
          if (std::abs(w[i]) <= opt_.pivot_tol) continue;
          ratio = 0.0;
        } else {
          if (w[i] <= opt_.pivot_tol) continue;
          ratio = std::max(0.0, xb_[i]) / w[i];
        }
        const double slack = std::isfinite(best_ratio) ? 1e-12 * std::max(1.0, best_ratio) : 0.0;
        bool take = false;
        if (ratio < best_ratio - slack) {
          take = true;
        } else if (ratio <= best_ratio + slack) {
          if (rule == PricingRule::Bland)
            take = h < best_head;
          else
            take = degenerate_run >= kLexAfter ? lex_less(i, w[i], r, w[r]) : std::abs(w[i]) > std::abs(w[r]);
        }
        if (take) {
          r = i;
          best_ratio = ratio;
          best_head = h;
        }
      }
      if (r < 0) {
        if (phase_ == 2) {
          unbounded_ = true;
          return true;
        }
        // Phase I is bounded below by zero; a missing row means numerical trouble.
        refactor();
        ++iterations_;
        continue;
      }
      if (best_ratio <= 1e-12)
        ++degenerate_run;
      else
        degenerate_run = 0;
      pivot(r, enter.col, w);
      ++iterations_;
    }
  }

  static constexpr int kLexAfter = 50;

  // Lexicographic ratio-test tie-break on the rows of B^-1 scaled by the pivot.
  bool lex_less(int i, double wi, int k, double wk) const {
    for (int c = 0; c < m_; ++c) {
      const double a = binv_(i, c) / wi;
      const double b = binv_(k, c) / wk;
      const double tol = 1e-11 * std::max({1.0, std::abs(a), std::abs(b)});
      if (a < b - tol) return true;
      if (a > b + tol) return false;
    }
    return std::abs(wi) > std::abs(wk);
  }

  void drive_out_artificials(LpSolution& sol) {
    Eigen::VectorXd a(m_);
    for (int r = 0; r < m_; ++r) {
      if (head_[static_cast<std::size_t>(r)] >= 0) continue;
      const Eigen::RowVectorXd rho = binv_.row(r);
      Eigen::Index pick = -1;
      double best = 1e-7;
      for (Eigen::Index j = 0; j < lp_.num_cols; ++j) {
        if (in_basis_[static_cast<std::size_t>(j)]) continue;
        double cost = 0.0;
        column(j, a.data(), cost);
        const double alpha = rho.dot(a);
        if (std::abs(alpha) > best) {
          best = std::abs(alpha);
          pick = j;
          if (best > 1e-2) break;
        }
      }
      if (pick < 0) {
        sol.rank_deficient = true;
        continue;
      }
      double cost = 0.0;
      column(pick, a.data(), cost);
      const Eigen::VectorXd w = binv_ * a;
      pivot(r, pick, w);
    }
  }

  void fill_duals(LpSolution& sol) const {
    const Eigen::VectorXd y = current_duals();
    sol.duals = Eigen::VectorXd::Zero(lp_.num_rows);
    for (int k = 0; k < m_; ++k) sol.duals[kept_[static_cast<std::size_t>(k)]] = y[k] * scale_[k];
  }

  void check_rank(LpSolution& sol) const {
    std::vector<Eigen::Index> cols;
    for (int i = 0; i < m_; ++i)
      if (head_[static_cast<std::size_t>(i)] >= 0) cols.push_back(head_[static_cast<std::size_t>(i)]);
    if (static_cast<int>(cols.size()) < m_) sol.rank_deficient = true;
    if (cols.empty()) return;
    Eigen::MatrixXd B(m_, static_cast<Eigen::Index>(cols.size()));
    Eigen::VectorXd a(m_);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      double cost = 0.0;
      column(cols[k], a.data(), cost);
      B.col(static_cast<Eigen::Index>(k)) = a;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(B);
    qr.setThreshold(1e-10);
    if (qr.rank() < static_cast<Eigen::Index>(cols.size())) sol.rank_deficient = true;
  }

  const LinearProgram& lp_;
  const SimplexOptions& opt_;
  std::vector<int> kept_;
  int m_ = 0;
  Eigen::VectorXd scale_;
  Eigen::VectorXd bw_;
  bool materialized_ = false;
  Eigen::MatrixXd A_;
  Eigen::VectorXd c_;
  std::vector<Eigen::Index> head_;
  std::vector<bool> in_basis_;
  Eigen::MatrixXd binv_;
  Eigen::VectorXd xb_;
  int phase_ = 1;
  int since_refactor_ = 0;
  Eigen::Index iterations_ = 0;
  Eigen::Index max_iter_ = 0;
  Eigen::Index next_block_ = 0;
  bool unbounded_ = false;
  bool cold_ = false;
};

}  // namespace detail

/// Solves the LP. Throws IterationLimit when the pivot cap is exceeded.
inline LpSolution solve(const LinearProgram& lp, const SimplexOptions& options = {}) {
  detail::SimplexEngine engine(lp, options);
  return engine.run();
}

/// Largest violations of the optimality conditions, in the LP's own units.
struct KktReport {
  double primal_residual = 0.0;   ///< |A x - b|_inf
  double min_value = 0.0;         ///< min_j x_j
  double min_reduced_cost = 0.0;  ///< min_j c_j - y^T A_j
  double complementarity = 0.0;   ///< max_j |x_j (c_j - y^T A_j)|
  double duality_gap = 0.0;       ///< |c^T x - y^T b|
};

inline KktReport kkt_report(const LinearProgram& lp, const LpSolution& sol) {
  KktReport rep;
  Eigen::VectorXd ax = Eigen::VectorXd::Zero(lp.num_rows);
  Eigen::VectorXd col(lp.num_rows);
  double primal_obj = 0.0;
  for (const auto& e : sol.basic_cols) {
    double cost = 0.0;
    lp.column_source(e.col, col.data(), cost);
    ax += e.value * col;
    primal_obj += cost * e.value;
    rep.min_value = std::min(rep.min_value, e.value);
  }
  rep.primal_residual = (ax - lp.b).lpNorm<Eigen::Infinity>();
  rep.min_reduced_cost = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < lp.num_cols; ++j) {
    double cost = 0.0;
    lp.column_source(j, col.data(), cost);
    const double rc = cost - sol.duals.dot(col);
    rep.min_reduced_cost = std::min(rep.min_reduced_cost, rc);
    rep.complementarity = std::max(rep.complementarity, std::abs(sol.value_of(j) * rc));
  }
  rep.duality_gap = std::abs(primal_obj - sol.duals.dot(lp.b));
  return rep;
}

}  // namespace spavglp
