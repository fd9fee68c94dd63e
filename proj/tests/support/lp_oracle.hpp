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

// Brute-force reference for tiny LPs: enumerate every basic solution and every
// extreme ray of {d >= 0, A d = 0, 1^T d = 1}. Independent of the simplex code.

#include <spavglp/lp.hpp>

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace spavglp::testing {

struct OracleResult {
  LpStatus status = LpStatus::Infeasible;
  double objective = std::numeric_limits<double>::infinity();
};

inline void for_each_subset(int n, int k, const std::function<void(const std::vector<int>&)>& fn) {
  if (k > n || k <= 0) return;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  while (true) {
    fn(idx);
    int i = k - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) return;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
}

// Solves M v = r restricted to columns `cols`; returns v only when M_cols is
// square, well conditioned and the solution is exact.
inline std::optional<Eigen::VectorXd> basic_solve(const Eigen::MatrixXd& M, const Eigen::VectorXd& r,
                                                  const std::vector<int>& cols) {
  Eigen::MatrixXd B(M.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) B.col(static_cast<Eigen::Index>(k)) = M.col(cols[k]);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
  if (lu.rank() < B.cols() || lu.rank() < B.rows()) return std::nullopt;
  if (lu.rcond() < 1e-11) return std::nullopt;
  return Eigen::VectorXd(lu.solve(r));
}

inline OracleResult brute_force_lp(const Eigen::MatrixXd& A, const Eigen::VectorXd& c,
                                   const Eigen::VectorXd& b) {
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  OracleResult res;
  bool feasible = false;
  for_each_subset(n, m, [&](const std::vector<int>& cols) {
    auto x = basic_solve(A, b, cols);
    if (!x || x->minCoeff() < -1e-10) return;
    feasible = true;
    double obj = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) obj += c[cols[k]] * (*x)[static_cast<Eigen::Index>(k)];
    res.objective = std::min(res.objective, obj);
  });
  if (!feasible) return res;
  res.status = LpStatus::Optimal;
  // Rays: vertices of {A d = 0, sum d = 1, d >= 0}.
  Eigen::MatrixXd R(m + 1, n);
  R.topRows(m) = A;
  R.row(m).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
  rhs[m] = 1.0;
  bool unbounded = false;
  for_each_subset(n, m + 1, [&](const std::vector<int>& cols) {
    auto d = basic_solve(R, rhs, cols);
    if (!d || d->minCoeff() < -1e-10) return;
    double slope = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) slope += c[cols[k]] * (*d)[static_cast<Eigen::Index>(k)];
    if (slope < -1e-9) unbounded = true;
  });
  if (unbounded) {
    res.status = LpStatus::Unbounded;
    res.objective = -std::numeric_limits<double>::infinity();
  }
  return res;
}

struct RandomLp {
  Eigen::MatrixXd A;
  Eigen::VectorXd c;
  Eigen::VectorXd b;
};

/// Entries in [-1, 1]. Half the instances are built feasible and bounded.
inline RandomLp random_lp(std::mt19937_64& rng, int max_rows, int max_cols) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> rows_dist(1, max_rows);
  const int m = rows_dist(rng);
  std::uniform_int_distribution<int> cols_dist(m, max_cols);
  const int n = std::max(m, cols_dist(rng));
  RandomLp lp;
  lp.A.resize(m, n);
  lp.c.resize(n);
  lp.b.resize(m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) lp.A(i, j) = unit(rng);
  std::bernoulli_distribution coin(0.5);
  if (coin(rng)) {
    Eigen::VectorXd x0(n);
    for (int j = 0; j < n; ++j) x0[j] = coin(rng) ? 0.5 * (unit(rng) + 1.0) : 0.0;
    lp.b = lp.A * x0;
  } else {
    for (int i = 0; i < m; ++i) lp.b[i] = unit(rng);
  }
  if (coin(rng)) {
    Eigen::VectorXd y0(m), s(n);
    for (int i = 0; i < m; ++i) y0[i] = unit(rng);
    for (int j = 0; j < n; ++j) s[j] = 0.5 * (unit(rng) + 1.0);
    lp.c = lp.A.transpose() * y0 + s;
  } else {
    for (int j = 0; j < n; ++j) lp.c[j] = unit(rng);
  }
  return lp;
}

}  // namespace spavglp::testing
