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

#include "support/lp_oracle.hpp"

#include <spavglp/lp.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace spavglp;
using spavglp::testing::brute_force_lp;
using spavglp::testing::random_lp;

namespace {

void expect_kkt(const LinearProgram& lp, const LpSolution& sol) {
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  const auto k = kkt_report(lp, sol);
  EXPECT_LE(k.primal_residual, 1e-8);
  EXPECT_GE(k.min_value, -1e-9);
  EXPECT_GE(k.min_reduced_cost, -1e-8);
  EXPECT_LE(k.complementarity, 1e-7);
  EXPECT_LE(k.duality_gap, 1e-8);
  EXPECT_LE(static_cast<int>(sol.basic_cols.size()), lp.num_rows);
}

}  // namespace

TEST(Simplex, TwoVariableNormalization) {
  Eigen::MatrixXd A(1, 2);
  A << 1, 1;
  const auto lp = LinearProgram::dense(A, Eigen::Vector2d(1, 0), Eigen::VectorXd::Ones(1));
  const auto sol = solve(lp);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.objective, 0.0, 1e-15);
  EXPECT_NEAR(sol.duals[0], 0.0, 1e-15);
  EXPECT_NEAR(sol.value_of(1), 1.0, 1e-15);
  expect_kkt(lp, sol);
}

TEST(Simplex, NegativeRightHandSideIsInfeasible) {
  Eigen::MatrixXd A(1, 1);
  A << 1;
  const auto lp = LinearProgram::dense(A, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, -1));
  EXPECT_EQ(solve(lp).status, LpStatus::Infeasible);
}

TEST(Simplex, UnboundedDetected) {
  Eigen::MatrixXd A(1, 2);
  A << 1, -1;
  const auto lp = LinearProgram::dense(A, Eigen::Vector2d(0, -1), Eigen::VectorXd::Ones(1));
  EXPECT_EQ(solve(lp).status, LpStatus::Unbounded);
}

TEST(Simplex, ZeroRowsDroppedOrInfeasible) {
  Eigen::MatrixXd A(2, 2);
  A << 1, 1, 0, 0;
  auto lp = LinearProgram::dense(A, Eigen::Vector2d(2, 1), Eigen::Vector2d(1, 0));
  const auto sol = solve(lp);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.objective, 1.0, 1e-12);
  ASSERT_EQ(sol.dropped_rows.size(), 1u);
  EXPECT_EQ(sol.dropped_rows[0], 1);
  EXPECT_EQ(sol.duals[1], 0.0);

  lp = LinearProgram::dense(A, Eigen::Vector2d(2, 1), Eigen::Vector2d(1, 0.5));
  EXPECT_EQ(solve(lp).status, LpStatus::Infeasible);
}

TEST(Simplex, RedundantRowFlagged) {
  Eigen::MatrixXd A(2, 3);
  A << 1, 1, 1, 2, 2, 2;
  const auto lp = LinearProgram::dense(A, Eigen::Vector3d(3, 1, 2), Eigen::Vector2d(1, 2));
  const auto sol = solve(lp);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.objective, 1.0, 1e-12);
  EXPECT_TRUE(sol.rank_deficient);
  expect_kkt(lp, sol);
}

TEST(Simplex, BealeCyclingExampleTerminates) {
  // Classic instance that cycles under textbook Dantzig pricing.
  Eigen::MatrixXd A(3, 7);
  A << 0.25, -8, -1, 9, 1, 0, 0,
       0.5, -12, -0.5, 3, 0, 1, 0,
       0, 0, 1, 0, 0, 0, 1;
  Eigen::VectorXd c(7);
  c << -0.75, 20, -0.5, 6, 0, 0, 0;
  const auto lp = LinearProgram::dense(A, c, Eigen::Vector3d(0, 0, 1));
  SimplexOptions opt;
  opt.scale_rows = false;
  opt.degenerate_switch = 2;
  const auto sol = solve(lp, opt);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.objective, -1.25, 1e-12);
  expect_kkt(lp, sol);
}

TEST(Simplex, BealeExampleWithoutPerturbation) {
  Eigen::MatrixXd A(3, 7);
  A << 0.25, -8, -1, 9, 1, 0, 0,
       0.5, -12, -0.5, 3, 0, 1, 0,
       0, 0, 1, 0, 0, 0, 1;
  Eigen::VectorXd c(7);
  c << -0.75, 20, -0.5, 6, 0, 0, 0;
  const auto lp = LinearProgram::dense(A, c, Eigen::Vector3d(0, 0, 1));
  for (int sw : {2, 5000}) {
    SimplexOptions opt;
    opt.scale_rows = false;
    opt.perturb = false;
    opt.degenerate_switch = sw;
    const auto sol = solve(lp, opt);
    ASSERT_EQ(sol.status, LpStatus::Optimal);
    EXPECT_NEAR(sol.objective, -1.25, 1e-12);
    expect_kkt(lp, sol);
  }
}

TEST(Simplex, UnperturbedPathAgreesWithEnumeration) {
  std::mt19937_64 rng(91);
  SimplexOptions opt;
  opt.perturb = false;
  for (int t = 0; t < 150; ++t) {
    const auto r = random_lp(rng, 5, 8);
    const auto lp = LinearProgram::dense(r.A, r.c, r.b);
    const auto ref = brute_force_lp(r.A, r.c, r.b);
    const auto sol = solve(lp, opt);
    ASSERT_EQ(sol.status, ref.status) << "instance " << t;
    if (ref.status == LpStatus::Optimal) {
      EXPECT_NEAR(sol.objective, ref.objective, 1e-8 * std::max(1.0, std::abs(ref.objective)));
      expect_kkt(lp, sol);
    }
  }
}

TEST(Simplex, DegenerateTransportationProblem) {
  // Every vertex is highly degenerate: assignment polytope of size 6.
  const int k = 6;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * k, k * k);
  Eigen::VectorXd c(k * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      A(i, i * k + j) = 1.0;
      A(k + j, i * k + j) = 1.0;
      c[i * k + j] = std::abs(i - j) == 1 ? 0.0 : 1.0 + ((i * 7 + j * 3) % 5);
    }
  const auto lp = LinearProgram::dense(A, c, Eigen::VectorXd::Ones(2 * k));
  const auto sol = solve(lp);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  // Pair rows 2m and 2m+1 with each other at zero cost.
  EXPECT_NEAR(sol.objective, 0.0, 1e-12);
  expect_kkt(lp, sol);
  EXPECT_TRUE(sol.rank_deficient);
}

TEST(Simplex, IterationLimitThrows) {
  std::mt19937_64 rng(5);
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(4, 12);
  Eigen::VectorXd x0 = Eigen::VectorXd::Random(12).cwiseAbs();
  const auto lp = LinearProgram::dense(A, Eigen::VectorXd::Random(12), A * x0);
  SimplexOptions opt;
  opt.max_iterations = 1;
  EXPECT_THROW(solve(lp, opt), IterationLimit);
}

TEST(Simplex, RandomFourBySixMatchesEnumeration) {
  std::mt19937_64 rng(2024);
  int optimal = 0;
  for (int t = 0; t < 50; ++t) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Eigen::MatrixXd A(4, 6);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 6; ++j) A(i, j) = unit(rng);
    Eigen::VectorXd x0(6), c(6), y0(4);
    for (int j = 0; j < 6; ++j) x0[j] = 0.5 * (unit(rng) + 1);
    for (int i = 0; i < 4; ++i) y0[i] = unit(rng);
    for (int j = 0; j < 6; ++j) c[j] = 0.5 * (unit(rng) + 1);
    c += A.transpose() * y0;
    const auto lp = LinearProgram::dense(A, c, A * x0);
    const auto ref = brute_force_lp(A, c, A * x0);
    const auto sol = solve(lp);
    ASSERT_EQ(sol.status, ref.status);
    if (ref.status == LpStatus::Optimal) {
      ++optimal;
      EXPECT_NEAR(sol.objective, ref.objective, 1e-8);
      expect_kkt(lp, sol);
    }
  }
  EXPECT_EQ(optimal, 50);
}

TEST(Simplex, PropertyAgreesWithEnumerationOnSmallLps) {
  std::mt19937_64 rng(77);
  int counts[3] = {0, 0, 0};
  for (int t = 0; t < 500; ++t) {
    const auto r = random_lp(rng, 5, 8);
    const auto lp = LinearProgram::dense(r.A, r.c, r.b);
    const auto ref = brute_force_lp(r.A, r.c, r.b);
    const auto sol = solve(lp);
    ASSERT_EQ(sol.status, ref.status) << "instance " << t;
    counts[static_cast<int>(sol.status)]++;
    if (ref.status == LpStatus::Optimal) {
      EXPECT_NEAR(sol.objective, ref.objective, 1e-8 * std::max(1.0, std::abs(ref.objective)));
      expect_kkt(lp, sol);
    }
  }
  // The generator produces every outcome.
  EXPECT_GT(counts[0], 50);
  EXPECT_GT(counts[1], 5);
  EXPECT_GT(counts[2], 5);
}

TEST(Simplex, DeterministicPivots) {
  std::mt19937_64 rng(9);
  const auto r = random_lp(rng, 5, 8);
  const auto lp = LinearProgram::dense(r.A, r.c, r.b);
  const auto a = solve(lp);
  const auto b = solve(lp);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.basis(), b.basis());
  EXPECT_EQ(a.duals, b.duals);
}

// A transportation-like LP with implicit columns; the implicit path must agree
// with the materialized one.
TEST(Simplex, ImplicitColumnsMatchMaterialized) {
  const int rows = 6;
  const Eigen::Index cols = 20000;
  LinearProgram lp;
  lp.num_rows = rows;
  lp.num_cols = cols;
  lp.b = Eigen::VectorXd::Zero(rows);
  lp.b[0] = 1.0;
  lp.column_source = [](Eigen::Index j, double* col, double& cost) {
    const double t = -1.0 + 2.0 * static_cast<double>(j) / 19999.0;
    col[0] = 1.0;
    double p = t;
    for (int i = 1; i < rows; ++i) {
      col[i] = p - (i % 2 == 0 ? 1.0 / (i + 1) : 0.0);  // moment constraints of a symmetric measure
      p *= t;
    }
    cost = std::cos(3.0 * t) + 0.5 * t;
  };
  SimplexOptions implicit;
  implicit.materialize_limit = 0;
  implicit.block_size = 4096;
  const auto a = solve(lp, implicit);
  const auto b = solve(lp);
  ASSERT_EQ(a.status, LpStatus::Optimal);
  ASSERT_EQ(b.status, LpStatus::Optimal);
  EXPECT_NEAR(a.objective, b.objective, 1e-9);
  expect_kkt(lp, a);
  expect_kkt(lp, b);

  SimplexOptions threaded = implicit;
  threaded.threads = 3;
  const auto c = solve(lp, threaded);
  EXPECT_EQ(a.basis(), c.basis());
  EXPECT_EQ(a.iterations, c.iterations);
}

TEST(Simplex, WarmStartReachesSameOptimum) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 40; ++t) {
    const auto r = random_lp(rng, 5, 8);
    const auto lp = LinearProgram::dense(r.A, r.c, r.b);
    const auto cold = solve(lp);
    if (cold.status != LpStatus::Optimal) continue;
    SimplexOptions opt;
    opt.warm_basis = cold.basis();
    const auto warm = solve(lp, opt);
    ASSERT_EQ(warm.status, LpStatus::Optimal);
    EXPECT_NEAR(warm.objective, cold.objective, 1e-10);
    EXPECT_LE(warm.iterations, cold.iterations);
  }
}

TEST(Pricing, NonnegativeCostsWithZeroDuals) {
  const Eigen::MatrixXd A = Eigen::MatrixXd::Random(3, 10);
  const Eigen::VectorXd c = Eigen::VectorXd::Random(10).cwiseAbs();
  const auto lp = LinearProgram::dense(A, c, Eigen::VectorXd::Ones(3));
  const auto r = price_columns(lp, Eigen::VectorXd::Zero(3), 0, 10);
  EXPECT_GE(r.reduced_cost, 0.0);
}

TEST(Pricing, SingleColumnBlock) {
  const Eigen::MatrixXd A = Eigen::MatrixXd::Random(3, 10);
  const Eigen::VectorXd c = Eigen::VectorXd::Random(10);
  const Eigen::VectorXd y = Eigen::VectorXd::Random(3);
  const auto lp = LinearProgram::dense(A, c, Eigen::VectorXd::Ones(3));
  const auto r = price_columns(lp, y, 4, 5);
  EXPECT_EQ(r.col, 4);
  EXPECT_EQ(r.reduced_cost, c[4] - y.dot(A.col(4)));
}

TEST(Pricing, FullRangeIsMinimumOfBlocks) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd A = Eigen::MatrixXd::Random(4, 97);
    const Eigen::VectorXd c = Eigen::VectorXd::Random(97);
    const Eigen::VectorXd y = Eigen::VectorXd::Random(4);
    const auto lp = LinearProgram::dense(A, c, Eigen::VectorXd::Ones(4));
    const auto full = price_columns(lp, y, 0, 97);
    PricingResult best;
    for (Eigen::Index k = 0; k < 97; k += 10) {
      const auto r = price_columns(lp, y, k, std::min<Eigen::Index>(97, k + 10));
      if (r.reduced_cost < best.reduced_cost) best = r;
    }
    EXPECT_EQ(full.col, best.col);
    EXPECT_EQ(full.reduced_cost, best.reduced_cost);
    // Direct scan.
    const Eigen::VectorXd rc = c - A.transpose() * y;
    Eigen::Index arg;
    EXPECT_EQ(full.reduced_cost, rc.minCoeff(&arg));
    EXPECT_EQ(full.col, arg);
  }
}
