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
 * @brief Feedback synthesis from the dual certificate.
 *
 * u(y, z) minimizes Q(u) = G + grad zeta(z)^T g + grad eta_z(y)^T f over U.
 * Q - theta is the pointwise optimality residual: nonnegative on the LP grid
 * and zero on the support of the solution.
 */

#include "averaging.hpp"
#include "model.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace spavglp {

/// A state feedback u = law(y, z).
using ControlLaw = std::function<void(ConstVecRef y, ConstVecRef z, VecRef u)>;

struct SearchConfig {
  /// Scan points per control dimension.
  int grid_points = 21;
  /// Golden-section iterations per coordinate.
  int refine_iterations = 30;

  void validate() const {
    if (grid_points < 2) throw std::invalid_argument("SearchConfig: grid_points must be at least 2");
    if (refine_iterations < 0) throw std::invalid_argument("SearchConfig: refine_iterations must be >= 0");
  }
};

class FeedbackLaw {
 public:
  explicit FeedbackLaw(std::shared_ptr<const DualCertificate> certificate, SearchConfig search = {})
      : certificate_(std::move(certificate)), search_(search) {
    if (!certificate_) throw std::invalid_argument("FeedbackLaw: missing certificate");
    search_.validate();
    const auto& p = problem();
    scan_ = grid_points(p.u_box, search_.grid_points);
  }

  const DualCertificate& certificate() const { return *certificate_; }
  const ControlProblem& problem() const { return certificate_->problem(); }
  const SearchConfig& search() const { return search_; }

  /// Coefficients p = grad zeta(z), q = grad eta_z(y) of Q at (y, z).
  struct Multipliers {
    Vector p;
    Vector q;
  };

  Multipliers multipliers(ConstVecRef y, ConstVecRef z) const {
    const auto e = certificate_->entry(z);
    return {certificate_->zeta_gradient(z), certificate_->eta_gradient(*e, y)};
  }

  double q_value(ConstVecRef u, ConstVecRef y, ConstVecRef z, const Multipliers& m) const {
    const auto& pr = problem();
    thread_local Vector f, g;
    f.resize(pr.dim_y);
    g.resize(pr.dim_z);
    pr.fast(u, y, z, f);
    pr.slow(u, y, z, g);
    return pr.cost(u, y, z) + m.p.dot(g) + m.q.dot(f);
  }

  Vector feedback(ConstVecRef y, ConstVecRef z) const {
    Vector u(problem().dim_u);
    (*this)(y, z, u);
    return u;
  }

  void operator()(ConstVecRef y, ConstVecRef z, VecRef u) const {
    const auto& pr = problem();
    require_in_box(pr.y_box, y, "y");
    require_in_box(pr.z_box, z, "z");
    const Multipliers m = multipliers(y, z);

    Eigen::Index best = 0;
    double qbest = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < scan_.cols(); ++k) {
      const double q = q_value(scan_.col(k), y, z, m);
      if (q < qbest) {
        qbest = q;
        best = k;
      }
    }
    Vector cur = scan_.col(best);
    const Vector h = pr.u_box.width() / (search_.grid_points - 1);
    constexpr double kInvPhi = 0.6180339887498949;
    Vector trial = cur;
    for (int d = 0; d < pr.dim_u; ++d) {
      double a = std::max(pr.u_box.lower[d], cur[d] - h[d]);
      double b = std::min(pr.u_box.upper[d], cur[d] + h[d]);
      trial = cur;
      auto eval = [&](double x) {
        trial[d] = x;
        return q_value(trial, y, z, m);
      };
      double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
      double f1 = eval(x1), f2 = eval(x2);
      double xbest = cur[d], fbest = qbest;
      auto consider = [&](double x, double fx) {
        if (fx < fbest) {
          fbest = fx;
          xbest = x;
        }
      };
      consider(x1, f1);
      consider(x2, f2);
      for (int it = 0; it < search_.refine_iterations; ++it) {
        if (f1 <= f2) {
          b = x2;
          x2 = x1;
          f2 = f1;
          x1 = b - kInvPhi * (b - a);
          f1 = eval(x1);
          consider(x1, f1);
        } else {
          a = x1;
          x1 = x2;
          f1 = f2;
          x2 = a + kInvPhi * (b - a);
          f2 = eval(x2);
          consider(x2, f2);
        }
      }
      cur[d] = xbest;
      qbest = fbest;
    }
    u = cur;
  }

  /// Q(u) - theta.
  double optimality_residual(ConstVecRef u, ConstVecRef y, ConstVecRef z) const {
    const auto& pr = problem();
    require_in_box(pr.u_box, u, "u");
    require_in_box(pr.y_box, y, "y");
    require_in_box(pr.z_box, z, "z");
    return q_value(u, y, z, multipliers(y, z)) - certificate_->theta();
  }

  /// Heaviest fast-state atom of the associated measure at z; lowest index on ties.
  Vector initial_fast_state(ConstVecRef z) const {
    const auto e = certificate_->entry(z);
    if (e->measure.size() == 0) return problem().y_box.center();
    Eigen::Index k = 0;
    for (Eigen::Index j = 1; j < e->measure.size(); ++j)
      if (e->measure.weights[j] > e->measure.weights[k]) k = j;
    return e->measure.y.col(k);
  }

  ControlLaw as_law() const {
    return [self = *this](ConstVecRef y, ConstVecRef z, VecRef u) { self(y, z, u); };
  }

 private:
  std::shared_ptr<const DualCertificate> certificate_;
  SearchConfig search_;
  Matrix scan_;
};

inline Vector feedback(const FeedbackLaw& law, ConstVecRef y, ConstVecRef z) { return law.feedback(y, z); }

inline double optimality_residual(const FeedbackLaw& law, ConstVecRef u, ConstVecRef y, ConstVecRef z) {
  return law.optimality_residual(u, y, z);
}

}  // namespace spavglp
