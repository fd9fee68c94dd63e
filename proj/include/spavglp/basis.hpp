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
 * @brief Monomial test-function bases and their gradients.
 */

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace spavglp {

/// Monomials x^a with 1 <= |a| <= max_degree in graded lexicographic order.
class MonomialBasis {
 public:
  using MultiIndex = std::vector<int>;

  MonomialBasis() = default;
  MonomialBasis(int dim, int max_degree) : dim_(dim), max_degree_(max_degree) {
    if (dim < 1) throw std::invalid_argument("MonomialBasis: dim must be >= 1");
    if (max_degree < 1) throw std::invalid_argument("MonomialBasis: max_degree must be >= 1");
    MultiIndex current(dim, 0);
    for (int degree = 1; degree <= max_degree; ++degree) append_degree(degree, 0, current);
  }

  int dim() const { return dim_; }
  int max_degree() const { return max_degree_; }
  int count() const { return static_cast<int>(indices_.size()); }
  const std::vector<MultiIndex>& multi_indices() const { return indices_; }
  const MultiIndex& multi_index(int i) const { return indices_.at(static_cast<std::size_t>(i)); }

  /// Position of a multi-index, or -1.
  int find(const MultiIndex& alpha) const {
    for (int i = 0; i < count(); ++i)
      if (indices_[static_cast<std::size_t>(i)] == alpha) return i;
    return -1;
  }

  double value(int i, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    check(i, x);
    const auto& a = indices_[static_cast<std::size_t>(i)];
    double v = 1.0;
    for (int d = 0; d < dim_; ++d)
      for (int k = 0; k < a[static_cast<std::size_t>(d)]; ++k) v *= x[d];
    return v;
  }

  Eigen::VectorXd gradient(int i, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    check(i, x);
    const Eigen::MatrixXd powers = power_table(x);
    Eigen::VectorXd grad(dim_);
    gradient_from_powers(indices_[static_cast<std::size_t>(i)], powers, grad.data());
    return grad;
  }

  /// Row i holds the gradient of basis function i at x (count x dim).
  Eigen::MatrixXd gradients(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::MatrixXd out(count(), dim_);
    gradients_into(x, out);
    return out;
  }

  void gradients_into(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::MatrixXd& out) const {
    if (x.size() != dim_) throw std::invalid_argument("MonomialBasis: point dimension mismatch");
    const Eigen::MatrixXd powers = power_table(x);
    out.resize(count(), dim_);
    double grad[16];
    std::vector<double> wide;
    double* g = grad;
    if (dim_ > 16) {
      wide.resize(static_cast<std::size_t>(dim_));
      g = wide.data();
    }
    for (int i = 0; i < count(); ++i) {
      gradient_from_powers(indices_[static_cast<std::size_t>(i)], powers, g);
      for (int d = 0; d < dim_; ++d) out(i, d) = g[d];
    }
  }

  /// sum_i coeffs[i] * grad(x^a_i) at x.
  Eigen::VectorXd combined_gradient(const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                                    const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (coeffs.size() != count())
      throw std::invalid_argument("MonomialBasis: coefficient count mismatch");
    return gradients(x).transpose() * coeffs;
  }

  double combined_value(const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                        const Eigen::Ref<const Eigen::VectorXd>& x) const {
    double v = 0.0;
    for (int i = 0; i < count(); ++i) v += coeffs[i] * value(i, x);
    return v;
  }

 private:
  void append_degree(int remaining, int position, MultiIndex& current) {
    if (position == dim_ - 1) {
      current[static_cast<std::size_t>(position)] = remaining;
      indices_.push_back(current);
      current[static_cast<std::size_t>(position)] = 0;
      return;
    }
    for (int k = remaining; k >= 0; --k) {
      current[static_cast<std::size_t>(position)] = k;
      append_degree(remaining - k, position + 1, current);
    }
    current[static_cast<std::size_t>(position)] = 0;
  }

  void check(int i, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (i < 0 || i >= count()) throw std::out_of_range("MonomialBasis: index out of range");
    if (x.size() != dim_) throw std::invalid_argument("MonomialBasis: point dimension mismatch");
  }

  // powers(d, k) = x_d^k by repeated multiplication, so zeros stay exact.
  Eigen::MatrixXd power_table(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::MatrixXd powers(dim_, max_degree_ + 1);
    for (int d = 0; d < dim_; ++d) {
      powers(d, 0) = 1.0;
      for (int k = 1; k <= max_degree_; ++k) powers(d, k) = powers(d, k - 1) * x[d];
    }
    return powers;
  }

  void gradient_from_powers(const MultiIndex& a, const Eigen::MatrixXd& powers, double* out) const {
    for (int j = 0; j < dim_; ++j) {
      const int aj = a[static_cast<std::size_t>(j)];
      if (aj == 0) {
        out[j] = 0.0;
        continue;
      }
      double v = aj * powers(j, aj - 1);
      for (int l = 0; l < dim_; ++l)
        if (l != j) v *= powers(l, a[static_cast<std::size_t>(l)]);
      out[j] = v;
    }
  }

  int dim_ = 0;
  int max_degree_ = 0;
  std::vector<MultiIndex> indices_;
};

inline MonomialBasis make_basis(int dim, int max_degree) { return MonomialBasis(dim, max_degree); }

inline Eigen::VectorXd eval_gradient(const MonomialBasis& basis, int i,
                                     const Eigen::Ref<const Eigen::VectorXd>& x) {
  return basis.gradient(i, x);
}

}  // namespace spavglp
