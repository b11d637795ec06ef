#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mcfbsde/chain.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/linalg.hpp"

namespace mcfbsde {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Tree-indexed triple (X, Y, Z): X ∈ ℝⁿ, Y ∈ ℝᵐ, Z ∈ ℝ^{m×d} per node, held
/// in flat arrays.  Z is stored row-major.
class SolutionField {
public:
    SolutionField() = default;
    SolutionField(std::size_t nodes, int n, int m, int d)
        : nodes_(nodes), n_(n), m_(m), d_(d),
          x_(nodes * static_cast<std::size_t>(n), 0.0),
          y_(nodes * static_cast<std::size_t>(m), 0.0),
          z_(nodes * static_cast<std::size_t>(m) * static_cast<std::size_t>(d), 0.0) {}

    static SolutionField zeros_like(const DiscreteChainTree& tree, int n, int m) {
        return SolutionField(tree.size(), n, m, tree.d());
    }

    std::size_t size() const noexcept { return nodes_; }
    int n() const noexcept { return n_; }
    int m() const noexcept { return m_; }
    int d() const noexcept { return d_; }

    Eigen::Map<Vector> x(NodeId v) { return Eigen::Map<Vector>(&x_[v * n_], n_); }
    Eigen::Map<const Vector> x(NodeId v) const { return Eigen::Map<const Vector>(&x_[v * n_], n_); }
    Eigen::Map<Vector> y(NodeId v) { return Eigen::Map<Vector>(&y_[v * m_], m_); }
    Eigen::Map<const Vector> y(NodeId v) const { return Eigen::Map<const Vector>(&y_[v * m_], m_); }
    Eigen::Map<RowMajorMatrix> z(NodeId v) {
        return Eigen::Map<RowMajorMatrix>(&z_[v * m_ * d_], m_, d_);
    }
    Eigen::Map<const RowMajorMatrix> z(NodeId v) const {
        return Eigen::Map<const RowMajorMatrix>(&z_[v * m_ * d_], m_, d_);
    }

    const std::vector<double>& x_data() const noexcept { return x_; }
    const std::vector<double>& y_data() const noexcept { return y_; }
    const std::vector<double>& z_data() const noexcept { return z_; }

    bool same_shape(const SolutionField& o) const noexcept {
        return nodes_ == o.nodes_ && n_ == o.n_ && m_ == o.m_ && d_ == o.d_;
    }

    SolutionField& operator+=(const SolutionField& o) { return axpy(1.0, o); }
    SolutionField& operator-=(const SolutionField& o) { return axpy(-1.0, o); }

    /// this += a·o
    SolutionField& axpy(double a, const SolutionField& o) {
        require_same(o);
        for (std::size_t i = 0; i < x_.size(); ++i) x_[i] += a * o.x_[i];
        for (std::size_t i = 0; i < y_.size(); ++i) y_[i] += a * o.y_[i];
        for (std::size_t i = 0; i < z_.size(); ++i) z_[i] += a * o.z_[i];
        return *this;
    }

    SolutionField& operator*=(double a) {
        for (double& v : x_) v *= a;
        for (double& v : y_) v *= a;
        for (double& v : z_) v *= a;
        return *this;
    }

    friend SolutionField operator-(SolutionField a, const SolutionField& b) { return a -= b; }
    friend SolutionField operator+(SolutionField a, const SolutionField& b) { return a += b; }

    /// Largest absolute entry over X, Y and Z.
    double sup_norm() const {
        double s = 0.0;
        for (double v : x_) s = std::max(s, std::abs(v));
        for (double v : y_) s = std::max(s, std::abs(v));
        for (double v : z_) s = std::max(s, std::abs(v));
        return s;
    }

    bool all_finite() const {
        const auto fin = [](const std::vector<double>& a) {
            return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
        };
        return fin(x_) && fin(y_) && fin(z_);
    }

private:
    void require_same(const SolutionField& o) const {
        if (!same_shape(o)) throw ValidationError("solution fields have different shapes");
    }

    std::size_t nodes_ = 0;
    int n_ = 0;
    int m_ = 0;
    int d_ = 0;
    std::vector<double> x_;
    std::vector<double> y_;
    std::vector<double> z_;
};

/// Sup-norm distance between two fields.
inline double sup_distance(const SolutionField& a, const SolutionField& b) {
    return (a - b).sup_norm();
}

}  // namespace mcfbsde
