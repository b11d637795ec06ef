#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "mcfbsde/errors.hpp"

namespace mcfbsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace linalg {

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline double min_eigenvalue(const Matrix& a) {
    if (a.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Matrix& a) {
    if (a.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

inline bool all_finite(const Eigen::Ref<const Matrix>& a) { return a.allFinite(); }

inline void require_dims(const Matrix& a, Eigen::Index rows, Eigen::Index cols,
                         const std::string& what) {
    if (a.rows() != rows || a.cols() != cols) {
        throw ValidationError(what + ": expected " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", got " + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()));
    }
}

inline void require_size(const Vector& v, Eigen::Index size, const std::string& what) {
    if (v.size() != size) {
        throw ValidationError(what + ": expected length " + std::to_string(size) + ", got " +
                              std::to_string(v.size()));
    }
}

}  // namespace linalg
}  // namespace mcfbsde
