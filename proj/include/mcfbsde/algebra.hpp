#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "mcfbsde/chain.hpp"
#include "mcfbsde/errors.hpp"
#include "mcfbsde/linalg.hpp"

namespace mcfbsde {

inline constexpr double kMaxGCondition = 1e8;

enum class GCase { n_le_m, n_gt_m };

/// Full-rank m×n coupling matrix with its Gram inverses and projectors.
class GStructure {
public:
    explicit GStructure(Matrix g) : g_(std::move(g)) {
        if (g_.size() == 0) throw ValidationError("G must be non-empty");
        if (!g_.allFinite()) throw ValidationError("G has non-finite entries");
        const Eigen::JacobiSVD<Matrix> svd(g_);
        const Vector sv = svd.singularValues();
        const double smax = sv(0);
        const double smin = sv(sv.size() - 1);
        if (!(smax > 0.0) || smin <= 1e-10 * smax)
            throw ValidationError("G is not of full rank");
        condition_ = smax / smin;
        if (condition_ > kMaxGCondition)
            throw ValidationError("G condition number " + detail::fmt_double(condition_) +
                                  " exceeds 1e8");
        case_ = n() <= m() ? GCase::n_le_m : GCase::n_gt_m;
        if (n() <= m()) {
            gtg_inv_ = (g_.transpose() * g_).ldlt().solve(Matrix::Identity(n(), n()));
            gtg_inv_ = linalg::symmetrize(gtg_inv_);
            range_proj_ = linalg::symmetrize(g_ * gtg_inv_ * g_.transpose());
        }
        if (n() >= m()) {
            ggt_inv_ = (g_ * g_.transpose()).ldlt().solve(Matrix::Identity(m(), m()));
            ggt_inv_ = linalg::symmetrize(ggt_inv_);
            row_proj_ = linalg::symmetrize(g_.transpose() * ggt_inv_ * g_);
        }
    }

    const Matrix& G() const noexcept { return g_; }
    int n() const noexcept { return static_cast<int>(g_.cols()); }
    int m() const noexcept { return static_cast<int>(g_.rows()); }
    GCase case_tag() const noexcept { return case_; }
    double condition_number() const noexcept { return condition_; }

    /// (G*G)⁻¹, available when n ≤ m.
    const Matrix& gtg_inverse() const {
        if (n() > m()) throw ValidationError("(G*G) is singular when n > m");
        return gtg_inv_;
    }
    /// (GG*)⁻¹, available when n ≥ m.
    const Matrix& ggt_inverse() const {
        if (n() < m()) throw ValidationError("(GG*) is singular when n < m");
        return ggt_inv_;
    }
    /// P = G(G*G)⁻¹G* (m×m), available when n ≤ m.
    const Matrix& range_projector() const {
        gtg_inverse();
        return range_proj_;
    }
    /// P′ = G*(GG*)⁻¹G (n×n), available when n ≥ m.
    const Matrix& row_projector() const {
        ggt_inverse();
        return row_proj_;
    }

private:
    Matrix g_;
    GCase case_ = GCase::n_le_m;
    double condition_ = 1.0;
    Matrix gtg_inv_, ggt_inv_, range_proj_, row_proj_;
};

/// u = (x, y, z) with x ∈ ℝⁿ, y ∈ ℝᵐ, z ∈ ℝ^{m×d}.
struct TripleVector {
    Vector x;
    Vector y;
    Matrix z;

    static TripleVector zero(int n, int m, int d) {
        return {Vector::Zero(n), Vector::Zero(m), Matrix::Zero(m, d)};
    }
    TripleVector operator-(const TripleVector& o) const { return {x - o.x, y - o.y, z - o.z}; }
    TripleVector operator+(const TripleVector& o) const { return {x + o.x, y + o.y, z + o.z}; }
};

/// Coefficients b, σ, f, Φ of the forward-backward system.  States are 0-based.
struct CoefficientSet {
    using VectorFn =
        std::function<Vector(double t, int s, const Vector& x, const Vector& y, const Matrix& z)>;
    using MatrixFn =
        std::function<Matrix(double t, int s, const Vector& x, const Vector& y, const Matrix& z)>;
    using TerminalFn = std::function<Vector(int s, const Vector& x)>;

    int n = 0;
    int m = 0;
    int d = 0;
    VectorFn b;      // ℝⁿ
    MatrixFn sigma;  // ℝ^{n×d}
    VectorFn f;      // ℝᵐ
    TerminalFn Phi;  // ℝᵐ

    Vector b_at(double t, int s, const Vector& x, const Vector& y, const Matrix& z) const {
        return checked(b(t, s, x, y, z), n, "b", t, s);
    }
    Matrix sigma_at(double t, int s, const Vector& x, const Vector& y, const Matrix& z) const {
        Matrix out = sigma(t, s, x, y, z);
        if (out.rows() != n || out.cols() != d)
            throw ValidationError("coefficient sigma returned " + std::to_string(out.rows()) +
                                  "x" + std::to_string(out.cols()) + ", expected " +
                                  std::to_string(n) + "x" + std::to_string(d));
        if (!out.allFinite()) throw non_finite("sigma", t, s);
        return out;
    }
    Vector f_at(double t, int s, const Vector& x, const Vector& y, const Matrix& z) const {
        return checked(f(t, s, x, y, z), m, "f", t, s);
    }
    Vector Phi_at(int s, const Vector& x) const {
        Vector out = Phi(s, x);
        if (out.size() != m)
            throw ValidationError("coefficient Phi returned length " + std::to_string(out.size()) +
                                  ", expected " + std::to_string(m));
        if (!out.allFinite()) throw SolverError("coefficient Phi returned a non-finite value");
        return out;
    }

private:
    static SolverError non_finite(const char* name, double t, int s) {
        return SolverError(std::string("coefficient ") + name + " returned a non-finite value at t=" +
                           detail::fmt_double(t) + ", state " + std::to_string(s + 1));
    }
    static Vector checked(Vector out, int size, const char* name, double t, int s) {
        if (out.size() != size)
            throw ValidationError(std::string("coefficient ") + name + " returned length " +
                                  std::to_string(out.size()) + ", expected " + std::to_string(size));
        if (!out.allFinite()) throw non_finite(name, t, s);
        return out;
    }
};

/// Coefficient set with every map identically zero.
inline CoefficientSet zero_coefficients(int n, int m, int d) {
    CoefficientSet c;
    c.n = n;
    c.m = m;
    c.d = d;
    c.b = [n](double, int, const Vector&, const Vector&, const Matrix&) { return Vector::Zero(n); };
    c.sigma = [n, d](double, int, const Vector&, const Vector&, const Matrix&) {
        return Matrix::Zero(n, d);
    };
    c.f = [m](double, int, const Vector&, const Vector&, const Matrix&) { return Vector::Zero(m); };
    c.Phi = [m](int, const Vector&) { return Vector::Zero(m); };
    return c;
}

/// [u¹, u²] = (x¹, x²) + (y¹, y²) + tr(z¹ z²*).
inline double bracket(const TripleVector& u1, const TripleVector& u2) {
    if (u1.x.size() != u2.x.size() || u1.y.size() != u2.y.size() || u1.z.rows() != u2.z.rows() ||
        u1.z.cols() != u2.z.cols())
        throw ValidationError("bracket: dimension mismatch");
    return u1.x.dot(u2.x) + u1.y.dot(u2.y) + (u1.z.array() * u2.z.array()).sum();
}

/// F(t, u) = (−G*f, Gb, 0).
inline TripleVector eval_F(const CoefficientSet& c, const GStructure& g, double t, int state,
                           const TripleVector& u) {
    const Vector f = c.f_at(t, state, u.x, u.y, u.z);
    const Vector b = c.b_at(t, state, u.x, u.y, u.z);
    return {-g.G().transpose() * f, g.G() * b, Matrix::Zero(c.m, c.d)};
}

/// H(t, u) = (0, 0, Gσ).
inline TripleVector eval_H(const CoefficientSet& c, const GStructure& g, double t, int state,
                           const TripleVector& u) {
    const Matrix s = c.sigma_at(t, state, u.x, u.y, u.z);
    return {Vector::Zero(c.n), Vector::Zero(c.m), g.G() * s};
}

/// tr(C Q D*) for symmetric positive semidefinite Q.
inline double weighted_bracket(const Matrix& c, const Matrix& dm, const Matrix& q) {
    if (q.rows() != q.cols() || c.cols() != q.rows() || dm.cols() != q.rows() ||
        c.rows() != dm.rows())
        throw ValidationError("weighted_bracket: dimension mismatch");
    const double scale = std::max(1.0, q.norm());
    if ((q - q.transpose()).norm() > 1e-10 * scale)
        throw ValidationError("weighted_bracket: Q is not symmetric");
    if (linalg::min_eigenvalue(q) < -1e-10 * scale)
        throw ValidationError("weighted_bracket: Q is not positive semidefinite");
    return (c * q * dm.transpose()).trace();
}

/// Rewrites the coefficients for the dm-driven form: b** = b − σ A m and
/// f** = f + z A m, with m the unit vector of the current state.
inline CoefficientSet to_chain_driven(const CoefficientSet& c, const ChainModel& model) {
    CoefficientSet out = c;
    out.b = [c, model](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        const Vector am = model.generator(t).col(s);
        return Vector(c.b_at(t, s, x, y, z) - c.sigma_at(t, s, x, y, z) * am);
    };
    out.f = [c, model](double t, int s, const Vector& x, const Vector& y, const Matrix& z) {
        const Vector am = model.generator(t).col(s);
        return Vector(c.f_at(t, s, x, y, z) + z * am);
    };
    return out;
}

}  // namespace mcfbsde
