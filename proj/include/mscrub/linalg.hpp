#pragma once

// Dense symmetric / SPD matrix primitives. Everything here is templated on
// the scalar type; the rest of the library instantiates with double.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mscrub/error.hpp"

namespace mscrub {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Square matrix that is exactly symmetric: the constructor stores (M + Mᵀ)/2
/// and rejects non-finite entries.
template <typename Scalar>
class SymMatrix {
public:
    using Matrix = MatrixX<Scalar>;

    SymMatrix() = default;

    template <typename Derived>
    explicit SymMatrix(const Eigen::MatrixBase<Derived>& m) {
        require(m.rows() == m.cols(), ErrorCode::ShapeMismatch,
                "SymMatrix: matrix is " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()));
        Matrix tmp = m;
        require(tmp.allFinite(), ErrorCode::InvalidInput, "SymMatrix: non-finite entry");
        m_ = (tmp + tmp.transpose()) / Scalar(2);
    }

    [[nodiscard]] static SymMatrix identity(Index d) { return SymMatrix(Matrix::Identity(d, d)); }
    [[nodiscard]] static SymMatrix zero(Index d) { return SymMatrix(Matrix::Zero(d, d)); }

    [[nodiscard]] Index dim() const { return m_.rows(); }
    [[nodiscard]] const Matrix& matrix() const { return m_; }
    [[nodiscard]] Scalar operator()(Index i, Index j) const { return m_(i, j); }
    [[nodiscard]] Scalar trace() const { return m_.trace(); }

    friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) { return SymMatrix(a.m_ + b.m_); }
    friend SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) { return SymMatrix(a.m_ - b.m_); }
    friend SymMatrix operator*(Scalar s, const SymMatrix& a) { return SymMatrix(s * a.m_); }

private:
    Matrix m_;
};

using SymMatrixd = SymMatrix<double>;

template <typename Scalar>
struct SpectralDecomposition {
    VectorX<Scalar> eigenvalues;  // descending
    MatrixX<Scalar> eigenvectors; // orthonormal columns

    [[nodiscard]] MatrixX<Scalar> reconstruct() const {
        return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
    }
};

namespace detail {

// Flip v so that its largest-magnitude entry (first one on ties) is positive.
template <typename Derived>
void canonicalize_sign(Eigen::MatrixBase<Derived>&& v) {
    Index best = 0;
    for (Index i = 1; i < v.size(); ++i) {
        if (std::abs(v(i)) > std::abs(v(best))) {
            best = i;
        }
    }
    if (v(best) < 0) {
        v = -v;
    }
}

} // namespace detail

/// Eigendecomposition with eigenvalues sorted descending (stable with respect
/// to the solver's order on exact ties) and the deterministic sign convention.
template <typename Scalar>
[[nodiscard]] SpectralDecomposition<Scalar> sym_eig(const SymMatrix<Scalar>& m) {
    const Index d = m.dim();
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(m.matrix());
    require(solver.info() == Eigen::Success, ErrorCode::InvalidInput,
            "sym_eig: eigen solver failed");

    const auto& values = solver.eigenvalues();
    std::vector<Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return values(a) > values(b); });

    SpectralDecomposition<Scalar> out;
    out.eigenvalues.resize(d);
    out.eigenvectors.resize(d, d);
    for (Index j = 0; j < d; ++j) {
        const Index src = order[static_cast<std::size_t>(j)];
        out.eigenvalues(j) = values(src);
        out.eigenvectors.col(j) = solver.eigenvectors().col(src);
        detail::canonicalize_sign(out.eigenvectors.col(j));
    }
    return out;
}

/// 1e-10 · trace/d, falling back to the smallest normal number for a
/// zero-trace input so the NotPSD test stays meaningful.
template <typename Scalar>
[[nodiscard]] Scalar default_floor(const SymMatrix<Scalar>& m) {
    if (m.dim() == 0) {
        return std::numeric_limits<Scalar>::min();
    }
    const Scalar f = Scalar(1e-10) * std::abs(m.trace()) / static_cast<Scalar>(m.dim());
    return f > Scalar(0) ? f : std::numeric_limits<Scalar>::min();
}

enum class PowerMode {
    Clamp,  // negative powers: eigenvalues below the floor are raised to it
    Pseudo, // negative powers: eigenvalues below the floor map to zero
};

/// Matrix power of a PSD matrix through its spectrum.
///
/// Eigenvalues below `floor` become `floor` (negative power, Clamp), zero
/// (negative power, Pseudo) or zero (positive power) before powering. A
/// negative `floor` selects default_floor(m). Eigenvalues below -10·floor
/// mean the input is not PSD.
template <typename Scalar>
[[nodiscard]] SymMatrix<Scalar> spd_power(const SymMatrix<Scalar>& m, Scalar power,
                                          Scalar floor = Scalar(-1),
                                          PowerMode mode = PowerMode::Clamp) {
    if (floor < Scalar(0)) {
        floor = default_floor(m);
    }
    const auto eig = sym_eig(m);
    const Index d = m.dim();
    VectorX<Scalar> f(d);
    for (Index i = 0; i < d; ++i) {
        const Scalar lam = eig.eigenvalues(i);
        if (lam < Scalar(-10) * floor) {
            throw Error(ErrorCode::NotPSD, "spd_power: eigenvalue " + std::to_string(lam) +
                                               " below -10*floor (" + std::to_string(floor) + ")");
        }
        if (lam >= floor) {
            f(i) = std::pow(lam, power);
        } else if (power > Scalar(0) || mode == PowerMode::Pseudo) {
            f(i) = Scalar(0);
        } else {
            f(i) = std::pow(floor, power);
        }
    }
    return SymMatrix<Scalar>(eig.eigenvectors * f.asDiagonal() * eig.eigenvectors.transpose());
}

template <typename Scalar>
[[nodiscard]] SymMatrix<Scalar> spd_sqrt(const SymMatrix<Scalar>& m, Scalar floor = Scalar(-1)) {
    return spd_power(m, Scalar(0.5), floor);
}

template <typename Scalar>
[[nodiscard]] SymMatrix<Scalar> spd_inv_sqrt(const SymMatrix<Scalar>& m, Scalar floor = Scalar(-1),
                                             PowerMode mode = PowerMode::Clamp) {
    return spd_power(m, Scalar(-0.5), floor, mode);
}

template <typename Scalar>
struct SingularPair {
    Scalar sigma;
    VectorX<Scalar> vector;
};

/// Largest singular value of a symmetric matrix (= max |eigenvalue|) with its
/// eigenvector. Ties resolve to the earlier index of the descending
/// eigenvalue order; the zero matrix yields e₁.
template <typename Scalar>
[[nodiscard]] SingularPair<Scalar> top_singular_pair(const SymMatrix<Scalar>& m) {
    const Index d = m.dim();
    require(d > 0, ErrorCode::InvalidInput, "top_singular_pair: empty matrix");
    const auto eig = sym_eig(m);
    Index best = 0;
    for (Index i = 1; i < d; ++i) {
        if (std::abs(eig.eigenvalues(i)) > std::abs(eig.eigenvalues(best))) {
            best = i;
        }
    }
    SingularPair<Scalar> out{std::abs(eig.eigenvalues(best)), eig.eigenvectors.col(best)};
    if (out.sigma == Scalar(0)) {
        out.vector = VectorX<Scalar>::Unit(d, 0);
    }
    return out;
}

template <typename Scalar>
[[nodiscard]] Scalar spectral_norm(const SymMatrix<Scalar>& m) {
    return top_singular_pair(m).sigma;
}

/// Orthogonal projector onto the column space of `a`; singular values below
/// max(rel_tol·σ_max, abs_tol) are treated as zero.
template <typename Derived>
[[nodiscard]] MatrixX<typename Derived::Scalar>
column_space_projector(const Eigen::MatrixBase<Derived>& a,
                       typename Derived::Scalar rel_tol = typename Derived::Scalar(1e-10),
                       typename Derived::Scalar abs_tol = typename Derived::Scalar(0)) {
    using Scalar = typename Derived::Scalar;
    const Index rows = a.rows();
    MatrixX<Scalar> out = MatrixX<Scalar>::Zero(rows, rows);
    if (a.cols() == 0 || rows == 0) {
        return out;
    }
    Eigen::JacobiSVD<MatrixX<Scalar>> svd(a.eval(), Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) <= std::numeric_limits<Scalar>::min()) {
        return out;
    }
    Index rank = 0;
    const Scalar cutoff = std::max(rel_tol * s(0), abs_tol);
    while (rank < s.size() && s(rank) > cutoff) {
        ++rank;
    }
    const auto u = svd.matrixU().leftCols(rank);
    out = u * u.transpose();
    return out;
}

} // namespace mscrub
