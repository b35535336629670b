#pragma once

// Closed-form optimal transport between Gaussians and the fixed-point solver
// for their Wasserstein-2 barycenter.

#include <span>
#include <vector>

#include "mscrub/linalg.hpp"

namespace mscrub {

/// Affine map T(x) = A (x − source_mean) + target_mean.
template <typename Scalar>
struct GaussianMap {
    SymMatrix<Scalar> linear;
    VectorX<Scalar> source_mean;
    VectorX<Scalar> target_mean;

    [[nodiscard]] VectorX<Scalar> shift() const { return target_mean - linear.matrix() * source_mean; }

    [[nodiscard]] VectorX<Scalar> operator()(const VectorX<Scalar>& x) const {
        return linear.matrix() * (x - source_mean) + target_mean;
    }
};

/// A = Σ_P^{-1/2} (Σ_P^{1/2} Σ_Q Σ_P^{1/2})^{1/2} Σ_P^{-1/2}.
template <typename Scalar>
[[nodiscard]] SymMatrix<Scalar> ot_gaussian_linear(const SymMatrix<Scalar>& source_cov,
                                                   const SymMatrix<Scalar>& target_cov) {
    require(source_cov.dim() == target_cov.dim(), ErrorCode::ShapeMismatch, "ot map: covariance dims differ");
    const auto root = spd_sqrt(source_cov);
    const auto inv_root = spd_inv_sqrt(source_cov);
    const SymMatrix<Scalar> middle(root.matrix() * target_cov.matrix() * root.matrix());
    const auto middle_root = spd_sqrt(middle);
    return SymMatrix<Scalar>(inv_root.matrix() * middle_root.matrix() * inv_root.matrix());
}

template <typename Scalar>
[[nodiscard]] GaussianMap<Scalar> ot_gaussian_map(const VectorX<Scalar>& source_mean,
                                                  const SymMatrix<Scalar>& source_cov,
                                                  const VectorX<Scalar>& target_mean,
                                                  const SymMatrix<Scalar>& target_cov) {
    require(source_mean.size() == source_cov.dim() && target_mean.size() == target_cov.dim(),
            ErrorCode::ShapeMismatch, "ot map: mean/covariance dims differ");
    return {ot_gaussian_linear(source_cov, target_cov), source_mean, target_mean};
}

/// Bures form: ‖m₁−m₂‖² + tr(Σ₁ + Σ₂ − 2 (Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}), clamped at 0.
template <typename Scalar>
[[nodiscard]] Scalar w2_gaussian_sq(const VectorX<Scalar>& m1, const SymMatrix<Scalar>& cov1,
                                    const VectorX<Scalar>& m2, const SymMatrix<Scalar>& cov2) {
    require(m1.size() == m2.size() && cov1.dim() == cov2.dim() && m1.size() == cov1.dim(),
            ErrorCode::ShapeMismatch, "w2: dimension mismatch");
    const auto root = spd_sqrt(cov1);
    const SymMatrix<Scalar> middle(root.matrix() * cov2.matrix() * root.matrix());
    const Scalar bures = cov1.trace() + cov2.trace() - Scalar(2) * spd_sqrt(middle).trace();
    return (m1 - m2).squaredNorm() + std::max(bures, Scalar(0));
}

template <typename Scalar>
struct BarycenterSolution {
    VectorX<Scalar> mean;
    SymMatrix<Scalar> covariance;
    Scalar residual = Scalar(0);
    int iterations = 0;
    bool converged = false;
};

namespace detail {

// Σ_i λ_i (S^{1/2} Σ_i S^{1/2})^{1/2}
template <typename Scalar>
MatrixX<Scalar> barycenter_image(const SymMatrix<Scalar>& s_root, std::span<const Scalar> weights,
                                 std::span<const SymMatrix<Scalar>> covs) {
    const Index d = s_root.dim();
    MatrixX<Scalar> sum = MatrixX<Scalar>::Zero(d, d);
    for (std::size_t i = 0; i < covs.size(); ++i) {
        const SymMatrix<Scalar> inner(s_root.matrix() * covs[i].matrix() * s_root.matrix());
        sum += weights[i] * spd_sqrt(inner).matrix();
    }
    return sum;
}

} // namespace detail

/// ‖S − Σ λ_i (S^{1/2} Σ_i S^{1/2})^{1/2}‖_F / ‖S‖_F.
template <typename Scalar>
[[nodiscard]] Scalar barycenter_residual(const SymMatrix<Scalar>& s, std::span<const Scalar> weights,
                                         std::span<const SymMatrix<Scalar>> covs) {
    const auto image = detail::barycenter_image(spd_sqrt(s), weights, covs);
    return (s.matrix() - image).norm() / s.matrix().norm();
}

/// Fixed-point iteration
///   S ← S^{-1/2} (Σ λ_i (S^{1/2} Σ_i S^{1/2})^{1/2})² S^{-1/2}
/// started at S₀ = Σ λ_i Σ_i. `iterations` counts fixed-point sweeps (one
/// residual evaluation each); running out of sweeps sets converged = false.
template <typename Scalar>
[[nodiscard]] BarycenterSolution<Scalar>
gaussian_barycenter(std::span<const Scalar> weights, std::span<const VectorX<Scalar>> means,
                    std::span<const SymMatrix<Scalar>> covs, Scalar tol = Scalar(1e-9), int max_iter = 500) {
    require(!covs.empty() && weights.size() == covs.size() && means.size() == covs.size(),
            ErrorCode::ShapeMismatch, "barycenter: weights/means/covariances disagree in count");
    require(max_iter >= 1, ErrorCode::InvalidInput, "barycenter: max_iter must be >= 1");
    const Index d = covs[0].dim();
    Scalar total = 0;
    for (std::size_t i = 0; i < covs.size(); ++i) {
        require(covs[i].dim() == d && means[i].size() == d, ErrorCode::ShapeMismatch,
                "barycenter: dimension mismatch");
        require(weights[i] >= Scalar(0), ErrorCode::InvalidInput, "barycenter: negative weight");
        total += weights[i];
    }
    require(total > Scalar(0), ErrorCode::InvalidInput, "barycenter: weights sum to zero");
    std::vector<Scalar> w(weights.begin(), weights.end());
    for (auto& x : w) {
        x /= total;
    }

    BarycenterSolution<Scalar> out;
    out.mean = VectorX<Scalar>::Zero(d);
    MatrixX<Scalar> start = MatrixX<Scalar>::Zero(d, d);
    for (std::size_t i = 0; i < covs.size(); ++i) {
        out.mean += w[i] * means[i];
        start += w[i] * covs[i].matrix();
    }
    SymMatrix<Scalar> s(start);

    for (int it = 1; it <= max_iter; ++it) {
        const auto root = spd_sqrt(s);
        const auto image = detail::barycenter_image(root, std::span<const Scalar>(w), covs);
        out.residual = (s.matrix() - image).norm() / s.matrix().norm();
        out.iterations = it;
        if (out.residual <= tol) {
            out.converged = true;
            break;
        }
        const auto inv_root = spd_inv_sqrt(s);
        s = SymMatrix<Scalar>(inv_root.matrix() * image * image * inv_root.matrix());
    }
    if (!out.converged) {
        out.residual = barycenter_residual(s, std::span<const Scalar>(w), covs);
    }
    out.covariance = std::move(s);
    return out;
}

} // namespace mscrub
