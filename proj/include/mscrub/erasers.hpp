#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mscrub/moments.hpp"
#include "mscrub/transport.hpp"

namespace mscrub {

enum class EraserMethod {
    Leace,
    Qleace,
    AlfQleace,
    RandomProjection,
    LeaceAlfQleace, // ALF-QLEACE projection composed after LEACE
    Identity,
};

[[nodiscard]] std::string_view to_string(EraserMethod method);
[[nodiscard]] EraserMethod eraser_method_from_string(std::string_view name);

struct FitMetadata {
    double tol = 0.0;
    int iterations = 0;
    double residual = 0.0;
    bool converged = true;
    std::optional<std::uint64_t> seed;
    std::vector<double> gap_history; // ALF-QLEACE: max-class spectral gap before/after each deflation
};

/// Label-free eraser x ↦ P x + b.
struct AffineEraser {
    EraserMethod method = EraserMethod::Identity;
    MatrixXd projection;
    VectorXd bias;
    Index rank = 0;
    FitMetadata metadata;

    [[nodiscard]] Index dim() const { return projection.rows(); }
    [[nodiscard]] VectorXd apply(const VectorXd& x) const { return projection * x + bias; }
    /// Row-wise map of an n x d block.
    [[nodiscard]] MatrixXd apply_rows(const MatrixXd& rows) const;
};

/// Class-dependent eraser: sample x with label i goes to A_i (x − m_i) + m̄.
struct ClassEraser {
    std::vector<GaussianMap<double>> maps;
    VectorXd target_mean;
    SymMatrixd target_covariance;
    FitMetadata metadata;

    [[nodiscard]] Index dim() const { return target_mean.size(); }
    [[nodiscard]] Index num_classes() const { return static_cast<Index>(maps.size()); }
    [[nodiscard]] VectorXd apply(const VectorXd& x, std::uint32_t label) const;
};

using Eraser = std::variant<AffineEraser, ClassEraser>;

[[nodiscard]] AffineEraser identity_eraser(Index d);

/// LEACE: W = Σ^{-1/2} (pseudo), M = W Σ_XZ, P = I − W⁺ (M M⁺) W,
/// b = (I − P) m_glob.
[[nodiscard]] AffineEraser fit_leace(const ClassMoments& m);

[[nodiscard]] BarycenterSolution<double> gaussian_barycenter(const ClassMoments& m, double tol = 1e-9,
                                                             int max_iter = 500);

/// QLEACE: per-class optimal transport maps onto the Gaussian barycenter of
/// the (shrunk) class moments. Barycenter non-convergence is recorded in
/// metadata.converged, not thrown.
[[nodiscard]] ClassEraser fit_qleace(const ClassMoments& m, double tol = 1e-9, int max_iter = 500);

struct AlfOptions {
    Index rank_budget = 15;
    double tol = 1e-10;
    CovarianceWeighting weighting = CovarianceWeighting::Prior;
};

/// Greedy rank-1 deflation of the worst class-vs-average covariance gap.
/// Works on the unshrunk covariances of `m` (expected to be post-LEACE).
/// The bias keeps the global mean fixed: b = (I − P) m_glob.
[[nodiscard]] AffineEraser fit_alf_qleace(const ClassMoments& m, const AlfOptions& options = {});

/// Orthogonal projector onto a seeded uniformly random rank-dimensional subspace.
[[nodiscard]] AffineEraser fit_random_projection(Index d, Index rank, std::uint64_t seed);

/// x ↦ outer(inner(x)).
[[nodiscard]] AffineEraser compose(const AffineEraser& outer, const AffineEraser& inner, EraserMethod method);

/// Applies an eraser to every row. Labels are kept; bounds are dropped since
/// erased values may leave the box. Only a ClassEraser reads labels.
[[nodiscard]] LabeledDataset apply_eraser(const Eraser& eraser, const LabeledDataset& ds);

/// Clips features into ds.bounds (no-op without bounds).
void clip_to_bounds(LabeledDataset& ds, const Bounds& bounds);

} // namespace mscrub
