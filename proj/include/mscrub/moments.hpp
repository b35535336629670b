#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mscrub/linalg.hpp"

namespace mscrub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-feature admissible range.
struct Bounds {
    VectorXd lo;
    VectorXd hi;
};

/// n samples of dimension d; labels are class indices in 0..k-1. An empty
/// label vector marks an unlabeled dataset (only label-free erasers apply).
struct LabeledDataset {
    MatrixXd features; // n x d
    std::vector<std::uint32_t> labels;
    Index num_classes = 0;
    std::optional<Bounds> bounds;

    [[nodiscard]] Index size() const { return features.rows(); }
    [[nodiscard]] Index dim() const { return features.cols(); }
    [[nodiscard]] bool has_labels() const { return !labels.empty() || features.rows() == 0; }
};

/// Checks the dataset invariants: finite features, labels in range, every
/// class present, features inside bounds when bounds are set.
void validate(const LabeledDataset& ds);

[[nodiscard]] std::vector<Index> class_counts(const LabeledDataset& ds);

[[nodiscard]] LabeledDataset select_rows(const LabeledDataset& ds, std::span<const std::size_t> rows);

/// Streaming first/second moment accumulator, one (count, mean, centered
/// scatter) triple per class. Merging uses the pairwise update of Chan et al.
class MomentAccumulator {
public:
    MomentAccumulator() = default;
    MomentAccumulator(Index dim, Index num_classes);

    /// Adds a block of rows. Per-class block statistics are formed two-pass
    /// and then merged, so the result depends on the block split only through
    /// round-off.
    void add(const Eigen::Ref<const MatrixXd>& rows, std::span<const std::uint32_t> labels);
    void merge(const MomentAccumulator& other);

    [[nodiscard]] Index dim() const { return dim_; }
    [[nodiscard]] Index num_classes() const { return static_cast<Index>(counts_.size()); }
    [[nodiscard]] Index count(Index c) const { return counts_[static_cast<std::size_t>(c)]; }
    [[nodiscard]] const VectorXd& mean(Index c) const { return means_[static_cast<std::size_t>(c)]; }
    [[nodiscard]] const MatrixXd& scatter(Index c) const { return scatter_[static_cast<std::size_t>(c)]; }
    [[nodiscard]] Index total() const;

private:
    Index dim_ = 0;
    std::vector<Index> counts_;
    std::vector<VectorXd> means_;
    std::vector<MatrixXd> scatter_;
};

[[nodiscard]] MomentAccumulator merge_moments(const MomentAccumulator& a, const MomentAccumulator& b);

inline constexpr Index kMomentChunkRows = 4096;

/// Accumulates ds in fixed 4096-row chunks, possibly on several threads, and
/// merges the chunks in index order. The result is independent of `threads`.
[[nodiscard]] MomentAccumulator accumulate(const LabeledDataset& ds, int threads = 1);

struct ClassMoments {
    Index dim = 0;
    Index num_classes = 0;
    std::vector<Index> counts;
    VectorXd priors;
    std::vector<VectorXd> means;
    std::vector<SymMatrixd> covariances;     // after shrinkage
    std::vector<SymMatrixd> raw_covariances; // 1/n_k normalization, no shrinkage
    VectorXd global_mean;
    SymMatrixd global_covariance;
    MatrixXd cross_covariance; // d x k, column j = λ_j (m_j - m_glob)
    double shrinkage = 0.0;
};

inline constexpr double kDefaultShrinkage = 1e-4;

/// Σ_k = scatter_k / n_k + shrinkage · (trace/d) · I. Every class needs at
/// least two samples.
[[nodiscard]] ClassMoments fit_moments(const LabeledDataset& ds, double shrinkage = kDefaultShrinkage,
                                       int threads = 1);
[[nodiscard]] ClassMoments moments_from(const MomentAccumulator& acc, double shrinkage = kDefaultShrinkage);

/// ClassMoments of a mixture given its population parameters (counts are
/// left at 0).
[[nodiscard]] ClassMoments population_moments(const VectorXd& priors, std::span<const VectorXd> means,
                                              std::span<const SymMatrixd> covariances, double shrinkage = 0.0);

/// Moments of P·x + b given the moments of x; shrinkage is re-applied to the
/// mapped raw covariances.
[[nodiscard]] ClassMoments transform_moments(const ClassMoments& m, const MatrixXd& map, const VectorXd& shift);

enum class CovarianceWeighting { Prior, Uniform };

/// Average of the class covariances (raw or shrunk), λ-weighted by default.
[[nodiscard]] SymMatrixd average_covariance(const ClassMoments& m,
                                            CovarianceWeighting weighting = CovarianceWeighting::Prior,
                                            bool regularized = false);

struct MomentGapReport {
    std::vector<double> mean_gaps;
    std::vector<double> covariance_gaps_spectral;
    std::vector<double> covariance_gaps_frobenius;
    double max_mean_gap = 0.0;
    double max_covariance_gap_spectral = 0.0;
    double max_covariance_gap_frobenius = 0.0;
};

/// ‖m_k − m_glob‖₂ and ‖Σ_k − Σ̄‖ (spectral, Frobenius) per class, using the
/// unshrunk covariances and the chosen average.
[[nodiscard]] MomentGapReport moment_gap_report(const ClassMoments& m,
                                                CovarianceWeighting weighting = CovarianceWeighting::Prior);

struct ZScoreRecord {
    VectorXd shift;
    VectorXd scale;
    std::vector<bool> constant;
};

/// Zero-mean unit-variance (population) columns; constant columns map to 0.
/// Bounds, when present, are carried through the same affine map.
[[nodiscard]] std::pair<LabeledDataset, ZScoreRecord> zscore_normalize(const LabeledDataset& ds);
[[nodiscard]] LabeledDataset zscore_inverse(const ZScoreRecord& record, const LabeledDataset& ds);

// JSON views. Matrices are nested row-major arrays.
[[nodiscard]] nlohmann::json matrix_to_json(const MatrixXd& m);
[[nodiscard]] nlohmann::json vector_to_json(const VectorXd& v);
[[nodiscard]] MatrixXd matrix_from_json(const nlohmann::json& j);
[[nodiscard]] VectorXd vector_from_json(const nlohmann::json& j);

[[nodiscard]] nlohmann::json to_json(const ClassMoments& m);
[[nodiscard]] nlohmann::json to_json(const MomentGapReport& r);
[[nodiscard]] nlohmann::json to_json(const ZScoreRecord& r);
[[nodiscard]] ZScoreRecord zscore_record_from_json(const nlohmann::json& j);

} // namespace mscrub
