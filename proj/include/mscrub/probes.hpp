#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscrub/moments.hpp"
#include "mscrub/optim.hpp"

namespace mscrub {

inline constexpr int kMaxProbeDegree = 4;

/// Σₙ C(d+n−1, n) for n = 1..degree.
[[nodiscard]] Index monomial_count(Index dim, int degree);

/// All distinct monomials of total degree 1..degree, grouped by degree and
/// lexicographic in the (non-decreasing) index tuple within a degree.
[[nodiscard]] VectorXd monomials(const VectorXd& x, int degree);
[[nodiscard]] MatrixXd monomial_features(const MatrixXd& rows, int degree);

struct Standardization {
    VectorXd shift;
    VectorXd scale;
};

/// η(x) = b + Wᵀ s(φ(x)) where φ lists the monomials and s standardizes them
/// with statistics recorded at training time.
struct PolynomialPredictor {
    int degree = 1;
    Index dim = 0;
    Index num_classes = 0;
    Standardization standardization;
    VectorXd bias;         // k
    MatrixXd coefficients; // F x k
    bool converged = true;
    int iterations = 0;

    [[nodiscard]] MatrixXd logits(const MatrixXd& rows) const;
};

struct ProbeConfig {
    double l2 = 1e-4;
    LbfgsOptions optimizer{10, 1000, 5000, 1e-6, 0.0, 1e-4, 0.9};
};

/// Mean cross-entropy + l2·‖W‖²_F (bias unpenalized), full batch.
[[nodiscard]] PolynomialPredictor train_probe(const LabeledDataset& train, int degree, const ProbeConfig& cfg = {});

/// Mean of −log softmax(η(x))_z in nats.
[[nodiscard]] double mean_cross_entropy(const MatrixXd& logits, std::span<const std::uint32_t> labels);
[[nodiscard]] double eval_probe(const PolynomialPredictor& p, const LabeledDataset& ds);

/// Entropy of the label prior, −Σ λ_j ln λ_j.
[[nodiscard]] double trivial_loss(const VectorXd& priors);
[[nodiscard]] VectorXd label_priors(const LabeledDataset& ds);

/// Seeded shuffle, first (1 − holdout) share for training, rest held out.
[[nodiscard]] std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double holdout,
                                                                      std::uint64_t seed);

struct DegreeVerdict {
    int degree = 0;
    double heldout_loss = 0.0;
    double margin = 0.0; // trivial − held-out loss
    bool guarded = false;
    bool converged = true;
};

struct GuardednessReport {
    double trivial_loss = 0.0;
    double tol = 0.0;
    std::vector<DegreeVerdict> degrees;
    MomentGapReport gaps;
};

/// For each degree: train on an 80% split, evaluate on the other 20%;
/// guarded iff the margin over the trivial loss is at most `tol`.
[[nodiscard]] GuardednessReport guardedness_report(const LabeledDataset& ds, std::span<const int> degrees,
                                                   std::uint64_t split_seed, double tol = 0.02,
                                                   const ProbeConfig& cfg = {});

[[nodiscard]] nlohmann::json to_json(const PolynomialPredictor& p);
[[nodiscard]] PolynomialPredictor predictor_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const GuardednessReport& r);

} // namespace mscrub
