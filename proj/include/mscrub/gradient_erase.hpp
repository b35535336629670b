#pragma once

#include <optional>
#include <vector>

#include "mscrub/moments.hpp"
#include "mscrub/optim.hpp"

namespace mscrub {

struct GradientEraseOptions {
    double alpha = 1.0;
    double beta = 1.0;
    /// Anchor weight. Unset: chosen so that an anchor term equal to the data's
    /// total variance would be 1% of the initial moment terms.
    std::optional<double> gamma;
    LbfgsOptions optimizer{10, 500, 5000, 1e-10, 0.0, 1e-4, 0.9};
};

struct LossTerms {
    double mean = 0.0;       // Σ_k λ_k ‖m_k − m̄‖²
    double covariance = 0.0; // Σ_k λ_k ‖Σ_k − Σ̄‖²_F
    double anchor = 0.0;     // (1/n) ‖X′ − X‖²_F
};

struct GradientEraseResult {
    LabeledDataset dataset; // edited features, same labels and bounds
    std::vector<double> trajectory;
    LossTerms initial;
    LossTerms final_terms;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Objective over sigmoid logits u, with x′ = lo + (hi − lo)·σ(u):
///   L = α·mean + β·covariance + γ·anchor.
/// Means and covariances are population moments of the edited data; m̄ and Σ̄
/// are their λ-weighted averages.
class MomentErasureObjective {
public:
    MomentErasureObjective(const LabeledDataset& original, double alpha, double beta, double gamma);

    [[nodiscard]] double operator()(const Eigen::VectorXd& logits, Eigen::VectorXd& grad) const;

    [[nodiscard]] LossTerms terms(const MatrixXd& edited) const;
    [[nodiscard]] MatrixXd decode(const Eigen::VectorXd& logits) const;
    [[nodiscard]] Eigen::VectorXd encode(const MatrixXd& features) const;

private:
    const LabeledDataset& original_;
    double alpha_, beta_, gamma_;
    VectorXd priors_;
    std::vector<Index> counts_;
    VectorXd lo_, span_;
};

/// Edits the dataset directly so class means and covariances agree, anchored
/// to the original rows. Requires bounds.
[[nodiscard]] GradientEraseResult gradient_erase(const LabeledDataset& ds, const GradientEraseOptions& options = {});

} // namespace mscrub
