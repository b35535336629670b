#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscrub/moments.hpp"

namespace mscrub {

struct GaussianSpec {
    std::vector<VectorXd> means;
    std::vector<SymMatrixd> covariances;
    VectorXd priors;
    std::uint64_t seed = 0;
    Index n = 0;

    [[nodiscard]] Index num_classes() const { return static_cast<Index>(means.size()); }
    [[nodiscard]] Index dim() const { return means.empty() ? 0 : means.front().size(); }
};

/// Class z sample = linear_z · u + offset_z with u uniform on [0,1]^d.
struct AffineMap {
    MatrixXd linear;
    VectorXd offset;
};

struct BoxClassSpec {
    std::vector<AffineMap> maps;
    VectorXd priors; // empty = uniform
    std::uint64_t seed = 0;
    Index n = 0;

    [[nodiscard]] Index num_classes() const { return static_cast<Index>(maps.size()); }
    [[nodiscard]] Index dim() const { return maps.empty() ? 0 : maps.front().linear.rows(); }
};

/// Row i draws its label from the priors and its features from
/// N(m_z, Σ_z) = m_z + Σ_z^{1/2}·ε, all from the counter stream (seed, i).
[[nodiscard]] LabeledDataset gen_gaussian(const GaussianSpec& spec);

/// Uniform samples on each class's parallelepiped. Bounds are the bounding box
/// of all class images.
[[nodiscard]] LabeledDataset gen_boxes(const BoxClassSpec& spec);

/// 2-D rotation by `degrees`.
[[nodiscard]] MatrixXd rotation2d(double degrees);

[[nodiscard]] GaussianSpec gaussian_spec_from_json(const nlohmann::json& j);
[[nodiscard]] BoxClassSpec box_spec_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const GaussianSpec& s);
[[nodiscard]] nlohmann::json to_json(const BoxClassSpec& s);

/// Dispatches on the "type" field ("gaussian" or "boxes").
[[nodiscard]] LabeledDataset generate_from_json(const nlohmann::json& j);

} // namespace mscrub
