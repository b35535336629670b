#include "mscrub/datagen.hpp"

#include <cmath>
#include <numbers>

#include "mscrub/rng.hpp"

namespace mscrub {

namespace {

VectorXd normalized_priors(const VectorXd& priors, Index k) {
    if (priors.size() == 0) {
        return VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    }
    require(priors.size() == k, ErrorCode::ShapeMismatch, "priors length differs from class count");
    require((priors.array() >= 0.0).all() && priors.allFinite(), ErrorCode::InvalidInput, "priors must be nonnegative");
    const double total = priors.sum();
    require(std::abs(total - 1.0) <= 1e-9, ErrorCode::InvalidInput, "priors must sum to 1");
    return priors / total;
}

std::uint32_t draw_label(CounterRng& rng, const VectorXd& priors) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (Index c = 0; c + 1 < priors.size(); ++c) {
        acc += priors(c);
        if (u < acc) {
            return static_cast<std::uint32_t>(c);
        }
    }
    return static_cast<std::uint32_t>(priors.size() - 1);
}

} // namespace

LabeledDataset gen_gaussian(const GaussianSpec& spec) {
    const Index k = spec.num_classes();
    const Index d = spec.dim();
    require(k >= 1 && d >= 1, ErrorCode::InvalidInput, "gaussian spec needs at least one class and dimension");
    require(static_cast<Index>(spec.covariances.size()) == k, ErrorCode::ShapeMismatch,
            "one covariance per class required");
    require(spec.n >= 0, ErrorCode::InvalidInput, "negative sample count");
    const VectorXd priors = normalized_priors(spec.priors, k);
    std::vector<MatrixXd> roots;
    for (Index c = 0; c < k; ++c) {
        const auto i = static_cast<std::size_t>(c);
        require(spec.means[i].size() == d && spec.covariances[i].dim() == d, ErrorCode::ShapeMismatch,
                "class " + std::to_string(c) + " has the wrong dimension");
        roots.push_back(spd_sqrt(spec.covariances[i]).matrix());
    }

    LabeledDataset ds;
    ds.num_classes = k;
    ds.features.resize(spec.n, d);
    ds.labels.resize(static_cast<std::size_t>(spec.n));
    VectorXd eps(d);
    for (Index row = 0; row < spec.n; ++row) {
        CounterRng rng(spec.seed, static_cast<std::uint64_t>(row));
        const auto z = draw_label(rng, priors);
        for (Index j = 0; j < d; ++j) {
            eps(j) = rng.normal();
        }
        ds.labels[static_cast<std::size_t>(row)] = z;
        ds.features.row(row) = (spec.means[z] + roots[z] * eps).transpose();
    }
    return ds;
}

LabeledDataset gen_boxes(const BoxClassSpec& spec) {
    const Index k = spec.num_classes();
    const Index d = spec.dim();
    require(k >= 1 && d >= 1, ErrorCode::InvalidInput, "box spec needs at least one class and dimension");
    require(spec.n >= 0, ErrorCode::InvalidInput, "negative sample count");
    const VectorXd priors = normalized_priors(spec.priors, k);

    Bounds bounds{VectorXd::Constant(d, std::numeric_limits<double>::infinity()),
                  VectorXd::Constant(d, -std::numeric_limits<double>::infinity())};
    for (const auto& map : spec.maps) {
        require(map.linear.rows() == d && map.linear.cols() == d && map.offset.size() == d, ErrorCode::ShapeMismatch,
                "box maps must be d x d with a d-vector offset");
        const double det = map.linear.determinant();
        require(std::isfinite(det) && std::abs(det) > 1e-12 * std::max(1.0, map.linear.cwiseAbs().maxCoeff()),
                ErrorCode::InvalidInput, "box map is singular");
        // Image of [0,1]^d: extremes per coordinate come from the sign pattern of each row.
        const VectorXd lo = map.offset + map.linear.cwiseMin(0.0).rowwise().sum();
        const VectorXd hi = map.offset + map.linear.cwiseMax(0.0).rowwise().sum();
        bounds.lo = bounds.lo.cwiseMin(lo);
        bounds.hi = bounds.hi.cwiseMax(hi);
    }

    LabeledDataset ds;
    ds.num_classes = k;
    ds.features.resize(spec.n, d);
    ds.labels.resize(static_cast<std::size_t>(spec.n));
    VectorXd u(d);
    for (Index row = 0; row < spec.n; ++row) {
        CounterRng rng(spec.seed, static_cast<std::uint64_t>(row));
        const auto z = draw_label(rng, priors);
        for (Index j = 0; j < d; ++j) {
            u(j) = rng.uniform();
        }
        ds.labels[static_cast<std::size_t>(row)] = z;
        const VectorXd x = spec.maps[z].linear * u + spec.maps[z].offset;
        ds.features.row(row) = x.cwiseMax(bounds.lo).cwiseMin(bounds.hi).transpose();
    }
    ds.bounds = std::move(bounds);
    return ds;
}

MatrixXd rotation2d(double degrees) {
    const double t = degrees * std::numbers::pi / 180.0;
    MatrixXd r(2, 2);
    r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    return r;
}

GaussianSpec gaussian_spec_from_json(const nlohmann::json& j) {
    try {
        GaussianSpec s;
        for (const auto& m : j.at("means")) {
            s.means.push_back(vector_from_json(m));
        }
        for (const auto& c : j.at("covariances")) {
            s.covariances.emplace_back(matrix_from_json(c));
        }
        if (j.contains("priors")) {
            s.priors = vector_from_json(j.at("priors"));
        }
        s.seed = j.value("seed", std::uint64_t{0});
        s.n = j.at("n").get<Index>();
        if (j.contains("k")) {
            require(j.at("k").get<Index>() == s.num_classes(), ErrorCode::MalformedFile, "k disagrees with means");
        }
        if (j.contains("d")) {
            require(j.at("d").get<Index>() == s.dim(), ErrorCode::MalformedFile, "d disagrees with means");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("gaussian spec: ") + e.what());
    }
}

BoxClassSpec box_spec_from_json(const nlohmann::json& j) {
    try {
        BoxClassSpec s;
        for (const auto& m : j.at("maps")) {
            AffineMap map;
            map.linear = matrix_from_json(m.at("linear"));
            map.offset = m.contains("offset") ? vector_from_json(m.at("offset")) : VectorXd::Zero(map.linear.rows());
            s.maps.push_back(std::move(map));
        }
        if (j.contains("priors")) {
            s.priors = vector_from_json(j.at("priors"));
        }
        s.seed = j.value("seed", std::uint64_t{0});
        s.n = j.at("n").get<Index>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("box spec: ") + e.what());
    }
}

nlohmann::json to_json(const GaussianSpec& s) {
    auto means = nlohmann::json::array();
    auto covs = nlohmann::json::array();
    for (Index c = 0; c < s.num_classes(); ++c) {
        means.push_back(vector_to_json(s.means[static_cast<std::size_t>(c)]));
        covs.push_back(matrix_to_json(s.covariances[static_cast<std::size_t>(c)].matrix()));
    }
    nlohmann::json j{{"type", "gaussian"}, {"k", s.num_classes()}, {"d", s.dim()}, {"means", std::move(means)},
                     {"covariances", std::move(covs)}, {"seed", s.seed}, {"n", s.n}};
    if (s.priors.size() > 0) {
        j["priors"] = vector_to_json(s.priors);
    }
    return j;
}

nlohmann::json to_json(const BoxClassSpec& s) {
    auto maps = nlohmann::json::array();
    for (const auto& m : s.maps) {
        maps.push_back({{"linear", matrix_to_json(m.linear)}, {"offset", vector_to_json(m.offset)}});
    }
    nlohmann::json j{{"type", "boxes"}, {"k", s.num_classes()}, {"d", s.dim()}, {"maps", std::move(maps)},
                     {"seed", s.seed}, {"n", s.n}};
    if (s.priors.size() > 0) {
        j["priors"] = vector_to_json(s.priors);
    }
    return j;
}

LabeledDataset generate_from_json(const nlohmann::json& j) {
    require(j.is_object() && j.contains("type"), ErrorCode::MalformedFile, "spec needs a \"type\" field");
    const auto type = j.at("type").get<std::string>();
    if (type == "gaussian") {
        return gen_gaussian(gaussian_spec_from_json(j));
    }
    if (type == "boxes") {
        return gen_boxes(box_spec_from_json(j));
    }
    throw Error(ErrorCode::MalformedFile, "unknown spec type '" + type + "'");
}

} // namespace mscrub
