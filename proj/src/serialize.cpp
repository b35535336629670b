#include "mscrub/serialize.hpp"

#include "mscrub/io.hpp"

namespace mscrub {

namespace {

nlohmann::json metadata_to_json(const FitMetadata& m) {
    nlohmann::json j{{"tol", m.tol},
                     {"iterations", m.iterations},
                     {"residual", m.residual},
                     {"converged", m.converged},
                     {"gap_history", m.gap_history}};
    if (m.seed) {
        j["seed"] = *m.seed;
    }
    return j;
}

FitMetadata metadata_from_json(const nlohmann::json& j) {
    FitMetadata m;
    m.tol = j.at("tol").get<double>();
    m.iterations = j.at("iterations").get<int>();
    m.residual = j.at("residual").get<double>();
    m.converged = j.value("converged", true);
    if (j.contains("seed")) {
        m.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("gap_history")) {
        m.gap_history = j.at("gap_history").get<std::vector<double>>();
    }
    return m;
}

void require_shape(bool ok, const std::string& what) {
    require(ok, ErrorCode::MalformedFile, "eraser file: " + what);
}

} // namespace

nlohmann::json eraser_to_json(const Eraser& e) {
    return std::visit(
        [](const auto& er) -> nlohmann::json {
            using T = std::decay_t<decltype(er)>;
            if constexpr (std::is_same_v<T, AffineEraser>) {
                return nlohmann::json{{"version", kEraserFormatVersion},
                                      {"method", std::string(to_string(er.method))},
                                      {"d", er.dim()},
                                      {"projection", matrix_to_json(er.projection)},
                                      {"bias", vector_to_json(er.bias)},
                                      {"rank", er.rank},
                                      {"fit_metadata", metadata_to_json(er.metadata)}};
            } else {
                auto linear = nlohmann::json::array();
                auto means = nlohmann::json::array();
                for (const auto& map : er.maps) {
                    linear.push_back(matrix_to_json(map.linear.matrix()));
                    means.push_back(vector_to_json(map.source_mean));
                }
                return nlohmann::json{{"version", kEraserFormatVersion},
                                      {"method", std::string(to_string(EraserMethod::Qleace))},
                                      {"d", er.dim()},
                                      {"k", er.num_classes()},
                                      {"maps", std::move(linear)},
                                      {"class_means", std::move(means)},
                                      {"target_mean", vector_to_json(er.target_mean)},
                                      {"target_covariance", matrix_to_json(er.target_covariance.matrix())},
                                      {"bias", vector_to_json(er.target_mean)},
                                      {"rank", er.dim()},
                                      {"fit_metadata", metadata_to_json(er.metadata)}};
            }
        },
        e);
}

Eraser eraser_from_json(const nlohmann::json& j) {
    require(j.is_object(), ErrorCode::MalformedFile, "eraser file: top level must be an object");
    try {
        require(j.contains("version"), ErrorCode::MalformedFile, "eraser file: missing version");
        const auto version = j.at("version").get<int>();
        if (version != kEraserFormatVersion) {
            throw Error(ErrorCode::UnknownVersion, "eraser file version " + std::to_string(version) + " (expected " +
                                                       std::to_string(kEraserFormatVersion) + ")");
        }
        const auto method = eraser_method_from_string(j.at("method").get<std::string>());
        const auto d = j.at("d").get<Index>();
        require_shape(d >= 1, "d must be positive");
        const auto meta = metadata_from_json(j.at("fit_metadata"));

        if (method == EraserMethod::Qleace) {
            const auto k = j.at("k").get<Index>();
            const auto& maps = j.at("maps");
            const auto& means = j.at("class_means");
            require_shape(k >= 1 && maps.is_array() && means.is_array() && static_cast<Index>(maps.size()) == k &&
                              static_cast<Index>(means.size()) == k,
                          "need k maps and class means");
            ClassEraser e;
            e.target_mean = vector_from_json(j.at("target_mean"));
            e.target_covariance = SymMatrixd(matrix_from_json(j.at("target_covariance")));
            require_shape(e.target_mean.size() == d && e.target_covariance.dim() == d, "target moments have wrong size");
            for (Index c = 0; c < k; ++c) {
                const auto i = static_cast<std::size_t>(c);
                GaussianMap<double> map{SymMatrixd(matrix_from_json(maps[i])), vector_from_json(means[i]), e.target_mean};
                require_shape(map.linear.dim() == d && map.source_mean.size() == d, "class map has wrong size");
                e.maps.push_back(std::move(map));
            }
            e.metadata = meta;
            return e;
        }

        AffineEraser e;
        e.method = method;
        e.projection = matrix_from_json(j.at("projection"));
        e.bias = vector_from_json(j.at("bias"));
        e.rank = j.at("rank").get<Index>();
        require_shape(e.projection.rows() == d && e.projection.cols() == d && e.bias.size() == d,
                      "projection/bias have wrong size");
        e.metadata = meta;
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::MalformedFile, std::string("eraser file: ") + ex.what());
    } catch (const Error& ex) {
        if (ex.code() == ErrorCode::UnknownVersion || ex.code() == ErrorCode::MalformedFile) {
            throw;
        }
        throw Error(ErrorCode::MalformedFile, std::string("eraser file: ") + ex.what());
    }
}

std::string serialize_eraser(const Eraser& e) {
    return dump_json(eraser_to_json(e));
}

Eraser deserialize_eraser(std::string_view bytes) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::MalformedFile, std::string("eraser file: ") + ex.what());
    }
    return eraser_from_json(j);
}

} // namespace mscrub
