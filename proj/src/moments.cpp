#include "mscrub/moments.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

namespace mscrub {

void validate(const LabeledDataset& ds) {
    const Index n = ds.size();
    const Index d = ds.dim();
    require(d > 0, ErrorCode::InvalidInput, "dataset has zero features");
    require(ds.features.allFinite(), ErrorCode::InvalidInput, "dataset contains non-finite features");
    if (!ds.labels.empty()) {
        require(static_cast<Index>(ds.labels.size()) == n, ErrorCode::ShapeMismatch,
                "label count " + std::to_string(ds.labels.size()) + " != row count " + std::to_string(n));
        require(ds.num_classes > 0, ErrorCode::InvalidInput, "num_classes must be positive");
        std::vector<bool> seen(static_cast<std::size_t>(ds.num_classes), false);
        for (const auto z : ds.labels) {
            require(static_cast<Index>(z) < ds.num_classes, ErrorCode::InvalidInput,
                    "label " + std::to_string(z) + " outside 0.." + std::to_string(ds.num_classes - 1));
            seen[z] = true;
        }
        for (std::size_t c = 0; c < seen.size(); ++c) {
            require(seen[c], ErrorCode::InvalidInput, "class " + std::to_string(c) + " has no samples");
        }
    }
    if (ds.bounds) {
        const auto& b = *ds.bounds;
        require(b.lo.size() == d && b.hi.size() == d, ErrorCode::ShapeMismatch, "bounds dimension mismatch");
        require((b.lo.array() <= b.hi.array()).all(), ErrorCode::InvalidInput, "bounds have lo > hi");
        for (Index i = 0; i < n; ++i) {
            const auto row = ds.features.row(i).transpose().array();
            require((row >= b.lo.array()).all() && (row <= b.hi.array()).all(), ErrorCode::InvalidInput,
                    "row " + std::to_string(i) + " lies outside the declared bounds");
        }
    }
}

std::vector<Index> class_counts(const LabeledDataset& ds) {
    std::vector<Index> counts(static_cast<std::size_t>(ds.num_classes), 0);
    for (const auto z : ds.labels) {
        ++counts[z];
    }
    return counts;
}

LabeledDataset select_rows(const LabeledDataset& ds, std::span<const std::size_t> rows) {
    LabeledDataset out;
    out.num_classes = ds.num_classes;
    out.bounds = ds.bounds;
    out.features.resize(static_cast<Index>(rows.size()), ds.dim());
    if (!ds.labels.empty()) {
        out.labels.resize(rows.size());
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.features.row(static_cast<Index>(i)) = ds.features.row(static_cast<Index>(rows[i]));
        if (!ds.labels.empty()) {
            out.labels[i] = ds.labels[rows[i]];
        }
    }
    return out;
}

MomentAccumulator::MomentAccumulator(Index dim, Index num_classes)
    : dim_(dim),
      counts_(static_cast<std::size_t>(num_classes), 0),
      means_(static_cast<std::size_t>(num_classes), VectorXd::Zero(dim)),
      scatter_(static_cast<std::size_t>(num_classes), MatrixXd::Zero(dim, dim)) {}

Index MomentAccumulator::total() const {
    Index n = 0;
    for (const auto c : counts_) {
        n += c;
    }
    return n;
}

void MomentAccumulator::add(const Eigen::Ref<const MatrixXd>& rows, std::span<const std::uint32_t> labels) {
    require(rows.cols() == dim_, ErrorCode::ShapeMismatch, "accumulator: row dimension mismatch");
    require(static_cast<Index>(labels.size()) == rows.rows(), ErrorCode::ShapeMismatch,
            "accumulator: label count mismatch");
    MomentAccumulator block(dim_, num_classes());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(static_cast<Index>(labels[i]) < num_classes(), ErrorCode::InvalidInput,
                "accumulator: label out of range");
        block.counts_[labels[i]] += 1;
        block.means_[labels[i]] += rows.row(static_cast<Index>(i)).transpose();
    }
    for (std::size_t c = 0; c < block.counts_.size(); ++c) {
        if (block.counts_[c] > 0) {
            block.means_[c] /= static_cast<double>(block.counts_[c]);
        }
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const VectorXd centered = rows.row(static_cast<Index>(i)).transpose() - block.means_[labels[i]];
        block.scatter_[labels[i]].selfadjointView<Eigen::Lower>().rankUpdate(centered);
    }
    for (auto& s : block.scatter_) {
        const MatrixXd full = s.selfadjointView<Eigen::Lower>();
        s = full;
    }
    merge(block);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
    if (other.total() == 0 && other.dim_ == 0) {
        return;
    }
    if (dim_ == 0 && counts_.empty()) {
        *this = other;
        return;
    }
    require(other.dim_ == dim_ && other.counts_.size() == counts_.size(), ErrorCode::ShapeMismatch,
            "merge_moments: accumulator shapes differ");
    for (std::size_t c = 0; c < counts_.size(); ++c) {
        const Index nb = other.counts_[c];
        if (nb == 0) {
            continue;
        }
        const Index na = counts_[c];
        if (na == 0) {
            counts_[c] = nb;
            means_[c] = other.means_[c];
            scatter_[c] = other.scatter_[c];
            continue;
        }
        const double n = static_cast<double>(na + nb);
        const VectorXd delta = other.means_[c] - means_[c];
        means_[c] += delta * (static_cast<double>(nb) / n);
        scatter_[c] += other.scatter_[c] + delta * delta.transpose() * (static_cast<double>(na) * nb / n);
        counts_[c] = na + nb;
    }
}

MomentAccumulator merge_moments(const MomentAccumulator& a, const MomentAccumulator& b) {
    MomentAccumulator out = a;
    out.merge(b);
    return out;
}

MomentAccumulator accumulate(const LabeledDataset& ds, int threads) {
    require(ds.has_labels(), ErrorCode::InvalidInput, "moments require labels");
    const Index n = ds.size();
    const Index chunks = (n + kMomentChunkRows - 1) / kMomentChunkRows;
    std::vector<MomentAccumulator> parts(static_cast<std::size_t>(chunks),
                                         MomentAccumulator(ds.dim(), ds.num_classes));
    auto work = [&](Index first_chunk, Index stride) {
        for (Index c = first_chunk; c < chunks; c += stride) {
            const Index begin = c * kMomentChunkRows;
            const Index len = std::min(kMomentChunkRows, n - begin);
            parts[static_cast<std::size_t>(c)].add(
                ds.features.middleRows(begin, len),
                std::span<const std::uint32_t>(ds.labels).subspan(static_cast<std::size_t>(begin),
                                                                  static_cast<std::size_t>(len)));
        }
    };
    const Index workers = std::clamp<Index>(threads, 1, std::max<Index>(chunks, 1));
    if (workers == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (Index w = 0; w < workers; ++w) {
            pool.emplace_back(work, w, workers);
        }
    }
    MomentAccumulator total(ds.dim(), ds.num_classes);
    for (const auto& p : parts) {
        total.merge(p);
    }
    return total;
}

namespace {

SymMatrixd shrink(const SymMatrixd& raw, double shrinkage) {
    const Index d = raw.dim();
    return SymMatrixd(raw.matrix() + shrinkage * (raw.trace() / static_cast<double>(d)) * MatrixXd::Identity(d, d));
}

void fill_global(ClassMoments& m) {
    const Index d = m.dim;
    m.global_mean = VectorXd::Zero(d);
    for (Index c = 0; c < m.num_classes; ++c) {
        m.global_mean += m.priors(c) * m.means[static_cast<std::size_t>(c)];
    }
    MatrixXd global = MatrixXd::Zero(d, d);
    m.cross_covariance.resize(d, m.num_classes);
    for (Index c = 0; c < m.num_classes; ++c) {
        const auto& mean = m.means[static_cast<std::size_t>(c)];
        const VectorXd gap = mean - m.global_mean;
        global += m.priors(c) * (m.raw_covariances[static_cast<std::size_t>(c)].matrix() + gap * gap.transpose());
        m.cross_covariance.col(c) = m.priors(c) * gap;
    }
    m.global_covariance = SymMatrixd(global);
}

} // namespace

ClassMoments moments_from(const MomentAccumulator& acc, double shrinkage) {
    require(shrinkage >= 0.0 && std::isfinite(shrinkage), ErrorCode::InvalidInput,
            "shrinkage must be a nonnegative finite number");
    ClassMoments m;
    m.dim = acc.dim();
    m.num_classes = acc.num_classes();
    m.shrinkage = shrinkage;
    const double n = static_cast<double>(acc.total());
    m.priors.resize(m.num_classes);
    for (Index c = 0; c < m.num_classes; ++c) {
        const Index nc = acc.count(c);
        require(nc >= 2, ErrorCode::DegenerateClass,
                "class " + std::to_string(c) + " has " + std::to_string(nc) + " samples (need >= 2)");
        m.counts.push_back(nc);
        m.priors(c) = static_cast<double>(nc) / n;
        m.means.push_back(acc.mean(c));
        SymMatrixd raw(acc.scatter(c) / static_cast<double>(nc));
        m.covariances.push_back(shrink(raw, shrinkage));
        m.raw_covariances.push_back(std::move(raw));
    }
    fill_global(m);
    return m;
}

ClassMoments population_moments(const VectorXd& priors, std::span<const VectorXd> means,
                                std::span<const SymMatrixd> covariances, double shrinkage) {
    require(shrinkage >= 0.0 && std::isfinite(shrinkage), ErrorCode::InvalidInput,
            "shrinkage must be a nonnegative finite number");
    const Index k = priors.size();
    require(k >= 1 && static_cast<Index>(means.size()) == k && static_cast<Index>(covariances.size()) == k,
            ErrorCode::ShapeMismatch, "population_moments: priors/means/covariances disagree in count");
    require((priors.array() > 0.0).all() && std::abs(priors.sum() - 1.0) <= 1e-12, ErrorCode::InvalidInput,
            "population_moments: priors must be positive and sum to 1");
    ClassMoments m;
    m.dim = means[0].size();
    m.num_classes = k;
    m.shrinkage = shrinkage;
    m.priors = priors;
    for (Index c = 0; c < k; ++c) {
        const auto i = static_cast<std::size_t>(c);
        require(means[i].size() == m.dim && covariances[i].dim() == m.dim, ErrorCode::ShapeMismatch,
                "population_moments: dimension mismatch");
        m.counts.push_back(0);
        m.means.push_back(means[i]);
        m.raw_covariances.push_back(covariances[i]);
        m.covariances.push_back(shrink(covariances[i], shrinkage));
    }
    fill_global(m);
    return m;
}

ClassMoments fit_moments(const LabeledDataset& ds, double shrinkage, int threads) {
    validate(ds);
    require(!ds.labels.empty(), ErrorCode::InvalidInput, "fit_moments requires labels");
    return moments_from(accumulate(ds, threads), shrinkage);
}

ClassMoments transform_moments(const ClassMoments& m, const MatrixXd& map, const VectorXd& shift) {
    require(map.cols() == m.dim && shift.size() == map.rows(), ErrorCode::ShapeMismatch,
            "transform_moments: map shape mismatch");
    ClassMoments out;
    out.dim = map.rows();
    out.num_classes = m.num_classes;
    out.counts = m.counts;
    out.priors = m.priors;
    out.shrinkage = m.shrinkage;
    for (Index c = 0; c < m.num_classes; ++c) {
        const auto i = static_cast<std::size_t>(c);
        out.means.push_back(map * m.means[i] + shift);
        SymMatrixd raw(map * m.raw_covariances[i].matrix() * map.transpose());
        out.covariances.push_back(shrink(raw, m.shrinkage));
        out.raw_covariances.push_back(std::move(raw));
    }
    fill_global(out);
    return out;
}

SymMatrixd average_covariance(const ClassMoments& m, CovarianceWeighting weighting, bool regularized) {
    MatrixXd avg = MatrixXd::Zero(m.dim, m.dim);
    for (Index c = 0; c < m.num_classes; ++c) {
        const double w = weighting == CovarianceWeighting::Prior ? m.priors(c) : 1.0 / static_cast<double>(m.num_classes);
        const auto& cov = regularized ? m.covariances[static_cast<std::size_t>(c)] : m.raw_covariances[static_cast<std::size_t>(c)];
        avg += w * cov.matrix();
    }
    return SymMatrixd(avg);
}

MomentGapReport moment_gap_report(const ClassMoments& m, CovarianceWeighting weighting) {
    MomentGapReport r;
    const SymMatrixd avg = average_covariance(m, weighting);
    for (Index c = 0; c < m.num_classes; ++c) {
        const auto i = static_cast<std::size_t>(c);
        const double mean_gap = (m.means[i] - m.global_mean).norm();
        const SymMatrixd diff = m.raw_covariances[i] - avg;
        const double spec = spectral_norm(diff);
        const double frob = diff.matrix().norm();
        r.mean_gaps.push_back(mean_gap);
        r.covariance_gaps_spectral.push_back(spec);
        r.covariance_gaps_frobenius.push_back(frob);
        r.max_mean_gap = std::max(r.max_mean_gap, mean_gap);
        r.max_covariance_gap_spectral = std::max(r.max_covariance_gap_spectral, spec);
        r.max_covariance_gap_frobenius = std::max(r.max_covariance_gap_frobenius, frob);
    }
    return r;
}

std::pair<LabeledDataset, ZScoreRecord> zscore_normalize(const LabeledDataset& ds) {
    const Index n = ds.size();
    const Index d = ds.dim();
    require(n > 0, ErrorCode::InvalidInput, "zscore_normalize: empty dataset");
    ZScoreRecord rec;
    rec.shift = ds.features.colwise().mean().transpose();
    rec.scale = VectorXd::Ones(d);
    rec.constant.assign(static_cast<std::size_t>(d), false);
    LabeledDataset out = ds;
    for (Index j = 0; j < d; ++j) {
        const auto col = ds.features.col(j).array();
        const double var = (col - rec.shift(j)).square().mean();
        const double magnitude = std::max(1.0, rec.shift(j) * rec.shift(j));
        if (var <= 1e-24 * magnitude) {
            rec.constant[static_cast<std::size_t>(j)] = true;
            out.features.col(j).setZero();
        } else {
            rec.scale(j) = std::sqrt(var);
            out.features.col(j) = (col - rec.shift(j)) / rec.scale(j);
        }
    }
    if (ds.bounds) {
        Bounds b;
        b.lo = (ds.bounds->lo - rec.shift).cwiseQuotient(rec.scale);
        b.hi = (ds.bounds->hi - rec.shift).cwiseQuotient(rec.scale);
        for (Index j = 0; j < d; ++j) {
            if (rec.constant[static_cast<std::size_t>(j)]) {
                b.lo(j) = std::min(0.0, b.lo(j));
                b.hi(j) = std::max(0.0, b.hi(j));
            }
        }
        out.bounds = std::move(b);
    }
    return {std::move(out), std::move(rec)};
}

LabeledDataset zscore_inverse(const ZScoreRecord& record, const LabeledDataset& ds) {
    require(record.shift.size() == ds.dim() && record.scale.size() == ds.dim(), ErrorCode::ShapeMismatch,
            "zscore_inverse: record dimension mismatch");
    LabeledDataset out = ds;
    for (Index j = 0; j < ds.dim(); ++j) {
        if (record.constant[static_cast<std::size_t>(j)]) {
            out.features.col(j).setConstant(record.shift(j));
        } else {
            out.features.col(j) = ds.features.col(j).array() * record.scale(j) + record.shift(j);
        }
    }
    if (ds.bounds) {
        out.bounds = Bounds{ds.bounds->lo.cwiseProduct(record.scale) + record.shift,
                            ds.bounds->hi.cwiseProduct(record.scale) + record.shift};
    }
    return out;
}

nlohmann::json matrix_to_json(const MatrixXd& m) {
    auto out = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        auto row = nlohmann::json::array();
        for (Index j = 0; j < m.cols(); ++j) {
            row.push_back(m(i, j));
        }
        out.push_back(std::move(row));
    }
    return out;
}

nlohmann::json vector_to_json(const VectorXd& v) {
    auto out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) {
        out.push_back(v(i));
    }
    return out;
}

MatrixXd matrix_from_json(const nlohmann::json& j) {
    require(j.is_array(), ErrorCode::MalformedFile, "expected a nested array");
    const auto rows = static_cast<Index>(j.size());
    const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : 0;
    MatrixXd m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        require(row.is_array() && static_cast<Index>(row.size()) == cols, ErrorCode::MalformedFile,
                "ragged matrix row");
        for (Index c = 0; c < cols; ++c) {
            const auto& v = row.at(static_cast<std::size_t>(c));
            require(v.is_number(), ErrorCode::MalformedFile, "matrix entry is not a number");
            m(r, c) = v.get<double>();
        }
    }
    return m;
}

VectorXd vector_from_json(const nlohmann::json& j) {
    require(j.is_array(), ErrorCode::MalformedFile, "expected an array");
    VectorXd v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) {
        const auto& e = j.at(static_cast<std::size_t>(i));
        require(e.is_number(), ErrorCode::MalformedFile, "vector entry is not a number");
        v(i) = e.get<double>();
    }
    return v;
}

nlohmann::json to_json(const ClassMoments& m) {
    nlohmann::json j;
    j["d"] = m.dim;
    j["k"] = m.num_classes;
    j["shrinkage"] = m.shrinkage;
    j["counts"] = m.counts;
    j["priors"] = vector_to_json(m.priors);
    auto means = nlohmann::json::array();
    auto covs = nlohmann::json::array();
    auto raw = nlohmann::json::array();
    for (Index c = 0; c < m.num_classes; ++c) {
        const auto i = static_cast<std::size_t>(c);
        means.push_back(vector_to_json(m.means[i]));
        covs.push_back(matrix_to_json(m.covariances[i].matrix()));
        raw.push_back(matrix_to_json(m.raw_covariances[i].matrix()));
    }
    j["class_means"] = std::move(means);
    j["class_covariances"] = std::move(covs);
    j["class_covariances_raw"] = std::move(raw);
    j["global_mean"] = vector_to_json(m.global_mean);
    j["global_covariance"] = matrix_to_json(m.global_covariance.matrix());
    j["cross_covariance"] = matrix_to_json(m.cross_covariance);
    return j;
}

nlohmann::json to_json(const MomentGapReport& r) {
    return nlohmann::json{
        {"mean_gaps", r.mean_gaps},
        {"covariance_gaps_spectral", r.covariance_gaps_spectral},
        {"covariance_gaps_frobenius", r.covariance_gaps_frobenius},
        {"max_mean_gap", r.max_mean_gap},
        {"max_covariance_gap_spectral", r.max_covariance_gap_spectral},
        {"max_covariance_gap_frobenius", r.max_covariance_gap_frobenius},
    };
}

nlohmann::json to_json(const ZScoreRecord& r) {
    return nlohmann::json{{"shift", vector_to_json(r.shift)}, {"scale", vector_to_json(r.scale)}, {"constant", r.constant}};
}

ZScoreRecord zscore_record_from_json(const nlohmann::json& j) {
    require(j.is_object() && j.contains("shift") && j.contains("scale") && j.contains("constant"),
            ErrorCode::MalformedFile, "zscore record missing fields");
    ZScoreRecord r;
    r.shift = vector_from_json(j.at("shift"));
    r.scale = vector_from_json(j.at("scale"));
    r.constant = j.at("constant").get<std::vector<bool>>();
    require(r.shift.size() == r.scale.size() && static_cast<Index>(r.constant.size()) == r.shift.size(),
            ErrorCode::MalformedFile, "zscore record fields disagree in length");
    return r;
}

} // namespace mscrub
