#include "mscrub/erasers.hpp"

#include <algorithm>
#include <cmath>

#include "mscrub/rng.hpp"

namespace mscrub {

std::string_view to_string(EraserMethod method) {
    switch (method) {
    case EraserMethod::Leace: return "leace";
    case EraserMethod::Qleace: return "qleace";
    case EraserMethod::AlfQleace: return "alf-qleace";
    case EraserMethod::RandomProjection: return "randproj";
    case EraserMethod::LeaceAlfQleace: return "leace+alf-qleace";
    case EraserMethod::Identity: return "identity";
    }
    return "unknown";
}

EraserMethod eraser_method_from_string(std::string_view name) {
    for (auto m : {EraserMethod::Leace, EraserMethod::Qleace, EraserMethod::AlfQleace, EraserMethod::RandomProjection,
                   EraserMethod::LeaceAlfQleace, EraserMethod::Identity}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw Error(ErrorCode::MalformedFile, "unknown eraser method '" + std::string(name) + "'");
}

MatrixXd AffineEraser::apply_rows(const MatrixXd& rows) const {
    require(rows.cols() == dim(), ErrorCode::ShapeMismatch, "eraser dimension mismatch");
    return (rows * projection.transpose()).rowwise() + bias.transpose();
}

VectorXd ClassEraser::apply(const VectorXd& x, std::uint32_t label) const {
    require(label < maps.size(), ErrorCode::InvalidInput, "label outside eraser classes");
    return maps[label](x);
}

AffineEraser identity_eraser(Index d) {
    return AffineEraser{EraserMethod::Identity, MatrixXd::Identity(d, d), VectorXd::Zero(d), d, {}};
}

AffineEraser fit_leace(const ClassMoments& m) {
    const Index d = m.dim;
    const double floor = default_floor(m.global_covariance);
    const MatrixXd whiten = spd_power(m.global_covariance, -0.5, floor, PowerMode::Pseudo).matrix();
    const MatrixXd unwhiten = spd_power(m.global_covariance, 0.5, floor).matrix();
    const MatrixXd whitened_cross = whiten * m.cross_covariance;
    const MatrixXd proj_cross = column_space_projector(whitened_cross, 1e-10, 1e-12);

    AffineEraser e;
    e.method = EraserMethod::Leace;
    e.projection = MatrixXd::Identity(d, d) - unwhiten * proj_cross * whiten;
    e.bias = (MatrixXd::Identity(d, d) - e.projection) * m.global_mean;
    e.rank = d - static_cast<Index>(std::llround(proj_cross.trace()));
    e.metadata.tol = floor;
    return e;
}

BarycenterSolution<double> gaussian_barycenter(const ClassMoments& m, double tol, int max_iter) {
    const std::vector<double> weights(m.priors.data(), m.priors.data() + m.priors.size());
    return gaussian_barycenter<double>(std::span<const double>(weights), std::span<const VectorXd>(m.means),
                                       std::span<const SymMatrixd>(m.covariances), tol, max_iter);
}

ClassEraser fit_qleace(const ClassMoments& m, double tol, int max_iter) {
    const auto bary = gaussian_barycenter(m, tol, max_iter);
    ClassEraser e;
    e.target_mean = bary.mean;
    e.target_covariance = bary.covariance;
    for (Index c = 0; c < m.num_classes; ++c) {
        const auto i = static_cast<std::size_t>(c);
        e.maps.push_back(ot_gaussian_map(m.means[i], m.covariances[i], bary.mean, bary.covariance));
    }
    e.metadata.tol = tol;
    e.metadata.iterations = bary.iterations;
    e.metadata.residual = bary.residual;
    e.metadata.converged = bary.converged;
    return e;
}

AffineEraser fit_alf_qleace(const ClassMoments& m, const AlfOptions& options) {
    const Index d = m.dim;
    require(options.rank_budget >= 0 && options.rank_budget <= d, ErrorCode::InvalidInput,
            "rank budget " + std::to_string(options.rank_budget) + " outside 0.." + std::to_string(d));
    require(options.tol >= 0.0, ErrorCode::InvalidInput, "tolerance must be nonnegative");

    const SymMatrixd avg = average_covariance(m, options.weighting);
    std::vector<SymMatrixd> gaps;
    for (const auto& cov : m.raw_covariances) {
        gaps.push_back(cov - avg);
    }

    MatrixXd p = MatrixXd::Identity(d, d);
    AffineEraser e;
    e.method = EraserMethod::AlfQleace;
    e.metadata.tol = options.tol;

    Index deflations = 0;
    while (true) {
        // D_k under the current projection: P (Σ_k − Σ̄) P.
        double worst = -1.0;
        SymMatrixd worst_gap;
        for (const auto& g : gaps) {
            SymMatrixd projected(p * g.matrix() * p);
            const double norm = spectral_norm(projected);
            if (norm > worst) {
                worst = norm;
                worst_gap = std::move(projected);
            }
        }
        e.metadata.gap_history.push_back(worst);
        if (worst <= options.tol || deflations >= options.rank_budget) {
            break;
        }
        const auto top = top_singular_pair(worst_gap);
        p = SymMatrixd(p - top.vector * (top.vector.transpose() * p)).matrix();
        ++deflations;
    }

    e.projection = p;
    e.bias = (MatrixXd::Identity(d, d) - p) * m.global_mean;
    e.rank = d - deflations;
    e.metadata.iterations = static_cast<int>(deflations);
    e.metadata.residual = e.metadata.gap_history.back();
    return e;
}

AffineEraser fit_random_projection(Index d, Index rank, std::uint64_t seed) {
    require(d > 0 && rank >= 0 && rank <= d, ErrorCode::InvalidInput,
            "random projection rank " + std::to_string(rank) + " outside 0.." + std::to_string(d));
    AffineEraser e;
    e.method = EraserMethod::RandomProjection;
    e.bias = VectorXd::Zero(d);
    e.rank = rank;
    e.metadata.seed = seed;
    if (rank == d) {
        e.projection = MatrixXd::Identity(d, d);
        return e;
    }
    MatrixXd basis(d, rank);
    for (Index j = 0; j < rank; ++j) {
        CounterRng rng(seed, static_cast<std::uint64_t>(j));
        for (Index i = 0; i < d; ++i) {
            basis(i, j) = rng.normal();
        }
    }
    const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(basis).householderQ() * MatrixXd::Identity(d, rank);
    e.projection = SymMatrixd(q * q.transpose()).matrix();
    return e;
}

AffineEraser compose(const AffineEraser& outer, const AffineEraser& inner, EraserMethod method) {
    require(outer.dim() == inner.dim(), ErrorCode::ShapeMismatch, "compose: dimension mismatch");
    AffineEraser e;
    e.method = method;
    e.projection = outer.projection * inner.projection;
    e.bias = outer.projection * inner.bias + outer.bias;
    e.rank = std::min(outer.rank, inner.rank);
    e.metadata = outer.metadata;
    return e;
}

LabeledDataset apply_eraser(const Eraser& eraser, const LabeledDataset& ds) {
    LabeledDataset out;
    out.labels = ds.labels;
    out.num_classes = ds.num_classes;
    std::visit(
        [&](const auto& e) {
            using T = std::decay_t<decltype(e)>;
            require(e.dim() == ds.dim(), ErrorCode::ShapeMismatch,
                    "eraser expects d=" + std::to_string(e.dim()) + ", dataset has d=" + std::to_string(ds.dim()));
            if constexpr (std::is_same_v<T, AffineEraser>) {
                out.features = e.apply_rows(ds.features);
            } else {
                require(!ds.labels.empty() || ds.size() == 0, ErrorCode::InvalidInput,
                        "class-dependent eraser needs labels");
                require(static_cast<Index>(ds.labels.size()) == ds.size(), ErrorCode::ShapeMismatch,
                        "label count mismatch");
                out.features.resize(ds.size(), ds.dim());
                for (Index i = 0; i < ds.size(); ++i) {
                    out.features.row(i) =
                        e.apply(ds.features.row(i).transpose(), ds.labels[static_cast<std::size_t>(i)]).transpose();
                }
            }
        },
        eraser);
    return out;
}

void clip_to_bounds(LabeledDataset& ds, const Bounds& bounds) {
    for (Index i = 0; i < ds.size(); ++i) {
        ds.features.row(i) = ds.features.row(i).cwiseMax(bounds.lo.transpose()).cwiseMin(bounds.hi.transpose());
    }
}

} // namespace mscrub
