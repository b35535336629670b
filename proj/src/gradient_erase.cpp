#include "mscrub/gradient_erase.hpp"

#include <cmath>

#include "mscrub/erasers.hpp"

namespace mscrub {

namespace {

double sigmoid(double u) {
    return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

struct ClassStats {
    std::vector<VectorXd> means;
    std::vector<MatrixXd> covs;
    VectorXd mean_avg;
    MatrixXd cov_avg;
};

ClassStats class_stats(const MatrixXd& x, std::span<const std::uint32_t> labels, const std::vector<Index>& counts,
                       const VectorXd& priors) {
    const Index d = x.cols();
    const auto k = counts.size();
    ClassStats s;
    s.means.assign(k, VectorXd::Zero(d));
    s.covs.assign(k, MatrixXd::Zero(d, d));
    for (Index i = 0; i < x.rows(); ++i) {
        s.means[labels[static_cast<std::size_t>(i)]] += x.row(i).transpose();
    }
    for (std::size_t c = 0; c < k; ++c) {
        s.means[c] /= static_cast<double>(counts[c]);
    }
    for (Index i = 0; i < x.rows(); ++i) {
        const auto z = labels[static_cast<std::size_t>(i)];
        const VectorXd centered = x.row(i).transpose() - s.means[z];
        s.covs[z].selfadjointView<Eigen::Lower>().rankUpdate(centered);
    }
    s.mean_avg = VectorXd::Zero(d);
    s.cov_avg = MatrixXd::Zero(d, d);
    for (std::size_t c = 0; c < k; ++c) {
        const MatrixXd full = s.covs[c].selfadjointView<Eigen::Lower>();
        s.covs[c] = full / static_cast<double>(counts[c]);
        s.mean_avg += priors(static_cast<Index>(c)) * s.means[c];
        s.cov_avg += priors(static_cast<Index>(c)) * s.covs[c];
    }
    return s;
}

} // namespace

MomentErasureObjective::MomentErasureObjective(const LabeledDataset& original, double alpha, double beta,
                                               double gamma)
    : original_(original), alpha_(alpha), beta_(beta), gamma_(gamma) {
    require(original.bounds.has_value(), ErrorCode::InvalidInput, "gradient erasure requires feature bounds");
    require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, ErrorCode::InvalidInput,
            "loss weights must be nonnegative");
    validate(original);
    require(!original.labels.empty(), ErrorCode::InvalidInput, "gradient erasure requires labels");
    counts_ = class_counts(original);
    priors_.resize(original.num_classes);
    for (Index c = 0; c < original.num_classes; ++c) {
        priors_(c) = static_cast<double>(counts_[static_cast<std::size_t>(c)]) / static_cast<double>(original.size());
    }
    lo_ = original.bounds->lo;
    span_ = original.bounds->hi - original.bounds->lo;
}

MatrixXd MomentErasureObjective::decode(const Eigen::VectorXd& logits) const {
    const Index n = original_.size();
    const Index d = original_.dim();
    const Eigen::Map<const MatrixXd> u(logits.data(), n, d);
    MatrixXd x(n, d);
    for (Index j = 0; j < d; ++j) {
        for (Index i = 0; i < n; ++i) {
            x(i, j) = lo_(j) + span_(j) * sigmoid(u(i, j));
        }
    }
    return x;
}

Eigen::VectorXd MomentErasureObjective::encode(const MatrixXd& features) const {
    constexpr double eps = 1e-12;
    const Index n = features.rows();
    const Index d = features.cols();
    Eigen::VectorXd logits(n * d);
    Eigen::Map<MatrixXd> u(logits.data(), n, d);
    for (Index j = 0; j < d; ++j) {
        for (Index i = 0; i < n; ++i) {
            const double p = span_(j) > 0.0 ? std::clamp((features(i, j) - lo_(j)) / span_(j), eps, 1.0 - eps) : 0.5;
            u(i, j) = std::log(p / (1.0 - p));
        }
    }
    return logits;
}

LossTerms MomentErasureObjective::terms(const MatrixXd& edited) const {
    const auto s = class_stats(edited, original_.labels, counts_, priors_);
    LossTerms t;
    for (std::size_t c = 0; c < counts_.size(); ++c) {
        const double w = priors_(static_cast<Index>(c));
        t.mean += w * (s.means[c] - s.mean_avg).squaredNorm();
        t.covariance += w * (s.covs[c] - s.cov_avg).squaredNorm();
    }
    t.anchor = (edited - original_.features).squaredNorm() / static_cast<double>(original_.size());
    return t;
}

double MomentErasureObjective::operator()(const Eigen::VectorXd& logits, Eigen::VectorXd& grad) const {
    const Index n = original_.size();
    const Index d = original_.dim();
    const MatrixXd x = decode(logits);
    const auto s = class_stats(x, original_.labels, counts_, priors_);

    // Per-class gradients with respect to the class moments.
    std::vector<VectorXd> mean_grad(counts_.size());
    std::vector<MatrixXd> cov_grad(counts_.size());
    double mean_term = 0.0;
    double cov_term = 0.0;
    for (std::size_t c = 0; c < counts_.size(); ++c) {
        const double w = priors_(static_cast<Index>(c));
        const VectorXd dm = s.means[c] - s.mean_avg;
        const MatrixXd dc = s.covs[c] - s.cov_avg;
        mean_term += w * dm.squaredNorm();
        cov_term += w * dc.squaredNorm();
        const double inv_n = 1.0 / static_cast<double>(counts_[c]);
        mean_grad[c] = 2.0 * alpha_ * w * inv_n * dm;
        cov_grad[c] = 4.0 * beta_ * w * inv_n * dc;
    }
    const MatrixXd diff = x - original_.features;
    const double anchor = diff.squaredNorm() / static_cast<double>(n);

    grad.resize(n * d);
    Eigen::Map<MatrixXd> g(grad.data(), n, d);
    const Eigen::Map<const MatrixXd> u(logits.data(), n, d);
    for (Index i = 0; i < n; ++i) {
        const auto z = original_.labels[static_cast<std::size_t>(i)];
        const VectorXd centered = x.row(i).transpose() - s.means[z];
        VectorXd gx = mean_grad[z] + cov_grad[z] * centered + (2.0 * gamma_ / static_cast<double>(n)) * diff.row(i).transpose();
        for (Index j = 0; j < d; ++j) {
            const double sg = sigmoid(u(i, j));
            g(i, j) = gx(j) * span_(j) * sg * (1.0 - sg);
        }
    }
    return alpha_ * mean_term + beta_ * cov_term + gamma_ * anchor;
}

GradientEraseResult gradient_erase(const LabeledDataset& ds, const GradientEraseOptions& options) {
    require(ds.bounds.has_value(), ErrorCode::InvalidInput, "gradient erasure requires feature bounds");
    require(options.alpha >= 0.0 && options.beta >= 0.0, ErrorCode::InvalidInput, "loss weights must be nonnegative");

    GradientEraseResult out;
    out.alpha = options.alpha;
    out.beta = options.beta;

    // Terms at the starting point, computed with a zero anchor weight.
    const MomentErasureObjective probe(ds, options.alpha, options.beta, 0.0);
    out.initial = probe.terms(ds.features);
    if (options.gamma) {
        out.gamma = *options.gamma;
    } else {
        const VectorXd mean = ds.features.colwise().mean().transpose();
        const double total_var = (ds.features.rowwise() - mean.transpose()).squaredNorm() / static_cast<double>(ds.size());
        const double moment = options.alpha * out.initial.mean + options.beta * out.initial.covariance;
        out.gamma = (total_var > 0.0 && moment > 0.0) ? 0.01 * moment / total_var : 1.0;
    }
    require(out.gamma >= 0.0, ErrorCode::InvalidInput, "gamma must be nonnegative");

    const MomentErasureObjective objective(ds, options.alpha, options.beta, out.gamma);
    const auto result = minimize_lbfgs(
        [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return objective(x, g); }, objective.encode(ds.features),
        options.optimizer);

    out.dataset = ds;
    out.dataset.features = objective.decode(result.x);
    // Round-off in lo + span·σ(u) can step a hair outside the box.
    clip_to_bounds(out.dataset, *ds.bounds);
    out.trajectory = result.trajectory;
    out.final_terms = objective.terms(out.dataset.features);
    out.iterations = result.iterations;
    out.converged = result.converged;
    return out;
}

} // namespace mscrub
