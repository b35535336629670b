#include "mscrub/probes.hpp"

#include <cmath>

#include "mscrub/rng.hpp"

namespace mscrub {

Index monomial_count(Index dim, int degree) {
    Index total = 0;
    Index term = 1; // C(d+n-1, n), built incrementally
    for (int n = 1; n <= degree; ++n) {
        term = term * (dim + n - 1) / n;
        total += term;
    }
    return total;
}

MatrixXd monomial_features(const MatrixXd& rows, int degree) {
    require(degree >= 1, ErrorCode::InvalidInput, "monomial degree must be >= 1");
    require(degree <= kMaxProbeDegree, ErrorCode::Unsupported,
            "monomial degree " + std::to_string(degree) + " exceeds " + std::to_string(kMaxProbeDegree));
    const Index n = rows.rows();
    const Index d = rows.cols();
    MatrixXd out(n, monomial_count(d, degree));
    out.leftCols(d) = rows;

    // Columns of the previous degree with the last index of their tuple.
    std::vector<std::pair<Index, Index>> previous;
    for (Index j = 0; j < d; ++j) {
        previous.emplace_back(j, j);
    }
    Index next = d;
    for (int deg = 2; deg <= degree; ++deg) {
        std::vector<std::pair<Index, Index>> current;
        for (const auto& [col, last] : previous) {
            for (Index j = last; j < d; ++j) {
                out.col(next) = out.col(col).cwiseProduct(rows.col(j));
                current.emplace_back(next, j);
                ++next;
            }
        }
        previous = std::move(current);
    }
    return out;
}

VectorXd monomials(const VectorXd& x, int degree) {
    return monomial_features(x.transpose(), degree).row(0).transpose();
}

MatrixXd PolynomialPredictor::logits(const MatrixXd& rows) const {
    require(rows.cols() == dim, ErrorCode::ShapeMismatch,
            "predictor expects d=" + std::to_string(dim) + ", got " + std::to_string(rows.cols()));
    MatrixXd feats = monomial_features(rows, degree);
    feats = (feats.rowwise() - standardization.shift.transpose()).array().rowwise() /
            standardization.scale.transpose().array();
    return (feats * coefficients).rowwise() + bias.transpose();
}

double mean_cross_entropy(const MatrixXd& logits, std::span<const std::uint32_t> labels) {
    require(static_cast<Index>(labels.size()) == logits.rows(), ErrorCode::ShapeMismatch,
            "cross entropy: label count mismatch");
    if (logits.rows() == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (Index i = 0; i < logits.rows(); ++i) {
        const double top = logits.row(i).maxCoeff();
        const double lse = top + std::log((logits.row(i).array() - top).exp().sum());
        total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
    }
    return total / static_cast<double>(logits.rows());
}

double eval_probe(const PolynomialPredictor& p, const LabeledDataset& ds) {
    require(!ds.labels.empty(), ErrorCode::InvalidInput, "eval_probe requires labels");
    for (const auto z : ds.labels) {
        require(static_cast<Index>(z) < p.num_classes, ErrorCode::ShapeMismatch, "label outside predictor classes");
    }
    return mean_cross_entropy(p.logits(ds.features), ds.labels);
}

double trivial_loss(const VectorXd& priors) {
    double h = 0.0;
    for (Index j = 0; j < priors.size(); ++j) {
        if (priors(j) > 0.0) {
            h -= priors(j) * std::log(priors(j));
        }
    }
    return h;
}

VectorXd label_priors(const LabeledDataset& ds) {
    VectorXd p = VectorXd::Zero(ds.num_classes);
    for (const auto z : ds.labels) {
        p(z) += 1.0;
    }
    if (!ds.labels.empty()) {
        p /= static_cast<double>(ds.labels.size());
    }
    return p;
}

PolynomialPredictor train_probe(const LabeledDataset& train, int degree, const ProbeConfig& cfg) {
    require(degree >= 1, ErrorCode::InvalidInput, "probe degree must be >= 1");
    require(degree <= kMaxProbeDegree, ErrorCode::Unsupported, "probe degree above 4");
    require(cfg.l2 >= 0.0, ErrorCode::InvalidInput, "l2 must be nonnegative");
    require(train.size() > 0 && !train.labels.empty(), ErrorCode::InvalidInput, "probe training needs labeled rows");
    require(train.num_classes >= 1, ErrorCode::InvalidInput, "probe needs at least one class");

    const Index n = train.size();
    const Index k = train.num_classes;
    PolynomialPredictor p;
    p.degree = degree;
    p.dim = train.dim();
    p.num_classes = k;

    MatrixXd feats = monomial_features(train.features, degree);
    const Index f = feats.cols();
    p.standardization.shift = feats.colwise().mean().transpose();
    p.standardization.scale.resize(f);
    for (Index j = 0; j < f; ++j) {
        const double var = (feats.col(j).array() - p.standardization.shift(j)).square().mean();
        const double sd = std::sqrt(var);
        p.standardization.scale(j) = sd > 1e-12 * std::max(1.0, std::abs(p.standardization.shift(j))) ? sd : 1.0;
    }
    feats = (feats.rowwise() - p.standardization.shift.transpose()).array().rowwise() /
            p.standardization.scale.transpose().array();

    MatrixXd onehot = MatrixXd::Zero(n, k);
    for (Index i = 0; i < n; ++i) {
        require(static_cast<Index>(train.labels[static_cast<std::size_t>(i)]) < k, ErrorCode::InvalidInput,
                "label out of range");
        onehot(i, train.labels[static_cast<std::size_t>(i)]) = 1.0;
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    auto objective = [&](const VectorXd& theta, VectorXd& grad) {
        const Eigen::Map<const MatrixXd> w(theta.data(), f, k);
        const Eigen::Map<const VectorXd> b(theta.data() + f * k, k);
        MatrixXd z = (feats * w).rowwise() + b.transpose();
        double loss = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double top = z.row(i).maxCoeff();
            z.row(i) = (z.row(i).array() - top).exp().matrix();
            const double sum = z.row(i).sum();
            const Index label = train.labels[static_cast<std::size_t>(i)];
            loss -= std::log(z(i, label) / sum);
            z.row(i) /= sum;
        }
        z -= onehot;
        z *= inv_n;
        grad.resize(theta.size());
        Eigen::Map<MatrixXd> gw(grad.data(), f, k);
        Eigen::Map<VectorXd> gb(grad.data() + f * k, k);
        gw.noalias() = feats.transpose() * z;
        gw += 2.0 * cfg.l2 * w;
        gb = z.colwise().sum().transpose();
        return loss * inv_n + cfg.l2 * w.squaredNorm();
    };

    // Start from the best constant predictor.
    VectorXd theta = VectorXd::Zero(f * k + k);
    const VectorXd prior = label_priors(train);
    for (Index j = 0; j < k; ++j) {
        theta(f * k + j) = std::log(std::max(prior(j), 1e-12));
    }
    const auto res = minimize_lbfgs(objective, std::move(theta), cfg.optimizer);
    p.coefficients = Eigen::Map<const MatrixXd>(res.x.data(), f, k);
    p.bias = res.x.tail(k);
    p.converged = res.converged;
    p.iterations = res.iterations;
    return p;
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double holdout, std::uint64_t seed) {
    require(holdout > 0.0 && holdout < 1.0, ErrorCode::InvalidInput, "holdout fraction must be in (0, 1)");
    const auto n = static_cast<std::size_t>(ds.size());
    const auto perm = seeded_permutation(n, seed);
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (1.0 - holdout)));
    const std::span<const std::size_t> all(perm);
    return {select_rows(ds, all.first(n_train)), select_rows(ds, all.subspan(n_train))};
}

GuardednessReport guardedness_report(const LabeledDataset& ds, std::span<const int> degrees, std::uint64_t split_seed,
                                     double tol, const ProbeConfig& cfg) {
    for (const int deg : degrees) {
        require(deg >= 1 && deg <= kMaxProbeDegree, ErrorCode::InvalidInput,
                "degree " + std::to_string(deg) + " outside 1..4");
    }
    validate(ds);
    GuardednessReport report;
    report.tol = tol;
    report.trivial_loss = trivial_loss(label_priors(ds));
    report.gaps = moment_gap_report(fit_moments(ds, 0.0));
    const auto [train, test] = split_dataset(ds, 0.2, split_seed);
    for (const int deg : degrees) {
        const auto probe = train_probe(train, deg, cfg);
        DegreeVerdict v;
        v.degree = deg;
        v.heldout_loss = eval_probe(probe, test);
        v.margin = report.trivial_loss - v.heldout_loss;
        v.guarded = v.margin <= tol;
        v.converged = probe.converged;
        report.degrees.push_back(v);
    }
    return report;
}

nlohmann::json to_json(const PolynomialPredictor& p) {
    return nlohmann::json{
        {"degree", p.degree},
        {"d", p.dim},
        {"k", p.num_classes},
        {"monomial_order", "lex"},
        {"standardization", {{"shift", vector_to_json(p.standardization.shift)}, {"scale", vector_to_json(p.standardization.scale)}}},
        {"bias", vector_to_json(p.bias)},
        {"coefficients", matrix_to_json(p.coefficients)},
        {"converged", p.converged},
    };
}

PolynomialPredictor predictor_from_json(const nlohmann::json& j) {
    try {
        PolynomialPredictor p;
        p.degree = j.at("degree").get<int>();
        p.dim = j.at("d").get<Index>();
        p.num_classes = j.at("k").get<Index>();
        require(j.at("monomial_order").get<std::string>() == "lex", ErrorCode::MalformedFile, "unknown monomial order");
        p.standardization.shift = vector_from_json(j.at("standardization").at("shift"));
        p.standardization.scale = vector_from_json(j.at("standardization").at("scale"));
        p.bias = vector_from_json(j.at("bias"));
        p.coefficients = matrix_from_json(j.at("coefficients"));
        p.converged = j.value("converged", true);
        const Index f = monomial_count(p.dim, p.degree);
        require(p.coefficients.rows() == f && p.coefficients.cols() == p.num_classes && p.bias.size() == p.num_classes &&
                    p.standardization.shift.size() == f && p.standardization.scale.size() == f,
                ErrorCode::MalformedFile, "predictor shapes disagree");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedFile, std::string("predictor: ") + e.what());
    }
}

nlohmann::json to_json(const GuardednessReport& r) {
    auto degrees = nlohmann::json::array();
    for (const auto& v : r.degrees) {
        degrees.push_back({{"degree", v.degree},
                           {"heldout_loss", v.heldout_loss},
                           {"margin", v.margin},
                           {"guarded", v.guarded},
                           {"converged", v.converged}});
    }
    return nlohmann::json{{"trivial_loss", r.trivial_loss}, {"tol", r.tol}, {"degrees", std::move(degrees)},
                          {"moment_gaps", to_json(r.gaps)}};
}

} // namespace mscrub
