#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mscrub/datagen.hpp"
#include "mscrub/erasers.hpp"
#include "mscrub/probes.hpp"
#include "test_util.hpp"

using namespace mscrub;

namespace {

LabeledDataset variance_pair(Index n, std::uint64_t seed) {
    GaussianSpec spec;
    spec.means = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
    spec.covariances = {SymMatrixd(Eigen::MatrixXd::Constant(1, 1, 1.0)), SymMatrixd(Eigen::MatrixXd::Constant(1, 1, 9.0))};
    spec.seed = seed;
    spec.n = n;
    return gen_gaussian(spec);
}

GaussianSpec gaussian3(Index d, Index n, std::uint64_t seed) {
    GaussianSpec spec;
    for (Index c = 0; c < 3; ++c) {
        spec.means.push_back(Eigen::VectorXd::Constant(d, 0.7 * static_cast<double>(c)));
        Eigen::VectorXd diag = Eigen::VectorXd::Ones(d);
        diag(c % d) = 6.0;
        spec.covariances.push_back(SymMatrixd(Eigen::MatrixXd(diag.asDiagonal())));
    }
    spec.seed = seed;
    spec.n = n;
    return spec;
}

/// Monte-Carlo Bayes cross-entropy of N(0,1) vs N(0,9) with equal priors.
double variance_pair_bayes_loss() {
    CounterRng rng(123, 0);
    const int n = 400000;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const bool wide = rng.uniform() < 0.5;
        const double x = (wide ? 3.0 : 1.0) * rng.normal();
        const double l0 = -0.5 * x * x;
        const double l1 = -0.5 * x * x / 9.0 - std::log(3.0);
        const double top = std::max(l0, l1);
        const double lse = top + std::log(std::exp(l0 - top) + std::exp(l1 - top));
        total += lse - (wide ? l1 : l0);
    }
    return total / n;
}

} // namespace

TEST_CASE("monomial examples") {
    const auto m = monomials(Eigen::Vector2d(2, 3), 2);
    REQUIRE(m.size() == 5);
    CHECK(m(0) == 2);
    CHECK(m(1) == 3);
    CHECK(m(2) == 4);
    CHECK(m(3) == 6);
    CHECK(m(4) == 9);

    const Eigen::Vector3d x(0.5, -1.5, 2);
    CHECK(monomials(x, 1) == x);

    const auto p = monomials(Eigen::VectorXd::Constant(1, 2.0), 3);
    REQUIRE(p.size() == 3);
    CHECK(p(0) == 2);
    CHECK(p(1) == 4);
    CHECK(p(2) == 8);

    try {
        (void)monomials(x, 5);
        FAIL("expected Unsupported");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Unsupported);
    }
}

TEST_CASE("monomial counts follow the multiset formula") {
    // Σ_n C(d+n-1, n)
    auto binom = [](Index a, Index b) {
        double r = 1.0;
        for (Index i = 1; i <= b; ++i) {
            r = r * static_cast<double>(a - b + i) / static_cast<double>(i);
        }
        return static_cast<Index>(std::llround(r));
    };
    for (Index d = 1; d <= 6; ++d) {
        for (int deg = 1; deg <= 4; ++deg) {
            Index expect = 0;
            for (int n = 1; n <= deg; ++n) {
                expect += binom(d + n - 1, n);
            }
            CHECK(monomial_count(d, deg) == expect);
            CHECK(monomials(Eigen::VectorXd::Ones(d), deg).size() == expect);
        }
    }
    // Degree-3 lex order for d=2: x1³, x1²x2, x1x2², x2³.
    const auto m = monomials(Eigen::Vector2d(2, 3), 3);
    CHECK(m.tail(4) == Eigen::Vector4d(8, 12, 18, 27));
}

TEST_CASE("trivial_loss examples") {
    CHECK(trivial_loss(Eigen::VectorXd::Constant(10, 0.1)) == doctest::Approx(std::log(10.0)));
    CHECK(trivial_loss(Eigen::Vector3d(1, 0, 0)) == 0.0);
    CHECK(trivial_loss(Eigen::Vector2d(0.75, 0.25)) == doctest::Approx(0.5623).epsilon(1e-4));
}

TEST_CASE("eval_probe of the prior-only predictor is the trivial loss") {
    LabeledDataset ds;
    ds.num_classes = 10;
    ds.features = mscrub::testing::random_matrix(50, 2, 3);
    for (int i = 0; i < 50; ++i) {
        ds.labels.push_back(static_cast<std::uint32_t>(i % 10));
    }
    PolynomialPredictor p;
    p.degree = 1;
    p.dim = 2;
    p.num_classes = 10;
    p.standardization = {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2)};
    p.coefficients = Eigen::MatrixXd::Zero(2, 10);
    p.bias = label_priors(ds).array().log();
    CHECK(eval_probe(p, ds) == doctest::Approx(std::log(10.0)).epsilon(1e-15));
    CHECK(eval_probe(p, ds) == doctest::Approx(trivial_loss(label_priors(ds))).epsilon(1e-15));

    // Large one-hot logits drive the loss to zero.
    Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(50, 10);
    for (int i = 0; i < 50; ++i) {
        logits(i, ds.labels[static_cast<std::size_t>(i)]) = 100.0;
    }
    CHECK(mean_cross_entropy(logits, ds.labels) < 1e-40);
}

TEST_CASE("cross entropy against direct summation and shift invariance") {
    const Eigen::MatrixXd logits = mscrub::testing::random_matrix(30, 4, 8) * 3.0;
    std::vector<std::uint32_t> labels;
    for (int i = 0; i < 30; ++i) {
        labels.push_back(static_cast<std::uint32_t>((i * 7) % 4));
    }
    double direct = 0.0;
    for (int i = 0; i < 30; ++i) {
        double denom = 0.0;
        for (int j = 0; j < 4; ++j) {
            denom += std::exp(logits(i, j));
        }
        direct += -std::log(std::exp(logits(i, labels[static_cast<std::size_t>(i)])) / denom);
    }
    direct /= 30.0;
    const double ce = mean_cross_entropy(logits, labels);
    CHECK(ce == doctest::Approx(direct).epsilon(1e-12));
    const Eigen::MatrixXd shifted = logits.array() + 37.5;
    CHECK(mean_cross_entropy(shifted, labels) == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("separable 1-D data is learned by a linear probe") {
    LabeledDataset ds;
    ds.num_classes = 2;
    ds.features.resize(200, 1);
    for (int i = 0; i < 200; ++i) {
        ds.features(i, 0) = i % 2 == 0 ? -1.0 : 1.0;
        ds.labels.push_back(static_cast<std::uint32_t>(i % 2));
    }
    const auto [train, test] = split_dataset(ds, 0.2, 4);
    ProbeConfig cfg;
    cfg.l2 = 1e-3;
    const auto p = train_probe(train, 1, cfg);
    const double loss = eval_probe(p, test);
    CHECK(loss < 0.1);
    const auto logits = p.logits(test.features);
    for (Index i = 0; i < test.size(); ++i) {
        Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        CHECK(arg == static_cast<Index>(test.labels[static_cast<std::size_t>(i)]));
    }
    const std::vector<int> degrees{1};
    CHECK_FALSE(guardedness_report(ds, degrees, 4).degrees[0].guarded);
}

TEST_CASE("shuffled labels stay near the trivial loss") {
    auto ds = gen_gaussian(gaussian3(3, 4000, 5));
    const auto perm = seeded_permutation(ds.labels.size(), 77);
    std::vector<std::uint32_t> shuffled(ds.labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled[i] = ds.labels[perm[i]];
    }
    ds.labels = shuffled;
    const auto [train, test] = split_dataset(ds, 0.2, 6);
    for (int deg = 1; deg <= 2; ++deg) {
        const auto p = train_probe(train, deg);
        CHECK(std::abs(eval_probe(p, test) - trivial_loss(label_priors(train))) <= 0.05);
    }
}

TEST_CASE("variance discrimination needs a quadratic probe") {
    const auto ds = variance_pair(20000, 7);
    const auto [train, test] = split_dataset(ds, 0.2, 8);
    const double trivial = trivial_loss(label_priors(test));
    const double lin = eval_probe(train_probe(train, 1), test);
    const double quad = eval_probe(train_probe(train, 2), test);
    CHECK(std::abs(lin - trivial) <= 0.02);
    // The quadratic family contains the Bayes classifier, whose loss
    // (numerical quadrature: 0.50665 nat) caps the margin at ln 2 − 0.50665 ≈ 0.186.
    const double bayes = variance_pair_bayes_loss();
    CHECK(bayes == doctest::Approx(0.50665).epsilon(0.005));
    CHECK(std::abs(quad - bayes) <= 0.02);
    CHECK(trivial - quad >= 0.15);
}

TEST_CASE("training loss is monotone in the degree") {
    const auto ds = gen_gaussian(gaussian3(2, 1500, 9));
    ProbeConfig cfg;
    cfg.l2 = 0.0;
    cfg.optimizer.gradient_tolerance = 1e-9;
    cfg.optimizer.max_iterations = 5000;
    cfg.optimizer.max_evaluations = 20000;
    double prev = std::numeric_limits<double>::infinity();
    for (int deg = 1; deg <= 4; ++deg) {
        const double loss = eval_probe(train_probe(ds, deg, cfg), ds);
        CHECK(loss <= prev + 1e-6);
        prev = loss;
    }
}

TEST_CASE("guardedness after QLEACE and after LEACE") {
    const auto ds = gen_gaussian(gaussian3(3, 12000, 10));
    const std::vector<int> degrees{1, 2};

    const auto raw = guardedness_report(ds, degrees, 1);
    CHECK_FALSE(raw.degrees[0].guarded);

    const auto q = apply_eraser(fit_qleace(fit_moments(ds, 0.0)), ds);
    const auto qr = guardedness_report(q, degrees, 1);
    CHECK(qr.gaps.max_mean_gap <= 1e-6);
    CHECK(qr.gaps.max_covariance_gap_spectral <= 1e-6);
    CHECK(qr.degrees[0].guarded);
    CHECK(qr.degrees[1].guarded);

    const auto l = apply_eraser(fit_leace(fit_moments(ds, 0.0)), ds);
    const auto lr = guardedness_report(l, degrees, 1);
    CHECK(lr.degrees[0].guarded);
    CHECK_FALSE(lr.degrees[1].guarded);
    CHECK(lr.trivial_loss == doctest::Approx(trivial_loss(label_priors(ds))));
}

TEST_CASE("degree outside 1..4 is rejected by the report") {
    const auto ds = variance_pair(200, 1);
    const std::vector<int> degrees{5};
    CHECK_THROWS_AS((void)guardedness_report(ds, degrees, 1), Error);
}

TEST_CASE("predictor JSON round-trip reproduces logits exactly") {
    const auto ds = gen_gaussian(gaussian3(2, 600, 11));
    const auto p = train_probe(ds, 3);
    const auto back = predictor_from_json(nlohmann::json::parse(to_json(p).dump()));
    CHECK(back.logits(ds.features) == p.logits(ds.features));
    CHECK(to_json(p).at("monomial_order") == "lex");
}

TEST_CASE("training is deterministic") {
    const auto ds = gen_gaussian(gaussian3(2, 600, 12));
    CHECK(to_json(train_probe(ds, 2)).dump() == to_json(train_probe(ds, 2)).dump());
}
