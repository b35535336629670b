#include <doctest.h>

#include "mscrub/datagen.hpp"
#include "mscrub/erasers.hpp"
#include "mscrub/probes.hpp"
#include "mscrub/serialize.hpp"
#include "test_util.hpp"

using namespace mscrub;
using mscrub::testing::random_spd;

namespace {

SymMatrixd diag2(double a, double b) {
    return SymMatrixd(Eigen::Vector2d(a, b).asDiagonal().toDenseMatrix());
}

ClassMoments two_class(const Eigen::VectorXd& m1, const SymMatrixd& s1, const Eigen::VectorXd& m2,
                       const SymMatrixd& s2) {
    const std::vector<Eigen::VectorXd> means{m1, m2};
    const std::vector<SymMatrixd> covs{s1, s2};
    return population_moments(Eigen::Vector2d(0.5, 0.5), means, covs);
}

Eigen::VectorXd scalar_vec(double v) {
    return Eigen::VectorXd::Constant(1, v);
}

SymMatrixd scalar(double v) {
    return SymMatrixd(Eigen::MatrixXd::Constant(1, 1, v));
}

GaussianSpec three_class_spec(Index d, Index n, std::uint64_t seed) {
    GaussianSpec spec;
    for (Index c = 0; c < 3; ++c) {
        spec.means.push_back(mscrub::testing::random_matrix(d, 1, 900 + static_cast<std::uint64_t>(c)));
        spec.covariances.push_back(random_spd(d, 910 + static_cast<std::uint64_t>(c), 0.2));
    }
    spec.priors = Eigen::Vector3d(0.3, 0.3, 0.4);
    spec.seed = seed;
    spec.n = n;
    return spec;
}

} // namespace

TEST_CASE("LEACE on two balanced classes with identity within-class covariance") {
    const auto m = two_class(Eigen::Vector2d(-1, 0), SymMatrixd::identity(2), Eigen::Vector2d(1, 0),
                             SymMatrixd::identity(2));
    const auto e = fit_leace(m);
    CHECK((e.projection - diag2(0, 1).matrix()).norm() < 1e-12);
    CHECK(e.bias.norm() < 1e-12);
    CHECK(e.rank == 1);
    CHECK((e.apply(Eigen::Vector2d(-1, 0))).norm() < 1e-12);
    CHECK((e.apply(Eigen::Vector2d(1, 0))).norm() < 1e-12);
    const Eigen::Vector2d mapped = e.apply(Eigen::Vector2d(3.5, -2));
    CHECK(mapped(0) == doctest::Approx(0.0));
    CHECK(mapped(1) == doctest::Approx(-2.0));
}

TEST_CASE("LEACE with equal class means is the identity") {
    const auto m = two_class(Eigen::Vector2d(1, 2), diag2(2, 1), Eigen::Vector2d(1, 2), diag2(1, 3));
    const auto e = fit_leace(m);
    CHECK((e.projection - Eigen::Matrix2d::Identity()).norm() < 1e-9);
    CHECK(e.bias.norm() < 1e-9);
    CHECK(e.rank == 2);
}

TEST_CASE("LEACE equalizes class means and zeroes the cross-covariance") {
    const auto ds = gen_gaussian(three_class_spec(6, 6000, 3));
    const auto m = fit_moments(ds, 0.0);
    const auto e = fit_leace(m);
    const auto out = apply_eraser(e, ds);
    const auto after = fit_moments(out, 0.0);
    const double scale = std::max(1.0, m.global_mean.norm());
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK((after.means[c] - after.global_mean).norm() <= 1e-6 * scale);
    }
    CHECK(after.cross_covariance.norm() <= 1e-6);
    CHECK((e.bias - (Eigen::MatrixXd::Identity(6, 6) - e.projection) * m.global_mean).norm() < 1e-12);
    // Oblique but idempotent.
    CHECK((e.projection * e.projection - e.projection).norm() < 1e-8);
}

TEST_CASE("LEACE leaves a linear probe at the trivial loss") {
    const auto ds = gen_gaussian(three_class_spec(4, 6000, 4));
    const auto e = fit_leace(fit_moments(ds, 0.0));
    const auto out = apply_eraser(e, ds);
    const auto [train, test] = split_dataset(out, 0.2, 1);
    const auto probe = train_probe(train, 1);
    const double loss = eval_probe(probe, test);
    CHECK(std::abs(loss - trivial_loss(label_priors(train))) <= 0.02);
}

TEST_CASE("QLEACE 1-D analytic example") {
    const auto m = two_class(scalar_vec(0), scalar(1), scalar_vec(2), scalar(9));
    const auto e = fit_qleace(m);
    CHECK(e.metadata.converged);
    CHECK(e.target_mean(0) == doctest::Approx(1.0));
    CHECK(e.target_covariance(0, 0) == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(e.maps[0].linear(0, 0) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(e.maps[1].linear(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
    CHECK(e.apply(scalar_vec(0.5), 0)(0) == doctest::Approx(2.0));
    CHECK(e.apply(scalar_vec(1.0), 1)(0) == doctest::Approx(1.0 / 3.0));

    LabeledDataset ds;
    ds.features = Eigen::MatrixXd::Constant(1, 1, 1.0);
    ds.labels = {1};
    ds.num_classes = 2;
    const auto out = apply_eraser(e, ds);
    CHECK(out.features(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(out.labels == ds.labels);
}

TEST_CASE("QLEACE on identical classes is the identity") {
    const auto s = random_spd(3, 5);
    const Eigen::Vector3d mu(1, -1, 2);
    const std::vector<Eigen::VectorXd> means{mu, mu, mu};
    const std::vector<SymMatrixd> covs{s, s, s};
    const auto m = population_moments(Eigen::Vector3d(0.2, 0.3, 0.5), means, covs);
    const auto e = fit_qleace(m);
    for (const auto& map : e.maps) {
        CHECK((map.linear.matrix() - Eigen::Matrix3d::Identity()).norm() < 1e-9);
        CHECK((map.shift()).norm() < 1e-9);
    }
}

TEST_CASE("QLEACE pushforward matches the barycenter on population moments") {
    const auto spec = three_class_spec(8, 1, 0);
    const auto m = population_moments(spec.priors, spec.means, spec.covariances);
    const auto e = fit_qleace(m);
    for (std::size_t c = 0; c < 3; ++c) {
        const auto& a = e.maps[c].linear.matrix();
        const Eigen::MatrixXd pushed = a * m.covariances[c].matrix() * a.transpose();
        CHECK((pushed - e.target_covariance.matrix()).norm() <= 1e-6 * e.target_covariance.matrix().norm());
        CHECK((e.maps[c](m.means[c]) - e.target_mean).norm() <= 1e-6 * std::max(1.0, e.target_mean.norm()));
        CHECK(sym_eig(e.maps[c].linear).eigenvalues.minCoeff() > 0.0);
    }
}

TEST_CASE("QLEACE closes sample moment gaps") {
    const auto ds = gen_gaussian(three_class_spec(8, 20000, 6));
    const auto m = fit_moments(ds, 0.0);
    const auto e = fit_qleace(m);
    const auto after = moment_gap_report(fit_moments(apply_eraser(e, ds), 0.0));
    CHECK(after.max_mean_gap <= 1e-5);
    CHECK(after.max_covariance_gap_spectral <= 1e-5);
}

TEST_CASE("QLEACE transport cost matches the Bures prediction") {
    const auto spec = three_class_spec(5, 60000, 7);
    const auto ds = gen_gaussian(spec);
    const auto m = fit_moments(ds, 0.0);
    const auto e = fit_qleace(m);
    const auto out = apply_eraser(e, ds);
    const double cost = (out.features - ds.features).squaredNorm() / static_cast<double>(ds.size());
    double expect = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        expect += m.priors(static_cast<Index>(c)) *
                  w2_gaussian_sq(m.means[c], m.covariances[c], e.target_mean, e.target_covariance);
    }
    CHECK(std::abs(cost - expect) / expect < 0.02);
}

TEST_CASE("ClassEraser requires labels, AffineEraser does not read them") {
    const auto m = two_class(scalar_vec(0), scalar(1), scalar_vec(2), scalar(9));
    LabeledDataset unlabeled;
    unlabeled.features = Eigen::MatrixXd::Constant(3, 1, 0.5);
    CHECK_THROWS_AS((void)apply_eraser(fit_qleace(m), unlabeled), Error);
    const auto out = apply_eraser(fit_leace(m), unlabeled);
    CHECK(out.size() == 3);

    // Garbage labels do not change a label-free eraser's output.
    LabeledDataset a = unlabeled, b = unlabeled;
    a.labels = {0, 0, 0};
    b.labels = {1, 0, 1};
    a.num_classes = b.num_classes = 2;
    CHECK(apply_eraser(fit_leace(m), a).features == apply_eraser(fit_leace(m), b).features);
}

TEST_CASE("identity eraser leaves data unchanged and apply drops bounds") {
    LabeledDataset ds;
    ds.features = mscrub::testing::random_matrix(5, 3, 1);
    ds.labels = {0, 1, 0, 1, 1};
    ds.num_classes = 2;
    ds.bounds = Bounds{Eigen::VectorXd::Constant(3, -10), Eigen::VectorXd::Constant(3, 10)};
    const auto out = apply_eraser(identity_eraser(3), ds);
    CHECK(out.features == ds.features);
    CHECK(out.labels == ds.labels);
    CHECK_FALSE(out.bounds.has_value());
    CHECK_THROWS_AS((void)apply_eraser(identity_eraser(4), ds), Error);
}

TEST_CASE("ALF-QLEACE analytic two-class case") {
    const auto m = two_class(Eigen::Vector2d::Zero(), diag2(2, 1), Eigen::Vector2d::Zero(), diag2(1, 1));
    const auto e = fit_alf_qleace(m, AlfOptions{2, 1e-10});
    CHECK(e.metadata.iterations == 1);
    CHECK(e.projection == diag2(0, 1).matrix());
    CHECK(e.rank == 1);
    REQUIRE(e.metadata.gap_history.size() == 2);
    CHECK(e.metadata.gap_history[0] == doctest::Approx(0.5));
    CHECK(e.metadata.gap_history[1] == 0.0);
}

TEST_CASE("ALF-QLEACE with equal covariances does nothing") {
    const auto s = random_spd(4, 3);
    const auto m = two_class(Eigen::VectorXd::Zero(4), s, Eigen::VectorXd::Ones(4), s);
    const auto e = fit_alf_qleace(m, AlfOptions{4, 1e-10});
    CHECK(e.metadata.iterations == 0);
    CHECK(e.projection == Eigen::Matrix4d::Identity().eval());
    CHECK(e.rank == 4);
}

TEST_CASE("ALF-QLEACE rejects a budget above d") {
    const auto m = two_class(Eigen::Vector2d::Zero(), diag2(2, 1), Eigen::Vector2d::Zero(), diag2(1, 1));
    try {
        (void)fit_alf_qleace(m, AlfOptions{3, 1e-10});
        FAIL("expected InvalidInput");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidInput);
    }
}

TEST_CASE("ALF-QLEACE deflations on random ensembles") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Index d = 3 + static_cast<Index>(seed % 6);
        std::vector<Eigen::VectorXd> means;
        std::vector<SymMatrixd> covs;
        for (int c = 0; c < 3; ++c) {
            means.push_back(Eigen::VectorXd::Zero(d));
            covs.push_back(random_spd(d, 100 * seed + static_cast<std::uint64_t>(c)));
        }
        const auto m = population_moments(Eigen::Vector3d(0.25, 0.25, 0.5), means, covs);
        const auto e = fit_alf_qleace(m, AlfOptions{d, 1e-10});
        const auto& hist = e.metadata.gap_history;
        for (std::size_t i = 1; i < hist.size(); ++i) {
            CHECK(hist[i] <= hist[i - 1] + 1e-12);
        }
        CHECK(hist.back() <= 1e-10);
        CHECK((e.projection * e.projection - e.projection).norm() < 1e-8);
        CHECK((e.projection - e.projection.transpose()).norm() < 1e-8);
        CHECK(e.rank == d - e.metadata.iterations);
        CHECK(std::abs(e.projection.trace() - static_cast<double>(e.rank)) < 1e-8);
        for (const auto& c : covs) {
            const SymMatrixd projected(e.projection * c.matrix() * e.projection);
            CHECK(sym_eig(projected).eigenvalues(0) <= sym_eig(c).eigenvalues(0) + 1e-10);
        }
    }
}

TEST_CASE("ALF-QLEACE stops at the rank budget") {
    std::vector<Eigen::VectorXd> means(2, Eigen::VectorXd::Zero(10));
    const std::vector<SymMatrixd> covs{random_spd(10, 1), random_spd(10, 2)};
    const auto m = population_moments(Eigen::Vector2d(0.5, 0.5), means, covs);
    const auto e = fit_alf_qleace(m, AlfOptions{3, 0.0});
    CHECK(e.metadata.iterations == 3);
    CHECK(e.rank == 7);
}

TEST_CASE("random projection") {
    CHECK(fit_random_projection(4, 4, 1).projection == Eigen::Matrix4d::Identity().eval());
    CHECK(fit_random_projection(4, 0, 1).projection.norm() == 0.0);
    const auto e = fit_random_projection(4, 2, 9);
    CHECK(e.projection.trace() == doctest::Approx(2.0).epsilon(1e-9));
    CHECK((e.projection * e.projection - e.projection).norm() < 1e-12);
    CHECK((e.projection - e.projection.transpose()).norm() == 0.0);
    CHECK(fit_random_projection(4, 2, 9).projection == e.projection);
    CHECK(fit_random_projection(4, 2, 10).projection != e.projection);
    CHECK_THROWS_AS((void)fit_random_projection(4, 5, 1), Error);
}

TEST_CASE("composition applies inner then outer") {
    const auto a = fit_random_projection(3, 2, 1);
    AffineEraser b = identity_eraser(3);
    b.bias = Eigen::Vector3d(1, 2, 3);
    const auto c = compose(a, b, EraserMethod::LeaceAlfQleace);
    const Eigen::Vector3d x(0.3, -0.2, 0.9);
    CHECK((c.apply(x) - a.apply(b.apply(x))).norm() < 1e-14);
}

TEST_CASE("fits are deterministic down to the serialized bytes") {
    const auto ds = gen_gaussian(three_class_spec(5, 3000, 8));
    const auto m1 = fit_moments(ds);
    const auto m2 = fit_moments(ds);
    CHECK(serialize_eraser(fit_leace(m1)) == serialize_eraser(fit_leace(m2)));
    CHECK(serialize_eraser(fit_qleace(m1)) == serialize_eraser(fit_qleace(m2)));
    CHECK(serialize_eraser(fit_alf_qleace(m1, AlfOptions{5, 1e-10})) ==
          serialize_eraser(fit_alf_qleace(m2, AlfOptions{5, 1e-10})));
}
