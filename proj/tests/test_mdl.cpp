#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mscrub/datagen.hpp"
#include "mscrub/erasers.hpp"
#include "mscrub/mdl.hpp"
#include "test_util.hpp"

using namespace mscrub;

namespace {

GaussianSpec spec3(Index n, std::uint64_t seed) {
    GaussianSpec spec;
    spec.means = {Eigen::Vector3d(-0.4, 0, 0), Eigen::Vector3d(0.4, 0.2, 0), Eigen::Vector3d(0, -0.3, 0.3)};
    spec.covariances = {SymMatrixd(Eigen::Vector3d(3, 1, 1).asDiagonal().toDenseMatrix()),
                        SymMatrixd(Eigen::Vector3d(1, 3, 1).asDiagonal().toDenseMatrix()),
                        SymMatrixd(Eigen::Vector3d(1, 1, 3).asDiagonal().toDenseMatrix())};
    spec.seed = seed;
    spec.n = n;
    return spec;
}

} // namespace

TEST_CASE("make_schedule examples") {
    CHECK(make_schedule(1000, 100, 2).sizes == std::vector<Index>{100, 200, 400, 800, 1000});
    CHECK(make_schedule(500, 500, 2).sizes == std::vector<Index>{500});
    CHECK(make_schedule(1000, 100, 1e9).sizes == std::vector<Index>{100, 1000});
    CHECK(make_schedule(100, 10, 1.5).sizes == std::vector<Index>{10, 15, 23, 34, 51, 76, 100});
    CHECK_THROWS_AS((void)make_schedule(100, 0, 2), Error);
    CHECK_THROWS_AS((void)make_schedule(100, 10, 1.0), Error);
}

TEST_CASE("online codelength of the block code") {
    const PrefixSchedule s{{10, 30, 70}};
    const std::vector<double> loss{0.5, 0.25, 0.1};
    // 10·H + 20·0.5 + 40·0.25
    CHECK(online_codelength(s, loss, 0.6) == doctest::Approx(6.0 + 10.0 + 10.0));

    // A coder that always uses the prior costs n·H exactly.
    const PrefixSchedule t = make_schedule(1000, 64, 2);
    const double h = std::log(3.0);
    const std::vector<double> flat(t.sizes.size(), h);
    CHECK(std::abs(online_codelength(t, flat, h) - 1000.0 * h) <= 1e-9);
}

TEST_CASE("labels independent of features code at the prior rate") {
    auto ds = gen_gaussian(spec3(3000, 1));
    const auto perm = seeded_permutation(ds.labels.size(), 5);
    std::vector<std::uint32_t> shuffled(ds.labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled[i] = ds.labels[perm[i]];
    }
    ds.labels = shuffled;
    const auto curve = prequential_mdl(ds, 3, MdlOptions{1});
    for (const double v : curve.val_loss) {
        CHECK(std::abs(v - curve.trivial_loss) <= 0.08);
    }
    const double per_sample = curve.codelength_nats / static_cast<double>(curve.n_stream);
    CHECK(std::abs(per_sample - curve.trivial_loss) <= 0.03);
    CHECK(curve.codelength_bits == doctest::Approx(curve.codelength_nats / std::numbers::ln2));
}

TEST_CASE("separable data has a short code") {
    LabeledDataset ds;
    ds.num_classes = 2;
    ds.features.resize(2000, 1);
    CounterRng rng(4, 0);
    for (int i = 0; i < 2000; ++i) {
        const auto z = static_cast<std::uint32_t>(rng.below(2));
        ds.features(i, 0) = (z == 0 ? -2.0 : 2.0) + 0.2 * rng.normal();
        ds.labels.push_back(z);
    }
    const auto curve = prequential_mdl(ds, 1, MdlOptions{1});
    CHECK(curve.val_loss.back() < 0.05);
    CHECK(curve.codelength_nats < 0.2 * static_cast<double>(curve.n_stream) * curve.trivial_loss);
}

TEST_CASE("curve is invariant to validation row order") {
    const auto ds = gen_gaussian(spec3(1500, 2));
    const auto [stream, validation] = split_dataset(ds, 0.2, 9);
    const auto perm = seeded_permutation(static_cast<std::size_t>(validation.size()), 1);
    const auto reordered = select_rows(validation, perm);
    const auto a = prequential_mdl(stream, validation, 9, MdlOptions{2});
    const auto b = prequential_mdl(stream, reordered, 9, MdlOptions{2});
    for (std::size_t i = 0; i < a.val_loss.size(); ++i) {
        CHECK(a.val_loss[i] == doctest::Approx(b.val_loss[i]).epsilon(1e-12));
    }
    CHECK(a.codelength_nats == doctest::Approx(b.codelength_nats).epsilon(1e-12));
}

TEST_CASE("prequential MDL is deterministic given the seed") {
    const auto ds = gen_gaussian(spec3(1200, 3));
    CHECK(to_json(prequential_mdl(ds, 4)).dump() == to_json(prequential_mdl(ds, 4)).dump());
}

TEST_CASE("first block must hold ten samples per class") {
    const auto ds = gen_gaussian(spec3(1000, 4));
    MdlOptions opt;
    opt.first = 20;
    CHECK_THROWS_AS((void)prequential_mdl(ds, 1, opt), Error);
}

TEST_CASE("LEACE slows learning under quadratic probes") {
    std::vector<MdlCurve> control, leace;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ds = gen_gaussian(spec3(4000, 100 + seed));
        control.push_back(prequential_mdl(ds, seed));
        const auto erased = apply_eraser(fit_leace(fit_moments(ds)), ds);
        leace.push_back(prequential_mdl(erased, seed));
    }
    const auto report = mdl_delta_report(control, {{"leace", leace}});
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].codelength_mean > report.control_mean);
    CHECK(report.rows[0].diff_mean > 0.0);
    CHECK(report.rows[0].ratio_mean > 1.0);
}

TEST_CASE("more i.i.d. data does not raise the per-sample codelength") {
    double small = 0.0, large = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto a = prequential_mdl(gen_gaussian(spec3(1500, 200 + seed)), seed);
        const auto b = prequential_mdl(gen_gaussian(spec3(6000, 300 + seed)), seed);
        small += a.codelength_nats / static_cast<double>(a.n_stream);
        large += b.codelength_nats / static_cast<double>(b.n_stream);
    }
    CHECK(large / 5.0 <= small / 5.0 + 0.02);
}

TEST_CASE("delta report") {
    const auto ds = gen_gaussian(spec3(1000, 5));
    const std::vector<MdlCurve> a{prequential_mdl(ds, 1), prequential_mdl(ds, 2)};
    const auto same = mdl_delta_report(a, {{"self", a}});
    CHECK(same.rows[0].diff_mean == 0.0);
    CHECK(same.rows[0].diff_std == 0.0);
    CHECK(same.rows[0].ratio_mean == 1.0);
    CHECK(same.to_json().at("erasers").size() == 1);
    CHECK(same.to_text().find("self") != std::string::npos);

    MdlOptions other;
    other.first = 100;
    const std::vector<MdlCurve> b{prequential_mdl(ds, 1, other), prequential_mdl(ds, 2, other)};
    CHECK_THROWS_AS((void)mdl_delta_report(a, {{"mismatch", b}}), Error);
    const std::vector<MdlCurve> swapped{a[1], a[0]};
    CHECK_THROWS_AS((void)mdl_delta_report(a, {{"seeds", swapped}}), Error);
}

TEST_CASE("curve JSON and CSV") {
    const auto ds = gen_gaussian(spec3(800, 6));
    const auto c = prequential_mdl(ds, 7);
    const auto back = mdl_curve_from_json(nlohmann::json::parse(to_json(c).dump()));
    CHECK(back.val_loss == c.val_loss);
    CHECK(back.schedule.sizes == c.schedule.sizes);
    CHECK(back.codelength_nats == c.codelength_nats);
    const auto csv = curve_csv(c);
    CHECK(csv.rfind("size,val_loss_nats,converged\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == c.schedule.sizes.size() + 1);
}

TEST_CASE("mean_std uses the sample standard deviation") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto [m, s] = mean_std(v);
    CHECK(m == 2.5);
    CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)));
    const std::vector<double> one{7.0};
    CHECK(mean_std(one).second == 0.0);
}
