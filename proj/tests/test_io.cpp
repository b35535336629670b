#include <doctest.h>

#include <filesystem>

#include "mscrub/datagen.hpp"
#include "mscrub/io.hpp"
#include "mscrub/serialize.hpp"
#include "test_util.hpp"

using namespace mscrub;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("mscrub_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

LabeledDataset sample(Index n, std::uint64_t seed) {
    GaussianSpec spec;
    spec.means = {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 2, 3)};
    spec.covariances = {mscrub::testing::random_spd(3, 1), mscrub::testing::random_spd(3, 2)};
    spec.seed = seed;
    spec.n = n;
    return gen_gaussian(spec);
}

ErrorCode code_of(const auto& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no exception");
    return ErrorCode::InvalidInput;
}

} // namespace

TEST_CASE("CSV parse with a label column anywhere") {
    const auto ds = parse_csv("a,label,b\n1.5,0,2\n-3,1,4e-2\n\n");
    CHECK(ds.size() == 2);
    CHECK(ds.dim() == 2);
    CHECK(ds.num_classes == 2);
    CHECK(ds.features(0, 0) == 1.5);
    CHECK(ds.features(1, 1) == 0.04);
    CHECK(ds.labels == std::vector<std::uint32_t>{0, 1});

    CsvOptions opt;
    opt.label_column = "";
    const auto unl = parse_csv("a,b\n1,2\n", opt);
    CHECK(unl.labels.empty());
    CHECK(unl.dim() == 2);
}

TEST_CASE("CSV errors carry the line number") {
    try {
        (void)parse_csv("x,label\n1,0\n2,1\nfoo,0\n");
        FAIL("expected DataFormat");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DataFormat);
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
    CHECK(code_of([] { (void)parse_csv("x,label\n1,0,3\n"); }) == ErrorCode::DataFormat);
    CHECK(code_of([] { (void)parse_csv("x,label\n1,-1\n"); }) == ErrorCode::DataFormat);
    CHECK(code_of([] { (void)parse_csv("x,y\n1,2\n"); }) == ErrorCode::DataFormat);
    CHECK(code_of([] { (void)read_csv("/nonexistent/file.csv"); }) == ErrorCode::Io);
}

TEST_CASE("CSV round-trip is exact") {
    const auto ds = sample(200, 3);
    const auto back = parse_csv(to_csv(ds));
    CHECK(back.features == ds.features);
    CHECK(back.labels == ds.labels);
    CHECK(to_csv(back) == to_csv(ds));
}

TEST_CASE("tensor sidecar round-trip") {
    const auto dir = scratch_dir("tensor");
    auto ds = sample(150, 4);
    ds.bounds = Bounds{Eigen::Vector3d::Constant(-100), Eigen::Vector3d::Constant(100)};
    write_dataset(dir / "data.json", ds);
    CHECK(fs::exists(dir / "data.f32"));
    CHECK(fs::exists(dir / "data.labels.u32"));
    CHECK(fs::file_size(dir / "data.f32") == 150 * 3 * 4);
    const auto back = read_dataset(dir / "data.json");
    CHECK(back.features == ds.features.cast<float>().cast<double>());
    CHECK(back.labels == ds.labels);
    CHECK(back.num_classes == 2);
    REQUIRE(back.bounds.has_value());
    CHECK(back.bounds->hi == ds.bounds->hi);

    // A sidecar without "features" finds the .f32 next to it.
    auto meta = read_json(dir / "data.json");
    meta.erase("features");
    write_file_atomic(dir / "data.json", dump_json(meta));
    CHECK(read_tensor(dir / "data.json").features == back.features);

    // Truncated tensor → DataFormat.
    write_file_atomic(dir / "data.f32", "abc");
    CHECK(code_of([&] { (void)read_tensor(dir / "data.json"); }) == ErrorCode::DataFormat);
    fs::remove_all(dir);
}

TEST_CASE("atomic write replaces the file and leaves no temp file") {
    const auto dir = scratch_dir("atomic");
    write_file_atomic(dir / "f.txt", "one");
    write_file_atomic(dir / "f.txt", "two");
    CHECK(read_file(dir / "f.txt") == "two");
    CHECK_FALSE(fs::exists(dir / "f.txt.tmp"));
    fs::remove_all(dir);
}

TEST_CASE("eraser serialization round-trips bit for bit") {
    const auto ds = sample(2000, 5);
    const auto m = fit_moments(ds);
    const std::vector<Eraser> erasers{fit_leace(m), fit_qleace(m), fit_alf_qleace(m, AlfOptions{3, 1e-10}),
                                      fit_random_projection(3, 2, 11), identity_eraser(3)};
    for (const auto& e : erasers) {
        const auto text = serialize_eraser(e);
        const auto back = deserialize_eraser(text);
        CHECK(serialize_eraser(back) == text);
        CHECK(back.index() == e.index());
        if (const auto* a = std::get_if<AffineEraser>(&e)) {
            const auto& b = std::get<AffineEraser>(back);
            CHECK(b.projection == a->projection);
            CHECK(b.bias == a->bias);
            CHECK(b.rank == a->rank);
            CHECK(b.method == a->method);
            CHECK(b.metadata.seed == a->metadata.seed);
        } else {
            const auto& a2 = std::get<ClassEraser>(e);
            const auto& b = std::get<ClassEraser>(back);
            for (std::size_t c = 0; c < a2.maps.size(); ++c) {
                CHECK(b.maps[c].linear.matrix() == a2.maps[c].linear.matrix());
                CHECK(b.maps[c].source_mean == a2.maps[c].source_mean);
            }
            CHECK(b.target_mean == a2.target_mean);
            CHECK(apply_eraser(back, ds).features == apply_eraser(e, ds).features);
        }
    }
}

TEST_CASE("eraser deserialization errors") {
    const auto text = serialize_eraser(fit_leace(fit_moments(sample(500, 6))));
    CHECK(code_of([&] { (void)deserialize_eraser(text.substr(0, text.size() / 2)); }) == ErrorCode::MalformedFile);
    CHECK(code_of([&] { (void)deserialize_eraser(""); }) == ErrorCode::MalformedFile);

    auto j = nlohmann::json::parse(text);
    j["version"] = 2;
    CHECK(code_of([&] { (void)deserialize_eraser(j.dump()); }) == ErrorCode::UnknownVersion);

    j["version"] = 1;
    j["method"] = "mystery";
    CHECK(code_of([&] { (void)deserialize_eraser(j.dump()); }) == ErrorCode::MalformedFile);

    j = nlohmann::json::parse(text);
    j["projection"][0].erase(0);
    CHECK(code_of([&] { (void)deserialize_eraser(j.dump()); }) == ErrorCode::MalformedFile);

    j = nlohmann::json::parse(text);
    j.erase("fit_metadata");
    CHECK(code_of([&] { (void)deserialize_eraser(j.dump()); }) == ErrorCode::MalformedFile);
}
