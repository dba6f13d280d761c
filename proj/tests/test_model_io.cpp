#include "koopman/model_io.hpp"

#include "koopman/errors.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

using namespace koopman;

namespace {

struct TempDir {
    std::filesystem::path path;

    TempDir()
    {
        path = std::filesystem::temp_directory_path() /
               ("koopman_io_test_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }

    std::string file(const std::string& name) const { return (path / name).string(); }
};

KoopmanModel small_bilinear_model()
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const int n = 4;

    KoopmanModel m;
    m.kind = ModelKind::Bilinear;
    m.A = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return dist(rng); });
    m.B = Eigen::MatrixXd::NullaryExpr(n, 2, [&] { return dist(rng); });
    m.H = {Eigen::MatrixXd::NullaryExpr(n, n, [&] { return dist(rng); }),
           Eigen::MatrixXd::NullaryExpr(n, n, [&] { return dist(rng); })};
    m.ts = 0.1;
    m.dictionary_id = "synthetic-4d";
    m.count = 12345;
    m.lambda = 1e-9;
    return m;
}

} // namespace

TEST_CASE("model save/load round-trips bitwise")
{
    const TempDir dir;
    const KoopmanModel m = small_bilinear_model();
    const std::string path = dir.file("model.json");
    save_model(m, path);
    const KoopmanModel loaded = load_model(path);

    CHECK(loaded.kind == m.kind);
    CHECK(loaded.ts == m.ts);
    CHECK(loaded.dictionary_id == m.dictionary_id);
    CHECK(loaded.count == m.count);
    CHECK(loaded.lambda == m.lambda);
    CHECK((loaded.A - m.A).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.B - m.B).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(loaded.H.size() == 2);
    CHECK((loaded.H[0] - m.H[0]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.H[1] - m.H[1]).cwiseAbs().maxCoeff() == 0.0);

    // a second save of the loaded model reproduces the file byte for byte
    const std::string path2 = dir.file("model2.json");
    save_model(loaded, path2);
    std::ifstream f1(path), f2(path2);
    const std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(c1 == c2);
}

TEST_CASE("linear models round-trip with an empty H array")
{
    const TempDir dir;
    KoopmanModel m = small_bilinear_model();
    m.kind = ModelKind::Linear;
    m.H.clear();
    const std::string path = dir.file("linear.json");
    save_model(m, path);
    const KoopmanModel loaded = load_model(path);
    CHECK(loaded.kind == ModelKind::Linear);
    CHECK(loaded.H.empty());
    CHECK((loaded.A - m.A).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("load validates the dictionary id when requested")
{
    const TempDir dir;
    const KoopmanModel m = small_bilinear_model();
    const std::string path = dir.file("model.json");
    save_model(m, path);
    CHECK_NOTHROW(load_model(path, "synthetic-4d"));
    CHECK_THROWS_AS(load_model(path, "poly2-preset10-v1"), CompatError);
}

TEST_CASE("load failures map to the dedicated error types")
{
    const TempDir dir;
    CHECK_THROWS_AS(load_model(dir.file("missing.json")), IoError);

    const std::string garbled = dir.file("garbled.json");
    std::ofstream(garbled) << "this is not json{";
    CHECK_THROWS_AS(load_model(garbled), FormatError);

    const KoopmanModel m = small_bilinear_model();
    const std::string path = dir.file("model.json");
    save_model(m, path);

    auto tamper = [&](const char* key, const nlohmann::json& value, const std::string& out) {
        std::ifstream in(path);
        nlohmann::json j = nlohmann::json::parse(in);
        j[key] = value;
        std::ofstream(out) << j.dump();
    };

    const std::string wrong_version = dir.file("wrong_version.json");
    tamper("format_version", 999, wrong_version);
    CHECK_THROWS_AS(load_model(wrong_version), CompatError);

    const std::string wrong_m = dir.file("wrong_m.json");
    tamper("m", 3, wrong_m);
    CHECK_THROWS_AS(load_model(wrong_m), CompatError);

    const std::string wrong_dim = dir.file("wrong_dim.json");
    tamper("n_lift", 64, wrong_dim);
    CHECK_THROWS_AS(load_model(wrong_dim), CompatError);

    const std::string missing_field = dir.file("missing_field.json");
    {
        std::ifstream in(path);
        nlohmann::json j = nlohmann::json::parse(in);
        j.erase("A");
        std::ofstream(missing_field) << j.dump();
    }
    CHECK_THROWS_AS(load_model(missing_field), FormatError);

    const std::string bad_kind = dir.file("bad_kind.json");
    tamper("kind", "quadratic", bad_kind);
    CHECK_THROWS_AS(load_model(bad_kind), FormatError);
}

TEST_CASE("accumulator save/load round-trips bitwise and stays usable")
{
    const TempDir dir;
    SnapshotAccumulator acc(ModelKind::Bilinear, 3, 0.1, "synthetic-3d");
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const auto random_vec = [&] {
        Eigen::VectorXd z(3);
        z << dist(rng), dist(rng), dist(rng);
        return z;
    };
    for (int k = 0; k < 20; ++k)
        acc.accumulate(random_vec(), ControlInput{dist(rng), dist(rng)}, random_vec());

    const std::string path = dir.file("acc.json");
    save_accumulator(acc, path);
    SnapshotAccumulator loaded = load_accumulator(path);

    CHECK(loaded.mode() == acc.mode());
    CHECK(loaded.n_lift() == acc.n_lift());
    CHECK(loaded.ts() == acc.ts());
    CHECK(loaded.dictionary_id() == acc.dictionary_id());
    CHECK(loaded.count() == acc.count());
    CHECK((loaded.gram() - acc.gram()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.cross() - acc.cross()).cwiseAbs().maxCoeff() == 0.0);

    // The reloaded accumulator keeps accepting data. Serialization stores the
    // folded sums, so continued accumulation may regroup the compensated
    // additions; the results agree to within one ulp of the entries.
    const Eigen::VectorXd z = random_vec();
    const ControlInput u{0.5, -0.5};
    const Eigen::VectorXd z1 = random_vec();
    loaded.accumulate(z, u, z1);
    acc.accumulate(z, u, z1);
    CHECK((loaded.gram() - acc.gram()).cwiseAbs().maxCoeff() <= 1e-15 * acc.gram().cwiseAbs().maxCoeff());
    CHECK_NOTHROW(loaded.merge(acc));

    CHECK_THROWS_AS(load_accumulator(dir.file("missing.json")), IoError);
}
