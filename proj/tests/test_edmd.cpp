#include "koopman/edmd.hpp"

#include "koopman/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

using namespace koopman;

namespace {

Trajectory random_trajectory(std::mt19937_64& rng, int steps, double ts)
{
    std::uniform_real_distribution<double> v_dist(0.0, 5.0);
    std::uniform_real_distribution<double> theta_dist(-kPi, kPi);
    std::uniform_real_distribution<double> a_dist(-2.0, 2.0);
    std::uniform_real_distribution<double> omega_dist(-kPi, kPi);

    const RobotState s0{0.0, 0.0, v_dist(rng), theta_dist(rng)};
    std::vector<ControlInput> inputs(steps);
    for (auto& u : inputs) u = ControlInput{a_dist(rng), omega_dist(rng)};

    Trajectory traj;
    traj.states = simulate_rollout(s0, inputs, ts);
    traj.inputs = std::move(inputs);
    return traj;
}

void accumulate_trajectory(SnapshotAccumulator& acc, const Trajectory& traj,
                           const DictionarySpec& dict)
{
    for (std::size_t k = 0; k < traj.inputs.size(); ++k)
        acc.accumulate(dict.lift(traj.states[k]), traj.inputs[k], dict.lift(traj.states[k + 1]));
}

double entrywise_rel_diff(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B)
{
    double worst = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j) {
            const double denom = std::max({1.0, std::abs(A(i, j)), std::abs(B(i, j))});
            worst = std::max(worst, std::abs(A(i, j) - B(i, j)) / denom);
        }
    return worst;
}

} // namespace

TEST_CASE("model kind round-trips through strings")
{
    CHECK(to_string(ModelKind::Linear) == "linear");
    CHECK(to_string(ModelKind::Bilinear) == "bilinear");
    CHECK(model_kind_from_string("linear") == ModelKind::Linear);
    CHECK(model_kind_from_string("bilinear") == ModelKind::Bilinear);
    CHECK_THROWS_AS(model_kind_from_string("quadratic"), FormatError);
}

TEST_CASE("regressor layout is (z, u) then input-major Kronecker block")
{
    Eigen::VectorXd z(3);
    z << 1.0, 2.0, 3.0;
    const ControlInput u{10.0, 20.0};

    SnapshotAccumulator lin(ModelKind::Linear, 3, 0.1, "test-3d");
    CHECK(lin.regressor_size() == 5);
    Eigen::VectorXd phi = lin.regressor(z, u);
    REQUIRE(phi.size() == 5);
    CHECK(phi[0] == 1.0);
    CHECK(phi[3] == 10.0);
    CHECK(phi[4] == 20.0);

    SnapshotAccumulator bil(ModelKind::Bilinear, 3, 0.1, "test-3d");
    CHECK(bil.regressor_size() == 11);
    phi = bil.regressor(z, u);
    REQUIRE(phi.size() == 11);
    Eigen::VectorXd expected(11);
    expected << 1, 2, 3, 10, 20, 10, 20, 30, 20, 40, 60;
    CHECK((phi - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("canonical dictionary regressor sizes")
{
    SnapshotAccumulator lin(ModelKind::Linear, 65, 0.1, "poly2-preset10-v1");
    SnapshotAccumulator bil(ModelKind::Bilinear, 65, 0.1, "poly2-preset10-v1");
    CHECK(lin.regressor_size() == 67);
    CHECK(bil.regressor_size() == 197);
}

TEST_CASE("solve recovers an exact synthetic linear system")
{
    const int n = 4;
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);

    Eigen::MatrixXd A(n, n), B(n, 2);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) A(i, j) = 0.3 * dist(rng);
        B(i, 0) = dist(rng);
        B(i, 1) = dist(rng);
    }

    SnapshotAccumulator acc(ModelKind::Linear, n, 0.1, "synthetic");
    for (int k = 0; k < 300; ++k) {
        Eigen::VectorXd z(n);
        for (int i = 0; i < n; ++i) z[i] = dist(rng);
        const ControlInput u{dist(rng), dist(rng)};
        const Eigen::VectorXd z1 = A * z + B * u.vec();
        acc.accumulate(z, u, z1);
    }
    CHECK(acc.count() == 300);

    const KoopmanModel model = solve_model(acc, 0.0);
    CHECK(model.kind == ModelKind::Linear);
    CHECK(model.H.empty());
    CHECK((model.A - A).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((model.B - B).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("solve recovers an exact synthetic bilinear system")
{
    const int n = 3;
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);

    Eigen::MatrixXd A(n, n), B(n, 2), H1(n, n), H2(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            A(i, j) = 0.3 * dist(rng);
            H1(i, j) = 0.2 * dist(rng);
            H2(i, j) = 0.2 * dist(rng);
        }
    for (int i = 0; i < n; ++i) {
        B(i, 0) = dist(rng);
        B(i, 1) = dist(rng);
    }

    SnapshotAccumulator acc(ModelKind::Bilinear, n, 0.1, "synthetic");
    for (int k = 0; k < 400; ++k) {
        Eigen::VectorXd z(n);
        for (int i = 0; i < n; ++i) z[i] = dist(rng);
        const ControlInput u{dist(rng), dist(rng)};
        const Eigen::VectorXd z1 = A * z + B * u.vec() + u.a * (H1 * z) + u.omega * (H2 * z);
        acc.accumulate(z, u, z1);
    }

    const KoopmanModel model = solve_model(acc, 0.0);
    REQUIRE(model.H.size() == 2);
    CHECK((model.A - A).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((model.B - B).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((model.H[0] - H1).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((model.H[1] - H2).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("merging partial accumulators equals accumulating everything")
{
    const DictionarySpec dict = DictionarySpec::poly2();
    std::mt19937_64 rng(7);
    const auto t1 = random_trajectory(rng, 25, 0.1);
    const auto t2 = random_trajectory(rng, 25, 0.1);

    SnapshotAccumulator whole(ModelKind::Bilinear, dict.size(), 0.1, dict.id());
    accumulate_trajectory(whole, t1, dict);
    accumulate_trajectory(whole, t2, dict);

    SnapshotAccumulator left(ModelKind::Bilinear, dict.size(), 0.1, dict.id());
    SnapshotAccumulator right(ModelKind::Bilinear, dict.size(), 0.1, dict.id());
    accumulate_trajectory(left, t1, dict);
    accumulate_trajectory(right, t2, dict);
    left.merge(right);

    CHECK(left.count() == whole.count());
    // entrywise addition regroups the floating-point sums, so the merged
    // result matches up to roundoff, not bitwise
    const double gs = whole.gram().cwiseAbs().maxCoeff();
    CHECK((left.gram() - whole.gram()).cwiseAbs().maxCoeff() < 1e-12 * gs);
    const double cs = whole.cross().cwiseAbs().maxCoeff();
    CHECK((left.cross() - whole.cross()).cwiseAbs().maxCoeff() < 1e-12 * cs);
}

TEST_CASE("merging whole batches reproduces sequential batch sums bitwise")
{
    // When each side is accumulated with one accumulate_batch call per
    // batch, 'merge' adds exactly the same per-batch sums the sequential
    // accumulator adds, in the same order. This is the property the
    // chunked dataset generator relies on for reproducibility.
    const DictionarySpec dict = DictionarySpec::poly2();
    const int n = dict.size();
    std::mt19937_64 rng(8);

    const auto batch_of = [&](const Trajectory& traj) {
        const int steps = static_cast<int>(traj.inputs.size());
        Eigen::MatrixXd Z(n, steps), Z1(n, steps), U(2, steps);
        for (int k = 0; k < steps; ++k) {
            Z.col(k) = dict.lift(traj.states[static_cast<std::size_t>(k)]);
            Z1.col(k) = dict.lift(traj.states[static_cast<std::size_t>(k) + 1]);
            U.col(k) = traj.inputs[static_cast<std::size_t>(k)].vec();
        }
        return std::tuple{Z, U, Z1};
    };
    const auto [Za, Ua, Z1a] = batch_of(random_trajectory(rng, 30, 0.1));
    const auto [Zb, Ub, Z1b] = batch_of(random_trajectory(rng, 30, 0.1));

    SnapshotAccumulator whole(ModelKind::Bilinear, n, 0.1, dict.id());
    whole.accumulate_batch(Za, Ua, Z1a);
    whole.accumulate_batch(Zb, Ub, Z1b);

    SnapshotAccumulator left(ModelKind::Bilinear, n, 0.1, dict.id());
    SnapshotAccumulator right(ModelKind::Bilinear, n, 0.1, dict.id());
    left.accumulate_batch(Za, Ua, Z1a);
    right.accumulate_batch(Zb, Ub, Z1b);
    left.merge(right);

    CHECK(left.count() == whole.count());
    CHECK((left.gram() - whole.gram()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((left.cross() - whole.cross()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("merge rejects incompatible accumulators")
{
    SnapshotAccumulator a(ModelKind::Linear, 5, 0.1, "dict-a");
    CHECK_THROWS_AS(a.merge(SnapshotAccumulator(ModelKind::Bilinear, 5, 0.1, "dict-a")),
                    CompatError);
    CHECK_THROWS_AS(a.merge(SnapshotAccumulator(ModelKind::Linear, 6, 0.1, "dict-a")),
                    CompatError);
    CHECK_THROWS_AS(a.merge(SnapshotAccumulator(ModelKind::Linear, 5, 0.2, "dict-a")),
                    CompatError);
    CHECK_THROWS_AS(a.merge(SnapshotAccumulator(ModelKind::Linear, 5, 0.1, "dict-b")),
                    CompatError);
}

TEST_CASE("streaming fit equals the batch normal-equation fit")
{
    const DictionarySpec dict = DictionarySpec::poly2();
    const double ts = 0.1;
    std::mt19937_64 rng(123);

    // 25 trajectories x 40 steps = 1000 snapshot pairs
    std::vector<Trajectory> trajectories;
    for (int i = 0; i < 25; ++i) trajectories.push_back(random_trajectory(rng, 40, ts));

    SnapshotAccumulator streaming(ModelKind::Bilinear, dict.size(), ts, dict.id());
    for (const auto& traj : trajectories) accumulate_trajectory(streaming, traj, dict);

    // batch path: assemble the full snapshot matrices and form the normal
    // equations in single matrix products
    const int d = streaming.regressor_size();
    const Eigen::Index N = 1000;
    Eigen::MatrixXd Phi(d, N), Zplus(dict.size(), N);
    Eigen::Index col = 0;
    for (const auto& traj : trajectories)
        for (std::size_t k = 0; k < traj.inputs.size(); ++k, ++col) {
            Phi.col(col) = streaming.regressor(dict.lift(traj.states[k]), traj.inputs[k]);
            Zplus.col(col) = dict.lift(traj.states[k + 1]);
        }
    REQUIRE(col == N);
    const Eigen::MatrixXd gram_b = Phi * Phi.transpose();
    const Eigen::MatrixXd cross_b = Zplus * Phi.transpose();
    const auto batch = SnapshotAccumulator::from_parts(ModelKind::Bilinear, dict.size(), ts,
                                                       dict.id(), N, gram_b, cross_b);

    // The comparison needs a ridge level at which the solution is determined
    // to better than the tolerance: near-collinear columns amplify roundoff
    // by about 1/lambda, and below 1e-7 the rounding of the regressor
    // products alone moves the solution by more than 1e-9 no matter how the
    // sums are formed.
    const double lambda = 1e-7;
    const KoopmanModel ms = solve_model(streaming, lambda);
    const KoopmanModel mb = solve_model(batch, lambda);

    CHECK(entrywise_rel_diff(ms.A, mb.A) < 1e-9);
    CHECK(entrywise_rel_diff(ms.B, mb.B) < 1e-9);
    CHECK(entrywise_rel_diff(ms.H[0], mb.H[0]) < 1e-9);
    CHECK(entrywise_rel_diff(ms.H[1], mb.H[1]) < 1e-9);
}

TEST_CASE("batched accumulation matches per-pair accumulation")
{
    const DictionarySpec dict = DictionarySpec::poly2();
    std::mt19937_64 rng(17);
    const auto traj = random_trajectory(rng, 40, 0.1);

    SnapshotAccumulator singles(ModelKind::Bilinear, dict.size(), 0.1, dict.id());
    accumulate_trajectory(singles, traj, dict);

    SnapshotAccumulator batched(ModelKind::Bilinear, dict.size(), 0.1, dict.id());
    const int n = dict.size();
    Eigen::MatrixXd Z(n, 40), Z1(n, 40), U(2, 40);
    for (int k = 0; k < 40; ++k) {
        Z.col(k) = dict.lift(traj.states[k]);
        Z1.col(k) = dict.lift(traj.states[k + 1]);
        U.col(k) = traj.inputs[k].vec();
    }
    batched.accumulate_batch(Z, U, Z1);

    CHECK(batched.count() == singles.count());
    const double gram_scale = singles.gram().cwiseAbs().maxCoeff();
    CHECK((batched.gram() - singles.gram()).cwiseAbs().maxCoeff() < 1e-12 * gram_scale);
    const double cross_scale = singles.cross().cwiseAbs().maxCoeff();
    CHECK((batched.cross() - singles.cross()).cwiseAbs().maxCoeff() < 1e-12 * cross_scale);
}

TEST_CASE("duplicate dictionary columns make the unregularized solve fail")
{
    const DictionarySpec dict = DictionarySpec::poly2();
    std::mt19937_64 rng(29);
    SnapshotAccumulator acc(ModelKind::Linear, dict.size(), 0.1, dict.id());
    for (int i = 0; i < 10; ++i)
        accumulate_trajectory(acc, random_trajectory(rng, 40, 0.1), dict);

    CHECK_THROWS_AS(solve_model(acc, 0.0), std::runtime_error);
    CHECK_NOTHROW(solve_model(acc, 1e-9));
    CHECK_THROWS_AS(solve_model(acc, -1.0), std::invalid_argument);
}

TEST_CASE("ridge splits weight evenly across duplicate columns")
{
    const DictionarySpec dict = DictionarySpec::poly2();
    std::mt19937_64 rng(31);
    SnapshotAccumulator acc(ModelKind::Linear, dict.size(), 0.1, dict.id());
    for (int i = 0; i < 10; ++i)
        accumulate_trajectory(acc, random_trajectory(rng, 40, 0.1), dict);

    const KoopmanModel model = solve_model(acc, 1e-9);
    for (const auto& group : dict.duplicate_groups()) {
        if (group.size() < 2) continue;
        for (std::size_t g = 1; g < group.size(); ++g) {
            const double diff =
                (model.A.col(group[g]) - model.A.col(group[0])).cwiseAbs().maxCoeff();
            CHECK(diff < 1e-7);
        }
    }
}

TEST_CASE("solve requires at least d snapshot pairs")
{
    SnapshotAccumulator acc(ModelKind::Linear, 3, 0.1, "tiny");
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int k = 0; k < 4; ++k) {  // d = 5, one short
        Eigen::VectorXd z(3);
        z << dist(rng), dist(rng), dist(rng);
        acc.accumulate(z, ControlInput{dist(rng), dist(rng)}, z);
    }
    CHECK_THROWS_AS(solve_model(acc, 1e-9), std::runtime_error);
}

TEST_CASE("growing ridge shrinks the solution toward zero")
{
    const int n = 4;
    std::mt19937_64 rng(57);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    SnapshotAccumulator acc(ModelKind::Linear, n, 0.1, "synthetic");
    for (int k = 0; k < 200; ++k) {
        Eigen::VectorXd z(n), z1(n);
        for (int i = 0; i < n; ++i) {
            z[i] = dist(rng);
            z1[i] = dist(rng);
        }
        acc.accumulate(z, ControlInput{dist(rng), dist(rng)}, z1);
    }
    double previous = std::numeric_limits<double>::infinity();
    for (const double lambda : {0.0, 1e-3, 1e0, 1e3}) {
        const KoopmanModel m = solve_model(acc, lambda);
        const double norm = m.A.norm() + m.B.norm();
        CHECK(norm < previous + 1e-12);
        previous = norm;
    }
}

TEST_CASE("open-loop prediction recursions")
{
    const int n = 3;
    Eigen::MatrixXd A = 0.5 * Eigen::MatrixXd::Identity(n, n);
    A(0, 1) = 0.25;
    Eigen::MatrixXd B(n, 2);
    B << 1, 0, 0, 1, 0.5, 0.5;
    Eigen::MatrixXd H1 = 0.1 * Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd H2 = Eigen::MatrixXd::Zero(n, n);
    H2(2, 0) = 0.2;

    KoopmanModel lin{ModelKind::Linear, A, B, {}, 0.1, "synthetic", 0, 0.0};
    KoopmanModel bil{ModelKind::Bilinear, A, B, {H1, H2}, 0.1, "synthetic", 0, 0.0};

    Eigen::VectorXd z0(n);
    z0 << 1.0, -1.0, 0.5;
    const std::vector<ControlInput> inputs{{0.3, -0.6}, {-0.2, 0.4}};

    const auto zs_lin = predict_linear(lin, z0, inputs);
    REQUIRE(zs_lin.size() == 3);
    Eigen::VectorXd expected = z0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        expected = A * expected + B * inputs[k].vec();
        CHECK((zs_lin[k + 1] - expected).cwiseAbs().maxCoeff() < 1e-14);
    }

    const auto zs_bil = predict_bilinear(bil, z0, inputs);
    expected = z0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        expected = A * expected + B * inputs[k].vec() + inputs[k].a * (H1 * expected) +
                   inputs[k].omega * (H2 * expected);
        CHECK((zs_bil[k + 1] - expected).cwiseAbs().maxCoeff() < 1e-14);
    }

    CHECK((predict_lifted(lin, z0, inputs).back() - zs_lin.back()).norm() == 0.0);
    CHECK((predict_lifted(bil, z0, inputs).back() - zs_bil.back()).norm() == 0.0);
}

TEST_CASE("rmse table is zero for a perfectly matching model")
{
    // a synthetic "lifted" system that actually tracks the unicycle exactly
    // is unavailable, so check the bookkeeping instead: predicting with the
    // identity on constant data yields zero error
    const DictionarySpec dict = DictionarySpec::poly2();
    const int n = dict.size();

    KoopmanModel model;
    model.kind = ModelKind::Linear;
    model.A = Eigen::MatrixXd::Identity(n, n);
    model.B = Eigen::MatrixXd::Zero(n, 2);
    model.ts = 0.1;
    model.dictionary_id = dict.id();

    Trajectory constant;
    constant.states.assign(6, RobotState{1.0, 2.0, 0.0, 0.5});
    constant.inputs.assign(5, ControlInput{0.0, 0.0});

    const RmseTable table = rmse_table(model, {constant}, dict);
    for (double r : table.rmse) CHECK(r == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("rmse table averages per-trajectory errors of the tracked observables")
{
    const DictionarySpec dict = DictionarySpec::poly2();
    const int n = dict.size();

    // identity model predicts "no motion": per-step error of observable X
    // equals the drift of X along the true trajectory
    KoopmanModel model;
    model.kind = ModelKind::Linear;
    model.A = Eigen::MatrixXd::Identity(n, n);
    model.B = Eigen::MatrixXd::Zero(n, 2);
    model.ts = 0.1;
    model.dictionary_id = dict.id();

    Trajectory traj;
    traj.states = {RobotState{0.0, 0.0, 1.0, 0.0}, RobotState{0.1, 0.0, 1.0, 0.0},
                   RobotState{0.3, 0.0, 1.0, 0.0}};
    traj.inputs.assign(2, ControlInput{0.0, 0.0});

    const RmseTable table = rmse_table(model, {traj}, dict);
    // X errors: 0.1 and 0.3 -> RMSE = sqrt((0.01 + 0.09) / 2)
    CHECK(table.rmse[0] == doctest::Approx(std::sqrt(0.05)).epsilon(1e-12));
    CHECK(table.rmse[1] == 0.0);
    CHECK(table.rmse[2] == 0.0);
    CHECK(table.rmse[3] == 0.0);
    // X^2 errors: 0.01 and 0.09
    CHECK(table.rmse[4] == doctest::Approx(std::sqrt((1e-4 + 81e-4) / 2)).epsilon(1e-12));
}

TEST_CASE("coupling report sums identified weight over duplicate source columns")
{
    const DictionarySpec dict = DictionarySpec::poly2();
    const int n = dict.size();

    KoopmanModel model;
    model.kind = ModelKind::Bilinear;
    model.A = Eigen::MatrixXd::Zero(n, n);
    model.B = Eigen::MatrixXd::Zero(n, 2);
    model.H = {Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};
    model.ts = 0.1;
    model.dictionary_id = dict.id();

    // split the X <- v cos(theta) weight across the duplicate pair {9, 34}
    model.A(0, 9) = 0.06;
    model.A(0, 34) = 0.04;
    // X <- cos(theta) via H1 and X <- v sin(theta) via H2 (duplicates {8, 33})
    model.H[0](0, 7) = 0.005;
    model.H[1](0, 8) = -0.003;
    model.H[1](0, 33) = -0.002;

    const auto report = coupling_report(model, dict);
    REQUIRE(report.size() == 10);

    bool found_a = false, found_h1 = false, found_h2 = false;
    for (const auto& entry : report) {
        if (entry.matrix == "A" && entry.target == "X") {
            CHECK(entry.source == "v*cos(theta)");
            CHECK(entry.identified == doctest::Approx(0.1).epsilon(1e-12));
            CHECK(entry.taylor == doctest::Approx(0.1).epsilon(1e-12));
            found_a = true;
        }
        if (entry.matrix == "H1" && entry.target == "X") {
            CHECK(entry.identified == doctest::Approx(0.005).epsilon(1e-12));
            CHECK(entry.taylor == doctest::Approx(0.005).epsilon(1e-12));
            found_h1 = true;
        }
        if (entry.matrix == "H2" && entry.target == "X" && entry.source == "v*sin(theta)") {
            CHECK(entry.identified == doctest::Approx(-0.005).epsilon(1e-12));
            CHECK(entry.taylor == doctest::Approx(-0.005).epsilon(1e-12));
            found_h2 = true;
        }
    }
    CHECK(found_a);
    CHECK(found_h1);
    CHECK(found_h2);
}

TEST_CASE("coupling report rejects non-bilinear models")
{
    const DictionarySpec dict = DictionarySpec::poly2();
    KoopmanModel lin;
    lin.kind = ModelKind::Linear;
    lin.A = Eigen::MatrixXd::Identity(dict.size(), dict.size());
    lin.B = Eigen::MatrixXd::Zero(dict.size(), 2);
    lin.dictionary_id = dict.id();
    lin.ts = 0.1;
    CHECK_THROWS_AS(coupling_report(lin, dict), CompatError);
}
