// Microbenchmarks for the hot paths: dictionary lifting, lifted one-step
// prediction, the ADMM QP solve and full controller steps on the reference
// scenario. Run manually; these are not part of the test suite.

#include "koopman/harness.hpp"
#include "koopman/qp_selftest.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace koopman;

const KoopmanModel& fitted_model()
{
    static const KoopmanModel model = [] {
        DatasetConfig cfg;
        cfg.n_traj = 150;
        cfg.steps = 30;
        cfg.seed = 12;
        return solve_model(generate_dataset(cfg).bilinear_acc, 1e-15);
    }();
    return model;
}

void BM_DictionaryLift(benchmark::State& state)
{
    const DictionarySpec dict = DictionarySpec::poly2();
    const RobotState s{1.2, -0.7, 2.0, 0.6};
    for (auto _ : state) benchmark::DoNotOptimize(dict.lift(s));
}
BENCHMARK(BM_DictionaryLift);

void BM_BilinearPredictStep(benchmark::State& state)
{
    const KoopmanModel& model = fitted_model();
    const DictionarySpec dict = DictionarySpec::poly2();
    const Eigen::VectorXd z0 = dict.lift(RobotState{1.2, -0.7, 2.0, 0.6});
    const std::vector<ControlInput> u{{0.5, -0.2}};
    for (auto _ : state) benchmark::DoNotOptimize(predict_bilinear(model, z0, u));
}
BENCHMARK(BM_BilinearPredictStep);

void BM_AdmmRandomQp(benchmark::State& state)
{
    std::mt19937_64 rng(7);
    const QuadraticProgram p = random_pd_qp(rng);
    AdmmQpSolver solver;
    for (auto _ : state) benchmark::DoNotOptimize(solver.solve(p));
}
BENCHMARK(BM_AdmmRandomQp);

void BM_BkMpcStep(benchmark::State& state)
{
    MpcConfig cfg;
    BkMpcController controller(fitted_model(), cfg,
                               {ScenarioConfig::default_obstacle()});
    const RobotState s{0.0, 0.0, 1.0, 0.4};
    for (auto _ : state) benchmark::DoNotOptimize(controller.step(s, 0.0));
}
BENCHMARK(BM_BkMpcStep);

void BM_NmpcStep(benchmark::State& state)
{
    MpcConfig cfg;
    NmpcController controller(cfg, NmpcSettings{},
                              {ScenarioConfig::default_obstacle()});
    const RobotState s{0.0, 0.0, 1.0, 0.4};
    for (auto _ : state) benchmark::DoNotOptimize(controller.step(s, 0.0));
}
BENCHMARK(BM_NmpcStep);

} // namespace

BENCHMARK_MAIN();
