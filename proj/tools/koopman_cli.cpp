// Command-line front end for the Koopman MPC pipeline: dataset generation,
// model fitting and evaluation, closed-loop runs, the Monte Carlo study and
// the QP self-test. Every subcommand is deterministic given --seed; worker
// count is capped by the KOOPMAN_THREADS environment variable.

#include "koopman/edmd.hpp"
#include "koopman/errors.hpp"
#include "koopman/harness.hpp"
#include "koopman/lifting.hpp"
#include "koopman/model_io.hpp"
#include "koopman/qp_selftest.hpp"
#include "koopman/scenario_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace koopman;
namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitFormat = 4;
constexpr int kExitCompat = 5;

void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::string number_str(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// dataset config sidecar: gen-data records how the dataset was drawn so that
// eval can regenerate the held-out trajectories without re-streaming files.

void save_dataset_config(const DatasetConfig& cfg, const std::string& path)
{
    const json j{{"n_traj", cfg.n_traj},
                 {"steps", cfg.steps},
                 {"ts", cfg.ts},
                 {"seed", cfg.seed},
                 {"test_every", cfg.test_every},
                 {"v_min", cfg.v_min},
                 {"v_max", cfg.v_max},
                 {"a_min", cfg.a_min},
                 {"a_max", cfg.a_max},
                 {"omega_min", cfg.omega_min},
                 {"omega_max", cfg.omega_max}};
    std::ofstream file(path);
    if (!file) throw IoError("cannot open '" + path + "' for writing");
    file << j.dump(2) << '\n';
    if (!file) throw IoError("failed to write '" + path + "'");
}

DatasetConfig load_dataset_config(const std::string& path)
{
    std::ifstream file(path);
    if (!file) throw IoError("cannot open '" + path + "' for reading");
    json j;
    try {
        j = json::parse(file);
    } catch (const json::parse_error& e) {
        throw FormatError("'" + path + "' is not valid JSON: " + std::string(e.what()));
    }
    DatasetConfig cfg;
    try {
        cfg.n_traj = j.value("n_traj", cfg.n_traj);
        cfg.steps = j.value("steps", cfg.steps);
        cfg.ts = j.value("ts", cfg.ts);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.test_every = j.value("test_every", cfg.test_every);
        cfg.v_min = j.value("v_min", cfg.v_min);
        cfg.v_max = j.value("v_max", cfg.v_max);
        cfg.a_min = j.value("a_min", cfg.a_min);
        cfg.a_max = j.value("a_max", cfg.a_max);
        cfg.omega_min = j.value("omega_min", cfg.omega_min);
        cfg.omega_max = j.value("omega_max", cfg.omega_max);
    } catch (const json::exception& e) {
        throw FormatError("'" + path + "': " + std::string(e.what()));
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError("'" + path + "': " + std::string(e.what()));
    }
    return cfg;
}

std::vector<Trajectory> held_out_set(const DatasetConfig& cfg)
{
    std::vector<Trajectory> test_set;
    test_set.reserve(static_cast<std::size_t>(cfg.n_traj / cfg.test_every));
    for (int i = cfg.test_every - 1; i < cfg.n_traj; i += cfg.test_every)
        test_set.push_back(sample_trajectory(cfg, static_cast<std::uint64_t>(i)));
    return test_set;
}

// ---------------------------------------------------------------------------
// subcommands

struct GenDataArgs {
    DatasetConfig cfg{};
    std::string out = "data";
};

void run_gen_data(const GenDataArgs& a)
{
    a.cfg.validate();
    ensure_dir(a.out);
    const Dataset ds = generate_dataset(a.cfg);
    const fs::path dir(a.out);
    save_accumulator(ds.linear_acc, (dir / "linear_accumulator.json").string());
    save_accumulator(ds.bilinear_acc, (dir / "bilinear_accumulator.json").string());
    save_dataset_config(a.cfg, (dir / "dataset_config.json").string());
    std::cout << "streamed " << ds.linear_acc.count() << " training pairs from "
              << a.cfg.n_traj << " trajectories (" << ds.test_set.size()
              << " held out) into " << a.out << "\n";
}

struct FitArgs {
    std::string in;
    std::string kind = "bilinear";
    double lambda = 1e-15;
    std::string out = "model.json";
};

void run_fit(const FitArgs& a)
{
    fs::path path(a.in);
    if (fs::is_directory(path)) path /= a.kind + "_accumulator.json";
    const SnapshotAccumulator acc = load_accumulator(path.string());
    if (to_string(acc.mode()) != a.kind)
        throw CompatError("accumulator '" + path.string() + "' holds a " +
                          to_string(acc.mode()) + " regression, not " + a.kind);
    const KoopmanModel model = solve_model(acc, a.lambda);
    save_model(model, a.out);
    std::cout << "fitted " << a.kind << " model from " << acc.count()
              << " pairs (lambda " << number_str(a.lambda) << ") -> " << a.out << "\n";
}

struct EvalArgs {
    std::string dataset;
    std::string linear_path;
    std::string bilinear_path;
    std::string out = "rmse.csv";
};

void run_eval(const EvalArgs& a)
{
    if (a.linear_path.empty() && a.bilinear_path.empty())
        throw CLI::ValidationError("eval", "provide --linear and/or --bilinear model files");
    const DatasetConfig cfg = load_dataset_config(a.dataset);
    const std::vector<Trajectory> test_set = held_out_set(cfg);
    if (test_set.empty()) throw FormatError("dataset holds no held-out trajectories");
    const DictionarySpec dict = DictionarySpec::poly2();

    std::vector<std::pair<std::string, RmseTable>> columns;
    if (!a.linear_path.empty())
        columns.emplace_back("linear", rmse_table(load_model(a.linear_path, dict.id()),
                                                  test_set, dict));
    if (!a.bilinear_path.empty())
        columns.emplace_back("bilinear", rmse_table(load_model(a.bilinear_path, dict.id()),
                                                    test_set, dict));

    std::ofstream file(a.out);
    if (!file) throw IoError("cannot open '" + a.out + "' for writing");
    file << "observable";
    for (const auto& [name, table] : columns) file << ',' << name;
    file << '\n';
    for (std::size_t row = 0; row < RmseTable::kObservables.size(); ++row) {
        file << RmseTable::kObservables[row];
        for (const auto& [name, table] : columns)
            file << ',' << number_str(table.rmse[row]);
        file << '\n';
    }
    if (!file) throw IoError("failed to write '" + a.out + "'");
    std::cout << "evaluated " << columns.size() << " model(s) on " << test_set.size()
              << " held-out trajectories -> " << a.out << "\n";
}

struct InspectArgs {
    std::string model;
    std::string out = "coupling.csv";
};

void run_inspect(const InspectArgs& a)
{
    const DictionarySpec dict = DictionarySpec::poly2();
    const KoopmanModel model = load_model(a.model, dict.id());
    const std::vector<CouplingEntry> entries = coupling_report(model, dict);

    std::ofstream file(a.out);
    if (!file) throw IoError("cannot open '" + a.out + "' for writing");
    file << "matrix,target,source,identified,taylor\n";
    for (const auto& e : entries)
        file << e.matrix << ',' << e.target << ',' << e.source << ','
             << number_str(e.identified) << ',' << number_str(e.taylor) << '\n';
    if (!file) throw IoError("failed to write '" + a.out + "'");
    std::cout << "wrote " << entries.size() << " coupling rows -> " << a.out << "\n";
}

struct RunArgs {
    std::string config;
    std::string model;
    std::string controller;
    std::string out = "run_out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int horizon = 0;
    double duration = 0.0;
};

void run_run(const RunArgs& a)
{
    ScenarioConfig sc = a.config.empty() ? ScenarioConfig{} : load_scenario(a.config);
    if (!a.controller.empty()) sc.controller = controller_kind_from_string(a.controller);
    if (a.seed_set) sc.seed = a.seed;
    if (a.horizon > 0) sc.mpc.N_h = a.horizon;
    if (a.duration > 0.0) sc.duration = a.duration;

    KoopmanModel model;
    const KoopmanModel* model_ptr = nullptr;
    if (sc.controller == ControllerKind::BkMpc) {
        if (a.model.empty())
            throw CLI::ValidationError("run", "--model is required for the bk-mpc controller");
        model = load_model(a.model, DictionarySpec::poly2().id());
        model_ptr = &model;
    }

    const ClosedLoopLog log = run_closed_loop(sc, model_ptr);
    ensure_dir(a.out);
    const fs::path dir(a.out);
    save_log_csv(log, (dir / "log.csv").string());
    save_metrics_json(log.metrics, (dir / "metrics.json").string());

    std::cout << to_string(sc.controller) << ": " << log.steps.size() << " steps, final ("
              << number_str(log.final_state.X) << ", " << number_str(log.final_state.Y)
              << "), arrival "
              << (log.metrics.arrival_t_s >= 0.0 ? number_str(log.metrics.arrival_t_s) + " s"
                                                 : std::string("none"))
              << ", min ellipse " << number_str(log.metrics.min_ellipse) << ", "
              << (log.metrics.success ? "success" : "failure") << " -> " << a.out << "\n";
}

struct MonteCarloArgs {
    std::string model;
    std::string controller = "both";
    int scenarios = 10;
    std::uint64_t seed = 0;
    double duration = 30.0;
    int horizon = 0;
    std::string out = "mc_out";
};

void run_monte_carlo(const MonteCarloArgs& a)
{
    MonteCarloConfig mc;
    mc.n_scenarios = a.scenarios;
    mc.seed = a.seed;
    mc.duration = a.duration;
    if (a.horizon > 0) mc.mpc.N_h = a.horizon;

    std::vector<ControllerKind> kinds;
    if (a.controller == "both")
        kinds = {ControllerKind::BkMpc, ControllerKind::Nmpc};
    else
        kinds = {controller_kind_from_string(a.controller)};

    KoopmanModel model;
    const KoopmanModel* model_ptr = nullptr;
    for (ControllerKind kind : kinds)
        if (kind == ControllerKind::BkMpc) {
            if (a.model.empty())
                throw CLI::ValidationError("montecarlo",
                                           "--model is required for the bk-mpc controller");
            model = load_model(a.model, DictionarySpec::poly2().id());
            model_ptr = &model;
        }

    const MonteCarloResult result = monte_carlo(mc, model_ptr, kinds);
    save_monte_carlo(result, mc, a.out);

    for (const auto& summary : result.controllers)
        std::cout << to_string(summary.kind) << ": " << summary.successes << "/"
                  << mc.n_scenarios << " successes, avg solve "
                  << number_str(summary.aggregate.avg_s) << " s, max "
                  << number_str(summary.aggregate.max_s) << " s, p95 "
                  << number_str(summary.aggregate.p95_s) << " s\n";
    if (result.controllers.size() == 2) {
        const double bk = result.controllers[0].aggregate.avg_s;
        const double nm = result.controllers[1].aggregate.avg_s;
        if (bk > 0.0)
            std::cout << "avg solve-time ratio nmpc/bk-mpc: " << number_str(nm / bk) << "\n";
    }
    std::cout << "study written to " << a.out << "\n";
}

struct SelfTestArgs {
    int instances = 100;
    std::uint64_t seed = 20240514ULL;
    std::string out = "qp_selftest.csv";
};

int run_self_test(const SelfTestArgs& a)
{
    const std::vector<SelfTestRow> rows = run_qp_selftest(a.instances, a.seed);
    std::ofstream file(a.out);
    if (!file) throw IoError("cannot open '" + a.out + "' for writing");
    write_selftest_csv(rows, file);
    if (!file) throw IoError("failed to write '" + a.out + "'");

    int matched = 0;
    for (const auto& row : rows) matched += row.matched ? 1 : 0;
    std::cout << matched << "/" << rows.size() << " instances matched the oracle -> "
              << a.out << "\n";
    return matched == static_cast<int>(rows.size()) ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Koopman MPC toolkit: identification, control and benchmarks"};
    app.require_subcommand(1);
    int exit_code = 0;

    GenDataArgs gen;
    gen.cfg.n_traj = 5500;
    gen.cfg.test_every = 11;
    auto* gen_cmd = app.add_subcommand(
        "gen-data", "simulate random trajectories and stream the regression sums");
    gen_cmd->add_option("--n-traj", gen.cfg.n_traj, "total trajectories, incl. held-out")
        ->capture_default_str();
    gen_cmd->add_option("--steps", gen.cfg.steps, "snapshot pairs per trajectory")
        ->capture_default_str();
    gen_cmd->add_option("--ts", gen.cfg.ts, "sample period [s]")->capture_default_str();
    gen_cmd->add_option("--seed", gen.cfg.seed, "master seed")->capture_default_str();
    gen_cmd->add_option("--test-every", gen.cfg.test_every,
                        "hold out every k-th trajectory")
        ->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output directory")->capture_default_str();
    gen_cmd->callback([&] { run_gen_data(gen); });

    FitArgs fit;
    auto* fit_cmd =
        app.add_subcommand("fit", "solve the regression for a Koopman model");
    fit_cmd->add_option("--in", fit.in, "accumulator file or gen-data directory")
        ->required();
    fit_cmd->add_option("--kind", fit.kind, "model kind")
        ->check(CLI::IsMember({"linear", "bilinear"}))
        ->capture_default_str();
    fit_cmd->add_option("--lambda", fit.lambda, "ridge coefficient")->capture_default_str();
    fit_cmd->add_option("--out", fit.out, "model JSON path")->capture_default_str();
    fit_cmd->callback([&] { run_fit(fit); });

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand(
        "eval", "open-loop prediction RMSE of fitted models on the held-out set");
    eval_cmd->add_option("--dataset", eval.dataset, "dataset_config.json from gen-data")
        ->required();
    eval_cmd->add_option("--linear", eval.linear_path, "linear model JSON");
    eval_cmd->add_option("--bilinear", eval.bilinear_path, "bilinear model JSON");
    eval_cmd->add_option("--out", eval.out, "RMSE CSV path")->capture_default_str();
    eval_cmd->callback([&] { run_eval(eval); });

    InspectArgs inspect;
    auto* inspect_cmd = app.add_subcommand(
        "inspect", "identified vs analytic input-state coupling coefficients");
    inspect_cmd->add_option("--model", inspect.model, "bilinear model JSON")->required();
    inspect_cmd->add_option("--out", inspect.out, "coupling CSV path")->capture_default_str();
    inspect_cmd->callback([&] { run_inspect(inspect); });

    RunArgs run;
    auto* run_cmd =
        app.add_subcommand("run", "closed-loop scenario with logging and metrics");
    run_cmd->add_option("--config", run.config, "scenario JSON (defaults when omitted)");
    run_cmd->add_option("--model", run.model, "bilinear model JSON (bk-mpc only)");
    run_cmd->add_option("--controller", run.controller, "controller kind")
        ->check(CLI::IsMember({"bk-mpc", "nmpc"}));
    run_cmd->add_option("--out", run.out, "output directory")->capture_default_str();
    auto* run_seed = run_cmd->add_option("--seed", run.seed, "scenario seed override");
    run_cmd->add_option("--horizon", run.horizon, "prediction horizon override");
    run_cmd->add_option("--duration", run.duration, "simulated duration override [s]");
    run_cmd->callback([&] {
        run.seed_set = run_seed->count() > 0;
        run_run(run);
    });

    MonteCarloArgs mc;
    auto* mc_cmd = app.add_subcommand(
        "montecarlo", "randomized-scenario study over one or both controllers");
    mc_cmd->add_option("--model", mc.model, "bilinear model JSON (bk-mpc only)");
    mc_cmd->add_option("--controller", mc.controller, "bk-mpc, nmpc or both")
        ->check(CLI::IsMember({"bk-mpc", "nmpc", "both"}))
        ->capture_default_str();
    mc_cmd->add_option("--scenarios", mc.scenarios, "number of scenarios")
        ->capture_default_str();
    mc_cmd->add_option("--seed", mc.seed, "master seed")->capture_default_str();
    mc_cmd->add_option("--duration", mc.duration, "per-run duration [s]")
        ->capture_default_str();
    mc_cmd->add_option("--horizon", mc.horizon, "prediction horizon override");
    mc_cmd->add_option("--out", mc.out, "output directory")->capture_default_str();
    mc_cmd->callback([&] { run_monte_carlo(mc); });

    SelfTestArgs st;
    auto* st_cmd = app.add_subcommand(
        "qp-selftest", "solver vs enumeration oracle on random convex QPs");
    st_cmd->add_option("--instances", st.instances, "number of instances")
        ->capture_default_str();
    st_cmd->add_option("--seed", st.seed, "master seed")->capture_default_str();
    st_cmd->add_option("--out", st.out, "per-instance CSV path")->capture_default_str();
    st_cmd->callback([&] { exit_code = run_self_test(st); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    } catch (const CompatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCompat;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
