#include "koopman/harness.hpp"

#include "koopman/errors.hpp"
#include "koopman/lifting.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <thread>
#include <utility>

namespace koopman {

namespace {

// splitmix64 finalizer: decorrelates per-item RNG streams derived from
// (seed, index) so neighboring indices do not produce neighboring states.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Fixed work unit for dataset generation. Chunk boundaries and the merge
// order depend only on this constant, never on the worker count, which is
// what keeps the accumulated sums bitwise reproducible.
constexpr int kChunkTrajectories = 64;

} // namespace

int worker_count(int n_items)
{
    if (n_items < 1) return 1;
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("KOOPMAN_THREADS")) {
        char* end = nullptr;
        const long parsed = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && parsed >= 1)
            n = static_cast<int>(std::min<long>(parsed, 1024));
    }
    return std::min(n, n_items);
}

void DatasetConfig::validate() const
{
    if (n_traj < 1) throw std::invalid_argument("DatasetConfig: n_traj must be >= 1");
    if (steps < 1) throw std::invalid_argument("DatasetConfig: steps must be >= 1");
    if (!(ts > 0.0)) throw std::invalid_argument("DatasetConfig: ts must be > 0");
    if (test_every < 2) throw std::invalid_argument("DatasetConfig: test_every must be >= 2");
    if (!(v_min <= v_max) || !(a_min <= a_max) || !(omega_min <= omega_max))
        throw std::invalid_argument("DatasetConfig: empty sampling range");
}

Trajectory sample_trajectory(const DatasetConfig& cfg, std::uint64_t index)
{
    cfg.validate();
    std::mt19937_64 rng(mix_seed(cfg.seed, index));
    std::uniform_real_distribution<double> v_dist(cfg.v_min, cfg.v_max);
    std::uniform_real_distribution<double> theta_dist(-kPi, kPi);
    std::uniform_real_distribution<double> a_dist(cfg.a_min, cfg.a_max);
    std::uniform_real_distribution<double> omega_dist(cfg.omega_min, cfg.omega_max);

    const RobotState s0{0.0, 0.0, v_dist(rng), theta_dist(rng)};
    std::vector<ControlInput> inputs(static_cast<std::size_t>(cfg.steps));
    for (auto& u : inputs) {
        u.a = a_dist(rng);
        u.omega = omega_dist(rng);
    }
    Trajectory traj;
    traj.states = simulate_rollout(s0, inputs, cfg.ts);
    traj.inputs = std::move(inputs);
    return traj;
}

namespace {

struct ChunkResult {
    SnapshotAccumulator linear;
    SnapshotAccumulator bilinear;
};

void process_chunk(const DatasetConfig& cfg, const DictionarySpec& dict, int chunk,
                   ChunkResult& out, std::vector<Trajectory>& test_set)
{
    const int n = dict.size();
    const int begin = chunk * kChunkTrajectories;
    const int end = std::min(cfg.n_traj, begin + kChunkTrajectories);
    Eigen::MatrixXd Z(n, cfg.steps);
    Eigen::MatrixXd Z1(n, cfg.steps);
    Eigen::MatrixXd U(2, cfg.steps);
    for (int i = begin; i < end; ++i) {
        Trajectory traj = sample_trajectory(cfg, static_cast<std::uint64_t>(i));
        if ((i + 1) % cfg.test_every == 0) {
            test_set[static_cast<std::size_t>(i / cfg.test_every)] = std::move(traj);
            continue;
        }
        for (int k = 0; k < cfg.steps; ++k) {
            Z.col(k) = dict.lift(traj.states[static_cast<std::size_t>(k)]);
            Z1.col(k) = dict.lift(traj.states[static_cast<std::size_t>(k) + 1]);
            U.col(k) = traj.inputs[static_cast<std::size_t>(k)].vec();
        }
        out.linear.accumulate_batch(Z, U, Z1);
        out.bilinear.accumulate_batch(Z, U, Z1);
    }
}

} // namespace

Dataset generate_dataset(const DatasetConfig& cfg)
{
    cfg.validate();
    const DictionarySpec dict = DictionarySpec::poly2();
    const int n = dict.size();
    Dataset ds{SnapshotAccumulator(ModelKind::Linear, n, cfg.ts, dict.id()),
               SnapshotAccumulator(ModelKind::Bilinear, n, cfg.ts, dict.id()),
               std::vector<Trajectory>(static_cast<std::size_t>(cfg.n_traj / cfg.test_every))};

    const int n_chunks = (cfg.n_traj + kChunkTrajectories - 1) / kChunkTrajectories;
    const int workers = worker_count(n_chunks);

    // Chunks are processed in waves of `workers` and merged strictly in
    // chunk order, so every worker count yields identical sums.
    for (int wave = 0; wave < n_chunks; wave += workers) {
        const int batch = std::min(workers, n_chunks - wave);
        std::vector<ChunkResult> results;
        results.reserve(static_cast<std::size_t>(batch));
        for (int w = 0; w < batch; ++w)
            results.push_back(
                ChunkResult{SnapshotAccumulator(ModelKind::Linear, n, cfg.ts, dict.id()),
                            SnapshotAccumulator(ModelKind::Bilinear, n, cfg.ts, dict.id())});

        if (batch == 1) {
            process_chunk(cfg, dict, wave, results[0], ds.test_set);
        } else {
            std::vector<std::thread> threads;
            std::vector<std::exception_ptr> errors(static_cast<std::size_t>(batch));
            threads.reserve(static_cast<std::size_t>(batch));
            for (int w = 0; w < batch; ++w) {
                threads.emplace_back([&, w] {
                    try {
                        process_chunk(cfg, dict, wave + w, results[static_cast<std::size_t>(w)],
                                      ds.test_set);
                    } catch (...) {
                        errors[static_cast<std::size_t>(w)] = std::current_exception();
                    }
                });
            }
            for (auto& th : threads) th.join();
            for (const auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
        for (const auto& r : results) {
            ds.linear_acc.merge(r.linear);
            ds.bilinear_acc.merge(r.bilinear);
        }
    }
    return ds;
}

std::string to_string(ControllerKind k)
{
    switch (k) {
    case ControllerKind::BkMpc: return "bk-mpc";
    case ControllerKind::Nmpc: return "nmpc";
    }
    throw std::invalid_argument("to_string: unknown controller kind");
}

ControllerKind controller_kind_from_string(const std::string& s)
{
    if (s == "bk-mpc") return ControllerKind::BkMpc;
    if (s == "nmpc") return ControllerKind::Nmpc;
    throw FormatError("unknown controller kind '" + s + "' (expected bk-mpc or nmpc)");
}

Obstacle ScenarioConfig::default_obstacle()
{
    Obstacle o;
    o.Xc0 = 9.0;
    o.Yc0 = 4.0;
    o.rx = 2.5;
    o.ry = 2.5;
    o.eps = 0.5;
    o.v_obs = 1.5;
    o.theta_obs = 8.0 * kPi / 9.0;
    return o;
}

void ScenarioConfig::validate() const
{
    mpc.validate();
    nmpc.validate();
    if (!(duration > 0.0)) throw std::invalid_argument("ScenarioConfig: duration must be > 0");
    if (!(arrival_pos_tol > 0.0) || !(arrival_v_tol > 0.0))
        throw std::invalid_argument("ScenarioConfig: arrival tolerances must be > 0");
    if (arrival_steps < 1)
        throw std::invalid_argument("ScenarioConfig: arrival_steps must be >= 1");
    for (const auto& o : obstacles) {
        if (!(o.rx > 0.0) || !(o.ry > 0.0))
            throw std::invalid_argument("ScenarioConfig: obstacle semi-axes must be > 0");
        if (o.eps < 0.0)
            throw std::invalid_argument("ScenarioConfig: obstacle margin must be >= 0");
    }
}

double percentile_nearest_rank(std::vector<double> values, double pct)
{
    if (values.empty())
        throw std::invalid_argument("percentile_nearest_rank: no samples");
    if (!(pct > 0.0) || pct > 100.0)
        throw std::invalid_argument("percentile_nearest_rank: pct must be in (0, 100]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<long>(values.size());
    long rank = static_cast<long>(std::ceil(pct / 100.0 * static_cast<double>(n)));
    rank = std::max<long>(1, std::min(rank, n));
    return values[static_cast<std::size_t>(rank - 1)];
}

ClosedLoopLog run_closed_loop(const ScenarioConfig& sc, const KoopmanModel* model)
{
    sc.validate();
    MpcConfig cfg = sc.mpc;
    cfg.target = sc.target;

    std::unique_ptr<BkMpcController> bk;
    std::unique_ptr<NmpcController> nm;
    if (sc.controller == ControllerKind::BkMpc) {
        if (model == nullptr)
            throw std::invalid_argument("run_closed_loop: BK-MPC requires a bilinear model");
        bk = std::make_unique<BkMpcController>(*model, cfg, sc.obstacles);
    } else {
        nm = std::make_unique<NmpcController>(cfg, sc.nmpc, sc.obstacles);
    }

    const double ts = cfg.ts;
    const int n_steps = std::max(1, static_cast<int>(std::llround(sc.duration / ts)));

    ClosedLoopLog log;
    log.steps.reserve(static_cast<std::size_t>(n_steps));
    RobotState s = sc.initial;
    double min_ellipse = std::numeric_limits<double>::infinity();
    int streak = 0;
    bool failed = false;
    double arrival_t = -1.0;

    const auto audit = [&](const RobotState& state, double t) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& o : sc.obstacles) m = std::min(m, ellipse_value(state, o, t));
        min_ellipse = std::min(min_ellipse, m);
        return m;
    };

    int last_step = 0;
    for (int k = 0; k < n_steps; ++k) {
        const double t = k * ts;
        last_step = k;

        StepRecord rec;
        rec.t = t;
        rec.state = s;
        rec.min_ellipse_value = audit(s, t);
        if (!failed) {
            try {
                const StepDiagnostics diag = bk ? bk->step(s, t) : nm->step(s, t);
                rec.u = diag.u0;
                rec.solve_time_s = diag.solve_time_s;
                rec.status = diag.fallback ? "fallback" : to_string(diag.status);
                rec.max_slack = diag.max_slack;
            } catch (const std::exception&) {
                failed = true;
            }
        }
        if (failed) {
            rec.u = braking_input(s, cfg);
            rec.solve_time_s = 0.0;
            rec.status = "error";
            rec.max_slack = 0.0;
        }
        log.steps.push_back(rec);

        s = rk4_step(s, rec.u, ts);

        const double pos_err = std::hypot(s.X - sc.target.X, s.Y - sc.target.Y);
        if (pos_err < sc.arrival_pos_tol && std::abs(s.v) < sc.arrival_v_tol)
            ++streak;
        else
            streak = 0;
        if (streak >= sc.arrival_steps) {
            arrival_t = (k + 2 - sc.arrival_steps) * ts;  // first instant of the streak
            break;
        }
    }

    audit(s, (last_step + 1) * ts);
    log.final_state = s;
    log.hard_failure = failed;

    std::vector<double> times;
    times.reserve(log.steps.size());
    for (const auto& r : log.steps)
        if (r.status != "error") times.push_back(r.solve_time_s);

    Metrics m;
    if (!times.empty()) {
        double sum = 0.0;
        double worst = 0.0;
        for (double v : times) {
            sum += v;
            worst = std::max(worst, v);
        }
        m.avg_s = sum / static_cast<double>(times.size());
        m.max_s = worst;
        m.p95_s = percentile_nearest_rank(times, 95.0);
    }
    m.arrival_t_s = arrival_t;
    m.min_ellipse = min_ellipse;
    m.success = (arrival_t >= 0.0) && !failed && min_ellipse >= 1.0;
    log.metrics = m;
    return log;
}

ScenarioConfig random_scenario(const MonteCarloConfig& cfg, std::uint64_t index)
{
    std::mt19937_64 rng(mix_seed(cfg.seed, index));
    std::uniform_real_distribution<double> tx_dist(cfg.target_x_min, cfg.target_x_max);
    std::uniform_real_distribution<double> ty_dist(cfg.target_y_min, cfg.target_y_max);
    std::uniform_real_distribution<double> frac_dist(cfg.cross_frac_min, cfg.cross_frac_max);
    std::uniform_real_distribution<double> appr_dist(cfg.approach_deg_min, cfg.approach_deg_max);
    std::uniform_real_distribution<double> speed_dist(cfg.obs_speed_min, cfg.obs_speed_max);
    std::uniform_int_distribution<int> side_dist(0, 1);

    ScenarioConfig sc;
    sc.mpc = cfg.mpc;
    sc.nmpc = cfg.nmpc;
    sc.duration = cfg.duration;
    sc.seed = index;
    sc.target = RobotState{tx_dist(rng), ty_dist(rng), 0.0, 0.0};

    const double L = std::hypot(sc.target.X, sc.target.Y);
    const double path = std::atan2(sc.target.Y, sc.target.X);

    // Aim the obstacle so it crosses the straight start-to-target line
    // around the time the robot would pass at the reference speed; redraw
    // until the initial placement leaves the start position well clear.
    Obstacle o;
    o.rx = cfg.obs_rx;
    o.ry = cfg.obs_ry;
    o.eps = cfg.obs_eps;
    for (int attempt = 0; attempt < 256; ++attempt) {
        const double f = frac_dist(rng);
        const double sign = side_dist(rng) == 0 ? 1.0 : -1.0;
        o.theta_obs = path + sign * appr_dist(rng) * kPi / 180.0;
        o.v_obs = speed_dist(rng);
        const double t_cross = f * L / cfg.v_ref;
        o.Xc0 = f * sc.target.X - o.v_obs * t_cross * std::cos(o.theta_obs);
        o.Yc0 = f * sc.target.Y - o.v_obs * t_cross * std::sin(o.theta_obs);
        if (ellipse_value(sc.initial, o, 0.0) >= 1.0 + o.eps + 0.5) break;
    }
    sc.obstacles = {o};
    return sc;
}

MonteCarloResult monte_carlo(const MonteCarloConfig& cfg, const KoopmanModel* model,
                             const std::vector<ControllerKind>& kinds)
{
    if (cfg.n_scenarios < 1)
        throw std::invalid_argument("monte_carlo: n_scenarios must be >= 1");
    if (kinds.empty()) throw std::invalid_argument("monte_carlo: no controllers requested");

    MonteCarloResult result;
    result.scenarios.reserve(static_cast<std::size_t>(cfg.n_scenarios));
    for (int i = 0; i < cfg.n_scenarios; ++i)
        result.scenarios.push_back(random_scenario(cfg, static_cast<std::uint64_t>(i)));

    for (ControllerKind kind : kinds) {
        ControllerSummary summary;
        summary.kind = kind;
        summary.logs.resize(result.scenarios.size());

        const int workers = worker_count(cfg.n_scenarios);
        std::atomic<int> next{0};
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        const auto run_slot = [&](int slot) {
            ScenarioConfig sc = result.scenarios[static_cast<std::size_t>(slot)];
            sc.controller = kind;
            summary.logs[static_cast<std::size_t>(slot)] = run_closed_loop(sc, model);
        };
        if (workers == 1) {
            for (int i = 0; i < cfg.n_scenarios; ++i) run_slot(i);
        } else {
            std::vector<std::thread> threads;
            threads.reserve(static_cast<std::size_t>(workers));
            for (int w = 0; w < workers; ++w) {
                threads.emplace_back([&, w] {
                    try {
                        for (;;) {
                            const int slot = next.fetch_add(1);
                            if (slot >= cfg.n_scenarios) break;
                            run_slot(slot);
                        }
                    } catch (...) {
                        errors[static_cast<std::size_t>(w)] = std::current_exception();
                    }
                });
            }
            for (auto& th : threads) th.join();
            for (const auto& e : errors)
                if (e) std::rethrow_exception(e);
        }

        std::vector<double> times;
        double arrival_sum = 0.0;
        double min_ellipse = std::numeric_limits<double>::infinity();
        for (const auto& log : summary.logs) {
            for (const auto& r : log.steps)
                if (r.status != "error") times.push_back(r.solve_time_s);
            min_ellipse = std::min(min_ellipse, log.metrics.min_ellipse);
            if (log.metrics.success) {
                ++summary.successes;
                arrival_sum += log.metrics.arrival_t_s;
            }
        }
        Metrics agg;
        if (!times.empty()) {
            double sum = 0.0;
            double worst = 0.0;
            for (double v : times) {
                sum += v;
                worst = std::max(worst, v);
            }
            agg.avg_s = sum / static_cast<double>(times.size());
            agg.max_s = worst;
            agg.p95_s = percentile_nearest_rank(times, 95.0);
        }
        agg.arrival_t_s =
            summary.successes > 0 ? arrival_sum / summary.successes : -1.0;
        agg.min_ellipse = min_ellipse;
        agg.success = summary.successes == cfg.n_scenarios;
        summary.aggregate = agg;
        result.controllers.push_back(std::move(summary));
    }
    return result;
}

} // namespace koopman
