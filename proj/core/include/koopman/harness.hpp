#pragma once

#include "koopman/dynamics.hpp"
#include "koopman/edmd.hpp"
#include "koopman/nmpc.hpp"
#include "koopman/planner.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace koopman {

/// Worker count for data generation and Monte Carlo runs: hardware
/// concurrency, capped by the KOOPMAN_THREADS environment variable and by
/// the number of work items. At least 1. Results never depend on it.
int worker_count(int n_items);

struct DatasetConfig {
    int n_traj = 100000;  ///< total trajectories, training and held-out together
    int steps = 40;       ///< snapshot pairs per trajectory
    double ts = 0.1;
    std::uint64_t seed = 0;
    int test_every = 10;  ///< every test_every-th trajectory is held out

    double v_min = 0.0, v_max = 5.0;            ///< initial speed range
    double a_min = -2.0, a_max = 2.0;           ///< per-step acceleration range
    double omega_min = -kPi, omega_max = kPi;   ///< per-step turn-rate range

    void validate() const;
};

struct Dataset {
    SnapshotAccumulator linear_acc;
    SnapshotAccumulator bilinear_acc;
    std::vector<Trajectory> test_set;
};

/// Trajectory for one dataset index: starts at the origin with v and theta
/// drawn per the config ranges, inputs redrawn every step. The RNG is
/// seeded from (seed, index) alone, so any partition of the index range
/// reproduces identical trajectories.
Trajectory sample_trajectory(const DatasetConfig& cfg, std::uint64_t index);

/// Simulate all trajectories and stream the lifted snapshot pairs into a
/// linear and a bilinear accumulator, holding out every test_every-th
/// trajectory unprocessed for evaluation. Chunked across workers with a
/// fixed chunk size and in-order merging: the result is bitwise identical
/// for any worker count.
Dataset generate_dataset(const DatasetConfig& cfg);

enum class ControllerKind { BkMpc, Nmpc };

std::string to_string(ControllerKind k);
ControllerKind controller_kind_from_string(const std::string& s);

struct ScenarioConfig {
    RobotState initial{0.0, 0.0, 0.0, 0.0};
    RobotState target{10.0, 8.0, 0.0, 0.0};
    std::vector<Obstacle> obstacles{default_obstacle()};
    MpcConfig mpc{};
    NmpcSettings nmpc{};
    double duration = 30.0;
    ControllerKind controller = ControllerKind::BkMpc;
    std::uint64_t seed = 0;

    double arrival_pos_tol = 0.25;  ///< position error threshold [m]
    double arrival_v_tol = 0.1;     ///< speed threshold [m/s]
    int arrival_steps = 5;          ///< consecutive steps required

    /// Crossing obstacle of the reference scenario.
    static Obstacle default_obstacle();

    void validate() const;
};

struct StepRecord {
    double t = 0.0;
    RobotState state;   ///< executed state the controller acted on
    ControlInput u;     ///< applied input
    double solve_time_s = 0.0;
    std::string status; ///< optimal | max-iterations | infeasible | fallback | error
    double max_slack = 0.0;
    double min_ellipse_value = 0.0;  ///< over obstacles, true dynamics audit
};

struct Metrics {
    double avg_s = 0.0;
    double max_s = 0.0;
    double p95_s = 0.0;
    double arrival_t_s = -1.0;  ///< negative when the target was never reached
    double min_ellipse = 0.0;
    bool success = false;
};

struct ClosedLoopLog {
    std::vector<StepRecord> steps;
    RobotState final_state;
    bool hard_failure = false;
    Metrics metrics;
};

/// Nearest-rank percentile (pct in (0, 100]) of the given samples.
double percentile_nearest_rank(std::vector<double> values, double pct);

/// Receding-horizon simulation: controller step, apply the first input to
/// the exact discretized dynamics, advance obstacles with time, log. Stops
/// early once the state stays within the arrival thresholds for the
/// configured number of consecutive steps. A controller exception marks
/// the run failed and braking is applied for the remainder. The safety
/// audit always evaluates executed states against the true keep-out
/// inequality, never model predictions. The model may be null for NMPC;
/// BK-MPC requires a bilinear one.
ClosedLoopLog run_closed_loop(const ScenarioConfig& sc, const KoopmanModel* model);

struct MonteCarloConfig {
    int n_scenarios = 100;
    std::uint64_t seed = 0;
    double duration = 30.0;
    MpcConfig mpc{};
    NmpcSettings nmpc{};

    // scenario randomization ranges, recorded alongside the results
    double target_x_min = 5.0, target_x_max = 12.0;
    double target_y_min = 4.0, target_y_max = 10.0;
    double obs_speed_min = 0.5, obs_speed_max = 2.0;
    double obs_rx = 2.5, obs_ry = 2.5, obs_eps = 0.5;
    double cross_frac_min = 0.4, cross_frac_max = 0.7;    ///< crossing point along the path
    double approach_deg_min = 60.0, approach_deg_max = 120.0;
    double v_ref = 2.0;  ///< nominal robot speed used to time the crossing
};

/// Scenario i of the Monte Carlo study, a deterministic function of
/// (cfg.seed, index): random target in the configured box and one
/// obstacle constructed to cross the straight start-to-target path while
/// the robot is expected to be near it.
ScenarioConfig random_scenario(const MonteCarloConfig& cfg, std::uint64_t index);

struct ControllerSummary {
    ControllerKind kind = ControllerKind::BkMpc;
    std::vector<ClosedLoopLog> logs;
    Metrics aggregate;  ///< pooled solve stats; arrival averaged over successes
    int successes = 0;
};

struct MonteCarloResult {
    std::vector<ScenarioConfig> scenarios;
    std::vector<ControllerSummary> controllers;
};

/// Run every controller kind over the identical scenario list. Individual
/// run failures are recorded in the logs, never fatal.
MonteCarloResult monte_carlo(const MonteCarloConfig& cfg, const KoopmanModel* model,
                             const std::vector<ControllerKind>& kinds);

} // namespace koopman
