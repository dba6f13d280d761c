#pragma once

#include "koopman/dynamics.hpp"
#include "koopman/planner.hpp"
#include "koopman/qp.hpp"

#include <Eigen/Dense>

#include <vector>

namespace koopman {

struct NmpcSettings {
    int max_sqp_iter = 25;
    double step_tol = 1e-6;        ///< convergence threshold on the SQP step inf-norm
    double constraint_tol = 1e-6;  ///< admissible keep-out violation at convergence
    double fd_step = 1e-5;         ///< central-difference step, within [1e-8, 1e-4]
    double damping = 1e-8;         ///< Levenberg term added to the Gauss-Newton Hessian

    void validate() const;
};

/// Single-shooting sensitivities of the rollout under input sequence U
/// (layout [a_0, w_0, a_1, w_1, ...]): the visited states, the central
/// finite-difference Jacobian of the stacked states at steps 1..N_h with
/// respect to U, and the keep-out ellipse values with their Jacobians
/// (chain rule through the position rows; obstacle motion is input
/// independent). Ellipse rows are grouped per obstacle, horizon-major.
struct RolloutSensitivities {
    std::vector<RobotState> states;  ///< N_h + 1 entries, starting at s0
    Eigen::MatrixXd state_jac;       ///< (4 N_h) x (2 N_h)
    Eigen::VectorXd ellipse_values;  ///< n_obs * N_h
    Eigen::MatrixXd ellipse_jac;     ///< (n_obs * N_h) x (2 N_h)
};

RolloutSensitivities rollout_sensitivities(const RobotState& s0, const Eigen::VectorXd& U,
                                           double ts, int N_h,
                                           const std::vector<Obstacle>& obstacles, double t0,
                                           double fd_step);

/// One NMPC step on the exact unicycle model: Gauss-Newton SQP with the
/// same cost, bounds, soft keep-out scheme and QP solver as the Koopman
/// planner. Converges when the proposed step and the constraint violation
/// fall below the settings' thresholds; a line-search stall keeps the
/// current plan when it satisfies the keep-out constraints, so braking
/// only happens when the subproblem fails or the stalled plan is
/// infeasible. Warm start is the previous input sequence shifted one
/// step; it is updated in place.
StepDiagnostics nmpc_step(const RobotState& s, double t, const RobotState& target,
                          const std::vector<Obstacle>& obstacles, const MpcConfig& cfg,
                          const NmpcSettings& settings, AdmmQpSolver& solver,
                          Eigen::VectorXd* warm_U);

class NmpcController {
public:
    NmpcController(MpcConfig cfg, NmpcSettings settings, std::vector<Obstacle> obstacles);

    StepDiagnostics step(const RobotState& s, double t);
    void reset();

    const MpcConfig& config() const { return cfg_; }

private:
    MpcConfig cfg_;
    NmpcSettings settings_;
    std::vector<Obstacle> obstacles_;
    AdmmQpSolver solver_;
    Eigen::VectorXd warm_U_;
};

} // namespace koopman
