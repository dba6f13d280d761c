#pragma once

#include "koopman/dynamics.hpp"
#include "koopman/edmd.hpp"
#include "koopman/lifting.hpp"
#include "koopman/qp.hpp"

#include <Eigen/Dense>

#include <vector>

namespace koopman {

struct MpcConfig {
    int N_h = 40;
    Eigen::Matrix4d Q = Eigen::Vector4d(1.0, 1.0, 0.0, 0.0).asDiagonal();
    Eigen::Matrix2d R = Eigen::Vector2d(4.0, 10.0).asDiagonal();
    double ts = 0.1;
    Eigen::Vector2d u_min{-2.0, -kPi};
    Eigen::Vector2d u_max{2.0, kPi};
    double slack_weight = 1e5;
    RobotState target{10.0, 8.0, 0.0, 0.0};

    /// Throws std::invalid_argument when N_h < 1, R is not positive
    /// definite, Q has a negative eigenvalue, bounds are not strictly
    /// ordered, or slack_weight <= 0.
    void validate() const;
};

/// Everything expressed relative to the robot's current position: the
/// robot at the origin, target and per-step obstacle centers translated
/// by -offset. Headings and speeds untouched.
struct ShiftedFrame {
    RobotState state;
    RobotState target;
    std::vector<std::vector<Eigen::Vector2d>> obstacle_centers;  // [obstacle][step 1..N_h]
    Eigen::Vector2d offset;
};

ShiftedFrame shift_frame(const RobotState& s, const RobotState& target,
                         const std::vector<std::vector<Eigen::Vector2d>>& obstacle_centers);

/// B_t = B + [H1 z0, H2 z0]: the input map of the bilinear model frozen at
/// the current lifted state, exact there and held for the whole horizon.
Eigen::MatrixXd linearize_input_matrix(const KoopmanModel& model, const Eigen::VectorXd& z0);

/// Free and forced response maps of z+ = A z + B_t u over the horizon:
/// PhiStack row-block k is A^(k+1); Gamma block (i, j) = A^(i-j) B_t below
/// the diagonal, zero above.
struct PredictionMatrices {
    Eigen::MatrixXd PhiStack;  ///< (N_h*n) x n
    Eigen::MatrixXd Gamma;     ///< (N_h*n) x (N_h*m)
};

PredictionMatrices build_prediction(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B_t,
                                    int N_h);

/// Condensed tracking cost over U: Hq = 2(Gamma' Cbar' Qbar Cbar Gamma +
/// Rbar), fq = 2 Gamma' Cbar' Qbar (Cbar PhiStack z0 - target stack),
/// where C extracts the four physical states heading each lifted block.
struct CostMatrices {
    Eigen::MatrixXd Hq;
    Eigen::VectorXd fq;
};

CostMatrices build_cost(const PredictionMatrices& pred, const Eigen::VectorXd& z0,
                        const RobotState& target, const Eigen::Matrix4d& Q,
                        const Eigen::Matrix2d& R);

/// Stacked box bounds on the input sequence: [I; -I] U <= [u_max...; -u_min...].
struct BoundRows {
    Eigen::MatrixXd Gu;
    Eigen::VectorXd du;
};

BoundRows build_input_bounds(int N_h, const Eigen::Vector2d& u_min, const Eigen::Vector2d& u_max);

/// Keep-out rows for one obstacle, one row per horizon step: the ellipse
/// inequality rewritten on the lifted entries (X, Y, X^2, Y^2) as
/// s_k = [2Xc/rx^2, 2Yc/ry^2, 0, 0, -1/rx^2, -1/ry^2], beta_k =
/// Xc^2/rx^2 + Yc^2/ry^2 - 1 - eps, giving s_k Ct (Phi_k z0 + Gamma_k U)
/// <= beta_k with Ct = [I6, 0].
struct ObstacleRows {
    Eigen::MatrixXd Gobs;
    Eigen::VectorXd dobs;
};

ObstacleRows build_obstacle_constraints(const std::vector<Eigen::Vector2d>& centers, double rx,
                                        double ry, double eps, const PredictionMatrices& pred,
                                        const Eigen::VectorXd& z0);

struct CondensedProblem {
    Eigen::MatrixXd PhiStack;
    Eigen::MatrixXd Gamma;
    Eigen::MatrixXd Hq;
    Eigen::VectorXd fq;
    Eigen::MatrixXd Gu;
    Eigen::VectorXd du;
    Eigen::MatrixXd Gobs;
    Eigen::VectorXd dobs;
    int n_inputs = 0;  ///< N_h * m, leading variables of the assembled QP
    int n_slack = 0;   ///< one per obstacle row, appended after the inputs
};

CondensedProblem build_condensed(const KoopmanModel& model, const DictionarySpec& dict,
                                 const ShiftedFrame& frame,
                                 const std::vector<Obstacle>& obstacles, const MpcConfig& cfg);

/// Variables [U; xi]: obstacle rows are softened as Gobs U - xi <= dobs
/// with xi >= 0, penalized by slack_weight * (xi^2 + xi). The quadratic
/// term keeps the QP feasible no matter how the linearization lands; the
/// linear term is an exact penalty (coefficient far above any keep-out
/// multiplier), so nominal runs carry exactly zero slack.
QuadraticProgram assemble_qp(const CondensedProblem& cond, double slack_weight);

struct StepDiagnostics {
    double t = 0.0;
    ControlInput u0{};
    QpStatus status = QpStatus::MaxIterations;
    bool fallback = false;  ///< braking action substituted for the solver output
    double solve_time_s = 0.0;
    double max_slack = 0.0;
    int iterations = 0;  ///< QP iterations (BK-MPC) or SQP iterations (NMPC)
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    std::vector<Eigen::Vector2d> predicted_xy;  ///< planned positions, absolute frame
};

/// One receding-horizon step: shift frame, lift, freeze B_t, condense,
/// solve the soft-constrained QP, return the first input clamped to the
/// bounds. On a non-optimal solve the fallback brakes toward v = 0 with
/// zero turn rate. Warm start vectors (primal/dual) are read and, on an
/// optimal solve, overwritten with the one-step-shifted solution.
StepDiagnostics mpc_step(const KoopmanModel& model, const DictionarySpec& dict,
                         const RobotState& s, double t, const RobotState& target,
                         const std::vector<Obstacle>& obstacles, const MpcConfig& cfg,
                         AdmmQpSolver& solver, Eigen::VectorXd* warm_primal,
                         Eigen::VectorXd* warm_dual);

/// Braking input used whenever a controller cannot produce a plan.
ControlInput braking_input(const RobotState& s, const MpcConfig& cfg);

class BkMpcController {
public:
    BkMpcController(KoopmanModel model, MpcConfig cfg, std::vector<Obstacle> obstacles);

    StepDiagnostics step(const RobotState& s, double t);
    void reset();

    const MpcConfig& config() const { return cfg_; }
    const KoopmanModel& model() const { return model_; }

private:
    KoopmanModel model_;
    MpcConfig cfg_;
    std::vector<Obstacle> obstacles_;
    DictionarySpec dict_;
    AdmmQpSolver solver_;
    Eigen::VectorXd warm_primal_;
    Eigen::VectorXd warm_dual_;
};

} // namespace koopman
