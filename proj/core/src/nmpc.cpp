#include "koopman/nmpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace koopman {

void NmpcSettings::validate() const {
    if (max_sqp_iter < 1) throw std::invalid_argument("NmpcSettings: max_sqp_iter must be >= 1");
    if (!(step_tol > 0.0) || !(constraint_tol > 0.0))
        throw std::invalid_argument("NmpcSettings: tolerances must be positive");
    if (!(fd_step >= 1e-8 && fd_step <= 1e-4))
        throw std::invalid_argument("NmpcSettings: fd_step must lie in [1e-8, 1e-4]");
    if (damping < 0.0) throw std::invalid_argument("NmpcSettings: damping must be non-negative");
}

RolloutSensitivities rollout_sensitivities(const RobotState& s0, const Eigen::VectorXd& U,
                                           double ts, int N_h,
                                           const std::vector<Obstacle>& obstacles, double t0,
                                           double fd_step) {
    if (N_h < 1) throw std::invalid_argument("rollout_sensitivities: N_h must be >= 1");
    if (U.size() != 2 * N_h)
        throw std::invalid_argument("rollout_sensitivities: U must have length 2*N_h");
    if (!(fd_step >= 1e-8 && fd_step <= 1e-4))
        throw std::invalid_argument("rollout_sensitivities: fd_step out of range");

    std::vector<ControlInput> inputs(static_cast<std::size_t>(N_h));
    for (int k = 0; k < N_h; ++k) inputs[static_cast<std::size_t>(k)] = {U(2 * k), U(2 * k + 1)};

    RolloutSensitivities out;
    out.states = simulate_rollout(s0, inputs, ts);
    out.state_jac = Eigen::MatrixXd::Zero(4 * N_h, 2 * N_h);

    // A perturbation at step k only influences steps after k, so both
    // perturbed rollouts reuse the nominal prefix.
    for (int k = 0; k < N_h; ++k) {
        for (int c = 0; c < 2; ++c) {
            const int col = 2 * k + c;
            ControlInput up = inputs[static_cast<std::size_t>(k)];
            ControlInput dn = up;
            (c == 0 ? up.a : up.omega) += fd_step;
            (c == 0 ? dn.a : dn.omega) -= fd_step;

            RobotState sp = rk4_step(out.states[static_cast<std::size_t>(k)], up, ts);
            RobotState sm = rk4_step(out.states[static_cast<std::size_t>(k)], dn, ts);
            out.state_jac.block<4, 1>(4 * k, col) = (sp.vec() - sm.vec()) / (2.0 * fd_step);
            for (int j = k + 1; j < N_h; ++j) {
                sp = rk4_step(sp, inputs[static_cast<std::size_t>(j)], ts);
                sm = rk4_step(sm, inputs[static_cast<std::size_t>(j)], ts);
                out.state_jac.block<4, 1>(4 * j, col) = (sp.vec() - sm.vec()) / (2.0 * fd_step);
            }
        }
    }

    const int n_rows = static_cast<int>(obstacles.size()) * N_h;
    out.ellipse_values.resize(n_rows);
    out.ellipse_jac = Eigen::MatrixXd::Zero(n_rows, 2 * N_h);
    for (std::size_t o = 0; o < obstacles.size(); ++o) {
        const Obstacle& obs = obstacles[o];
        for (int k = 1; k <= N_h; ++k) {
            const int row = static_cast<int>(o) * N_h + (k - 1);
            const Eigen::Vector2d c = obstacle_center_at(obs, t0 + ts * k);
            const RobotState& sk = out.states[static_cast<std::size_t>(k)];
            out.ellipse_values(row) =
                ellipse_value(sk.X, sk.Y, c(0), c(1), obs.rx, obs.ry);
            const double gx = 2.0 * (sk.X - c(0)) / (obs.rx * obs.rx);
            const double gy = 2.0 * (sk.Y - c(1)) / (obs.ry * obs.ry);
            out.ellipse_jac.row(row) = gx * out.state_jac.row(4 * (k - 1)) +
                                       gy * out.state_jac.row(4 * (k - 1) + 1);
        }
    }
    return out;
}

namespace {

double tracking_cost(const std::vector<RobotState>& states, const Eigen::VectorXd& U,
                     const MpcConfig& cfg) {
    const Eigen::Vector4d r_tg = cfg.target.vec();
    double J = 0.0;
    for (std::size_t k = 1; k < states.size(); ++k) {
        const Eigen::Vector4d e = states[k].vec() - r_tg;
        J += e.dot(cfg.Q * e);
    }
    for (int k = 0; k < static_cast<int>(U.size()) / 2; ++k) {
        const Eigen::Vector2d u = U.segment<2>(2 * k);
        J += u.dot(cfg.R * u);
    }
    return J;
}

// L1 exact-penalty merit: tracking cost plus slack_weight times the total
// keep-out violation of a fresh rollout.
double merit_value(const RobotState& s, const Eigen::VectorXd& U, double t,
                   const std::vector<Obstacle>& obstacles, const MpcConfig& cfg) {
    const int N_h = static_cast<int>(U.size()) / 2;
    std::vector<ControlInput> inputs(static_cast<std::size_t>(N_h));
    for (int k = 0; k < N_h; ++k) inputs[static_cast<std::size_t>(k)] = {U(2 * k), U(2 * k + 1)};
    const std::vector<RobotState> states = simulate_rollout(s, inputs, cfg.ts);

    double violation = 0.0;
    for (const Obstacle& obs : obstacles)
        for (int k = 1; k <= N_h; ++k)
            violation += std::max(0.0, 1.0 + obs.eps -
                                           ellipse_value(states[static_cast<std::size_t>(k)], obs,
                                                         t + cfg.ts * k));
    return tracking_cost(states, U, cfg) + cfg.slack_weight * violation;
}

double max_violation(const RolloutSensitivities& sens, const std::vector<Obstacle>& obstacles,
                     int N_h) {
    double worst = 0.0;
    for (std::size_t o = 0; o < obstacles.size(); ++o)
        for (int k = 0; k < N_h; ++k)
            worst = std::max(worst, 1.0 + obstacles[o].eps -
                                        sens.ellipse_values(static_cast<int>(o) * N_h + k));
    return worst;
}

} // namespace

StepDiagnostics nmpc_step(const RobotState& s, double t, const RobotState& target,
                          const std::vector<Obstacle>& obstacles, const MpcConfig& cfg,
                          const NmpcSettings& settings, AdmmQpSolver& solver,
                          Eigen::VectorXd* warm_U) {
    cfg.validate();
    settings.validate();
    const int N_h = cfg.N_h;
    const int nU = 2 * N_h;
    const int n_rows = static_cast<int>(obstacles.size()) * N_h;

    MpcConfig cfg_tg = cfg;
    cfg_tg.target = target;

    Eigen::VectorXd U = Eigen::VectorXd::Zero(nU);
    if (warm_U && warm_U->size() == nU) U = *warm_U;
    for (int k = 0; k < N_h; ++k) {
        U(2 * k) = std::clamp(U(2 * k), cfg.u_min(0), cfg.u_max(0));
        U(2 * k + 1) = std::clamp(U(2 * k + 1), cfg.u_min(1), cfg.u_max(1));
    }

    StepDiagnostics diag;
    diag.t = t;
    diag.status = QpStatus::MaxIterations;
    bool converged = false;
    bool produced_step = false;
    bool stalled = false;  // line search found no improvement over the current U
    const Eigen::Vector4d r_tg = target.vec();

    for (int it = 1; it <= settings.max_sqp_iter; ++it) {
        diag.iterations = it;
        const RolloutSensitivities sens =
            rollout_sensitivities(s, U, cfg.ts, N_h, obstacles, t, settings.fd_step);

        // Gauss-Newton pieces of the tracking cost
        Eigen::MatrixXd QS(4 * N_h, nU);
        Eigen::VectorXd Qerr(4 * N_h);
        Eigen::VectorXd g(nU);
        for (int k = 0; k < N_h; ++k) {
            const Eigen::Vector4d e = sens.states[static_cast<std::size_t>(k + 1)].vec() - r_tg;
            QS.middleRows<4>(4 * k).noalias() = cfg.Q * sens.state_jac.middleRows<4>(4 * k);
            Qerr.segment<4>(4 * k) = cfg.Q * e;
        }
        g.noalias() = 2.0 * sens.state_jac.transpose() * Qerr;
        for (int k = 0; k < N_h; ++k) g.segment<2>(2 * k) += 2.0 * cfg.R * U.segment<2>(2 * k);
        Eigen::MatrixXd H = 2.0 * sens.state_jac.transpose() * QS;
        for (int k = 0; k < N_h; ++k) H.block<2, 2>(2 * k, 2 * k) += 2.0 * cfg.R;
        H.diagonal().array() += settings.damping;

        // QP over [dU; xi]: bounds on U + dU, softened linearized keep-out
        const int n = nU + n_rows;
        const int m = 2 * nU + 2 * n_rows;
        Eigen::MatrixXd Hq = Eigen::MatrixXd::Zero(n, n);
        Hq.topLeftCorner(nU, nU) = H;
        Hq.bottomRightCorner(n_rows, n_rows).diagonal().setConstant(2.0 * cfg.slack_weight);
        Eigen::VectorXd fq = Eigen::VectorXd::Zero(n);
        fq.head(nU) = g;
        // Same slack scheme as the planner QP: quadratic softening plus a
        // linear exact-penalty term. The linear coefficient matches the L1
        // merit weight, so the subproblem models the merit function's
        // violation cost and feasible iterates keep the slacks at zero.
        fq.tail(n_rows).setConstant(cfg.slack_weight);

        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, n);
        Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
        G.topLeftCorner(nU, nU).setIdentity();
        G.block(nU, 0, nU, nU) = -Eigen::MatrixXd::Identity(nU, nU);
        for (int k = 0; k < N_h; ++k) {
            d.segment<2>(2 * k) = cfg.u_max - U.segment<2>(2 * k);
            d.segment<2>(nU + 2 * k) = U.segment<2>(2 * k) - cfg.u_min;
        }
        if (n_rows > 0) {
            G.block(2 * nU, 0, n_rows, nU) = -sens.ellipse_jac;
            G.block(2 * nU, nU, n_rows, n_rows) = -Eigen::MatrixXd::Identity(n_rows, n_rows);
            for (std::size_t o = 0; o < obstacles.size(); ++o)
                for (int k = 0; k < N_h; ++k) {
                    const int row = static_cast<int>(o) * N_h + k;
                    d(2 * nU + row) = sens.ellipse_values(row) - 1.0 - obstacles[o].eps;
                }
            G.bottomRightCorner(n_rows, n_rows) = -Eigen::MatrixXd::Identity(n_rows, n_rows);
        }

        const QpSolution sol =
            solver.solve(QuadraticProgram(std::move(Hq), std::move(fq), std::move(G), std::move(d)));
        if (sol.status != QpStatus::Optimal) break;
        const Eigen::VectorXd dU = sol.u_star.head(nU);

        const double viol_now = max_violation(sens, obstacles, N_h);
        if (dU.lpNorm<Eigen::Infinity>() <= settings.step_tol &&
            viol_now <= settings.constraint_tol) {
            converged = true;
            diag.primal_residual = viol_now;
            diag.dual_residual =
                sol.dual_residual + (H * dU).lpNorm<Eigen::Infinity>();
            diag.max_slack = n_rows > 0
                                 ? std::max(0.0, sol.u_star.tail(n_rows).maxCoeff())
                                 : 0.0;
            break;
        }

        const double merit0 = merit_value(s, U, t, obstacles, cfg_tg);
        double alpha = 1.0;
        bool accepted = false;
        while (alpha >= 1.0 / 64.0) {
            const Eigen::VectorXd U_try = U + alpha * dU;
            if (merit_value(s, U_try, t, obstacles, cfg_tg) <
                merit0 - 1e-12 * std::abs(merit0)) {
                U = U_try;
                accepted = true;
                produced_step = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            stalled = true;  // the merit function offers no improvement over U
            break;
        }
    }

    // Final rollout for diagnostics and the executed input.
    std::vector<ControlInput> inputs(static_cast<std::size_t>(N_h));
    for (int k = 0; k < N_h; ++k) inputs[static_cast<std::size_t>(k)] = {U(2 * k), U(2 * k + 1)};
    const std::vector<RobotState> plan = simulate_rollout(s, inputs, cfg.ts);
    diag.predicted_xy.reserve(static_cast<std::size_t>(N_h));
    for (int k = 1; k <= N_h; ++k)
        diag.predicted_xy.push_back({plan[static_cast<std::size_t>(k)].X,
                                     plan[static_cast<std::size_t>(k)].Y});
    if (!converged) {
        double worst = 0.0;
        for (const Obstacle& obs : obstacles)
            for (int k = 1; k <= N_h; ++k)
                worst = std::max(worst, 1.0 + obs.eps -
                                            ellipse_value(plan[static_cast<std::size_t>(k)], obs,
                                                          t + cfg.ts * k));
        diag.max_slack = worst;
        diag.primal_residual = worst;
    }

    // A line-search stall means no candidate beats the current plan, so the plan
    // is kept as long as it honours the keep-out constraints. Braking is reserved
    // for a QP failure or a stall on an infeasible plan, where U cannot be trusted.
    const bool usable_plan =
        converged || produced_step ||
        (stalled && diag.primal_residual <= settings.constraint_tol);
    if (usable_plan) {
        diag.status = converged ? QpStatus::Optimal : QpStatus::MaxIterations;
        diag.u0 = {std::clamp(U(0), cfg.u_min(0), cfg.u_max(0)),
                   std::clamp(U(1), cfg.u_min(1), cfg.u_max(1))};
        if (warm_U) {
            warm_U->resize(nU);
            warm_U->head(nU - 2) = U.tail(nU - 2);
            warm_U->tail(2) = U.tail(2);
        }
    } else {
        diag.status = QpStatus::MaxIterations;
        diag.fallback = true;
        diag.u0 = braking_input(s, cfg);
        if (warm_U) warm_U->resize(0);
    }
    return diag;
}

NmpcController::NmpcController(MpcConfig cfg, NmpcSettings settings,
                               std::vector<Obstacle> obstacles)
    : cfg_(cfg), settings_(settings), obstacles_(std::move(obstacles)) {
    cfg_.validate();
    settings_.validate();
}

StepDiagnostics NmpcController::step(const RobotState& s, double t) {
    const auto start = std::chrono::steady_clock::now();
    StepDiagnostics diag =
        nmpc_step(s, t, cfg_.target, obstacles_, cfg_, settings_, solver_, &warm_U_);
    diag.solve_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return diag;
}

void NmpcController::reset() { warm_U_.resize(0); }

} // namespace koopman
