#include "koopman/planner.hpp"

#include "koopman/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace koopman {

void MpcConfig::validate() const {
    if (N_h < 1) throw std::invalid_argument("MpcConfig: N_h must be at least 1");
    if (!(ts > 0.0)) throw std::invalid_argument("MpcConfig: ts must be positive");
    if (!(slack_weight > 0.0)) throw std::invalid_argument("MpcConfig: slack_weight must be positive");
    if (!(u_min(0) < u_max(0)) || !(u_min(1) < u_max(1)))
        throw std::invalid_argument("MpcConfig: input bounds must satisfy u_min < u_max");
    const Eigen::LLT<Eigen::Matrix2d> llt(R);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("MpcConfig: R must be positive definite");
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(Q);
    if (es.eigenvalues().minCoeff() < -1e-12)
        throw std::invalid_argument("MpcConfig: Q must be positive semidefinite");
}

ShiftedFrame shift_frame(const RobotState& s, const RobotState& target,
                         const std::vector<std::vector<Eigen::Vector2d>>& obstacle_centers) {
    ShiftedFrame f;
    f.offset = {s.X, s.Y};
    f.state = {0.0, 0.0, s.v, s.theta};
    f.target = {target.X - s.X, target.Y - s.Y, target.v, target.theta};
    f.obstacle_centers.reserve(obstacle_centers.size());
    for (const auto& centers : obstacle_centers) {
        std::vector<Eigen::Vector2d> shifted;
        shifted.reserve(centers.size());
        for (const Eigen::Vector2d& c : centers) shifted.push_back(c - f.offset);
        f.obstacle_centers.push_back(std::move(shifted));
    }
    return f;
}

Eigen::MatrixXd linearize_input_matrix(const KoopmanModel& model, const Eigen::VectorXd& z0) {
    if (model.kind != ModelKind::Bilinear || model.H.size() != 2)
        throw CompatError("linearize_input_matrix: needs a bilinear model");
    if (z0.size() != model.n_lift())
        throw std::invalid_argument("linearize_input_matrix: lifted state has wrong length");
    Eigen::MatrixXd B_t = model.B;
    B_t.col(0) += model.H[0] * z0;
    B_t.col(1) += model.H[1] * z0;
    return B_t;
}

PredictionMatrices build_prediction(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B_t,
                                    int N_h) {
    if (N_h < 1) throw std::invalid_argument("build_prediction: N_h must be at least 1");
    if (A.rows() != A.cols() || B_t.rows() != A.rows())
        throw std::invalid_argument("build_prediction: A/B_t dimension mismatch");
    const Eigen::Index n = A.rows();
    const Eigen::Index m = B_t.cols();

    PredictionMatrices pred;
    pred.PhiStack.resize(N_h * n, n);
    pred.Gamma = Eigen::MatrixXd::Zero(N_h * n, N_h * m);

    pred.PhiStack.topRows(n) = A;
    for (int k = 1; k < N_h; ++k)
        pred.PhiStack.middleRows(k * n, n).noalias() = A * pred.PhiStack.middleRows((k - 1) * n, n);

    // impulse[i] = A^i B_t fills every diagonal of Gamma's block structure
    std::vector<Eigen::MatrixXd> impulse(static_cast<std::size_t>(N_h));
    impulse[0] = B_t;
    for (int i = 1; i < N_h; ++i) impulse[static_cast<std::size_t>(i)] = A * impulse[static_cast<std::size_t>(i - 1)];
    for (int i = 0; i < N_h; ++i)
        for (int j = 0; j <= i; ++j)
            pred.Gamma.block(i * n, j * m, n, m) = impulse[static_cast<std::size_t>(i - j)];
    return pred;
}

namespace {

constexpr int kStateDim = 4;   // physical states heading each lifted block
constexpr int kQuadDim = 6;    // physical states plus X^2, Y^2

int horizon_of(const PredictionMatrices& pred) {
    const Eigen::Index n = pred.PhiStack.cols();
    if (n < kQuadDim || pred.PhiStack.rows() % n != 0)
        throw std::invalid_argument("prediction matrices have inconsistent shapes");
    return static_cast<int>(pred.PhiStack.rows() / n);
}

} // namespace

CostMatrices build_cost(const PredictionMatrices& pred, const Eigen::VectorXd& z0,
                        const RobotState& target, const Eigen::Matrix4d& Q,
                        const Eigen::Matrix2d& R) {
    const int N_h = horizon_of(pred);
    const Eigen::Index n = pred.PhiStack.cols();
    const Eigen::Index mN = pred.Gamma.cols();
    if (z0.size() != n) throw std::invalid_argument("build_cost: z0 has wrong length");

    Eigen::MatrixXd CG(kStateDim * N_h, mN);   // Cbar Gamma
    Eigen::MatrixXd QCG(kStateDim * N_h, mN);  // Qbar Cbar Gamma
    Eigen::VectorXd err(kStateDim * N_h);      // Cbar PhiStack z0 - target stack
    const Eigen::VectorXd free_resp = pred.PhiStack * z0;
    const Eigen::Vector4d r_tg = target.vec();
    for (int k = 0; k < N_h; ++k) {
        CG.middleRows(kStateDim * k, kStateDim) = pred.Gamma.middleRows(k * n, kStateDim);
        QCG.middleRows(kStateDim * k, kStateDim).noalias() =
            Q * CG.middleRows(kStateDim * k, kStateDim);
        err.segment(kStateDim * k, kStateDim) = free_resp.segment(k * n, kStateDim) - r_tg;
    }

    CostMatrices cost;
    cost.Hq.noalias() = 2.0 * CG.transpose() * QCG;
    for (int k = 0; k < N_h; ++k) cost.Hq.block<2, 2>(2 * k, 2 * k) += 2.0 * R;
    cost.Hq = ((cost.Hq + cost.Hq.transpose()) * 0.5).eval();
    cost.fq.noalias() = 2.0 * QCG.transpose() * err;
    return cost;
}

BoundRows build_input_bounds(int N_h, const Eigen::Vector2d& u_min,
                             const Eigen::Vector2d& u_max) {
    if (N_h < 1) throw std::invalid_argument("build_input_bounds: N_h must be at least 1");
    if (!u_min.allFinite() || !u_max.allFinite())
        throw std::invalid_argument("build_input_bounds: bounds must be finite");
    const int nU = 2 * N_h;
    BoundRows rows;
    rows.Gu = Eigen::MatrixXd::Zero(2 * nU, nU);
    rows.Gu.topRows(nU).setIdentity();
    rows.Gu.bottomRows(nU) = -Eigen::MatrixXd::Identity(nU, nU);
    rows.du.resize(2 * nU);
    for (int k = 0; k < N_h; ++k) {
        rows.du.segment<2>(2 * k) = u_max;
        rows.du.segment<2>(nU + 2 * k) = -u_min;
    }
    return rows;
}

ObstacleRows build_obstacle_constraints(const std::vector<Eigen::Vector2d>& centers, double rx,
                                        double ry, double eps, const PredictionMatrices& pred,
                                        const Eigen::VectorXd& z0) {
    if (!(rx > 0.0) || !(ry > 0.0))
        throw std::invalid_argument("build_obstacle_constraints: radii must be positive");
    const int N_h = horizon_of(pred);
    if (static_cast<int>(centers.size()) != N_h)
        throw std::invalid_argument("build_obstacle_constraints: need one center per horizon step");
    const Eigen::Index n = pred.PhiStack.cols();
    if (z0.size() != n) throw std::invalid_argument("build_obstacle_constraints: z0 length");

    const double irx2 = 1.0 / (rx * rx);
    const double iry2 = 1.0 / (ry * ry);
    const Eigen::VectorXd free_resp = pred.PhiStack * z0;

    ObstacleRows rows;
    rows.Gobs.resize(N_h, pred.Gamma.cols());
    rows.dobs.resize(N_h);
    Eigen::Matrix<double, 1, kQuadDim> s_k;
    for (int k = 0; k < N_h; ++k) {
        const double Xc = centers[static_cast<std::size_t>(k)](0);
        const double Yc = centers[static_cast<std::size_t>(k)](1);
        s_k << 2.0 * Xc * irx2, 2.0 * Yc * iry2, 0.0, 0.0, -irx2, -iry2;
        const double beta = Xc * Xc * irx2 + Yc * Yc * iry2 - 1.0 - eps;
        rows.Gobs.row(k).noalias() = s_k * pred.Gamma.middleRows(k * n, kQuadDim);
        rows.dobs(k) = beta - s_k * free_resp.segment(k * n, kQuadDim);
    }
    return rows;
}

CondensedProblem build_condensed(const KoopmanModel& model, const DictionarySpec& dict,
                                 const ShiftedFrame& frame,
                                 const std::vector<Obstacle>& obstacles, const MpcConfig& cfg) {
    cfg.validate();
    if (model.dictionary_id != dict.id() || model.n_lift() != dict.size())
        throw CompatError("build_condensed: model does not match dictionary");
    if (frame.obstacle_centers.size() != obstacles.size())
        throw std::invalid_argument("build_condensed: obstacle/center list mismatch");

    const Eigen::VectorXd z0 = dict.lift(frame.state);
    const Eigen::MatrixXd B_t = linearize_input_matrix(model, z0);
    PredictionMatrices pred = build_prediction(model.A, B_t, cfg.N_h);
    CostMatrices cost = build_cost(pred, z0, frame.target, cfg.Q, cfg.R);
    BoundRows bounds = build_input_bounds(cfg.N_h, cfg.u_min, cfg.u_max);

    CondensedProblem cond;
    cond.n_inputs = 2 * cfg.N_h;
    cond.n_slack = cfg.N_h * static_cast<int>(obstacles.size());
    cond.Gobs.resize(cond.n_slack, cond.n_inputs);
    cond.dobs.resize(cond.n_slack);
    for (std::size_t o = 0; o < obstacles.size(); ++o) {
        const Obstacle& obs = obstacles[o];
        const ObstacleRows rows = build_obstacle_constraints(frame.obstacle_centers[o], obs.rx,
                                                             obs.ry, obs.eps, pred, z0);
        cond.Gobs.middleRows(static_cast<Eigen::Index>(o) * cfg.N_h, cfg.N_h) = rows.Gobs;
        cond.dobs.segment(static_cast<Eigen::Index>(o) * cfg.N_h, cfg.N_h) = rows.dobs;
    }
    cond.PhiStack = std::move(pred.PhiStack);
    cond.Gamma = std::move(pred.Gamma);
    cond.Hq = std::move(cost.Hq);
    cond.fq = std::move(cost.fq);
    cond.Gu = std::move(bounds.Gu);
    cond.du = std::move(bounds.du);
    return cond;
}

QuadraticProgram assemble_qp(const CondensedProblem& cond, double slack_weight) {
    if (!(slack_weight > 0.0)) throw std::invalid_argument("assemble_qp: slack_weight must be positive");
    const Eigen::Index nU = cond.n_inputs;
    const Eigen::Index ns = cond.n_slack;
    const Eigen::Index n = nU + ns;
    const Eigen::Index m_bounds = cond.Gu.rows();
    const Eigen::Index m = m_bounds + 2 * ns;

    Eigen::MatrixXd Hq = Eigen::MatrixXd::Zero(n, n);
    Hq.topLeftCorner(nU, nU) = cond.Hq;
    Hq.bottomRightCorner(ns, ns).diagonal().setConstant(2.0 * slack_weight);
    Eigen::VectorXd fq = Eigen::VectorXd::Zero(n);
    fq.head(nU) = cond.fq;
    // Linear exact-penalty term on top of the quadratic one: as long as the
    // coefficient exceeds the largest keep-out multiplier, the softened
    // optimum coincides with the hard-constrained one and nominal slacks are
    // exactly zero instead of mu / (2 w).
    fq.tail(ns).setConstant(slack_weight);

    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, n);
    Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
    G.topLeftCorner(m_bounds, nU) = cond.Gu;
    d.head(m_bounds) = cond.du;
    if (ns > 0) {
        G.block(m_bounds, 0, ns, nU) = cond.Gobs;
        G.block(m_bounds, nU, ns, ns) = -Eigen::MatrixXd::Identity(ns, ns);
        d.segment(m_bounds, ns) = cond.dobs;
        G.bottomRightCorner(ns, ns) = -Eigen::MatrixXd::Identity(ns, ns);
    }
    return {std::move(Hq), std::move(fq), std::move(G), std::move(d)};
}

ControlInput braking_input(const RobotState& s, const MpcConfig& cfg) {
    const double a = std::clamp(-s.v / cfg.ts, cfg.u_min(0), cfg.u_max(0));
    return {a, 0.0};
}

namespace {

void verify_optimal_kkt(const QuadraticProgram& qp, const QpSolution& sol,
                        const QpTolerances& tol) {
    const KktResiduals res = kkt_residuals(qp, sol.u_star, sol.duals);
    double pri_scale = 0.0;
    if (qp.num_constraints() > 0)
        pri_scale = std::max((qp.G * sol.u_star).cwiseAbs().maxCoeff(), qp.d.cwiseAbs().maxCoeff());
    const double eps_pri = tol.absolute + tol.relative * pri_scale;
    const double dua_scale =
        std::max((qp.Hq * sol.u_star).cwiseAbs().maxCoeff(),
                 std::max((qp.G.transpose() * sol.duals).cwiseAbs().maxCoeff(),
                          qp.fq.cwiseAbs().maxCoeff()));
    const double eps_dua = tol.absolute + tol.relative * dua_scale;
    if (res.primal > 10.0 * eps_pri || res.dual > 10.0 * eps_dua)
        throw std::logic_error("mpc_step: solution reported optimal but fails the KKT check");
}

// Shift the stacked plan one step forward in time, repeating the final
// entries, as the warm start for the next solve.
void shift_warm_start(Eigen::VectorXd& primal, int N_h, int n_obstacles) {
    const int nU = 2 * N_h;
    primal.head(nU - 2) = primal.segment(2, nU - 2).eval();
    for (int o = 0; o < n_obstacles; ++o) {
        auto block = primal.segment(nU + o * N_h, N_h);
        block.head(N_h - 1) = block.tail(N_h - 1).eval();
    }
}

} // namespace

StepDiagnostics mpc_step(const KoopmanModel& model, const DictionarySpec& dict,
                         const RobotState& s, double t, const RobotState& target,
                         const std::vector<Obstacle>& obstacles, const MpcConfig& cfg,
                         AdmmQpSolver& solver, Eigen::VectorXd* warm_primal,
                         Eigen::VectorXd* warm_dual) {
    std::vector<std::vector<Eigen::Vector2d>> centers(obstacles.size());
    for (std::size_t o = 0; o < obstacles.size(); ++o) {
        centers[o].reserve(static_cast<std::size_t>(cfg.N_h));
        for (int k = 1; k <= cfg.N_h; ++k)
            centers[o].push_back(obstacle_center_at(obstacles[o], t + cfg.ts * k));
    }
    const ShiftedFrame frame = shift_frame(s, target, centers);
    const CondensedProblem cond = build_condensed(model, dict, frame, obstacles, cfg);
    const QuadraticProgram qp = assemble_qp(cond, cfg.slack_weight);

    const Eigen::Index n = qp.num_vars();
    const Eigen::Index m = qp.num_constraints();
    QpSolution sol;
    if (warm_primal && warm_primal->size() == n && warm_dual && warm_dual->size() == m)
        sol = solver.solve(qp, *warm_primal, *warm_dual);
    else
        sol = solver.solve(qp);

    StepDiagnostics diag;
    diag.t = t;
    diag.status = sol.status;
    diag.iterations = sol.iterations;
    diag.primal_residual = sol.primal_residual;
    diag.dual_residual = sol.dual_residual;

    if (sol.status == QpStatus::Optimal) {
        verify_optimal_kkt(qp, sol, solver.settings().tol);
        const Eigen::VectorXd U = sol.u_star.head(cond.n_inputs);
        diag.u0 = {std::clamp(U(0), cfg.u_min(0), cfg.u_max(0)),
                   std::clamp(U(1), cfg.u_min(1), cfg.u_max(1))};
        diag.max_slack =
            cond.n_slack > 0 ? std::max(0.0, sol.u_star.tail(cond.n_slack).maxCoeff()) : 0.0;

        const Eigen::VectorXd pred_z = cond.PhiStack * dict.lift(frame.state) + cond.Gamma * U;
        diag.predicted_xy.reserve(static_cast<std::size_t>(cfg.N_h));
        const Eigen::Index n_lift = model.n_lift();
        for (int k = 0; k < cfg.N_h; ++k)
            diag.predicted_xy.push_back(Eigen::Vector2d(pred_z(k * n_lift), pred_z(k * n_lift + 1)) +
                                        frame.offset);

        if (warm_primal && warm_dual) {
            *warm_primal = sol.u_star;
            shift_warm_start(*warm_primal, cfg.N_h, static_cast<int>(obstacles.size()));
            *warm_dual = sol.duals;
        }
    } else {
        diag.fallback = true;
        diag.u0 = braking_input(s, cfg);
        diag.max_slack = 0.0;
        if (warm_primal) warm_primal->resize(0);
        if (warm_dual) warm_dual->resize(0);
    }
    return diag;
}

BkMpcController::BkMpcController(KoopmanModel model, MpcConfig cfg, std::vector<Obstacle> obstacles)
    : model_(std::move(model)),
      cfg_(cfg),
      obstacles_(std::move(obstacles)),
      dict_(DictionarySpec::poly2()) {
    cfg_.validate();
    if (model_.kind != ModelKind::Bilinear)
        throw CompatError("BkMpcController: needs a bilinear model");
    if (model_.dictionary_id != dict_.id() || model_.n_lift() != dict_.size())
        throw CompatError("BkMpcController: model dictionary mismatch");
    if (model_.ts != cfg_.ts)
        throw CompatError("BkMpcController: model sample time does not match the configuration");
}

StepDiagnostics BkMpcController::step(const RobotState& s, double t) {
    const auto start = std::chrono::steady_clock::now();
    StepDiagnostics diag = mpc_step(model_, dict_, s, t, cfg_.target, obstacles_, cfg_, solver_,
                                    &warm_primal_, &warm_dual_);
    diag.solve_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return diag;
}

void BkMpcController::reset() {
    warm_primal_.resize(0);
    warm_dual_.resize(0);
}

} // namespace koopman
