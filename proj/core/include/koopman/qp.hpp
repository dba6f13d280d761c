#pragma once

#include <Eigen/Dense>

namespace koopman {

/// min 1/2 U^T Hq U + fq^T U  subject to  G U <= d.
/// Hq is symmetrized on construction; the MPC construction keeps it
/// positive definite (R > 0 plus quadratic slack penalties).
struct QuadraticProgram {
    Eigen::MatrixXd Hq;
    Eigen::VectorXd fq;
    Eigen::MatrixXd G;
    Eigen::VectorXd d;

    QuadraticProgram(Eigen::MatrixXd Hq_in, Eigen::VectorXd fq_in, Eigen::MatrixXd G_in,
                     Eigen::VectorXd d_in);
    static QuadraticProgram unconstrained(Eigen::MatrixXd Hq_in, Eigen::VectorXd fq_in);

    Eigen::Index num_vars() const { return fq.size(); }
    Eigen::Index num_constraints() const { return d.size(); }
};

enum class QpStatus { Optimal, MaxIterations, Infeasible };

const char* to_string(QpStatus s);

struct QpSolution {
    Eigen::VectorXd u_star;
    Eigen::VectorXd duals;  ///< multipliers of G U <= d, elementwise >= 0
    double objective = 0.0;
    QpStatus status = QpStatus::MaxIterations;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double complementarity = 0.0;
};

struct QpTolerances {
    double absolute = 1e-6;
    double relative = 1e-6;
};

struct KktResiduals {
    double primal = 0.0;          ///< inf-norm of max(0, G u - d)
    double dual = 0.0;            ///< inf-norm of Hq u + fq + G^T duals
    double complementarity = 0.0; ///< max_i |duals_i * (G u - d)_i|
};

/// Residuals of the KKT conditions at (u, duals). Throws if duals has a
/// negative entry.
KktResiduals kkt_residuals(const QuadraticProgram& p, const Eigen::VectorXd& u,
                           const Eigen::VectorXd& duals);

double objective_value(const QuadraticProgram& p, const Eigen::VectorXd& u);

struct AdmmSettings {
    QpTolerances tol{};
    int max_iter = 20000;
    double rho0 = 0.1;          ///< initial penalty
    double sigma = 1e-6;        ///< proximal regularization
    double alpha = 1.6;         ///< over-relaxation
    int rho_interval = 50;      ///< penalty rescale cadence (iterations)
    int check_interval = 25;    ///< termination test cadence
    int scaling_iters = 10;     ///< Ruiz equilibration sweeps
    double infeas_tol = 1e-5;   ///< certificate tolerance
    bool polish = true;         ///< active-set refinement of converged iterates
};

/// Operator-splitting solver for dense convex QPs. Splits G U = z with
/// z <= d and alternates a proximal equality-constrained minimization with
/// projection and a dual ascent, over-relaxed; data is Ruiz-equilibrated
/// and the penalty is rescaled from the residual ratio while iterating.
/// Convergence is declared on the original-scale KKT residuals. On
/// max_iter the best iterate seen (by normalized residual merit) is
/// returned; primal infeasibility is certified from the dual increments.
///
/// Instances own their workspace: share nothing, one per concurrent user.
class AdmmQpSolver {
public:
    explicit AdmmQpSolver(AdmmSettings settings = {});

    QpSolution solve(const QuadraticProgram& p);
    QpSolution solve(const QuadraticProgram& p, const Eigen::VectorXd& u0);
    QpSolution solve(const QuadraticProgram& p, const Eigen::VectorXd& u0,
                     const Eigen::VectorXd& y0);

    const AdmmSettings& settings() const { return settings_; }
    AdmmSettings& settings() { return settings_; }

private:
    AdmmSettings settings_;
};

/// One-shot convenience wrapper around AdmmQpSolver.
QpSolution solve_qp(const QuadraticProgram& p, QpTolerances tol = {}, int max_iter = 20000);

} // namespace koopman
