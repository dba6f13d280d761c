#include "koopman/qp.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace koopman {

namespace {

constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;

double inv_sqrt_scale(double norm) {
    if (!(norm > 0.0)) return 1.0;
    return std::clamp(1.0 / std::sqrt(norm), kMinScaling, kMaxScaling);
}

double inf_norm(const Eigen::VectorXd& v) {
    return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

struct ScaledData {
    Eigen::MatrixXd P;
    Eigen::VectorXd q;
    Eigen::MatrixXd A;
    Eigen::VectorXd ub;
    Eigen::VectorXd D;  // variable scaling, original u = D * scaled x
    Eigen::VectorXd E;  // row scaling, original y = E * scaled y / c
    double c = 1.0;     // cost scaling
};

ScaledData ruiz_scale(const QuadraticProgram& p, int sweeps) {
    const Eigen::Index n = p.num_vars();
    const Eigen::Index m = p.num_constraints();
    ScaledData s;
    s.P = p.Hq;
    s.q = p.fq;
    s.A = p.G;
    s.D = Eigen::VectorXd::Ones(n);
    s.E = Eigen::VectorXd::Ones(m);

    Eigen::VectorXd dx(n), ez(m);
    for (int it = 0; it < sweeps; ++it) {
        for (Eigen::Index j = 0; j < n; ++j) {
            double norm = s.P.col(j).cwiseAbs().maxCoeff();
            if (m > 0) norm = std::max(norm, s.A.col(j).cwiseAbs().maxCoeff());
            dx(j) = inv_sqrt_scale(norm);
        }
        for (Eigen::Index i = 0; i < m; ++i) ez(i) = inv_sqrt_scale(s.A.row(i).cwiseAbs().maxCoeff());

        s.P = dx.asDiagonal() * s.P * dx.asDiagonal();
        s.q = dx.cwiseProduct(s.q);
        if (m > 0) s.A = ez.asDiagonal() * s.A * dx.asDiagonal();
        s.D = s.D.cwiseProduct(dx);
        s.E = s.E.cwiseProduct(ez);

        // Normalize the cost so the penalty parameter has a consistent scale.
        double p_norm = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) p_norm += s.P.col(j).cwiseAbs().maxCoeff();
        p_norm /= static_cast<double>(n);
        const double gamma =
            std::clamp(1.0 / std::max({p_norm, inf_norm(s.q), 1e-12}), kMinScaling, kMaxScaling);
        s.P *= gamma;
        s.q *= gamma;
        s.c *= gamma;
    }
    s.ub = s.E.cwiseProduct(p.d);
    return s;
}

struct CheckPoint {
    Eigen::VectorXd u, y, z;
    double pri = 0.0, dua = 0.0;
    double eps_pri = 0.0, eps_dua = 0.0;
    double pri_scale = 0.0, dua_scale = 0.0;
    double merit = std::numeric_limits<double>::infinity();
    bool converged = false;
};

CheckPoint evaluate(const QuadraticProgram& p, const ScaledData& s, const QpTolerances& tol,
                    const Eigen::VectorXd& x, const Eigen::VectorXd& y_s,
                    const Eigen::VectorXd& z_s) {
    CheckPoint c;
    c.u = s.D.cwiseProduct(x);
    c.y = s.E.cwiseProduct(y_s) / s.c;
    c.z = z_s.cwiseQuotient(s.E);

    const Eigen::VectorXd Gu = p.G * c.u;
    const Eigen::VectorXd Hu = p.Hq * c.u;
    const Eigen::VectorXd Gty = p.G.transpose() * c.y;

    c.pri = inf_norm(Gu - c.z);
    c.pri_scale = std::max(inf_norm(Gu), inf_norm(c.z));
    c.dua = inf_norm(Hu + p.fq + Gty);
    c.dua_scale = std::max({inf_norm(Hu), inf_norm(Gty), inf_norm(p.fq)});
    c.eps_pri = tol.absolute + tol.relative * c.pri_scale;
    c.eps_dua = tol.absolute + tol.relative * c.dua_scale;
    c.merit = std::max(c.pri / c.eps_pri, c.dua / c.eps_dua);
    c.converged = c.pri <= c.eps_pri && c.dua <= c.eps_dua;
    return c;
}

// Equality-constrained refinement on the active rows; returns true and
// overwrites (u, y) only when the refined point has no worse residuals.
bool try_polish(const QuadraticProgram& p, const QpTolerances& tol, Eigen::VectorXd& u,
                Eigen::VectorXd& y, double current_merit) {
    const Eigen::Index n = p.num_vars();
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < p.num_constraints(); ++i)
        if (y(i) > 0.0) active.push_back(i);
    const Eigen::Index k = static_cast<Eigen::Index>(active.size());

    const double delta = 1e-9 * (1.0 + p.Hq.diagonal().cwiseAbs().maxCoeff());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    kkt.topLeftCorner(n, n) = p.Hq;
    kkt.topLeftCorner(n, n).diagonal().array() += delta;
    kkt.bottomRightCorner(k, k).diagonal().array() -= delta;
    Eigen::VectorXd rhs(n + k);
    rhs.head(n) = -p.fq;
    for (Eigen::Index r = 0; r < k; ++r) {
        kkt.row(n + r).head(n) = p.G.row(active[static_cast<std::size_t>(r)]);
        kkt.col(n + r).head(n) = p.G.row(active[static_cast<std::size_t>(r)]).transpose();
        rhs(n + r) = p.d(active[static_cast<std::size_t>(r)]);
    }

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(kkt);
    if (ldlt.info() != Eigen::Success) return false;
    Eigen::VectorXd sol = ldlt.solve(rhs);
    // Two refinement sweeps against the unregularized system.
    for (int it = 0; it < 2; ++it) {
        Eigen::VectorXd resid = rhs - kkt * sol;
        resid.head(n) += delta * sol.head(n);
        resid.tail(k) -= delta * sol.tail(k);
        sol += ldlt.solve(resid);
    }

    Eigen::VectorXd u_new = sol.head(n);
    Eigen::VectorXd y_new = Eigen::VectorXd::Zero(p.num_constraints());
    for (Eigen::Index r = 0; r < k; ++r) {
        const double nu = sol(n + r);
        if (nu < -tol.absolute) return false;  // active-set guess was wrong
        y_new(active[static_cast<std::size_t>(r)]) = std::max(nu, 0.0);
    }

    const KktResiduals res = kkt_residuals(p, u_new, y_new);
    const double eps_pri = tol.absolute + tol.relative * inf_norm(p.G * u_new);
    const double eps_dua =
        tol.absolute + tol.relative * std::max(inf_norm(p.Hq * u_new), inf_norm(p.fq));
    const double merit = std::max(res.primal / eps_pri, res.dual / eps_dua);
    if (merit > current_merit) return false;
    u = std::move(u_new);
    y = std::move(y_new);
    return true;
}

QpSolution solve_unconstrained(const QuadraticProgram& p, const QpTolerances& tol) {
    const double delta = 1e-12 * (1.0 + p.Hq.diagonal().cwiseAbs().maxCoeff());
    Eigen::MatrixXd H = p.Hq;
    H.diagonal().array() += delta;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd u = ldlt.solve(-p.fq);
    u += ldlt.solve(-p.fq - p.Hq * u);

    QpSolution sol;
    sol.u_star = std::move(u);
    sol.duals = Eigen::VectorXd::Zero(0);
    sol.objective = objective_value(p, sol.u_star);
    sol.iterations = 0;
    const KktResiduals res = kkt_residuals(p, sol.u_star, sol.duals);
    sol.dual_residual = res.dual;
    const double eps_dua =
        tol.absolute + tol.relative * std::max(inf_norm(p.Hq * sol.u_star), inf_norm(p.fq));
    sol.status = res.dual <= eps_dua ? QpStatus::Optimal : QpStatus::MaxIterations;
    return sol;
}

} // namespace

QuadraticProgram::QuadraticProgram(Eigen::MatrixXd Hq_in, Eigen::VectorXd fq_in,
                                   Eigen::MatrixXd G_in, Eigen::VectorXd d_in)
    : Hq(std::move(Hq_in)), fq(std::move(fq_in)), G(std::move(G_in)), d(std::move(d_in)) {
    if (Hq.rows() != Hq.cols()) throw std::invalid_argument("QuadraticProgram: Hq must be square");
    if (fq.size() != Hq.rows()) throw std::invalid_argument("QuadraticProgram: fq length mismatch");
    if (G.rows() != d.size()) throw std::invalid_argument("QuadraticProgram: G/d row mismatch");
    if (G.rows() > 0 && G.cols() != Hq.rows())
        throw std::invalid_argument("QuadraticProgram: G column mismatch");
    if (G.rows() == 0 && G.cols() != Hq.rows()) G.resize(0, Hq.rows());
    Hq = ((Hq + Hq.transpose()) * 0.5).eval();
}

QuadraticProgram QuadraticProgram::unconstrained(Eigen::MatrixXd Hq_in, Eigen::VectorXd fq_in) {
    const Eigen::Index n = fq_in.size();
    return QuadraticProgram(std::move(Hq_in), std::move(fq_in), Eigen::MatrixXd(0, n),
                            Eigen::VectorXd(0));
}

const char* to_string(QpStatus s) {
    switch (s) {
        case QpStatus::Optimal: return "optimal";
        case QpStatus::MaxIterations: return "max-iterations";
        case QpStatus::Infeasible: return "infeasible";
    }
    return "unknown";
}

KktResiduals kkt_residuals(const QuadraticProgram& p, const Eigen::VectorXd& u,
                           const Eigen::VectorXd& duals) {
    if (u.size() != p.num_vars() || duals.size() != p.num_constraints())
        throw std::invalid_argument("kkt_residuals: dimension mismatch");
    if (duals.size() > 0 && duals.minCoeff() < 0.0)
        throw std::invalid_argument("kkt_residuals: duals must be non-negative");

    KktResiduals r;
    Eigen::VectorXd stat = p.Hq * u + p.fq;
    if (p.num_constraints() > 0) {
        stat += p.G.transpose() * duals;
        const Eigen::VectorXd viol = p.G * u - p.d;
        r.primal = viol.cwiseMax(0.0).maxCoeff();
        r.complementarity = duals.cwiseProduct(viol).cwiseAbs().maxCoeff();
    }
    r.dual = inf_norm(stat);
    return r;
}

double objective_value(const QuadraticProgram& p, const Eigen::VectorXd& u) {
    return 0.5 * u.dot(p.Hq * u) + p.fq.dot(u);
}

AdmmQpSolver::AdmmQpSolver(AdmmSettings settings) : settings_(settings) {}

QpSolution AdmmQpSolver::solve(const QuadraticProgram& p) {
    return solve(p, Eigen::VectorXd::Zero(p.num_vars()),
                 Eigen::VectorXd::Zero(p.num_constraints()));
}

QpSolution AdmmQpSolver::solve(const QuadraticProgram& p, const Eigen::VectorXd& u0) {
    return solve(p, u0, Eigen::VectorXd::Zero(p.num_constraints()));
}

QpSolution AdmmQpSolver::solve(const QuadraticProgram& p, const Eigen::VectorXd& u0,
                               const Eigen::VectorXd& y0) {
    const Eigen::Index n = p.num_vars();
    const Eigen::Index m = p.num_constraints();
    if (u0.size() != n || y0.size() != m)
        throw std::invalid_argument("AdmmQpSolver: warm start dimension mismatch");
    if (m == 0) return solve_unconstrained(p, settings_.tol);

    const ScaledData s = ruiz_scale(p, settings_.scaling_iters);

    double rho = settings_.rho0;
    const double sigma = settings_.sigma;
    Eigen::MatrixXd kkt = s.P + rho * s.A.transpose() * s.A;
    kkt.diagonal().array() += sigma;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(kkt);

    Eigen::VectorXd x = u0.cwiseQuotient(s.D);
    Eigen::VectorXd y = s.c * y0.cwiseMax(0.0).cwiseQuotient(s.E);
    Eigen::VectorXd z = s.A * x;

    CheckPoint best;
    Eigen::VectorXd y_prev_check = s.E.cwiseProduct(y) / s.c;
    QpStatus status = QpStatus::MaxIterations;
    int iter = 0;

    Eigen::VectorXd x_tilde(n), z_tilde(m), z_relax(m), w(m);
    while (iter < settings_.max_iter) {
        ++iter;
        x_tilde = ldlt.solve(sigma * x - s.q + s.A.transpose() * (rho * z - y));
        z_tilde.noalias() = s.A * x_tilde;
        x = settings_.alpha * x_tilde + (1.0 - settings_.alpha) * x;
        z_relax = settings_.alpha * z_tilde + (1.0 - settings_.alpha) * z;
        w = z_relax + y / rho;
        z = w.cwiseMin(s.ub);
        y = rho * (w - z);  // non-negative by construction of the projection

        const bool last = iter == settings_.max_iter;
        if (iter % settings_.check_interval == 0 || iter == 1 || last) {
            CheckPoint cp = evaluate(p, s, settings_.tol, x, y, z);
            if (cp.merit < best.merit) best = cp;
            if (cp.converged) {
                status = QpStatus::Optimal;
                best = std::move(cp);
                break;
            }

            const Eigen::VectorXd dy = cp.y - y_prev_check;
            const double dy_norm = inf_norm(dy);
            if (dy_norm > 1e-12) {
                const double tol_c = settings_.infeas_tol * dy_norm;
                const Eigen::VectorXd dy_pos = dy.cwiseMax(0.0);
                if (dy.minCoeff() >= -tol_c && inf_norm(p.G.transpose() * dy_pos) <= tol_c &&
                    p.d.dot(dy_pos) <= -tol_c) {
                    status = QpStatus::Infeasible;
                    best.y = dy_pos / dy_norm;
                    break;
                }
            }
            y_prev_check = cp.y;

            if (settings_.rho_interval > 0 && iter % settings_.rho_interval == 0 && !last) {
                const double num = cp.pri / std::max(cp.pri_scale, 1e-12);
                const double den = cp.dua / std::max(cp.dua_scale, 1e-12);
                if (num > 0.0 && den > 0.0) {
                    const double rho_new =
                        std::clamp(rho * std::sqrt(num / den), kRhoMin, kRhoMax);
                    if (rho_new > 5.0 * rho || rho_new < rho / 5.0) {
                        rho = rho_new;
                        kkt = s.P + rho * s.A.transpose() * s.A;
                        kkt.diagonal().array() += sigma;
                        ldlt.compute(kkt);
                    }
                }
            }
        }
    }

    if (status == QpStatus::Optimal && settings_.polish)
        try_polish(p, settings_.tol, best.u, best.y, best.merit);

    QpSolution sol;
    sol.u_star = std::move(best.u);
    sol.duals = std::move(best.y);
    sol.status = status;
    sol.iterations = iter;
    sol.objective = objective_value(p, sol.u_star);
    if (status != QpStatus::Infeasible) {
        const KktResiduals res = kkt_residuals(p, sol.u_star, sol.duals);
        sol.primal_residual = res.primal;
        sol.dual_residual = res.dual;
        sol.complementarity = res.complementarity;
    } else {
        sol.primal_residual = std::numeric_limits<double>::infinity();
        sol.dual_residual = std::numeric_limits<double>::infinity();
        sol.complementarity = std::numeric_limits<double>::infinity();
    }
    return sol;
}

QpSolution solve_qp(const QuadraticProgram& p, QpTolerances tol, int max_iter) {
    AdmmSettings settings;
    settings.tol = tol;
    settings.max_iter = max_iter;
    AdmmQpSolver solver(settings);
    return solver.solve(p);
}

} // namespace koopman
