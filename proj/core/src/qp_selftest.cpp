#include "koopman/qp_selftest.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <ostream>
#include <unordered_set>

namespace koopman {

QuadraticProgram random_pd_qp(std::mt19937_64& rng, int max_vars, int max_constraints) {
    std::uniform_int_distribution<int> n_dist(1, max_vars);
    std::uniform_int_distribution<int> m_dist(0, max_constraints);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> margin(0.05, 1.0);

    const int n = n_dist(rng);
    const int m = m_dist(rng);

    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = gauss(rng);
    Eigen::MatrixXd Hq = M.transpose() * M;
    Hq.diagonal().array() += 0.1;

    Eigen::VectorXd fq(n);
    for (int i = 0; i < n; ++i) fq(i) = gauss(rng);

    Eigen::MatrixXd G(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) G(i, j) = gauss(rng);

    Eigen::VectorXd anchor(n);
    for (int i = 0; i < n; ++i) anchor(i) = gauss(rng);
    Eigen::VectorXd d(m);
    for (int i = 0; i < m; ++i) d(i) = margin(rng);
    d += G * anchor;

    return {std::move(Hq), std::move(fq), std::move(G), std::move(d)};
}

namespace {

// Minimizer with the subset held as equalities. Returns false when the KKT
// system is singular (dependent active gradients); otherwise fills u and the
// equality multipliers nu.
bool solve_subset(const QuadraticProgram& p, const std::vector<int>& subset, Eigen::VectorXd& u,
                  Eigen::VectorXd& nu) {
    const Eigen::Index n = p.num_vars();
    const Eigen::Index k = static_cast<Eigen::Index>(subset.size());

    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    kkt.topLeftCorner(n, n) = p.Hq;
    Eigen::VectorXd rhs(n + k);
    rhs.head(n) = -p.fq;
    for (Eigen::Index r = 0; r < k; ++r) {
        const int row = subset[static_cast<std::size_t>(r)];
        kkt.row(n + r).head(n) = p.G.row(row);
        kkt.col(n + r).head(n) = p.G.row(row).transpose();
        rhs(n + r) = p.d(row);
    }

    const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) return false;
    const Eigen::VectorXd sol = lu.solve(rhs);
    u = sol.head(n);
    nu = sol.tail(k);
    return true;
}

// A point is certified optimal when it is primal feasible and every equality
// multiplier is non-negative: padding the multipliers with zeros satisfies
// the full KKT conditions, which are sufficient for a convex problem.
bool certify(const QuadraticProgram& p, const Eigen::VectorXd& u, const Eigen::VectorXd& nu,
             double feas_tol) {
    if (nu.size() > 0 && nu.minCoeff() < -feas_tol) return false;
    if (p.num_constraints() > 0) {
        const double scale = 1.0 + p.d.cwiseAbs().maxCoeff();
        if ((p.G * u - p.d).maxCoeff() > feas_tol * scale) return false;
    }
    return true;
}

std::vector<int> decode_mask(std::uint64_t mask) {
    std::vector<int> subset;
    for (int i = 0; mask != 0; ++i, mask >>= 1)
        if (mask & 1ULL) subset.push_back(i);
    return subset;
}

// Guided enumeration: walk active-set hypotheses by adding the most violated
// constraint and dropping the most negative multiplier. Acceptance relies
// only on the KKT certificate, so a returned optimum is exact regardless of
// how the walk got there; revisiting a hypothesis or running out of moves
// just hands the instance to the exhaustive sweep.
bool guided_search(const QuadraticProgram& p, double feas_tol, OracleResult& result) {
    const int m = static_cast<int>(p.num_constraints());
    const int k_max = std::min<int>(m, static_cast<int>(p.num_vars()));
    if (m > 63) return false;  // mask-encoded subsets

    std::unordered_set<std::uint64_t> seen;
    std::unordered_set<std::uint64_t> singular;  // hypotheses with dependent rows
    std::uint64_t mask = 0;
    Eigen::VectorXd u, nu;

    for (int step = 0; step < 40 * (m + 1); ++step) {
        if (!seen.insert(mask).second) return false;  // cycle: degenerate data
        const std::vector<int> subset = decode_mask(mask);
        if (!solve_subset(p, subset, u, nu)) return false;

        if (certify(p, u, nu, feas_tol)) {
            result.u = u;
            result.objective = objective_value(p, result.u);
            result.found = true;
            return true;
        }

        // Drop before adding, mirroring a primal active-set update.
        Eigen::Index worst_drop = -1;
        for (Eigen::Index r = 0; r < nu.size(); ++r)
            if (nu(r) < -feas_tol && (worst_drop < 0 || nu(r) < nu(worst_drop))) worst_drop = r;
        if (worst_drop >= 0) {
            mask &= ~(1ULL << subset[static_cast<std::size_t>(worst_drop)]);
            continue;
        }

        const Eigen::VectorXd slack = p.G * u - p.d;
        if (static_cast<int>(subset.size()) == k_max) {
            // Full working set, multipliers clean, but a constraint is still
            // violated: exchange via the dual ratio test. Write the violated
            // row in the basis of active rows and drop the active row with
            // the smallest nu_r / c_r over c_r > 0, which keeps the working
            // set independent while making room.
            int add = -1;
            double worst = 0.0;
            for (int i = 0; i < m; ++i)
                if (((mask >> i) & 1ULL) == 0 && slack(i) > worst) {
                    worst = slack(i);
                    add = i;
                }
            if (add < 0) return false;
            const Eigen::Index k = static_cast<Eigen::Index>(subset.size());
            Eigen::MatrixXd active_rows(k, p.num_vars());
            for (Eigen::Index r = 0; r < k; ++r)
                active_rows.row(r) = p.G.row(subset[static_cast<std::size_t>(r)]);
            const Eigen::FullPivLU<Eigen::MatrixXd> lu(active_rows.transpose());
            if (!lu.isInvertible()) return false;
            const Eigen::VectorXd c = lu.solve(p.G.row(add).transpose());
            Eigen::Index drop = -1;
            double best_ratio = 0.0;
            for (Eigen::Index r = 0; r < k; ++r) {
                if (c(r) <= 1e-12) continue;
                const double ratio = nu(r) / c(r);
                if (drop < 0 || ratio < best_ratio) {
                    best_ratio = ratio;
                    drop = r;
                }
            }
            if (drop < 0) return false;
            mask = (mask & ~(1ULL << subset[static_cast<std::size_t>(drop)])) |
                   (1ULL << static_cast<unsigned>(add));
            continue;
        }

        int add = -1;
        for (int attempt = 0; attempt < m; ++attempt) {
            double worst = 0.0;
            add = -1;
            for (int i = 0; i < m; ++i) {
                const std::uint64_t child = mask | (1ULL << i);
                if ((mask & (1ULL << i)) != 0 || singular.count(child) != 0) continue;
                if (slack(i) > worst) {
                    worst = slack(i);
                    add = i;
                }
            }
            if (add < 0) return false;  // nothing violated is addable
            const std::uint64_t child = mask | (1ULL << static_cast<unsigned>(add));
            std::vector<int> trial = decode_mask(child);
            Eigen::VectorXd u_t, nu_t;
            if (solve_subset(p, trial, u_t, nu_t)) break;
            singular.insert(child);  // dependent rows: try the next candidate
        }
        if (add < 0) return false;
        mask |= 1ULL << static_cast<unsigned>(add);
    }
    return false;
}

} // namespace

OracleResult enumerate_qp_oracle(const QuadraticProgram& p, double feas_tol) {
    OracleResult result;
    if (guided_search(p, feas_tol, result)) return result;

    // Fallback: exhaustive subset enumeration in increasing size. The first
    // certified point is the optimum. Exponential; reached only when the
    // guided search fails (degenerate geometry or an infeasible problem).
    const int m = static_cast<int>(p.num_constraints());
    const int k_max = std::min<int>(m, static_cast<int>(p.num_vars()));
    std::vector<int> subset;
    Eigen::VectorXd u, nu;
    for (int k = 0; k <= k_max && !result.found; ++k) {
        // lexicographic enumeration of all size-k subsets of {0..m-1}
        subset.resize(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) subset[static_cast<std::size_t>(i)] = i;
        while (true) {
            if (solve_subset(p, subset, u, nu) && certify(p, u, nu, feas_tol)) {
                result.u = std::move(u);
                result.objective = objective_value(p, result.u);
                result.found = true;
                break;
            }
            if (k == 0) break;
            int i = k - 1;
            while (i >= 0 && subset[static_cast<std::size_t>(i)] == m - k + i) --i;
            if (i < 0) break;
            ++subset[static_cast<std::size_t>(i)];
            for (int j = i + 1; j < k; ++j)
                subset[static_cast<std::size_t>(j)] = subset[static_cast<std::size_t>(j - 1)] + 1;
        }
    }
    return result;
}

std::vector<SelfTestRow> run_qp_selftest(int n_instances, std::uint64_t seed, double obj_tol,
                                         double res_tol) {
    std::mt19937_64 rng(seed);
    AdmmSettings settings;
    settings.tol.absolute = 1e-9;
    settings.tol.relative = 1e-9;
    settings.max_iter = 200000;
    AdmmQpSolver solver(settings);

    std::vector<SelfTestRow> rows;
    rows.reserve(static_cast<std::size_t>(n_instances));
    for (int i = 0; i < n_instances; ++i) {
        const QuadraticProgram p = random_pd_qp(rng);
        const OracleResult oracle = enumerate_qp_oracle(p);
        const QpSolution sol = solver.solve(p);

        SelfTestRow row;
        row.instance = i;
        row.oracle_objective = oracle.objective;
        row.solver_objective = sol.objective;
        row.iterations = sol.iterations;
        row.primal_residual = sol.primal_residual;
        row.dual_residual = sol.dual_residual;
        row.complementarity = sol.complementarity;
        row.matched = oracle.found && sol.status == QpStatus::Optimal &&
                      std::abs(sol.objective - oracle.objective) <= obj_tol &&
                      sol.primal_residual <= res_tol && sol.dual_residual <= res_tol &&
                      sol.complementarity <= res_tol;
        rows.push_back(row);
    }
    return rows;
}

void write_selftest_csv(const std::vector<SelfTestRow>& rows, std::ostream& out) {
    out << "instance,oracle_objective,solver_objective,iterations,primal_residual,"
           "dual_residual,complementarity\n";
    const auto flags = out.flags();
    const auto precision = out.precision();
    out.precision(17);
    for (const SelfTestRow& r : rows) {
        out << r.instance << ',' << r.oracle_objective << ',' << r.solver_objective << ','
            << r.iterations << ',' << r.primal_residual << ',' << r.dual_residual << ','
            << r.complementarity << '\n';
    }
    out.flags(flags);
    out.precision(precision);
}

} // namespace koopman
