#pragma once

#include "koopman/qp.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

namespace koopman {

/// Random strictly convex QP with a guaranteed strictly feasible point:
/// Hq = M^T M + 0.1 I, d = G x_anchor + positive margins. Dimensions are
/// drawn up to n <= 20 variables and m <= 40 constraints.
QuadraticProgram random_pd_qp(std::mt19937_64& rng, int max_vars = 20, int max_constraints = 40);

struct OracleResult {
    Eigen::VectorXd u;
    double objective = 0.0;
    bool found = false;
};

/// Global optimum over candidate active sets, independent of the iterative
/// solver: an active-set walk (add the most violated constraint, drop the
/// most negative multiplier, exchange via a dual ratio test when the
/// working set is full) proposes subsets, and a candidate is accepted only
/// when its equality-constrained KKT solution is primal feasible with
/// non-negative multipliers, which certifies global optimality for a
/// convex QP. If the walk cycles out, an exhaustive subset sweep in
/// increasing size settles the instance. Intended for small test problems.
OracleResult enumerate_qp_oracle(const QuadraticProgram& p, double feas_tol = 1e-8);

struct SelfTestRow {
    int instance = 0;
    double oracle_objective = 0.0;
    double solver_objective = 0.0;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double complementarity = 0.0;
    bool matched = false;
};

/// Solve n_instances random QPs with both the solver and the enumeration
/// oracle. A row matches when the objectives agree within obj_tol
/// (absolute) and all solver KKT residuals are at most res_tol.
std::vector<SelfTestRow> run_qp_selftest(int n_instances, std::uint64_t seed,
                                         double obj_tol = 1e-6, double res_tol = 1e-6);

/// CSV emission: instance,oracle_objective,solver_objective,iterations,
/// primal_residual,dual_residual,complementarity.
void write_selftest_csv(const std::vector<SelfTestRow>& rows, std::ostream& out);

} // namespace koopman
