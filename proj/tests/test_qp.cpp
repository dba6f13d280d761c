#include "koopman/qp.hpp"

#include "koopman/qp_selftest.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

using namespace koopman;

namespace {

QuadraticProgram scalar_problem(double h, double f, double g, double d)
{
    Eigen::MatrixXd Hq(1, 1);
    Hq << h;
    Eigen::VectorXd fq(1);
    fq << f;
    Eigen::MatrixXd G(1, 1);
    G << g;
    Eigen::VectorXd ub(1);
    ub << d;
    return QuadraticProgram(std::move(Hq), std::move(fq), std::move(G), std::move(ub));
}

} // namespace

TEST_CASE("constructor validates shapes and symmetrizes the Hessian")
{
    Eigen::MatrixXd H(2, 2);
    H << 1.0, 2.0, 0.0, 1.0;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(2);

    const QuadraticProgram p = QuadraticProgram::unconstrained(H, f);
    CHECK(p.Hq(0, 1) == 1.0);
    CHECK(p.Hq(1, 0) == 1.0);
    CHECK(p.num_vars() == 2);
    CHECK(p.num_constraints() == 0);

    CHECK_THROWS_AS(QuadraticProgram::unconstrained(Eigen::MatrixXd::Zero(2, 3), f),
                    std::invalid_argument);
    CHECK_THROWS_AS(QuadraticProgram::unconstrained(H, Eigen::VectorXd::Zero(3)),
                    std::invalid_argument);
    CHECK_THROWS_AS(QuadraticProgram(H, f, Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(1)),
                    std::invalid_argument);
    CHECK_THROWS_AS(QuadraticProgram(H, f, Eigen::MatrixXd::Zero(1, 3), Eigen::VectorXd::Zero(1)),
                    std::invalid_argument);
}

TEST_CASE("status names are stable")
{
    CHECK(std::string(to_string(QpStatus::Optimal)) == "optimal");
    CHECK(std::string(to_string(QpStatus::MaxIterations)) == "max-iterations");
    CHECK(std::string(to_string(QpStatus::Infeasible)) == "infeasible");
}

TEST_CASE("objective_value evaluates the quadratic form")
{
    Eigen::MatrixXd H(2, 2);
    H << 2.0, 0.0, 0.0, 2.0;
    Eigen::VectorXd f(2);
    f << 1.0, 1.0;
    const QuadraticProgram p = QuadraticProgram::unconstrained(H, f);
    Eigen::VectorXd u(2);
    u << 1.0, 2.0;
    CHECK(objective_value(p, u) == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("kkt_residuals measures violations and validates inputs")
{
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd f(2);
    f << 1.0, -1.0;
    Eigen::MatrixXd G = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd d(2);
    d << 0.0, 10.0;
    const QuadraticProgram p(H, f, G, d);

    Eigen::VectorXd u(2);
    u << 2.0, 0.0;
    Eigen::VectorXd y(2);
    y << 0.5, 0.0;

    const KktResiduals r = kkt_residuals(p, u, y);
    CHECK(r.primal == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(r.dual == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(r.complementarity == doctest::Approx(1.0).epsilon(1e-15));

    CHECK_THROWS_AS(kkt_residuals(p, Eigen::VectorXd::Zero(3), y), std::invalid_argument);
    CHECK_THROWS_AS(kkt_residuals(p, u, Eigen::VectorXd::Zero(3)), std::invalid_argument);
    Eigen::VectorXd y_neg(2);
    y_neg << -0.1, 0.0;
    CHECK_THROWS_AS(kkt_residuals(p, u, y_neg), std::invalid_argument);
}

TEST_CASE("unconstrained problems solve in closed form")
{
    Eigen::MatrixXd H(2, 2);
    H << 2.0, 0.0, 0.0, 4.0;
    Eigen::VectorXd f(2);
    f << -2.0, -8.0;
    const QuadraticProgram p = QuadraticProgram::unconstrained(H, f);

    const QpSolution sol = solve_qp(p);
    CHECK(sol.status == QpStatus::Optimal);
    CHECK(sol.iterations == 0);
    CHECK(sol.duals.size() == 0);
    CHECK(sol.u_star(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sol.u_star(1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(sol.objective == doctest::Approx(-9.0).epsilon(1e-12));
}

TEST_CASE("a scalar halfspace activates with the exact multiplier")
{
    // min 1/2 u^2 subject to u >= 1, written as -u <= -1.
    const QuadraticProgram p = scalar_problem(1.0, 0.0, -1.0, -1.0);
    const QpSolution sol = solve_qp(p);

    CHECK(sol.status == QpStatus::Optimal);
    CHECK(sol.u_star(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(sol.objective == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(sol.duals(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(sol.primal_residual <= 1e-6);
    CHECK(sol.dual_residual <= 1e-6);
    CHECK(sol.complementarity <= 1e-6);
}

TEST_CASE("inactive constraints leave the minimizer untouched")
{
    // min 1/2 u^2 subject to u >= -5; the unconstrained optimum u = 0 is interior.
    const QuadraticProgram p = scalar_problem(1.0, 0.0, -1.0, 5.0);
    const QpSolution sol = solve_qp(p);

    CHECK(sol.status == QpStatus::Optimal);
    CHECK(std::abs(sol.u_star(0)) <= 1e-7);
    CHECK(std::abs(sol.duals(0)) <= 1e-7);
}

TEST_CASE("a tilted objective lands on the box vertex with correct duals")
{
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd f(2);
    f << -3.0, -4.0;
    Eigen::MatrixXd G = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd d = Eigen::VectorXd::Ones(2);
    const QuadraticProgram p(H, f, G, d);

    const QpSolution sol = solve_qp(p);
    CHECK(sol.status == QpStatus::Optimal);
    CHECK(sol.u_star(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(sol.u_star(1) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(sol.duals(0) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(sol.duals(1) == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(sol.objective == doctest::Approx(-6.0).epsilon(1e-10));
}

TEST_CASE("contradictory halfspaces are certified infeasible")
{
    // u <= 0 and u >= 1 cannot both hold.
    Eigen::MatrixXd H(1, 1);
    H << 1.0;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd G(2, 1);
    G << 1.0, -1.0;
    Eigen::VectorXd d(2);
    d << 0.0, -1.0;
    const QuadraticProgram p(H, f, G, d);

    const QpSolution sol = solve_qp(p);
    CHECK(sol.status == QpStatus::Infeasible);

    // The returned multipliers are a Farkas certificate: y >= 0 with
    // G^T y ~ 0 and d^T y < 0, proving no u satisfies G u <= d.
    const Eigen::VectorXd& y = sol.duals;
    REQUIRE(y.size() == 2);
    CHECK(y.minCoeff() >= 0.0);
    CHECK(y.cwiseAbs().maxCoeff() > 0.0);
    CHECK(std::abs((p.G.transpose() * y)(0)) <= 1e-4 * y.cwiseAbs().maxCoeff());
    CHECK(p.d.dot(y) < 0.0);
    CHECK(std::isinf(sol.primal_residual));
}

TEST_CASE("badly scaled problems still reach the constrained optimum")
{
    // Curvatures four orders of magnitude apart; both bounds active at the
    // optimum u = (0.5, 0.25) with multipliers (5000, 0.75). Tolerances are
    // relative to the problem scale, so the tight setting keeps the small
    // coordinate meaningful.
    Eigen::MatrixXd H(2, 2);
    H << 1e4, 0.0, 0.0, 1.0;
    Eigen::VectorXd f(2);
    f << -1e4, -1.0;
    Eigen::MatrixXd G = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd d(2);
    d << 0.5, 0.25;
    const QuadraticProgram p(H, f, G, d);

    AdmmSettings tight;
    tight.tol.absolute = 1e-9;
    tight.tol.relative = 1e-9;
    AdmmQpSolver solver(tight);
    const QpSolution sol = solver.solve(p);
    CHECK(sol.status == QpStatus::Optimal);
    CHECK(sol.u_star(0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(sol.u_star(1) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(sol.duals(0) == doctest::Approx(5000.0).epsilon(1e-7));
    CHECK(sol.duals(1) == doctest::Approx(0.75).epsilon(1e-7));

    const OracleResult oracle = enumerate_qp_oracle(p);
    REQUIRE(oracle.found);
    CHECK(std::abs(sol.objective - oracle.objective) <= 1e-6);
}

TEST_CASE("a truncated run returns its best iterate and a warm restart finishes")
{
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 16;
    const int m = 32;
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = gauss(rng);
    Eigen::MatrixXd H = M.transpose() * M;
    H.diagonal().array() += 1e-3;
    Eigen::VectorXd f(n);
    for (int i = 0; i < n; ++i) f(i) = gauss(rng);
    Eigen::MatrixXd G(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) G(i, j) = gauss(rng);
    Eigen::VectorXd anchor(n);
    for (int i = 0; i < n; ++i) anchor(i) = 0.1 * gauss(rng);
    Eigen::VectorXd d = G * anchor;
    d.array() += 0.05;
    const QuadraticProgram p(H, f, G, d);

    AdmmSettings tight;
    tight.max_iter = 26;  // one convergence check past the first iterate
    AdmmQpSolver truncated(tight);
    const QpSolution partial = truncated.solve(p);
    CHECK(partial.status == QpStatus::MaxIterations);
    CHECK(partial.u_star.size() == n);
    CHECK(std::isfinite(partial.primal_residual));
    CHECK(std::isfinite(partial.dual_residual));

    AdmmQpSolver full{};
    const QpSolution cold = full.solve(p);
    REQUIRE(cold.status == QpStatus::Optimal);
    const QpSolution warm = full.solve(p, partial.u_star, partial.duals);
    REQUIRE(warm.status == QpStatus::Optimal);
    CHECK(warm.iterations <= cold.iterations);
    CHECK(std::abs(warm.objective - cold.objective) <=
          1e-6 * std::max(1.0, std::abs(cold.objective)));

    CHECK_THROWS_AS(full.solve(p, Eigen::VectorXd::Zero(n + 1)), std::invalid_argument);
    CHECK_THROWS_AS(full.solve(p, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(m + 1)),
                    std::invalid_argument);
}

TEST_CASE("random strictly convex instances are well posed")
{
    std::mt19937_64 rng(11);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigs;
    for (int it = 0; it < 20; ++it) {
        const QuadraticProgram p = random_pd_qp(rng);
        CHECK(p.num_vars() >= 1);
        CHECK(p.num_vars() <= 20);
        CHECK(p.num_constraints() <= 40);
        CHECK((p.Hq - p.Hq.transpose()).cwiseAbs().maxCoeff() == 0.0);
        eigs.compute(p.Hq, Eigen::EigenvaluesOnly);
        CHECK(eigs.eigenvalues().minCoeff() >= 0.1 - 1e-9);
    }
}

TEST_CASE("the solver agrees with the active-set enumeration oracle")
{
    const auto rows = run_qp_selftest(12, 20240514ULL);
    REQUIRE(rows.size() == 12);
    for (const SelfTestRow& row : rows) {
        INFO("instance ", row.instance, ": oracle ", row.oracle_objective, " solver ",
             row.solver_objective);
        CHECK(row.matched);
        CHECK(std::abs(row.solver_objective - row.oracle_objective) <= 1e-6);
        CHECK(row.primal_residual <= 1e-6);
        CHECK(row.dual_residual <= 1e-6);
        CHECK(row.complementarity <= 1e-6);
    }

    std::ostringstream csv;
    write_selftest_csv(rows, csv);
    const std::string text = csv.str();
    CHECK(text.rfind("instance,oracle_objective,solver_objective,iterations,primal_residual,"
                     "dual_residual,complementarity\n",
                     0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 13);
}

TEST_CASE("the enumeration oracle reports equality-free optima and failures")
{
    // Unconstrained corner: the empty active set is optimal.
    Eigen::MatrixXd H(1, 1);
    H << 2.0;
    Eigen::VectorXd f(1);
    f << -4.0;
    const QuadraticProgram interior = scalar_problem(2.0, -4.0, 1.0, 10.0);
    const OracleResult r1 = enumerate_qp_oracle(interior);
    REQUIRE(r1.found);
    CHECK(r1.u(0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r1.objective == doctest::Approx(-4.0).epsilon(1e-12));

    // Infeasible problem: no subset yields a feasible KKT point.
    Eigen::MatrixXd G(2, 1);
    G << 1.0, -1.0;
    Eigen::VectorXd d(2);
    d << 0.0, -1.0;
    const QuadraticProgram infeas(H, f, G, d);
    CHECK_FALSE(enumerate_qp_oracle(infeas).found);
}
