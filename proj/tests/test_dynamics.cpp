#include "koopman/dynamics.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace koopman;

TEST_CASE("unicycle derivative matches the kinematics")
{
    const RobotState s{1.0, -2.0, 3.0, 0.7};
    const ControlInput u{0.4, -0.9};
    const Eigen::Vector4d dx = unicycle_derivative(s, u);
    CHECK(dx[0] == doctest::Approx(3.0 * std::cos(0.7)).epsilon(1e-15));
    CHECK(dx[1] == doctest::Approx(3.0 * std::sin(0.7)).epsilon(1e-15));
    CHECK(dx[2] == 0.4);
    CHECK(dx[3] == -0.9);
}

TEST_CASE("rk4 integrates speed and heading without truncation error")
{
    const RobotState s{0.3, -1.1, 2.2, -0.4};
    const ControlInput u{1.7, -2.9};
    const double ts = 0.1;
    const RobotState s1 = rk4_step(s, u, ts);
    CHECK(s1.v == doctest::Approx(s.v + u.a * ts).epsilon(1e-15));
    CHECK(s1.theta == doctest::Approx(s.theta + u.omega * ts).epsilon(1e-15));
}

TEST_CASE("straight-line motion is integrated exactly")
{
    // With a = omega = 0 the derivative is constant, so one RK4 step is the
    // exact displacement.
    const RobotState s{1.0, 2.0, 1.5, 0.25};
    const ControlInput u{0.0, 0.0};
    const RobotState s1 = rk4_step(s, u, 0.2);
    CHECK(s1.X == doctest::Approx(1.0 + 1.5 * std::cos(0.25) * 0.2).epsilon(1e-15));
    CHECK(s1.Y == doctest::Approx(2.0 + 1.5 * std::sin(0.25) * 0.2).epsilon(1e-15));
    CHECK(s1.v == 1.5);
    CHECK(s1.theta == 0.25);
}

namespace {

// Constant-twist motion (a = 0, omega != 0) has the closed form
//   X(t) = X0 + v/omega * (sin(theta0 + omega t) - sin(theta0))
//   Y(t) = Y0 - v/omega * (cos(theta0 + omega t) - cos(theta0)).
RobotState arc_motion(const RobotState& s0, double v, double omega, double t)
{
    RobotState s = s0;
    s.X = s0.X + v / omega * (std::sin(s0.theta + omega * t) - std::sin(s0.theta));
    s.Y = s0.Y - v / omega * (std::cos(s0.theta + omega * t) - std::cos(s0.theta));
    s.theta = s0.theta + omega * t;
    return s;
}

} // namespace

TEST_CASE("rk4 tracks the closed-form arc")
{
    const RobotState s0{0.0, 0.0, 2.0, 0.3};
    const double omega = 0.8;
    const double ts = 0.01;
    const int n = 100;
    std::vector<ControlInput> inputs(n, ControlInput{0.0, omega});
    const auto states = simulate_rollout(s0, inputs, ts);
    const RobotState exact = arc_motion(s0, 2.0, omega, n * ts);
    CHECK(states.back().X == doctest::Approx(exact.X).epsilon(1e-9));
    CHECK(states.back().Y == doctest::Approx(exact.Y).epsilon(1e-9));
}

TEST_CASE("rk4 converges at fourth order on curved motion")
{
    const RobotState s0{0.0, 0.0, 2.0, 0.3};
    const double omega = 1.2;
    const double horizon = 0.8;

    const auto global_error = [&](double ts) {
        const int n = static_cast<int>(std::llround(horizon / ts));
        std::vector<ControlInput> inputs(n, ControlInput{0.0, omega});
        const auto states = simulate_rollout(s0, inputs, ts);
        const RobotState exact = arc_motion(s0, 2.0, omega, horizon);
        return std::hypot(states.back().X - exact.X, states.back().Y - exact.Y);
    };

    const double e1 = global_error(0.1);
    const double e2 = global_error(0.05);
    const double ratio = e1 / e2;
    CHECK(ratio > 12.0);
    CHECK(ratio < 20.0);
}

TEST_CASE("rollout returns the initial state plus one state per input")
{
    const RobotState s0{0.0, 0.0, 1.0, 0.0};
    std::vector<ControlInput> inputs{{0.5, 0.1}, {-0.5, -0.1}, {0.0, 0.2}};
    const auto states = simulate_rollout(s0, inputs, 0.1);
    REQUIRE(states.size() == 4);
    CHECK(states[0].X == s0.X);

    RobotState s = s0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        s = rk4_step(s, inputs[k], 0.1);
        CHECK(states[k + 1].X == s.X);
        CHECK(states[k + 1].Y == s.Y);
        CHECK(states[k + 1].v == s.v);
        CHECK(states[k + 1].theta == s.theta);
    }
}

TEST_CASE("rollout and step reject bad arguments")
{
    const RobotState s{};
    CHECK_THROWS_AS(rk4_step(s, ControlInput{}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(rk4_step(s, ControlInput{}, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(simulate_rollout(s, {}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(simulate_rollout(s, {ControlInput{}}, 0.0), std::invalid_argument);
}

TEST_CASE("obstacle center follows a straight constant-speed line")
{
    Obstacle o;
    o.Xc0 = 9.0;
    o.Yc0 = 4.0;
    o.v_obs = 1.5;
    o.theta_obs = 8.0 * kPi / 9.0;

    const Eigen::Vector2d c0 = obstacle_center_at(o, 0.0);
    CHECK(c0.x() == 9.0);
    CHECK(c0.y() == 4.0);

    const double t = 3.0;
    const Eigen::Vector2d ct = obstacle_center_at(o, t);
    CHECK((ct - c0).norm() == doctest::Approx(o.v_obs * t).epsilon(1e-14));
    CHECK(std::atan2(ct.y() - c0.y(), ct.x() - c0.x()) ==
          doctest::Approx(o.theta_obs - 2.0 * kPi * std::floor((o.theta_obs + kPi) / (2.0 * kPi)))
              .epsilon(1e-12));

    CHECK_THROWS_AS(obstacle_center_at(o, -0.1), std::invalid_argument);
}

TEST_CASE("ellipse value scales with the semi-axes")
{
    CHECK(ellipse_value(2.0, 3.0, 2.0, 3.0, 1.5, 2.5) == 0.0);
    CHECK(ellipse_value(3.5, 3.0, 2.0, 3.0, 1.5, 2.5) == doctest::Approx(1.0));
    CHECK(ellipse_value(2.0, 8.0, 2.0, 3.0, 1.5, 2.5) == doctest::Approx(4.0));
    CHECK(ellipse_value(3.5, 5.5, 2.0, 3.0, 1.5, 2.5) == doctest::Approx(2.0));
}

TEST_CASE("ellipse value against a moving obstacle uses the center at t")
{
    Obstacle o;
    o.Xc0 = 1.0;
    o.Yc0 = -1.0;
    o.rx = 2.0;
    o.ry = 0.5;
    o.v_obs = 2.0;
    o.theta_obs = 0.0;

    const RobotState s{6.0, -1.0, 0.0, 0.0};
    // At t = 1.5 the center sits at (4, -1), one X-semi-axis from the robot.
    CHECK(ellipse_value(s, o, 1.5) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(ellipse_value(s, o, 0.0) == doctest::Approx(6.25).epsilon(1e-14));
}
