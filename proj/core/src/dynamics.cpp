#include "koopman/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace koopman {

Eigen::Vector4d unicycle_derivative(const RobotState& s, const ControlInput& u)
{
    return {s.v * std::cos(s.theta), s.v * std::sin(s.theta), u.a, u.omega};
}

RobotState rk4_step(const RobotState& s, const ControlInput& u, double ts)
{
    if (!(ts > 0.0))
        throw std::invalid_argument("rk4_step: ts must be positive");

    const Eigen::Vector4d x0 = s.vec();
    auto f = [&u](const Eigen::Vector4d& x) {
        return unicycle_derivative(RobotState::from_vec(x), u);
    };

    const Eigen::Vector4d k1 = f(x0);
    const Eigen::Vector4d k2 = f(x0 + 0.5 * ts * k1);
    const Eigen::Vector4d k3 = f(x0 + 0.5 * ts * k2);
    const Eigen::Vector4d k4 = f(x0 + ts * k3);

    return RobotState::from_vec(x0 + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

std::vector<RobotState> simulate_rollout(const RobotState& s0,
                                         const std::vector<ControlInput>& inputs,
                                         double ts)
{
    if (inputs.empty())
        throw std::invalid_argument("simulate_rollout: input sequence must be nonempty");

    std::vector<RobotState> states;
    states.reserve(inputs.size() + 1);
    states.push_back(s0);
    for (const ControlInput& u : inputs)
        states.push_back(rk4_step(states.back(), u, ts));
    return states;
}

Eigen::Vector2d obstacle_center_at(const Obstacle& o, double t)
{
    if (t < 0.0)
        throw std::invalid_argument("obstacle_center_at: t must be nonnegative");
    return {o.Xc0 + o.v_obs * std::cos(o.theta_obs) * t,
            o.Yc0 + o.v_obs * std::sin(o.theta_obs) * t};
}

double ellipse_value(double X, double Y, double Xc, double Yc, double rx, double ry)
{
    const double dx = (X - Xc) / rx;
    const double dy = (Y - Yc) / ry;
    return dx * dx + dy * dy;
}

double ellipse_value(const RobotState& s, const Obstacle& o, double t)
{
    const Eigen::Vector2d c = obstacle_center_at(o, t);
    return ellipse_value(s.X, s.Y, c.x(), c.y(), o.rx, o.ry);
}

} // namespace koopman
