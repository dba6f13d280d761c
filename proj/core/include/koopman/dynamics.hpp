#pragma once

#include <Eigen/Dense>

#include <vector>

namespace koopman {

inline constexpr double kPi = 3.14159265358979323846;

/// Unicycle state. The heading is kept unwrapped: reducing it modulo 2*pi
/// would make the trigonometric observables of a lifted trajectory jump
/// between consecutive samples.
struct RobotState {
    double X = 0.0;     ///< global position [m]
    double Y = 0.0;     ///< global position [m]
    double v = 0.0;     ///< forward speed [m/s]
    double theta = 0.0; ///< heading [rad], unwrapped

    Eigen::Vector4d vec() const { return {X, Y, v, theta}; }
    static RobotState from_vec(const Eigen::Vector4d& x) { return {x[0], x[1], x[2], x[3]}; }
};

/// Acceleration / angular-rate command, held constant over one sample period.
struct ControlInput {
    double a = 0.0;     ///< longitudinal acceleration [m/s^2]
    double omega = 0.0; ///< angular rate [rad/s]

    Eigen::Vector2d vec() const { return {a, omega}; }
    static ControlInput from_vec(const Eigen::Vector2d& u) { return {u[0], u[1]}; }
};

/// Ellipsoidal keep-out region moving along a straight line at constant
/// speed. v_obs = 0 gives a static obstacle.
struct Obstacle {
    double Xc0 = 0.0;      ///< center at t = 0 [m]
    double Yc0 = 0.0;      ///< center at t = 0 [m]
    double rx = 1.0;       ///< semi-axis along X [m], > 0
    double ry = 1.0;       ///< semi-axis along Y [m], > 0
    double eps = 0.0;      ///< safety margin, >= 0
    double v_obs = 0.0;    ///< speed [m/s]
    double theta_obs = 0.0; ///< heading [rad]
};

/// Continuous-time unicycle kinematics: (v cos(theta), v sin(theta), a, omega).
Eigen::Vector4d unicycle_derivative(const RobotState& s, const ControlInput& u);

/// Classical fourth-order Runge-Kutta step with zero-order hold on the input.
/// The v and theta sub-dynamics are linear in time, so the step is exact on
/// them: v' = v + a*ts, theta' = theta + omega*ts.
RobotState rk4_step(const RobotState& s, const ControlInput& u, double ts);

/// Roll the discretized model forward. Returns inputs.size() + 1 states,
/// the first being s0. Throws std::invalid_argument on an empty input
/// sequence or non-positive ts.
std::vector<RobotState> simulate_rollout(const RobotState& s0,
                                         const std::vector<ControlInput>& inputs,
                                         double ts);

/// Obstacle center at time t >= 0 under the constant-velocity motion model.
Eigen::Vector2d obstacle_center_at(const Obstacle& o, double t);

/// Left-hand side of the keep-out inequality:
///   (X-Xc)^2/rx^2 + (Y-Yc)^2/ry^2.
/// The position is safe iff the value is >= 1 + eps.
double ellipse_value(double X, double Y, double Xc, double Yc, double rx, double ry);

/// Convenience overload evaluating against a moving obstacle at time t.
double ellipse_value(const RobotState& s, const Obstacle& o, double t);

} // namespace koopman
