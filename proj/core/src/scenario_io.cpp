#include "koopman/scenario_io.hpp"

#include "koopman/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>

namespace koopman {

namespace {

using nlohmann::json;

void append_number(std::string& line, double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    line += buf;
}

json parse_file(const std::string& path)
{
    std::ifstream file(path);
    if (!file) throw IoError("cannot open '" + path + "' for reading");
    try {
        return json::parse(file);
    } catch (const json::parse_error& e) {
        throw FormatError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_file(const json& j, const std::string& path)
{
    std::ofstream file(path);
    if (!file) throw IoError("cannot open '" + path + "' for writing");
    file << j.dump(2) << '\n';
    if (!file) throw IoError("failed to write '" + path + "'");
}

json matrix_to_json(const Eigen::MatrixXd& M)
{
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                                 const std::string& name)
{
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
        throw FormatError("field '" + name + "' must have " + std::to_string(rows) + " rows");
    Eigen::MatrixXd M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw FormatError("row " + std::to_string(i) + " of '" + name +
                              "' has wrong length");
        for (Eigen::Index k = 0; k < cols; ++k) {
            const json& cell = row[static_cast<std::size_t>(k)];
            if (!cell.is_number()) throw FormatError("non-numeric entry in '" + name + "'");
            M(i, k) = cell.get<double>();
        }
    }
    return M;
}

Eigen::VectorXd vector_from_json(const json& j, Eigen::Index size, const std::string& name)
{
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size)
        throw FormatError("field '" + name + "' must have " + std::to_string(size) +
                          " entries");
    Eigen::VectorXd v(size);
    for (Eigen::Index i = 0; i < size; ++i) {
        const json& cell = j[static_cast<std::size_t>(i)];
        if (!cell.is_number()) throw FormatError("non-numeric entry in '" + name + "'");
        v(i) = cell.get<double>();
    }
    return v;
}

json state_to_json(const RobotState& s) { return json::array({s.X, s.Y, s.v, s.theta}); }

RobotState state_from_json(const json& j, const std::string& name)
{
    return RobotState::from_vec(vector_from_json(j, 4, name));
}

template <typename T>
T field_or(const json& j, const std::string& key, const T& fallback)
{
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError("field '" + key + "' has the wrong type");
    }
}

json obstacle_to_json(const Obstacle& o)
{
    return json{{"Xc0", o.Xc0}, {"Yc0", o.Yc0},     {"rx", o.rx},
                {"ry", o.ry},   {"eps", o.eps},     {"v_obs", o.v_obs},
                {"theta_obs", o.theta_obs}};
}

Obstacle obstacle_from_json(const json& j)
{
    if (!j.is_object()) throw FormatError("obstacle entries must be objects");
    Obstacle o;
    o.Xc0 = field_or(j, "Xc0", o.Xc0);
    o.Yc0 = field_or(j, "Yc0", o.Yc0);
    o.rx = field_or(j, "rx", o.rx);
    o.ry = field_or(j, "ry", o.ry);
    o.eps = field_or(j, "eps", o.eps);
    o.v_obs = field_or(j, "v_obs", o.v_obs);
    o.theta_obs = field_or(j, "theta_obs", o.theta_obs);
    return o;
}

json metrics_to_json(const Metrics& m)
{
    json j{{"avg_s", m.avg_s},           {"max_s", m.max_s},
           {"p95_s", m.p95_s},           {"min_ellipse", m.min_ellipse},
           {"success", m.success}};
    if (m.arrival_t_s >= 0.0)
        j["arrival_t_s"] = m.arrival_t_s;
    else
        j["arrival_t_s"] = nullptr;
    return j;
}

json scenario_to_json(const ScenarioConfig& sc)
{
    json obstacles = json::array();
    for (const auto& o : sc.obstacles) obstacles.push_back(obstacle_to_json(o));

    return json{
        {"initial", state_to_json(sc.initial)},
        {"target", state_to_json(sc.target)},
        {"obstacles", std::move(obstacles)},
        {"controller", to_string(sc.controller)},
        {"duration", sc.duration},
        {"seed", sc.seed},
        {"mpc",
         {{"N_h", sc.mpc.N_h},
          {"ts", sc.mpc.ts},
          {"Q", matrix_to_json(sc.mpc.Q)},
          {"R", matrix_to_json(sc.mpc.R)},
          {"u_min", json::array({sc.mpc.u_min[0], sc.mpc.u_min[1]})},
          {"u_max", json::array({sc.mpc.u_max[0], sc.mpc.u_max[1]})},
          {"slack_weight", sc.mpc.slack_weight}}},
        {"nmpc",
         {{"max_sqp_iter", sc.nmpc.max_sqp_iter},
          {"step_tol", sc.nmpc.step_tol},
          {"constraint_tol", sc.nmpc.constraint_tol},
          {"fd_step", sc.nmpc.fd_step},
          {"damping", sc.nmpc.damping}}},
        {"arrival",
         {{"pos_tol", sc.arrival_pos_tol},
          {"v_tol", sc.arrival_v_tol},
          {"steps", sc.arrival_steps}}}};
}

ScenarioConfig scenario_from_json(const json& j)
{
    if (!j.is_object()) throw FormatError("scenario file must hold a JSON object");
    ScenarioConfig sc;
    if (j.contains("initial")) sc.initial = state_from_json(j.at("initial"), "initial");
    if (j.contains("target")) sc.target = state_from_json(j.at("target"), "target");
    if (j.contains("obstacles")) {
        const json& arr = j.at("obstacles");
        if (!arr.is_array()) throw FormatError("field 'obstacles' must be an array");
        sc.obstacles.clear();
        for (const auto& entry : arr) sc.obstacles.push_back(obstacle_from_json(entry));
    }
    if (j.contains("controller"))
        sc.controller = controller_kind_from_string(field_or<std::string>(j, "controller", {}));
    sc.duration = field_or(j, "duration", sc.duration);
    sc.seed = field_or(j, "seed", sc.seed);

    if (j.contains("mpc")) {
        const json& m = j.at("mpc");
        if (!m.is_object()) throw FormatError("field 'mpc' must be an object");
        sc.mpc.N_h = field_or(m, "N_h", sc.mpc.N_h);
        sc.mpc.ts = field_or(m, "ts", sc.mpc.ts);
        if (m.contains("Q")) sc.mpc.Q = matrix_from_json(m.at("Q"), 4, 4, "Q");
        if (m.contains("R")) sc.mpc.R = matrix_from_json(m.at("R"), 2, 2, "R");
        if (m.contains("u_min")) sc.mpc.u_min = vector_from_json(m.at("u_min"), 2, "u_min");
        if (m.contains("u_max")) sc.mpc.u_max = vector_from_json(m.at("u_max"), 2, "u_max");
        sc.mpc.slack_weight = field_or(m, "slack_weight", sc.mpc.slack_weight);
    }
    if (j.contains("nmpc")) {
        const json& nm = j.at("nmpc");
        if (!nm.is_object()) throw FormatError("field 'nmpc' must be an object");
        sc.nmpc.max_sqp_iter = field_or(nm, "max_sqp_iter", sc.nmpc.max_sqp_iter);
        sc.nmpc.step_tol = field_or(nm, "step_tol", sc.nmpc.step_tol);
        sc.nmpc.constraint_tol = field_or(nm, "constraint_tol", sc.nmpc.constraint_tol);
        sc.nmpc.fd_step = field_or(nm, "fd_step", sc.nmpc.fd_step);
        sc.nmpc.damping = field_or(nm, "damping", sc.nmpc.damping);
    }
    if (j.contains("arrival")) {
        const json& a = j.at("arrival");
        if (!a.is_object()) throw FormatError("field 'arrival' must be an object");
        sc.arrival_pos_tol = field_or(a, "pos_tol", sc.arrival_pos_tol);
        sc.arrival_v_tol = field_or(a, "v_tol", sc.arrival_v_tol);
        sc.arrival_steps = field_or(a, "steps", sc.arrival_steps);
    }
    try {
        sc.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid scenario: ") + e.what());
    }
    return sc;
}

} // namespace

void write_log_csv(const ClosedLoopLog& log, std::ostream& out)
{
    out << kLogCsvHeader << '\n';
    std::string line;
    for (const auto& r : log.steps) {
        line.clear();
        append_number(line, r.t);
        line += ',';
        append_number(line, r.state.X);
        line += ',';
        append_number(line, r.state.Y);
        line += ',';
        append_number(line, r.state.v);
        line += ',';
        append_number(line, r.state.theta);
        line += ',';
        append_number(line, r.u.a);
        line += ',';
        append_number(line, r.u.omega);
        line += ',';
        append_number(line, r.solve_time_s);
        line += ',';
        line += r.status;
        line += ',';
        append_number(line, r.max_slack);
        line += ',';
        append_number(line, r.min_ellipse_value);
        out << line << '\n';
    }
}

void save_log_csv(const ClosedLoopLog& log, const std::string& path)
{
    std::ofstream file(path);
    if (!file) throw IoError("cannot open '" + path + "' for writing");
    write_log_csv(log, file);
    if (!file) throw IoError("failed to write '" + path + "'");
}

void save_metrics_json(const Metrics& m, const std::string& path)
{
    write_file(metrics_to_json(m), path);
}

ScenarioConfig load_scenario(const std::string& path)
{
    return scenario_from_json(parse_file(path));
}

void save_scenario(const ScenarioConfig& sc, const std::string& path)
{
    write_file(scenario_to_json(sc), path);
}

void save_monte_carlo(const MonteCarloResult& result, const MonteCarloConfig& cfg,
                      const std::string& out_dir)
{
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory '" + out_dir + "': " + ec.message());

    json scenarios = json::array();
    for (const auto& sc : result.scenarios) scenarios.push_back(scenario_to_json(sc));

    json controllers = json::array();
    for (const auto& summary : result.controllers) {
        json runs = json::array();
        for (std::size_t i = 0; i < summary.logs.size(); ++i) {
            const auto& log = summary.logs[i];
            json run = metrics_to_json(log.metrics);
            run["hard_failure"] = log.hard_failure;
            runs.push_back(std::move(run));

            char name[64];
            std::snprintf(name, sizeof(name), "run_%s_%03zu.csv",
                          to_string(summary.kind).c_str(), i);
            save_log_csv(log, (std::filesystem::path(out_dir) / name).string());
        }
        controllers.push_back(json{{"name", to_string(summary.kind)},
                                   {"successes", summary.successes},
                                   {"aggregate", metrics_to_json(summary.aggregate)},
                                   {"runs", std::move(runs)}});
    }

    const json ranges{{"target_x", json::array({cfg.target_x_min, cfg.target_x_max})},
                      {"target_y", json::array({cfg.target_y_min, cfg.target_y_max})},
                      {"obs_speed", json::array({cfg.obs_speed_min, cfg.obs_speed_max})},
                      {"obs_rx", cfg.obs_rx},
                      {"obs_ry", cfg.obs_ry},
                      {"obs_eps", cfg.obs_eps},
                      {"cross_frac", json::array({cfg.cross_frac_min, cfg.cross_frac_max})},
                      {"approach_deg",
                       json::array({cfg.approach_deg_min, cfg.approach_deg_max})},
                      {"v_ref", cfg.v_ref}};

    const json top{{"n_scenarios", cfg.n_scenarios},
                   {"seed", cfg.seed},
                   {"duration", cfg.duration},
                   {"ranges", ranges},
                   {"scenarios", std::move(scenarios)},
                   {"controllers", std::move(controllers)}};
    write_file(top, (std::filesystem::path(out_dir) / "metrics.json").string());
}

} // namespace koopman
