#pragma once

#include "koopman/harness.hpp"

#include <iosfwd>
#include <string>

namespace koopman {

/// Column layout of a closed-loop log, one row per control step.
inline constexpr const char* kLogCsvHeader =
    "t,X,Y,v,theta,a,omega,solve_time_s,status,max_slack,min_ellipse_value";

/// Write the per-step log as CSV under the pinned header. Numbers are
/// printed with 17 significant digits so values round-trip bitwise.
void write_log_csv(const ClosedLoopLog& log, std::ostream& out);

/// write_log_csv to a file; throws IoError when the file cannot be written.
void save_log_csv(const ClosedLoopLog& log, const std::string& path);

/// Run metrics as JSON: {avg_s, max_s, p95_s, arrival_t_s, min_ellipse,
/// success}; arrival_t_s is null when the run never arrived.
void save_metrics_json(const Metrics& m, const std::string& path);

/// Scenario round trip as JSON. Keys absent from the file keep their
/// defaults, so an empty object loads the reference scenario. Throws
/// IoError (unreadable file) or FormatError (malformed JSON, bad field
/// types, or values failing validation).
ScenarioConfig load_scenario(const std::string& path);
void save_scenario(const ScenarioConfig& sc, const std::string& path);

/// Monte Carlo study output: <dir>/metrics.json holding the scenario
/// list, the randomization ranges, per-run metrics and per-controller
/// aggregates, plus one run_<controller>_<index>.csv log per run. The
/// directory is created if needed.
void save_monte_carlo(const MonteCarloResult& result, const MonteCarloConfig& cfg,
                      const std::string& out_dir);

} // namespace koopman
