#pragma once

#include "koopman/dynamics.hpp"
#include "koopman/lifting.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace koopman {

inline constexpr int kNumInputs = 2;

enum class ModelKind { Linear, Bilinear };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

/// One recorded input-state trajectory: states.size() == inputs.size() + 1.
struct Trajectory {
    std::vector<RobotState> states;
    std::vector<ControlInput> inputs;
};

/// Running normal equations of the EDMD regression.
///
/// Stores only gram = sum(phi phi^T) and cross = sum(z' phi^T), where the
/// regressor phi is (z, u) in linear mode and (z, u, u (x) z) in bilinear
/// mode with the Kronecker block ordered input-major (u1*z then u2*z).
/// Only the n_lift observable rows are regressed; inputs are commanded
/// externally and have no dynamics of their own. Accumulators over
/// disjoint data merge by entrywise addition.
class SnapshotAccumulator {
public:
    SnapshotAccumulator(ModelKind mode, int n_lift, double ts, std::string dictionary_id);

    ModelKind mode() const { return mode_; }
    int n_lift() const { return n_lift_; }
    /// Regressor length d: n_lift + m (linear) or n_lift + m + m*n_lift (bilinear).
    int regressor_size() const { return static_cast<int>(gram_.rows()); }
    double ts() const { return ts_; }
    const std::string& dictionary_id() const { return dictionary_id_; }
    std::int64_t count() const { return count_; }

    const Eigen::MatrixXd& gram() const { return gram_; }
    const Eigen::MatrixXd& cross() const { return cross_; }

    /// Build the regressor phi for one snapshot.
    Eigen::VectorXd regressor(const Eigen::VectorXd& z, const ControlInput& u) const;

    /// Rank-1 update with one snapshot pair (z_k, u_k, z_{k+1}).
    void accumulate(const Eigen::VectorXd& z_k, const ControlInput& u_k,
                    const Eigen::VectorXd& z_k1);

    /// Batched update; columns of Z and Z1 are snapshots, columns of U the
    /// matching inputs. Equivalent to accumulating column by column up to
    /// floating-point summation order. Each batch contribution is summed
    /// standalone and added once, so a sequence of accumulate_batch calls
    /// gives bitwise the same sums as merging per-batch accumulators.
    void accumulate_batch(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U,
                          const Eigen::MatrixXd& Z1);

    /// Entrywise addition of another accumulator over disjoint data.
    /// Throws CompatError if mode, dimensions, ts or dictionary differ.
    void merge(const SnapshotAccumulator& other);

    /// Rebuild from serialized parts (model_io).
    static SnapshotAccumulator from_parts(ModelKind mode, int n_lift, double ts,
                                          std::string dictionary_id, std::int64_t count,
                                          Eigen::MatrixXd gram, Eigen::MatrixXd cross);

private:
    void add_contribution(const Eigen::MatrixXd& gram_update,
                          const Eigen::MatrixXd& cross_update);

    ModelKind mode_;
    int n_lift_;
    double ts_;
    std::string dictionary_id_;
    std::int64_t count_ = 0;
    /// Folded sums served by gram()/cross(). Updates go through compensated
    /// (Neumaier) summation, so the served values carry a single rounding
    /// however many contributions went in; streaming and one-shot batch
    /// accumulation then solve to the same model well below tolerance.
    Eigen::MatrixXd gram_;
    Eigen::MatrixXd cross_;
    Eigen::MatrixXd gram_raw_, gram_comp_;
    Eigen::MatrixXd cross_raw_, cross_comp_;
};

/// Identified Koopman realization. kind == Linear has empty H; Bilinear
/// carries H = {H1, H2} for the acceleration and angular-rate channels.
/// Immutable in practice: controllers only read it.
struct KoopmanModel {
    ModelKind kind = ModelKind::Linear;
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    std::vector<Eigen::MatrixXd> H;
    double ts = 0.0;
    std::string dictionary_id;
    std::int64_t count = 0;  ///< snapshot pairs used for the fit
    double lambda = 0.0;     ///< ridge coefficient used for the fit

    int n_lift() const { return static_cast<int>(A.rows()); }
};

/// Solve the ridge-regularized normal equations
///   (gram + lambda * trace(gram)/d * I) K^T = cross^T
/// and split K into A, B (and H1, H2 in bilinear mode) along the regressor
/// layout. Requires count >= d. At lambda == 0 an exactly rank-deficient
/// system (duplicate dictionary columns) is reported as ill-conditioned
/// via std::runtime_error rather than silently solved.
KoopmanModel solve_model(const SnapshotAccumulator& acc, double lambda);

/// Open-loop linear prediction z_{k+1} = A z_k + B u_k. Returns
/// inputs.size() + 1 lifted states starting with z0; no re-lifting.
std::vector<Eigen::VectorXd> predict_linear(const KoopmanModel& model,
                                            const Eigen::VectorXd& z0,
                                            const std::vector<ControlInput>& inputs);

/// Open-loop bilinear prediction
/// z_{k+1} = A z_k + B u_k + H1 (a_k z_k) + H2 (omega_k z_k).
std::vector<Eigen::VectorXd> predict_bilinear(const KoopmanModel& model,
                                              const Eigen::VectorXd& z0,
                                              const std::vector<ControlInput>& inputs);

/// Dispatch on model.kind.
std::vector<Eigen::VectorXd> predict_lifted(const KoopmanModel& model,
                                            const Eigen::VectorXd& z0,
                                            const std::vector<ControlInput>& inputs);

/// Per-observable open-loop RMSE over {X, Y, v, theta, X^2, Y^2}: each test
/// trajectory is predicted from its initial lift, the per-trajectory RMSE
/// over all steps is taken against the true observables, and the result is
/// averaged over trajectories.
struct RmseTable {
    static constexpr std::array<const char*, 6> kObservables = {
        "X", "Y", "v", "theta", "X^2", "Y^2"};
    std::array<double, 6> rmse{};
};

RmseTable rmse_table(const KoopmanModel& model, const std::vector<Trajectory>& test_set,
                     const DictionarySpec& spec);

/// One identified input-state coupling, compared against its second-order
/// Taylor coefficient. `identified` sums the learned entry over the
/// duplicate group of the source column, since ridge splits weight across
/// identical columns.
struct CouplingEntry {
    std::string matrix;  ///< "A", "H1" or "H2"
    std::string target;  ///< row observable name
    std::string source;  ///< column observable name
    double identified = 0.0;
    double taylor = 0.0;
};

/// The coupling coefficients responsible for the position and
/// position-squared dynamics, X rows and their Y mirrors. Requires a
/// bilinear model over the canonical dictionary.
std::vector<CouplingEntry> coupling_report(const KoopmanModel& model,
                                           const DictionarySpec& spec);

} // namespace koopman
