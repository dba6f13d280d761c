#include "koopman/edmd.hpp"

#include "koopman/errors.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>
#include <utility>

namespace koopman {

namespace {

int regressor_size_for(ModelKind mode, int n_lift) {
    return mode == ModelKind::Linear ? n_lift + kNumInputs
                                     : n_lift + kNumInputs + kNumInputs * n_lift;
}

// Entrywise Neumaier (compensated) addition: raw accumulates the plain sum,
// comp the bits each addition rounds away. raw + comp is then accurate to
// one rounding regardless of how many updates went in, which keeps
// streaming accumulation equivalent to one-shot batch products.
void compensated_add(Eigen::MatrixXd& raw, Eigen::MatrixXd& comp, const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd t = raw + x;
    comp.array() += (raw.array().abs() >= x.array().abs())
                        .select((raw - t).array() + x.array(), (x - t).array() + raw.array());
    raw = t;
}

} // namespace

std::string to_string(ModelKind k) {
    return k == ModelKind::Linear ? "linear" : "bilinear";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "linear") return ModelKind::Linear;
    if (s == "bilinear") return ModelKind::Bilinear;
    throw FormatError("unknown model kind '" + s + "', expected 'linear' or 'bilinear'");
}

SnapshotAccumulator::SnapshotAccumulator(ModelKind mode, int n_lift, double ts,
                                         std::string dictionary_id)
    : mode_(mode), n_lift_(n_lift), ts_(ts), dictionary_id_(std::move(dictionary_id)) {
    if (n_lift_ < 1) throw std::invalid_argument("SnapshotAccumulator: n_lift must be positive");
    if (!(ts_ > 0.0)) throw std::invalid_argument("SnapshotAccumulator: ts must be positive");
    const int d = regressor_size_for(mode_, n_lift_);
    gram_ = Eigen::MatrixXd::Zero(d, d);
    cross_ = Eigen::MatrixXd::Zero(n_lift_, d);
    gram_raw_ = gram_;
    gram_comp_ = gram_;
    cross_raw_ = cross_;
    cross_comp_ = cross_;
}

Eigen::VectorXd SnapshotAccumulator::regressor(const Eigen::VectorXd& z,
                                               const ControlInput& u) const {
    if (z.size() != n_lift_)
        throw std::invalid_argument("regressor: lifted state has wrong length");
    Eigen::VectorXd phi(regressor_size_for(mode_, n_lift_));
    phi.head(n_lift_) = z;
    phi(n_lift_) = u.a;
    phi(n_lift_ + 1) = u.omega;
    if (mode_ == ModelKind::Bilinear) {
        phi.segment(n_lift_ + kNumInputs, n_lift_) = u.a * z;
        phi.tail(n_lift_) = u.omega * z;
    }
    return phi;
}

void SnapshotAccumulator::accumulate(const Eigen::VectorXd& z_k, const ControlInput& u_k,
                                     const Eigen::VectorXd& z_k1) {
    if (z_k1.size() != n_lift_)
        throw std::invalid_argument("accumulate: successor lift has wrong length");
    const Eigen::VectorXd phi = regressor(z_k, u_k);
    add_contribution(phi * phi.transpose(), z_k1 * phi.transpose());
    ++count_;
}

void SnapshotAccumulator::accumulate_batch(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U,
                                           const Eigen::MatrixXd& Z1) {
    const Eigen::Index n = Z.cols();
    if (U.cols() != n || Z1.cols() != n)
        throw std::invalid_argument("accumulate_batch: column counts differ");
    if (Z.rows() != n_lift_ || Z1.rows() != n_lift_ || U.rows() != kNumInputs)
        throw std::invalid_argument("accumulate_batch: row counts do not match accumulator");
    if (n == 0) return;

    Eigen::MatrixXd Phi(regressor_size_for(mode_, n_lift_), n);
    Phi.topRows(n_lift_) = Z;
    Phi.middleRows(n_lift_, kNumInputs) = U;
    if (mode_ == ModelKind::Bilinear) {
        Phi.middleRows(n_lift_ + kNumInputs, n_lift_) = Z * U.row(0).asDiagonal();
        Phi.bottomRows(n_lift_) = Z * U.row(1).asDiagonal();
    }
    // The batch contribution is computed standalone and added in one sweep:
    // accumulating batches sequentially then equals merging per-batch
    // accumulators bitwise, whatever the matrix kernels do internally.
    Eigen::MatrixXd gram_update = Eigen::MatrixXd::Zero(gram_.rows(), gram_.cols());
    gram_update.selfadjointView<Eigen::Lower>().rankUpdate(Phi);
    gram_update.triangularView<Eigen::StrictlyUpper>() = gram_update.transpose();
    add_contribution(std::move(gram_update), Z1 * Phi.transpose());
    count_ += n;
}

void SnapshotAccumulator::add_contribution(const Eigen::MatrixXd& gram_update,
                                           const Eigen::MatrixXd& cross_update) {
    compensated_add(gram_raw_, gram_comp_, gram_update);
    compensated_add(cross_raw_, cross_comp_, cross_update);
    gram_ = gram_raw_ + gram_comp_;
    cross_ = cross_raw_ + cross_comp_;
}

void SnapshotAccumulator::merge(const SnapshotAccumulator& other) {
    if (other.mode_ != mode_ || other.n_lift_ != n_lift_)
        throw CompatError("merge: accumulator mode or dimension mismatch");
    if (other.ts_ != ts_)
        throw CompatError("merge: accumulator sample times differ");
    if (other.dictionary_id_ != dictionary_id_)
        throw CompatError("merge: accumulator dictionaries differ");
    add_contribution(other.gram_, other.cross_);
    count_ += other.count_;
}

SnapshotAccumulator SnapshotAccumulator::from_parts(ModelKind mode, int n_lift, double ts,
                                                    std::string dictionary_id,
                                                    std::int64_t count, Eigen::MatrixXd gram,
                                                    Eigen::MatrixXd cross) {
    SnapshotAccumulator acc(mode, n_lift, ts, std::move(dictionary_id));
    const int d = acc.regressor_size();
    if (gram.rows() != d || gram.cols() != d || cross.rows() != n_lift || cross.cols() != d)
        throw CompatError("accumulator parts have inconsistent dimensions");
    if (count < 0) throw CompatError("accumulator count must be non-negative");
    acc.gram_raw_ = gram;
    acc.gram_ = std::move(gram);
    acc.cross_raw_ = cross;
    acc.cross_ = std::move(cross);
    acc.count_ = count;
    return acc;
}

KoopmanModel solve_model(const SnapshotAccumulator& acc, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("solve_model: lambda must be non-negative");
    const int d = acc.regressor_size();
    const int n = acc.n_lift();
    if (acc.count() < d)
        throw std::runtime_error("solve_model: " + std::to_string(acc.count()) +
                                 " snapshot pairs for a regressor of size " + std::to_string(d));

    const double mu = lambda * acc.gram().trace() / static_cast<double>(d);
    Eigen::MatrixXd M = acc.gram();
    M.diagonal().array() += mu;

    // Diagonal (Jacobi) equilibration keeps the pivot test meaningful when
    // observables live on very different scales.
    Eigen::VectorXd scale(d);
    for (int i = 0; i < d; ++i) {
        const double mii = M(i, i);
        scale(i) = mii > 0.0 ? 1.0 / std::sqrt(mii) : 1.0;
    }
    const Eigen::MatrixXd Ms = scale.asDiagonal() * M * scale.asDiagonal();

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(Ms);
    const Eigen::VectorXd dvec = ldlt.vectorD();
    const double dmax = dvec.cwiseAbs().maxCoeff();
    const double dmin = dvec.minCoeff();
    if (!(dmin > dmax * 1e-14))
        throw std::runtime_error(
            "solve_model: normal equations are ill-conditioned; the dictionary has "
            "linearly dependent columns, refit with lambda > 0");

    const Eigen::MatrixXd rhs = scale.asDiagonal() * acc.cross().transpose();
    Eigen::MatrixXd Ks = ldlt.solve(rhs);
    // two sweeps of iterative refinement recover the accuracy the squared
    // conditioning of the normal equations costs the factorization
    for (int sweep = 0; sweep < 2; ++sweep) Ks += ldlt.solve(rhs - Ms * Ks);
    const Eigen::MatrixXd K = (scale.asDiagonal() * Ks).transpose();

    KoopmanModel model;
    model.kind = acc.mode();
    model.A = K.leftCols(n);
    model.B = K.middleCols(n, kNumInputs);
    if (acc.mode() == ModelKind::Bilinear) {
        model.H.push_back(K.middleCols(n + kNumInputs, n));
        model.H.push_back(K.rightCols(n));
    }
    model.ts = acc.ts();
    model.dictionary_id = acc.dictionary_id();
    model.count = acc.count();
    model.lambda = lambda;
    return model;
}

namespace {

void check_prediction_args(const KoopmanModel& model, const Eigen::VectorXd& z0,
                           ModelKind expected) {
    if (model.kind != expected)
        throw CompatError("prediction routine does not match model kind");
    if (z0.size() != model.n_lift())
        throw std::invalid_argument("predict: initial lift has wrong length");
    if (expected == ModelKind::Bilinear && model.H.size() != 2)
        throw CompatError("bilinear model must carry exactly two input coupling matrices");
}

} // namespace

std::vector<Eigen::VectorXd> predict_linear(const KoopmanModel& model,
                                            const Eigen::VectorXd& z0,
                                            const std::vector<ControlInput>& inputs) {
    check_prediction_args(model, z0, ModelKind::Linear);
    std::vector<Eigen::VectorXd> out;
    out.reserve(inputs.size() + 1);
    out.push_back(z0);
    for (const ControlInput& u : inputs) {
        const Eigen::VectorXd& z = out.back();
        out.push_back(model.A * z + model.B * u.vec());
    }
    return out;
}

std::vector<Eigen::VectorXd> predict_bilinear(const KoopmanModel& model,
                                              const Eigen::VectorXd& z0,
                                              const std::vector<ControlInput>& inputs) {
    check_prediction_args(model, z0, ModelKind::Bilinear);
    std::vector<Eigen::VectorXd> out;
    out.reserve(inputs.size() + 1);
    out.push_back(z0);
    for (const ControlInput& u : inputs) {
        const Eigen::VectorXd& z = out.back();
        out.push_back(model.A * z + model.B * u.vec() + u.a * (model.H[0] * z) +
                      u.omega * (model.H[1] * z));
    }
    return out;
}

std::vector<Eigen::VectorXd> predict_lifted(const KoopmanModel& model,
                                            const Eigen::VectorXd& z0,
                                            const std::vector<ControlInput>& inputs) {
    return model.kind == ModelKind::Linear ? predict_linear(model, z0, inputs)
                                           : predict_bilinear(model, z0, inputs);
}

RmseTable rmse_table(const KoopmanModel& model, const std::vector<Trajectory>& test_set,
                     const DictionarySpec& spec) {
    if (model.dictionary_id != spec.id())
        throw CompatError("rmse_table: model was fit on a different dictionary");
    if (model.n_lift() != spec.size())
        throw CompatError("rmse_table: model dimension does not match dictionary");
    if (test_set.empty()) throw std::invalid_argument("rmse_table: empty test set");

    constexpr int kTracked = 6;  // X, Y, v, theta, X^2, Y^2 head the dictionary
    Eigen::Array<double, kTracked, 1> mean_rmse = Eigen::Array<double, kTracked, 1>::Zero();
    for (const Trajectory& traj : test_set) {
        if (traj.states.size() != traj.inputs.size() + 1 || traj.inputs.empty())
            throw std::invalid_argument("rmse_table: malformed trajectory");
        const auto pred = predict_lifted(model, spec.lift(traj.states.front()), traj.inputs);
        Eigen::Array<double, kTracked, 1> sq_sum = Eigen::Array<double, kTracked, 1>::Zero();
        for (std::size_t k = 1; k < traj.states.size(); ++k) {
            const RobotState& s = traj.states[k];
            Eigen::Array<double, kTracked, 1> truth;
            truth << s.X, s.Y, s.v, s.theta, s.X * s.X, s.Y * s.Y;
            sq_sum += (pred[k].head(kTracked).array() - truth).square();
        }
        mean_rmse += (sq_sum / static_cast<double>(traj.inputs.size())).sqrt();
    }
    mean_rmse /= static_cast<double>(test_set.size());

    RmseTable table;
    for (int i = 0; i < kTracked; ++i) table.rmse[static_cast<std::size_t>(i)] = mean_rmse(i);
    return table;
}

std::vector<CouplingEntry> coupling_report(const KoopmanModel& model,
                                           const DictionarySpec& spec) {
    if (model.kind != ModelKind::Bilinear)
        throw CompatError("coupling_report: needs a bilinear model");
    if (model.dictionary_id != spec.id() || model.n_lift() != spec.size())
        throw CompatError("coupling_report: model does not match dictionary");
    if (spec.id() != DictionarySpec::poly2().id())
        throw CompatError("coupling_report: defined for the degree-2 preset dictionary");

    const double ts = model.ts;
    const double half_ts2 = 0.5 * ts * ts;

    struct Spec {
        int matrix;  // -1 for A, else H index
        Preset target;
        int source;
        double taylor;
    };
    const int x_cos = spec.index_of(Preset::X, Preset::CosTheta);
    const int x_vsin = spec.index_of(Preset::X, Preset::VSinTheta);
    const int y_sin = spec.index_of(Preset::Y, Preset::SinTheta);
    const int y_vcos = spec.index_of(Preset::Y, Preset::VCosTheta);
    const std::vector<Spec> wanted = {
        {-1, Preset::X, spec.index_of(Preset::VCosTheta), ts},
        {-1, Preset::Y, spec.index_of(Preset::VSinTheta), ts},
        {0, Preset::X, spec.index_of(Preset::CosTheta), half_ts2},
        {1, Preset::X, spec.index_of(Preset::VSinTheta), -half_ts2},
        {0, Preset::Y, spec.index_of(Preset::SinTheta), half_ts2},
        {1, Preset::Y, spec.index_of(Preset::VCosTheta), half_ts2},
        {0, Preset::X2, x_cos, 2.0 * half_ts2},
        {1, Preset::X2, x_vsin, -2.0 * half_ts2},
        {0, Preset::Y2, y_sin, 2.0 * half_ts2},
        {1, Preset::Y2, y_vcos, 2.0 * half_ts2},
    };

    std::vector<CouplingEntry> report;
    report.reserve(wanted.size());
    for (const Spec& w : wanted) {
        const Eigen::MatrixXd& M =
            w.matrix < 0 ? model.A : model.H[static_cast<std::size_t>(w.matrix)];
        const int row = spec.index_of(w.target);
        CouplingEntry entry;
        entry.matrix = w.matrix < 0 ? "A" : (w.matrix == 0 ? "H1" : "H2");
        entry.target = spec.name_of(row);
        entry.source = spec.name_of(w.source);
        entry.taylor = w.taylor;
        // Ridge splits weight evenly over identical columns; only the group
        // sum is identifiable.
        for (int col : spec.duplicate_group_of(w.source)) entry.identified += M(row, col);
        report.push_back(std::move(entry));
    }
    return report;
}

} // namespace koopman
