#include "koopman/model_io.hpp"

#include "koopman/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <utility>

namespace koopman {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& M, const std::string& name) {
    if (!M.allFinite())
        throw std::invalid_argument("matrix '" + name + "' has non-finite entries");
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                                 const std::string& name) {
    if (!j.is_array())
        throw FormatError("field '" + name + "' must be an array of arrays");
    if (static_cast<Eigen::Index>(j.size()) != rows)
        throw CompatError("field '" + name + "' has " + std::to_string(j.size()) +
                          " rows, expected " + std::to_string(rows));
    Eigen::MatrixXd M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw CompatError("row " + std::to_string(i) + " of '" + name + "' has wrong length");
        for (Eigen::Index k = 0; k < cols; ++k) {
            const json& cell = row[static_cast<std::size_t>(k)];
            if (!cell.is_number())
                throw FormatError("non-numeric entry in '" + name + "'");
            M(i, k) = cell.get<double>();
        }
    }
    return M;
}

json parse_file(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw IoError("cannot open '" + path + "' for reading");
    try {
        return json::parse(file);
    } catch (const json::parse_error& e) {
        throw FormatError("'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_file(const json& j, const std::string& path) {
    std::ofstream file(path);
    if (!file) throw IoError("cannot open '" + path + "' for writing");
    file << j.dump() << '\n';
    if (!file) throw IoError("failed to write '" + path + "'");
}

template <typename T>
T required(const json& j, const std::string& key) {
    if (!j.contains(key)) throw FormatError("missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError("field '" + key + "' has the wrong type");
    }
}

void check_header(const json& j) {
    if (required<int>(j, "format_version") != kModelFormatVersion)
        throw CompatError("unsupported format_version");
    if (required<int>(j, "m") != kNumInputs)
        throw CompatError("file was written for a different input dimension");
}

} // namespace

void save_model(const KoopmanModel& model, const std::string& path) {
    const int n = model.n_lift();
    json j;
    j["format_version"] = kModelFormatVersion;
    j["kind"] = to_string(model.kind);
    j["dictionary"] = model.dictionary_id;
    j["n_lift"] = n;
    j["m"] = kNumInputs;
    j["ts"] = model.ts;
    j["lambda"] = model.lambda;
    j["count"] = model.count;
    j["A"] = matrix_to_json(model.A, "A");
    j["B"] = matrix_to_json(model.B, "B");
    json h = json::array();
    for (std::size_t i = 0; i < model.H.size(); ++i)
        h.push_back(matrix_to_json(model.H[i], "H" + std::to_string(i + 1)));
    j["H"] = std::move(h);
    write_file(j, path);
}

KoopmanModel load_model(const std::string& path, const std::string& expected_dictionary) {
    const json j = parse_file(path);
    check_header(j);

    KoopmanModel model;
    model.kind = model_kind_from_string(required<std::string>(j, "kind"));
    model.dictionary_id = required<std::string>(j, "dictionary");
    model.ts = required<double>(j, "ts");
    model.lambda = required<double>(j, "lambda");
    model.count = required<std::int64_t>(j, "count");

    const int n = required<int>(j, "n_lift");
    if (n < 1) throw FormatError("n_lift must be positive");
    if (!(model.ts > 0.0)) throw FormatError("ts must be positive");
    if (model.lambda < 0.0) throw FormatError("lambda must be non-negative");
    if (model.count < 0) throw FormatError("count must be non-negative");
    if (!expected_dictionary.empty() && model.dictionary_id != expected_dictionary)
        throw CompatError("model dictionary '" + model.dictionary_id + "' does not match '" +
                          expected_dictionary + "'");

    if (!j.contains("A") || !j.contains("B") || !j.contains("H"))
        throw FormatError("missing matrix field");
    model.A = matrix_from_json(j.at("A"), n, n, "A");
    model.B = matrix_from_json(j.at("B"), n, kNumInputs, "B");
    const json& h = j.at("H");
    if (!h.is_array()) throw FormatError("field 'H' must be an array");
    const std::size_t expected_h = model.kind == ModelKind::Bilinear ? 2 : 0;
    if (h.size() != expected_h)
        throw CompatError("a " + to_string(model.kind) + " model must carry " +
                          std::to_string(expected_h) + " coupling matrices, found " +
                          std::to_string(h.size()));
    for (std::size_t i = 0; i < h.size(); ++i)
        model.H.push_back(matrix_from_json(h[i], n, n, "H" + std::to_string(i + 1)));
    return model;
}

void save_accumulator(const SnapshotAccumulator& acc, const std::string& path) {
    json j;
    j["format_version"] = kModelFormatVersion;
    j["kind"] = to_string(acc.mode());
    j["dictionary"] = acc.dictionary_id();
    j["n_lift"] = acc.n_lift();
    j["m"] = kNumInputs;
    j["ts"] = acc.ts();
    j["count"] = acc.count();
    j["gram"] = matrix_to_json(acc.gram(), "gram");
    j["cross"] = matrix_to_json(acc.cross(), "cross");
    write_file(j, path);
}

SnapshotAccumulator load_accumulator(const std::string& path) {
    const json j = parse_file(path);
    check_header(j);

    const ModelKind mode = model_kind_from_string(required<std::string>(j, "kind"));
    const int n = required<int>(j, "n_lift");
    const double ts = required<double>(j, "ts");
    if (n < 1) throw FormatError("n_lift must be positive");
    if (!(ts > 0.0)) throw FormatError("ts must be positive");
    const int d = mode == ModelKind::Linear ? n + kNumInputs : n + kNumInputs + kNumInputs * n;

    if (!j.contains("gram") || !j.contains("cross")) throw FormatError("missing matrix field");
    return SnapshotAccumulator::from_parts(
        mode, n, ts, required<std::string>(j, "dictionary"), required<std::int64_t>(j, "count"),
        matrix_from_json(j.at("gram"), d, d, "gram"),
        matrix_from_json(j.at("cross"), n, d, "cross"));
}

} // namespace koopman
