#pragma once

#include "koopman/edmd.hpp"

#include <string>

namespace koopman {

inline constexpr int kModelFormatVersion = 1;

/// Write a model as JSON. Keys: format_version, kind, dictionary, n_lift,
/// m, ts, lambda, count, A, B, H (array of matrices, empty for linear).
/// Matrices are nested arrays in row-major order; doubles round-trip
/// bitwise. Throws IoError if the file cannot be written.
void save_model(const KoopmanModel& model, const std::string& path);

/// Read a model back, validating the format version, the input count m,
/// all matrix dimensions and, when `expected_dictionary` is non-empty, the
/// dictionary id. Throws IoError (unreadable file), FormatError (malformed
/// JSON or fields) or CompatError (wrong version, dictionary or shape).
KoopmanModel load_model(const std::string& path, const std::string& expected_dictionary = {});

/// Persist the running normal equations so fits can resume or merge later.
void save_accumulator(const SnapshotAccumulator& acc, const std::string& path);

SnapshotAccumulator load_accumulator(const std::string& path);

} // namespace koopman
