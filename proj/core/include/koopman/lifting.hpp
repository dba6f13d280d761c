#pragma once

#include "koopman/dynamics.hpp"

#include <Eigen/Dense>

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace koopman {

/// The ten base observables, in their fixed order.
enum class Preset : int {
    X = 0,
    Y = 1,
    V = 2,
    Theta = 3,
    X2 = 4,
    Y2 = 5,
    SinTheta = 6,
    CosTheta = 7,
    VSinTheta = 8,
    VCosTheta = 9,
};

inline constexpr int kNumPreset = 10;

/// Evaluate the base observables at a state:
/// [X, Y, v, theta, X^2, Y^2, sin(theta), cos(theta), v sin(theta), v cos(theta)].
Eigen::Matrix<double, kNumPreset, 1> preset_eval(const RobotState& s);

/// Polynomial dictionary over the preset observables.
///
/// The canonical degree-2 dictionary lists the 10 preset observables first,
/// then the 55 pairwise products psi_i * psi_j (i <= j) in graded
/// lexicographic order over preset indices, for 65 entries total. There is
/// no constant entry and no deduplication, so the first six positions are
/// X, Y, v, theta, X^2, Y^2 and the output projections are identity blocks.
///
/// Several positions evaluate to identical functions of the state (e.g.
/// X*X duplicates the preset X^2); the resulting exact rank deficiency is
/// the regression's problem, not the dictionary's. Immutable after
/// construction and safe to share across threads.
class DictionarySpec {
public:
    /// The canonical 65-observable dictionary, id "poly2-preset10-v1".
    static DictionarySpec poly2();

    /// Degree-1 dictionary (the 10 preset observables only). Test and
    /// analysis aid; carries a distinct id.
    static DictionarySpec preset_only();

    int size() const { return static_cast<int>(monomials_.size()); }
    const std::string& id() const { return id_; }

    /// Position of a degree-1 (preset) observable.
    int index_of(Preset p) const;
    /// Position of the pairwise product of two preset observables. The pair
    /// is unordered; throws std::out_of_range if the dictionary has no
    /// degree-2 entries.
    int index_of(Preset a, Preset b) const;
    /// Name-based lookup, e.g. "X", "v*sin(theta)", "X*cos(theta)". A few
    /// product entries render to the same name as a preset (v*sin(theta)
    /// appears at 8 and 33); the lookup returns the lowest such position.
    /// Throws std::out_of_range for an unknown descriptor.
    int index_of(std::string_view name) const;

    /// Human-readable name of a position, inverse of index_of(name).
    std::string name_of(int index) const;

    /// Partition of all positions into groups that are identical as
    /// functions of the state. Singletons included; groups and their
    /// members sorted ascending.
    std::vector<std::vector<int>> duplicate_groups() const;

    /// The group containing `index` (at least {index} itself).
    std::vector<int> duplicate_group_of(int index) const;

    /// Evaluate the dictionary at a state.
    Eigen::VectorXd lift(const RobotState& s) const;

    /// Preset factor indices of entry `index` (one value for degree-1
    /// entries, two for products).
    const std::vector<int>& factors(int index) const { return monomials_[index]; }

private:
    DictionarySpec(std::string id, std::vector<std::vector<int>> monomials);

    /// Exponents of a monomial over the base variables
    /// (X, Y, v, theta, sin(theta), cos(theta)).
    std::array<int, 6> exponents(int index) const;

    std::string id_;
    std::vector<std::vector<int>> monomials_;
    /// Per entry: base-variable factors in canonical order, expanded from
    /// the exponents. Equal-exponent entries evaluate bitwise identically.
    std::vector<std::vector<int>> base_factors_;
};

inline constexpr int kNumLift = 65;

/// lift(s) under a given dictionary; entries 0..9 equal preset_eval(s) and
/// entry index_of(i, j) equals the product of preset entries i and j.
inline Eigen::VectorXd lift(const RobotState& s, const DictionarySpec& spec)
{
    return spec.lift(s);
}

} // namespace koopman
