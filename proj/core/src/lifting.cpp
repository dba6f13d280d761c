#include "koopman/lifting.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

namespace koopman {

namespace {

const std::array<std::string, kNumPreset> kPresetNames = {
    "X", "Y", "v", "theta", "X^2", "Y^2",
    "sin(theta)", "cos(theta)", "v*sin(theta)", "v*cos(theta)"};

// Exponents of each preset observable over (X, Y, v, theta, sin, cos).
const std::array<std::array<int, 6>, kNumPreset> kPresetExponents = {{
    {1, 0, 0, 0, 0, 0}, // X
    {0, 1, 0, 0, 0, 0}, // Y
    {0, 0, 1, 0, 0, 0}, // v
    {0, 0, 0, 1, 0, 0}, // theta
    {2, 0, 0, 0, 0, 0}, // X^2
    {0, 2, 0, 0, 0, 0}, // Y^2
    {0, 0, 0, 0, 1, 0}, // sin(theta)
    {0, 0, 0, 0, 0, 1}, // cos(theta)
    {0, 0, 1, 0, 1, 0}, // v*sin(theta)
    {0, 0, 1, 0, 0, 1}, // v*cos(theta)
}};

} // namespace

DictionarySpec::DictionarySpec(std::string id, std::vector<std::vector<int>> monomials)
    : id_(std::move(id)), monomials_(std::move(monomials))
{
    // Canonical evaluation order over the base variables
    // (X, Y, v, theta, sin, cos): entries with equal exponents then produce
    // bitwise-equal values, so duplicated dictionary positions stay exact
    // duplicates in floating point as well.
    base_factors_.reserve(monomials_.size());
    for (int idx = 0; idx < size(); ++idx) {
        const auto e = exponents(idx);
        std::vector<int> factors;
        for (int k = 0; k < 6; ++k)
            for (int rep = 0; rep < e[k]; ++rep)
                factors.push_back(k);
        base_factors_.push_back(std::move(factors));
    }
}

DictionarySpec DictionarySpec::poly2()
{
    std::vector<std::vector<int>> monomials;
    monomials.reserve(kNumLift);
    for (int i = 0; i < kNumPreset; ++i)
        monomials.push_back({i});
    for (int i = 0; i < kNumPreset; ++i)
        for (int j = i; j < kNumPreset; ++j)
            monomials.push_back({i, j});
    return DictionarySpec("poly2-preset10-v1", std::move(monomials));
}

DictionarySpec DictionarySpec::preset_only()
{
    std::vector<std::vector<int>> monomials;
    monomials.reserve(kNumPreset);
    for (int i = 0; i < kNumPreset; ++i)
        monomials.push_back({i});
    return DictionarySpec("poly1-preset10-v1", std::move(monomials));
}

Eigen::Matrix<double, kNumPreset, 1> preset_eval(const RobotState& s)
{
    Eigen::Matrix<double, kNumPreset, 1> p;
    const double st = std::sin(s.theta);
    const double ct = std::cos(s.theta);
    p << s.X, s.Y, s.v, s.theta, s.X * s.X, s.Y * s.Y, st, ct, s.v * st, s.v * ct;
    return p;
}

int DictionarySpec::index_of(Preset p) const
{
    return static_cast<int>(p);
}

int DictionarySpec::index_of(Preset a, Preset b) const
{
    int i = static_cast<int>(a);
    int j = static_cast<int>(b);
    if (i > j)
        std::swap(i, j);
    if (size() <= kNumPreset)
        throw std::out_of_range("index_of: dictionary has no degree-2 entries");
    // Graded-lex offset of pair (i, j), i <= j, after the 10 degree-1 slots.
    return kNumPreset + i * kNumPreset - i * (i - 1) / 2 + (j - i);
}

int DictionarySpec::index_of(std::string_view name) const
{
    for (int idx = 0; idx < size(); ++idx)
        if (name_of(idx) == name)
            return idx;
    // Accept the reversed spelling of a product, e.g. "cos(theta)*X".
    const auto star = name.find('*');
    if (star != std::string_view::npos) {
        const std::string swapped =
            std::string(name.substr(star + 1)) + "*" + std::string(name.substr(0, star));
        for (int idx = kNumPreset; idx < size(); ++idx)
            if (name_of(idx) == swapped)
                return idx;
    }
    throw std::out_of_range("index_of: unknown observable descriptor '" + std::string(name) + "'");
}

std::string DictionarySpec::name_of(int index) const
{
    const auto& m = monomials_.at(static_cast<size_t>(index));
    if (m.size() == 1)
        return kPresetNames[m[0]];
    return kPresetNames[m[0]] + "*" + kPresetNames[m[1]];
}

std::array<int, 6> DictionarySpec::exponents(int index) const
{
    std::array<int, 6> e{};
    for (int factor : monomials_[index])
        for (int k = 0; k < 6; ++k)
            e[k] += kPresetExponents[factor][k];
    return e;
}

std::vector<std::vector<int>> DictionarySpec::duplicate_groups() const
{
    std::map<std::array<int, 6>, std::vector<int>> by_exponents;
    for (int idx = 0; idx < size(); ++idx)
        by_exponents[exponents(idx)].push_back(idx);

    std::vector<std::vector<int>> groups;
    groups.reserve(by_exponents.size());
    for (auto& [e, members] : by_exponents)
        groups.push_back(std::move(members));
    std::sort(groups.begin(), groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return groups;
}

std::vector<int> DictionarySpec::duplicate_group_of(int index) const
{
    const auto target = exponents(index);
    std::vector<int> group;
    for (int idx = 0; idx < size(); ++idx)
        if (exponents(idx) == target)
            group.push_back(idx);
    return group;
}

Eigen::VectorXd DictionarySpec::lift(const RobotState& s) const
{
    const double base[6] = {s.X, s.Y, s.v, s.theta, std::sin(s.theta), std::cos(s.theta)};
    Eigen::VectorXd z(size());
    for (int idx = 0; idx < size(); ++idx) {
        double value = 1.0;
        for (int k : base_factors_[static_cast<size_t>(idx)]) value *= base[k];
        z[idx] = value;
    }
    return z;
}

} // namespace koopman
