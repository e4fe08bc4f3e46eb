#pragma once

#include <eti/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace eti {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// One linear piece of the consumption/taxable-income frontier.
struct Segment {
    double slope = 1.0;            // net-of-tax fraction rho_j
    double right_kink = kInfinity; // K_j; +inf on the last segment
    double virtual_income = 1.0;   // intercept R_j of the extended line
};

/// Convex piecewise-linear budget set, segments ordered by income.
struct BudgetSet {
    std::vector<Segment> segments;

    std::size_t size() const noexcept { return segments.size(); }
    const Segment& first() const { return segments.front(); }
    const Segment& last() const { return segments.back(); }

    /// Kink on the left of segment j (0 for the first segment).
    double left_kink(std::size_t j) const
    {
        return j == 0 ? 0.0 : segments[j - 1].right_kink;
    }
};

struct Bracket {
    double threshold = 0.0;     // income where this marginal rate starts
    double marginal_rate = 0.0; // tau in [0, 1)
};

struct TaxSchedule {
    std::vector<Bracket> brackets;
    double nonlabor_income = 1.0; // virtual income of the first segment
};

enum class Spec { A, B };

inline constexpr Eigen::Index regressor_dim(Spec spec)
{
    return spec == Spec::A ? 4 : 6;
}

inline const char* to_string(Spec spec) { return spec == Spec::A ? "a" : "b"; }

/// Coefficient names by regressor position.
inline std::vector<std::string> coefficient_names(Spec spec)
{
    if (spec == Spec::A) return {"intercept", "theta", "c", "d"};
    return {"intercept", "theta", "gamma", "c", "c_hat", "d"};
}

struct RegressorRow {
    Eigen::VectorXd values;
    Spec spec = Spec::A;
    int t = 0;
};

/// Continuity of consumption at each kink: R_{j+1} = R_j + (rho_j - rho_{j+1}) K_j.
inline double next_virtual_income(const Segment& left, double right_slope)
{
    return left.virtual_income + (left.slope - right_slope) * left.right_kink;
}

/// Builds a budget set from slopes, interior kinks and the first virtual
/// income. Does not validate; pass the result to validate() when the
/// inputs are untrusted.
inline BudgetSet make_budget(const std::vector<double>& slopes,
                             const std::vector<double>& kinks,
                             double first_virtual_income)
{
    BudgetSet b;
    b.segments.resize(slopes.size());
    for (std::size_t j = 0; j < slopes.size(); ++j) {
        auto& s = b.segments[j];
        s.slope = slopes[j];
        s.right_kink = j < kinks.size() ? kinks[j] : kInfinity;
        s.virtual_income = j == 0 ? first_virtual_income
                                  : next_virtual_income(b.segments[j - 1], s.slope);
    }
    if (!b.segments.empty()) b.segments.back().right_kink = kInfinity;
    return b;
}

enum class Violation {
    Empty,
    DomainViolation,    // non-positive or non-finite slope / virtual income
    ConvexityViolation, // slopes not strictly decreasing
    KinkOrderViolation, // kinks not strictly increasing and positive
    SentinelViolation,  // last segment not unbounded
    RecursionViolation, // virtual incomes break frontier continuity
};

inline const char* to_string(Violation v)
{
    switch (v) {
    case Violation::Empty: return "Empty";
    case Violation::DomainViolation: return "DomainViolation";
    case Violation::ConvexityViolation: return "ConvexityViolation";
    case Violation::KinkOrderViolation: return "KinkOrderViolation";
    case Violation::SentinelViolation: return "SentinelViolation";
    case Violation::RecursionViolation: return "RecursionViolation";
    }
    return "Unknown";
}

inline constexpr double kRecursionTol = 1e-9;

/// Lists every violated invariant, each kind at most once. Empty means valid.
inline std::vector<Violation> validate(const BudgetSet& b)
{
    std::vector<Violation> out;
    auto flag = [&](Violation v) {
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    };
    if (b.segments.empty()) {
        flag(Violation::Empty);
        return out;
    }
    for (const auto& s : b.segments) {
        if (!(s.slope > 0.0) || !std::isfinite(s.slope) || !(s.virtual_income > 0.0) ||
            !std::isfinite(s.virtual_income))
            flag(Violation::DomainViolation);
    }
    if (b.last().right_kink != kInfinity) flag(Violation::SentinelViolation);
    for (std::size_t j = 0; j + 1 < b.size(); ++j) {
        const auto& s = b.segments[j];
        const auto& n = b.segments[j + 1];
        if (!(s.slope > n.slope)) flag(Violation::ConvexityViolation);
        if (!(s.right_kink > b.left_kink(j)) || !std::isfinite(s.right_kink))
            flag(Violation::KinkOrderViolation);
        const double gap = n.virtual_income - next_virtual_income(s, n.slope);
        if (!(std::abs(gap) <= kRecursionTol * std::max(1.0, std::abs(s.virtual_income))))
            flag(Violation::RecursionViolation);
    }
    return out;
}

inline bool is_valid(const BudgetSet& b) { return validate(b).empty(); }

/// Converts a bracket schedule into its budget set: rho_j = 1 - tau_j,
/// K_j = threshold_{j+1}, virtual incomes by the continuity recursion.
/// Adjacent brackets with equal rates collapse into one segment.
inline BudgetSet budget_from_schedule(const TaxSchedule& schedule)
{
    const auto& br = schedule.brackets;
    if (br.empty()) throw DomainError("schedule has no brackets");
    if (!(schedule.nonlabor_income > 0.0) || !std::isfinite(schedule.nonlabor_income))
        throw DomainError("nonlabor income must be positive, got " +
                          std::to_string(schedule.nonlabor_income));
    if (br.front().threshold != 0.0)
        throw DomainError("first bracket threshold must be 0");
    for (std::size_t j = 0; j < br.size(); ++j) {
        const double tau = br[j].marginal_rate;
        if (!(tau >= 0.0 && tau < 1.0))
            throw DomainError("marginal rate outside [0, 1): " + std::to_string(tau));
        if (j > 0) {
            if (!(br[j].threshold > br[j - 1].threshold) || !std::isfinite(br[j].threshold))
                throw DomainError("bracket thresholds must be strictly increasing");
            if (tau < br[j - 1].marginal_rate)
                throw ConvexityViolation("marginal rates decrease at threshold " +
                                         std::to_string(br[j].threshold));
        }
    }

    std::vector<double> slopes;
    std::vector<double> kinks;
    for (std::size_t j = 0; j < br.size(); ++j) {
        if (j > 0 && br[j].marginal_rate == br[j - 1].marginal_rate) continue;
        if (j > 0) kinks.push_back(br[j].threshold);
        slopes.push_back(1.0 - br[j].marginal_rate);
    }
    return make_budget(slopes, kinks, schedule.nonlabor_income);
}

namespace detail {

inline void require_positive_slopes(const BudgetSet& b)
{
    if (b.segments.empty()) throw DomainError("empty budget set");
    for (const auto& s : b.segments)
        if (!(s.slope > 0.0)) throw DomainError("non-positive slope " + std::to_string(s.slope));
}

} // namespace detail

/// Linear-xi regressors without income effects:
/// [1, ln rho_J, ln rho_J - ln rho_1, t].
inline RegressorRow regressors_spec_a(const BudgetSet& b, int t)
{
    detail::require_positive_slopes(b);
    const double log_last = std::log(b.last().slope);
    const double log_first = std::log(b.first().slope);
    RegressorRow row;
    row.spec = Spec::A;
    row.t = t;
    row.values.resize(4);
    row.values << 1.0, log_last, log_last - log_first, static_cast<double>(t);
    return row;
}

/// Linear-xi regressors with income effects:
/// [1, ln rho_J, ln R_J, ln rho_J - ln rho_1, ln R_J - ln R_1, t].
inline RegressorRow regressors_spec_b(const BudgetSet& b, int t)
{
    detail::require_positive_slopes(b);
    for (const auto& s : b.segments)
        if (!(s.virtual_income > 0.0))
            throw DomainError("non-positive virtual income " + std::to_string(s.virtual_income));
    const double lr_last = std::log(b.last().slope);
    const double lr_first = std::log(b.first().slope);
    const double lv_last = std::log(b.last().virtual_income);
    const double lv_first = std::log(b.first().virtual_income);
    RegressorRow row;
    row.spec = Spec::B;
    row.t = t;
    row.values.resize(6);
    row.values << 1.0, lr_last, lv_last, lr_last - lr_first, lv_last - lv_first,
        static_cast<double>(t);
    return row;
}

inline RegressorRow regressors(const BudgetSet& b, int t, Spec spec)
{
    return spec == Spec::A ? regressors_spec_a(b, t) : regressors_spec_b(b, t);
}

} // namespace eti
