#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace eti::detail {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Relative singularity tolerance shared by every solve in the library.
inline constexpr double kSingularTol = 1e-12;

/// Pivoted LDLT of a symmetric matrix that refuses near-singular or
/// indefinite input. The matrix is first equilibrated to unit diagonal
/// (D^{-1/2} A D^{-1/2}); a pivot counts as zero when it is below
/// kSingularTol times the largest diagonal entry, which is then 1.
class SpdFactor {
public:
    static std::optional<SpdFactor> factor(const Matrix& a)
    {
        if (!a.allFinite()) return std::nullopt;
        const Vector diag = a.diagonal();
        if (!(diag.minCoeff() > 0.0)) return std::nullopt;
        SpdFactor f;
        f.scale_ = diag.cwiseSqrt().cwiseInverse();
        f.ldlt_.compute(f.scale_.asDiagonal() * a * f.scale_.asDiagonal());
        if (f.ldlt_.info() != Eigen::Success) return std::nullopt;
        if (!(f.ldlt_.vectorD().minCoeff() > kSingularTol)) return std::nullopt;
        return f;
    }

    /// Solves A x = rhs.
    Matrix solve(const Matrix& rhs) const
    {
        return scale_.asDiagonal() * ldlt_.solve(scale_.asDiagonal() * rhs);
    }

private:
    Vector scale_;
    Eigen::LDLT<Matrix> ldlt_;
};

/// Inverse of a general square matrix under the same tolerance policy,
/// measured relative to the largest LU pivot.
inline std::optional<Matrix> checked_inverse(const Matrix& a)
{
    Eigen::FullPivLU<Matrix> lu(a);
    lu.setThreshold(kSingularTol);
    if (!a.allFinite() || !lu.isInvertible()) return std::nullopt;
    return lu.inverse();
}

/// Neumaier-compensated running sum of equally shaped Eigen objects.
/// Adding the same terms in any order agrees to within a few ulps.
template <class Dense>
class CompensatedSum {
public:
    CompensatedSum(Eigen::Index rows, Eigen::Index cols)
        : sum_(Dense::Zero(rows, cols)), comp_(Dense::Zero(rows, cols)) {}

    void add(const Dense& x)
    {
        for (Eigen::Index k = 0; k < sum_.size(); ++k) {
            const double s = sum_(k);
            const double v = x(k);
            const double t = s + v;
            if (std::abs(s) >= std::abs(v))
                comp_(k) += (s - t) + v;
            else
                comp_(k) += (v - t) + s;
            sum_(k) = t;
        }
    }

    Dense value() const { return sum_ + comp_; }

private:
    Dense sum_;
    Dense comp_;
};

} // namespace eti::detail
