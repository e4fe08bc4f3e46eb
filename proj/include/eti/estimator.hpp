#pragma once

#include <eti/budget.hpp>
#include <eti/detail/linalg.hpp>
#include <eti/errors.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace eti {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Observation {
    double y = 0.0;   // log taxable income
    RegressorRow x;   // regressors; x.t is the time index
};

/// One individual's time series.
struct PanelSeries {
    std::string id;
    std::vector<Observation> rows;

    Eigen::Index dim() const { return rows.empty() ? 0 : rows.front().x.values.size(); }
    Spec spec() const { return rows.front().x.spec; }
};

using Panel = std::vector<PanelSeries>;

/// Throws DomainError unless the series is non-empty, single-spec, with
/// equal-length rows, distinct time indices and a leading constant regressor.
inline void check_series(const PanelSeries& s)
{
    if (s.rows.empty()) throw DomainError("series '" + s.id + "' has no observations");
    const Spec spec = s.spec();
    const Eigen::Index dim = s.dim();
    if (dim < 1) throw DomainError("series '" + s.id + "' has empty regressor rows");
    std::set<int> seen;
    for (const auto& r : s.rows) {
        if (r.x.spec != spec) throw DomainError("series '" + s.id + "' mixes specifications");
        if (r.x.values.size() != dim)
            throw DomainError("series '" + s.id + "' has a regressor row of wrong length");
        if (r.x.values(0) != 1.0)
            throw DomainError("series '" + s.id + "' regressor row does not start with 1");
        if (!seen.insert(r.x.t).second)
            throw DomainError("series '" + s.id + "' repeats t = " + std::to_string(r.x.t));
        if (!std::isfinite(r.y) || !r.x.values.allFinite())
            throw DomainError("series '" + s.id + "' has non-finite values");
    }
}

/// Per-individual sufficient statistics, reused across the lambda grid.
struct Moments {
    Matrix Q;     // (1/T) sum b b'
    Vector cross; // (1/T) sum b y
    int T = 0;
};

inline Moments moments(const PanelSeries& s)
{
    check_series(s);
    const Eigen::Index k = s.dim();
    Moments m;
    m.T = static_cast<int>(s.rows.size());
    m.Q = Matrix::Zero(k, k);
    m.cross = Vector::Zero(k);
    for (const auto& r : s.rows) {
        m.Q.selfadjointView<Eigen::Lower>().rankUpdate(r.x.values);
        m.cross += r.x.values * r.y;
    }
    m.Q = m.Q.selfadjointView<Eigen::Lower>();
    m.Q /= m.T;
    m.cross /= m.T;
    return m;
}

inline Matrix second_moment(const PanelSeries& s) { return moments(s).Q; }

enum class PenaltyMode { Unit, Scaled };

inline const char* to_string(PenaltyMode m) { return m == PenaltyMode::Unit ? "unit" : "scaled"; }

inline constexpr double kPenaltyFloor = 1e-12;

/// Diagonal ridge penalty; the intercept is never penalized. Scaled mode
/// uses Q_jj and falls back to 1 for regressors with Q_jj below floor.
inline Vector penalty(const Matrix& Q, PenaltyMode mode, double floor = kPenaltyFloor)
{
    Vector s = Vector::Ones(Q.rows());
    if (mode == PenaltyMode::Scaled) {
        for (Eigen::Index j = 1; j < Q.rows(); ++j)
            if (Q(j, j) >= floor) s(j) = Q(j, j);
    }
    s(0) = 0.0;
    return s;
}

struct RidgeFit {
    Matrix Q;
    Vector S; // diagonal of the penalty matrix
    Vector beta_hat;
    Matrix W; // (Q + lambda S)^{-1} Q
    double lambda = 0.0;
    int T = 0;
};

/// Ridge fit from precomputed moments. Throws SingularSystem when
/// Q + lambda S is not numerically positive definite.
inline RidgeFit ridge_fit(const Moments& m, double lambda, PenaltyMode mode = PenaltyMode::Scaled,
                          double floor = kPenaltyFloor, const std::string& context = {})
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw DomainError("lambda must be a finite non-negative number");
    RidgeFit fit;
    fit.Q = m.Q;
    fit.S = penalty(m.Q, mode, floor);
    fit.lambda = lambda;
    fit.T = m.T;

    Matrix a = m.Q;
    a.diagonal() += lambda * fit.S;
    auto factor = detail::SpdFactor::factor(a);
    if (!factor) {
        std::ostringstream msg;
        if (!context.empty()) msg << "individual '" << context << "': ";
        msg << "Q + lambda*S is not invertible at lambda = " << lambda;
        throw SingularSystem(msg.str());
    }
    fit.beta_hat = factor->solve(m.cross);
    // At lambda = 0 the product is the identity by construction; a solve
    // would only add rounding noise.
    fit.W = lambda == 0.0 ? Matrix::Identity(m.Q.rows(), m.Q.cols()) : factor->solve(m.Q);
    return fit;
}

inline RidgeFit ridge_fit(const PanelSeries& s, double lambda, PenaltyMode mode = PenaltyMode::Scaled,
                          double floor = kPenaltyFloor)
{
    return ridge_fit(moments(s), lambda, mode, floor, s.id);
}

/// y_t - b_t' beta_hat in row order.
inline Vector fitted_residuals(const PanelSeries& s, const RidgeFit& fit)
{
    Vector r(static_cast<Eigen::Index>(s.rows.size()));
    for (std::size_t t = 0; t < s.rows.size(); ++t)
        r(static_cast<Eigen::Index>(t)) = s.rows[t].y - s.rows[t].x.values.dot(fit.beta_hat);
    return r;
}

} // namespace eti
