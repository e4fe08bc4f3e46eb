#pragma once

#include <eti/estimator.hpp>
#include <eti/detail/linalg.hpp>
#include <eti/detail/parallel.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eti {

/// Position of theta in both regressor layouts.
inline constexpr Eigen::Index kThetaIndex = 1;
/// Position of gamma (income elasticity) in the Spec B layout.
inline constexpr Eigen::Index kGammaIndex = 2;

/// The lambda grid of the reference application, ascending.
inline const std::vector<double>& default_lambda_grid()
{
    static const std::vector<double> grid{0.0,  1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 0.01, 0.1,
                                          0.2,  0.3,  0.4,  0.5,  1.0,  2.0,  3.0};
    return grid;
}

struct DebiasReport {
    double lambda = 0.0;
    int n = 0;
    Vector naive_avg;  // (1/n) sum beta_hat_i
    Matrix W_bar;      // (1/n) sum W_i
    Vector beta_tilde; // W_bar^{-1} naive_avg
    Matrix V_hat;      // covariance of sqrt(n)(beta_tilde - beta_0)
    Vector std_errors; // sqrt(diag(V_hat) / n)
};

struct DebiasOptions {
    bool dof_correction = false; // scale V_hat by n / (n - 1)
};

namespace detail {

inline void check_fits(std::span<const RidgeFit> fits)
{
    if (fits.empty()) throw DomainError("no fits to aggregate");
    const auto k = fits.front().beta_hat.size();
    const double lambda = fits.front().lambda;
    for (const auto& f : fits) {
        if (f.beta_hat.size() != k || f.W.rows() != k || f.W.cols() != k)
            throw DomainError("fits disagree on regressor dimension");
        if (f.lambda != lambda) throw DomainError("fits disagree on lambda");
    }
}

inline Matrix average_W(std::span<const RidgeFit> fits)
{
    const auto k = fits.front().W.rows();
    CompensatedSum<Matrix> acc(k, k);
    for (const auto& f : fits) acc.add(f.W);
    return acc.value() / static_cast<double>(fits.size());
}

inline Matrix invert_wbar(const Matrix& W_bar, double lambda)
{
    auto inv = checked_inverse(W_bar);
    if (!inv)
        throw NonInvertibleWbar("average shrinkage matrix is singular at lambda = " +
                                std::to_string(lambda));
    return *inv;
}

} // namespace detail

/// Debiased average of ridge coefficients with its plug-in variance.
inline DebiasReport debias(std::span<const RidgeFit> fits, const DebiasOptions& opt = {})
{
    detail::check_fits(fits);
    const auto k = fits.front().beta_hat.size();
    const double n = static_cast<double>(fits.size());

    DebiasReport rep;
    rep.lambda = fits.front().lambda;
    rep.n = static_cast<int>(fits.size());

    detail::CompensatedSum<Vector> beta_acc(k, 1);
    for (const auto& f : fits) beta_acc.add(f.beta_hat);
    rep.naive_avg = beta_acc.value() / n;
    rep.W_bar = detail::average_W(fits);

    const Matrix W_inv = detail::invert_wbar(rep.W_bar, rep.lambda);
    rep.beta_tilde = W_inv * rep.naive_avg;

    detail::CompensatedSum<Matrix> v_acc(k, k);
    for (const auto& f : fits) {
        const Vector psi = W_inv * (f.beta_hat - f.W * rep.beta_tilde);
        v_acc.add(psi * psi.transpose());
    }
    rep.V_hat = v_acc.value() / n;
    if (opt.dof_correction && fits.size() > 1) rep.V_hat *= n / (n - 1.0);
    rep.V_hat = 0.5 * (rep.V_hat + rep.V_hat.transpose()).eval();
    rep.std_errors = (rep.V_hat.diagonal().cwiseMax(0.0) / n).cwiseSqrt();
    return rep;
}

inline DebiasReport debias(const std::vector<RidgeFit>& fits, const DebiasOptions& opt = {})
{
    return debias(std::span<const RidgeFit>(fits), opt);
}

/// Max elementwise gap between V_hat and the sandwich form
/// W_bar^{-1} [(1/n) sum u_i u_i'] W_bar^{-T}, u_i = beta_hat_i - W_i beta_tilde.
inline double variance_alt_check(std::span<const RidgeFit> fits, const DebiasReport& rep,
                                 const DebiasOptions& opt = {})
{
    detail::check_fits(fits);
    const auto k = rep.beta_tilde.size();
    const double n = static_cast<double>(fits.size());
    const Matrix W_inv = detail::invert_wbar(rep.W_bar, rep.lambda);
    detail::CompensatedSum<Matrix> acc(k, k);
    for (const auto& f : fits) {
        const Vector u = f.beta_hat - f.W * rep.beta_tilde;
        acc.add(u * u.transpose());
    }
    Matrix alt = W_inv * (acc.value() / n) * W_inv.transpose();
    if (opt.dof_correction && fits.size() > 1) alt *= n / (n - 1.0);
    return (rep.V_hat - alt).cwiseAbs().maxCoeff();
}

struct SweepOptions {
    PenaltyMode mode = PenaltyMode::Scaled;
    double floor = kPenaltyFloor;
    DebiasOptions debias;
    unsigned threads = 0; // 0: hardware concurrency
};

/// One grid point; exactly one of report / error is set.
struct SweepEntry {
    double lambda = 0.0;
    std::optional<DebiasReport> report;
    std::optional<std::string> error;
    std::optional<ErrorKind> error_kind;
};

/// Per-individual moments computed in parallel, in panel order.
inline std::vector<Moments> panel_moments(const Panel& panel, Spec spec, unsigned threads = 0)
{
    std::vector<Moments> out(panel.size());
    detail::parallel_for(
        panel.size(),
        [&](std::size_t i) {
            check_series(panel[i]);
            if (panel[i].spec() != spec)
                throw DomainError("series '" + panel[i].id + "' does not match the requested spec");
            out[i] = moments(panel[i]);
        },
        threads);
    return out;
}

inline std::vector<RidgeFit> fit_all(const Panel& panel, const std::vector<Moments>& mom,
                                     double lambda, const SweepOptions& opt)
{
    std::vector<RidgeFit> fits(mom.size());
    detail::parallel_for(
        mom.size(),
        [&](std::size_t i) {
            fits[i] = ridge_fit(mom[i], lambda, opt.mode, opt.floor, panel[i].id);
        },
        opt.threads);
    return fits;
}

/// Ridge fits for the whole panel at one lambda.
inline std::vector<RidgeFit> fit_panel(const Panel& panel, Spec spec, double lambda,
                                       const SweepOptions& opt = {})
{
    return fit_all(panel, panel_moments(panel, spec, opt.threads), lambda, opt);
}

/// Debiased reports over a lambda grid. Moments are computed once; a
/// failure at one lambda is recorded in its entry and the sweep goes on.
inline std::vector<SweepEntry> sweep(const Panel& panel, const std::vector<double>& grid, Spec spec,
                                     const SweepOptions& opt = {})
{
    if (grid.empty()) throw ConfigError("lambda grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end()))
        throw ConfigError("lambda grid must be sorted ascending");
    if (panel.empty()) throw DomainError("panel has no individuals");

    const auto mom = panel_moments(panel, spec, opt.threads);
    std::vector<SweepEntry> out;
    out.reserve(grid.size());
    for (double lambda : grid) {
        SweepEntry e;
        e.lambda = lambda;
        try {
            const auto fits = fit_all(panel, mom, lambda, opt);
            e.report = debias(fits, opt.debias);
        } catch (const Error& err) {
            e.error = err.what();
            e.error_kind = err.kind();
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// First grid entry (ascending) whose |beta_tilde_k| / se_k reaches z.
inline std::optional<std::size_t> first_significant(const std::vector<SweepEntry>& entries,
                                                    Eigen::Index coord, double z)
{
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& r = entries[i].report;
        if (!r) continue;
        const double se = r->std_errors(coord);
        if (se > 0.0 && std::abs(r->beta_tilde(coord)) / se >= z) return i;
    }
    return std::nullopt;
}

struct ZetaDiagnostic {
    Vector zeta;
    Eigen::Index coord = kThetaIndex;
    double lambda = 0.0;
    std::vector<std::pair<double, double>> quantiles; // (p, zeta_(p))
};

/// Linear-interpolation empirical quantile of unsorted data.
inline double empirical_quantile(std::vector<double> sorted_or_not, double p, bool sorted = false)
{
    if (sorted_or_not.empty()) throw DomainError("quantile of empty sample");
    if (!sorted) std::sort(sorted_or_not.begin(), sorted_or_not.end());
    const double h = (static_cast<double>(sorted_or_not.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted_or_not.size() - 1);
    return sorted_or_not[lo] + (h - static_cast<double>(lo)) * (sorted_or_not[hi] - sorted_or_not[lo]);
}

/// Per-individual distance between e_coord and e_coord' W_bar^{-1} W_i,
/// normalised into [0, 1], with quantiles at p = 0.00, 0.01, ..., 1.00.
inline ZetaDiagnostic zeta_diagnostic(std::span<const RidgeFit> fits, Eigen::Index coord = kThetaIndex)
{
    detail::check_fits(fits);
    const auto k = fits.front().W.rows();
    if (coord < 0 || coord >= k) throw DomainError("coordinate index out of range");
    const double lambda = fits.front().lambda;
    const Matrix W_inv = detail::invert_wbar(detail::average_W(fits), lambda);

    ZetaDiagnostic d;
    d.coord = coord;
    d.lambda = lambda;
    d.zeta.resize(static_cast<Eigen::Index>(fits.size()));
    const Eigen::RowVectorXd sel = W_inv.row(coord);
    for (std::size_t i = 0; i < fits.size(); ++i) {
        Eigen::RowVectorXd e_hat = sel * fits[i].W;
        const double norm_sq = e_hat.squaredNorm();
        e_hat(coord) -= 1.0;
        const double z = e_hat.norm() / std::sqrt(2.0 * norm_sq + 2.0);
        d.zeta(static_cast<Eigen::Index>(i)) = std::clamp(z, 0.0, 1.0);
    }

    std::vector<double> sorted(d.zeta.data(), d.zeta.data() + d.zeta.size());
    std::sort(sorted.begin(), sorted.end());
    for (int q = 0; q <= 100; ++q) {
        const double p = q / 100.0;
        d.quantiles.emplace_back(p, empirical_quantile(sorted, p, true));
    }
    return d;
}

inline ZetaDiagnostic zeta_diagnostic(const std::vector<RidgeFit>& fits,
                                      Eigen::Index coord = kThetaIndex)
{
    return zeta_diagnostic(std::span<const RidgeFit>(fits), coord);
}

/// Pooled within (entity-demeaned) least squares. Returns the slope
/// coefficients, i.e. every regressor except the constant.
inline Vector fixed_effects_oracle(const Panel& panel)
{
    if (panel.empty()) throw DomainError("panel has no individuals");
    const Eigen::Index k = panel.front().dim();
    Eigen::Index rows = 0;
    for (const auto& s : panel) {
        check_series(s);
        if (s.dim() != k) throw DomainError("series disagree on regressor dimension");
        rows += static_cast<Eigen::Index>(s.rows.size());
    }
    Matrix X(rows, k - 1);
    Vector y(rows);
    Eigen::Index r = 0;
    for (const auto& s : panel) {
        const auto T = static_cast<Eigen::Index>(s.rows.size());
        Matrix xs(T, k - 1);
        Vector ys(T);
        for (Eigen::Index t = 0; t < T; ++t) {
            xs.row(t) = s.rows[t].x.values.tail(k - 1).transpose();
            ys(t) = s.rows[t].y;
        }
        xs.rowwise() -= xs.colwise().mean();
        ys.array() -= ys.mean();
        X.middleRows(r, T) = xs;
        y.segment(r, T) = ys;
        r += T;
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(X);
    qr.setThreshold(detail::kSingularTol);
    if (qr.rank() < k - 1) throw SingularSystem("within-transformed design is rank deficient");
    return qr.solve(y);
}

struct IncomeEffectInterval {
    double elasticity_low = 0.0;
    double elasticity_high = 0.0;
    double effect_low = 0.0; // dY/dR scale: elasticity bounds times Y/R
    double effect_high = 0.0;
};

/// Normal-theory interval for an income elasticity, and the same interval
/// converted to the marginal income effect dY/dR by multiplying with Y/R.
inline IncomeEffectInterval income_effect_interval(double gamma_hat, double se, double y_over_r,
                                                   double z = 1.96)
{
    if (!(se >= 0.0)) throw DomainError("standard error must be non-negative");
    if (!(y_over_r > 0.0)) throw DomainError("Y/R must be positive");
    IncomeEffectInterval ci;
    ci.elasticity_low = gamma_hat - z * se;
    ci.elasticity_high = gamma_hat + z * se;
    ci.effect_low = ci.elasticity_low * y_over_r;
    ci.effect_high = ci.elasticity_high * y_over_r;
    return ci;
}

} // namespace eti
