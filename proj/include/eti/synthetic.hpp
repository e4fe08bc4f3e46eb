#pragma once

#include <eti/budget.hpp>
#include <eti/estimator.hpp>
#include <eti/errors.hpp>
#include <eti/detail/parallel.hpp>
#include <eti/detail/rng.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace eti {

/// ln(eta) ~ Normal(mu, sigma); identical in every period for a given individual.
struct EtaDistribution {
    double mu = 0.0;
    double sigma = 0.5;

    template <class Rng>
    double draw_log(Rng& rng) const
    {
        return mu + sigma * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
};

struct IndividualParams {
    double theta = 0.6;  // taxable income elasticity
    double gamma = 0.0;  // income elasticity (Spec B)
    double alpha = 0.0;  // productivity growth rate
    double a = 0.0;      // intercept
    double cbar = 0.0;   // slope of the linear xi function
    EtaDistribution eta; // structural mode only

    double c() const { return theta * cbar; }
    double c_hat() const { return gamma * cbar; }
    double d() const { return alpha * (theta + 1.0); }

    /// Coefficient vector in regressor order.
    Vector beta(Spec spec) const
    {
        Vector b(regressor_dim(spec));
        if (spec == Spec::A)
            b << a, theta, c(), d();
        else
            b << a, theta, gamma, c(), c_hat(), d();
        return b;
    }
};

/// Optimal taxable income on a convex piecewise-linear budget under
/// isoelastic quasi-linear utility with productivity factor phi.
/// Segment candidates phi * (phi * rho_j)^theta * eta decrease in j; the
/// optimum is the first interior candidate or the kink they straddle.
inline double utility_max_income(const BudgetSet& b, double theta, double eta, double phi = 1.0)
{
    double left = 0.0;
    for (std::size_t j = 0; j < b.segments.size(); ++j) {
        const auto& s = b.segments[j];
        const double cand = phi * std::pow(phi * s.slope, theta) * eta;
        if (cand <= s.right_kink) return std::max(cand, left);
        left = s.right_kink;
    }
    return left;
}

enum class Generator { Reduced, Structural };

struct PopulationConfig {
    double theta_mean = 0.6;  // theta ~ log-normal with exactly this mean
    double theta_log_sd = 0.3;
    double gamma_mean = -0.05; // gamma = gamma_mean * log-normal(mean 1)
    double gamma_log_sd = 0.3;
    double alpha_mean = 0.01;
    double alpha_sd = 0.005;
    double a_mean = 10.0;
    double a_sd = 0.5;
    double cbar_mean = 0.3;
    double cbar_sd = 0.1;
    double eta_sigma = 0.3;        // structural mode: sd of ln(eta)
    bool utility_consistent = true; // enforce theta >= 0, gamma <= 0
};

struct BudgetDrawConfig {
    // Probability of 1, 2 or 3 brackets in a given period.
    double p_one = 0.15;
    double p_two = 0.45;
    double first_rate_max = 0.25;
    double rate_step_min = 0.05;
    double rate_step_max = 0.25;
    double reform_amplitude = 0.05; // common, period-specific rate shift
    double threshold_log_mean = std::log(15000.0);
    double threshold_log_sd = 0.3;
    double nonlabor_log_mean = 8.0;
    double nonlabor_log_sd = 0.7;
    // Endogeneity: rates shift by these amounts per standard deviation of
    // a_i and ln(theta_i). Zero strength gives exogenous budgets.
    double strength_a = 0.0;
    double strength_theta = 0.0;
    double a_center = 10.0;
    double a_scale = 0.5;
    double log_theta_center = std::log(0.6);
    double log_theta_scale = 0.3;
};

struct NoiseConfig {
    double sd = 0.1;
    bool heteroskedastic = false; // sd scales with 0.5 + |ln rho_J|
};

struct DGPConfig {
    int n = 100;
    int T = 15;
    Spec spec = Spec::A;
    Generator generator = Generator::Reduced;
    PopulationConfig population;
    BudgetDrawConfig budgets;
    NoiseConfig noise;
    std::uint64_t seed = 1;
    int base_year = 1977;
    unsigned threads = 0;
};

/// Points the endogeneity centers at the population configuration.
inline void center_budget_draws(DGPConfig& cfg)
{
    const auto& p = cfg.population;
    cfg.budgets.a_center = p.a_mean;
    cfg.budgets.a_scale = p.a_sd;
    cfg.budgets.log_theta_center = std::log(p.theta_mean) - 0.5 * p.theta_log_sd * p.theta_log_sd;
    cfg.budgets.log_theta_scale = p.theta_log_sd;
}

inline void validate_config(const DGPConfig& cfg)
{
    if (cfg.n < 1 || cfg.T < 1) throw ConfigError("n and T must be at least 1");
    const auto& p = cfg.population;
    if (!(p.theta_mean > 0.0)) throw ConfigError("theta_mean must be positive");
    if (p.theta_log_sd < 0 || p.gamma_log_sd < 0 || p.alpha_sd < 0 || p.a_sd < 0 || p.cbar_sd < 0 ||
        p.eta_sigma < 0 || cfg.noise.sd < 0)
        throw ConfigError("dispersion parameters must be non-negative");
    if (p.utility_consistent && p.gamma_mean > 0.0)
        throw ConfigError("gamma_mean must be <= 0 when utility consistency is enforced");
    if (cfg.generator == Generator::Structural && cfg.spec == Spec::B)
        throw ConfigError("structural generation is only available for spec a");
    const auto& b = cfg.budgets;
    if (b.p_one < 0 || b.p_two < 0 || b.p_one + b.p_two > 1.0)
        throw ConfigError("bracket-count probabilities must lie in [0, 1] and sum to at most 1");
    if (b.rate_step_min <= 0 || b.rate_step_max < b.rate_step_min)
        throw ConfigError("rate steps must satisfy 0 < min <= max");
}

/// Draws one individual's parameters from the population.
template <class Rng>
IndividualParams draw_individual(const PopulationConfig& p, Rng& rng)
{
    std::normal_distribution<double> z(0.0, 1.0);
    IndividualParams ind;
    ind.theta = std::exp(std::log(p.theta_mean) - 0.5 * p.theta_log_sd * p.theta_log_sd +
                         p.theta_log_sd * z(rng));
    const double gamma_factor =
        std::exp(-0.5 * p.gamma_log_sd * p.gamma_log_sd + p.gamma_log_sd * z(rng));
    ind.gamma = p.gamma_mean * gamma_factor;
    ind.alpha = p.alpha_mean + p.alpha_sd * z(rng);
    ind.a = p.a_mean + p.a_sd * z(rng);
    ind.cbar = p.cbar_mean + p.cbar_sd * z(rng);
    ind.eta = EtaDistribution{ind.a, p.eta_sigma};
    return ind;
}

/// Budget set for one individual and period. Bracket rates shift with the
/// individual's standardized a_i and ln(theta_i) when the endogeneity
/// strengths are non-zero; the draw is otherwise independent of the
/// individual. Rates are clipped to [0, 0.9].
template <class Rng>
BudgetSet endogenous_budget_draw(const IndividualParams& ind, int period, Rng& rng,
                                 const BudgetDrawConfig& cfg = {})
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);

    const double pick = u(rng);
    const int J = pick < cfg.p_one ? 1 : (pick < cfg.p_one + cfg.p_two ? 2 : 3);

    const double za = cfg.a_scale > 0 ? (ind.a - cfg.a_center) / cfg.a_scale : 0.0;
    const double zt =
        cfg.log_theta_scale > 0 ? (std::log(ind.theta) - cfg.log_theta_center) / cfg.log_theta_scale : 0.0;
    const double shift = cfg.strength_a * za + cfg.strength_theta * zt +
                         cfg.reform_amplitude * std::sin(0.7 * period);

    TaxSchedule sched;
    double rate = cfg.first_rate_max * u(rng);
    double threshold = 0.0;
    for (int j = 0; j < J; ++j) {
        if (j > 0) {
            rate += cfg.rate_step_min + (cfg.rate_step_max - cfg.rate_step_min) * u(rng);
            threshold = j == 1 ? std::exp(cfg.threshold_log_mean + cfg.threshold_log_sd * z(rng))
                               : threshold * std::exp(0.3 + 0.9 * u(rng));
        }
        sched.brackets.push_back({threshold, std::clamp(rate + shift, 0.0, 0.9)});
    }
    sched.nonlabor_income = std::exp(cfg.nonlabor_log_mean + cfg.nonlabor_log_sd * z(rng));
    return budget_from_schedule(sched);
}

/// True coefficients per individual and their sample mean.
struct TruthRecord {
    std::vector<std::string> ids;
    std::vector<Vector> beta;
    Vector mean_beta;
};

struct SyntheticPanel {
    Panel panel;
    std::vector<std::vector<BudgetSet>> budgets; // [individual][period]
    std::vector<IndividualParams> individuals;
    TruthRecord truth;
    int base_year = 1977;
};

namespace detail {

// Stream tags for the per-cell generators.
inline constexpr std::uint64_t kParamsStream = 0;
inline constexpr std::uint64_t kBudgetStream = 1;
inline constexpr std::uint64_t kNoiseStream = 2;

inline Vector nan_aware_mean(const std::vector<Vector>& v)
{
    Vector sum = Vector::Zero(v.front().size());
    Eigen::VectorXi count = Eigen::VectorXi::Zero(v.front().size());
    for (const auto& b : v)
        for (Eigen::Index k = 0; k < b.size(); ++k)
            if (std::isfinite(b(k))) {
                sum(k) += b(k);
                ++count(k);
            }
    for (Eigen::Index k = 0; k < sum.size(); ++k)
        sum(k) = count(k) > 0 ? sum(k) / count(k) : std::numeric_limits<double>::quiet_NaN();
    return sum;
}

} // namespace detail

inline std::string synthetic_id(int i)
{
    std::string s = std::to_string(i);
    return "i" + std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

/// Generates a panel with known coefficients.
///
/// Reduced mode: y_it = b_it' beta_i + eps_it with beta_i built from the
/// individual's parameters. Structural mode (spec a only): y_it is the log
/// of utility_max_income with phi = exp(alpha_i t) and eta drawn from the
/// individual's stationary distribution; the recorded c_i is NaN because
/// the xi function is then not linear in general.
///
/// Every individual and period draws from its own keyed stream, so output
/// is identical for any thread count.
inline SyntheticPanel generate_panel(const DGPConfig& cfg)
{
    validate_config(cfg);
    const auto n = static_cast<std::size_t>(cfg.n);
    SyntheticPanel out;
    out.base_year = cfg.base_year;
    out.panel.resize(n);
    out.budgets.resize(n);
    out.individuals.resize(n);
    out.truth.ids.resize(n);
    out.truth.beta.resize(n);

    detail::parallel_for(
        n,
        [&](std::size_t i) {
            auto prng = detail::stream(cfg.seed, i, detail::kParamsStream);
            IndividualParams ind = draw_individual(cfg.population, prng);
            auto& series = out.panel[i];
            series.id = synthetic_id(static_cast<int>(i));
            series.rows.reserve(static_cast<std::size_t>(cfg.T));
            auto& budgets = out.budgets[i];
            budgets.reserve(static_cast<std::size_t>(cfg.T));

            Vector beta = ind.beta(cfg.spec);
            if (cfg.generator == Generator::Structural) beta(2) = std::numeric_limits<double>::quiet_NaN();

            for (int t = 0; t < cfg.T; ++t) {
                auto brng = detail::stream(cfg.seed, i, detail::kBudgetStream, static_cast<std::uint64_t>(t));
                BudgetSet b = endogenous_budget_draw(ind, t, brng, cfg.budgets);
                Observation obs;
                obs.x = regressors(b, t, cfg.spec);
                auto nrng = detail::stream(cfg.seed, i, detail::kNoiseStream, static_cast<std::uint64_t>(t));
                if (cfg.generator == Generator::Reduced) {
                    double sd = cfg.noise.sd;
                    if (cfg.noise.heteroskedastic) sd *= 0.5 + std::abs(obs.x.values(1));
                    obs.y = obs.x.values.dot(beta) + sd * std::normal_distribution<double>(0.0, 1.0)(nrng);
                } else {
                    const double eta = std::exp(ind.eta.draw_log(nrng));
                    const double phi = std::exp(ind.alpha * t);
                    obs.y = std::log(utility_max_income(b, ind.theta, eta, phi));
                }
                series.rows.push_back(std::move(obs));
                budgets.push_back(std::move(b));
            }
            out.truth.ids[i] = series.id;
            out.truth.beta[i] = std::move(beta);
            out.individuals[i] = ind;
        },
        cfg.threads);

    out.truth.mean_beta = detail::nan_aware_mean(out.truth.beta);
    return out;
}

/// Result of the Monte Carlo check of the telescoping xi structure for
/// two-segment budgets.
struct XiCheckResult {
    std::vector<double> gaps; // |MC mean - prediction| per held-out budget
    std::vector<double> ses;  // MC standard error of each gap
    double max_gap = 0.0;
    double max_ratio = 0.0;   // max gap / se (0 where both vanish)
    double intercept = 0.0;   // estimated a = E[ln eta]
    std::vector<double> grid; // xi argument nodes
    std::vector<double> xi;   // xi at the nodes, anchored to 0 at the midpoint
};

/// Reference two-segment budget whose first slope is varied to trace xi.
struct XiGrid {
    double second_slope = 0.5;
    double kink = 20000.0;
    double max_first_slope = 1.5;
};

struct XiCheckOptions {
    int nodes = 101;
    std::uint64_t seed = 7;
    std::optional<XiGrid> grid; // derived from the held-out budgets when absent
};

/// Estimates xi (up to a constant) from Monte Carlo means of ln Y on a
/// reference budget while its first slope varies, then predicts the mean
/// of ln Y on held-out two-segment budgets through
///   a + theta ln rho_2 + xi(ln K - theta ln rho_1) - xi(ln K - theta ln rho_2).
/// Estimation and held-out evaluation use independent draws of eta.
/// Held-out budgets need rho_1 >= rho_2; equal slopes are allowed.
inline XiCheckResult xi_structure_check(double theta, const EtaDistribution& eta,
                                        const std::vector<BudgetSet>& held_out, std::size_t mc_draws,
                                        const XiCheckOptions& opt = {})
{
    if (!(theta > 0.0)) throw DomainError("theta must be positive");
    if (held_out.empty()) throw DomainError("no held-out budgets");
    if (mc_draws < 2) throw DomainError("need at least two Monte Carlo draws");
    if (opt.nodes < 3) throw GridError("need at least three grid nodes");
    for (const auto& b : held_out) {
        if (b.size() != 2) throw DomainError("xi check needs two-segment budgets");
        if (!(b.segments[0].slope >= b.segments[1].slope) || !(b.segments[1].slope > 0.0) ||
            !(b.segments[0].right_kink > 0.0) || !std::isfinite(b.segments[0].right_kink))
            throw DomainError("held-out budget is not a convex two-segment set");
    }
    auto arg = [theta](double kink, double slope) { return std::log(kink) - theta * std::log(slope); };

    XiGrid g;
    if (opt.grid) {
        g = *opt.grid;
    } else {
        g.second_slope = kInfinity;
        g.kink = 0.0;
        for (const auto& b : held_out) {
            g.second_slope = std::min(g.second_slope, b.segments[1].slope);
            g.kink = std::max(g.kink, b.segments[0].right_kink);
        }
        const double v_top = arg(g.kink, g.second_slope);
        double v_low = v_top;
        for (const auto& b : held_out) v_low = std::min(v_low, arg(b.segments[0].right_kink, b.segments[0].slope));
        v_low -= 1e-3;
        g.max_first_slope = std::exp((std::log(g.kink) - v_low) / theta);
    }
    const double v_hi = arg(g.kink, g.second_slope);
    const double v_lo = arg(g.kink, g.max_first_slope);
    if (!(v_lo < v_hi)) throw GridError("degenerate xi grid");

    for (const auto& b : held_out) {
        const double v1 = arg(b.segments[0].right_kink, b.segments[0].slope);
        const double v2 = arg(b.segments[0].right_kink, b.segments[1].slope);
        if (v1 < v_lo || v2 > v_hi || v1 > v_hi || v2 < v_lo)
            throw GridError("held-out budget falls outside the xi grid");
    }

    const int m = opt.nodes;
    const double dv = (v_hi - v_lo) / (m - 1);
    XiCheckResult res;
    res.grid.resize(m);
    for (int k = 0; k < m; ++k) res.grid[k] = v_lo + dv * k;
    res.grid[m - 1] = v_hi;

    // Reference budget whose first-segment argument equals grid node k.
    auto reference = [&](int k) {
        const double rho1 = std::exp((std::log(g.kink) - res.grid[k]) / theta);
        BudgetSet b;
        b.segments = {{std::max(rho1, g.second_slope), g.kink, 1.0}, {g.second_slope, kInfinity, 1.0}};
        return b;
    };
    std::vector<BudgetSet> refs;
    refs.reserve(m);
    for (int k = 0; k < m; ++k) refs.push_back(reference(k));

    const double log_rho2_ref = std::log(g.second_slope);
    auto node_value = [&](int k, double eta_draw) {
        return std::log(utility_max_income(refs[k], theta, eta_draw)) - theta * log_rho2_ref;
    };

    std::vector<double> eta_est(mc_draws);
    {
        auto rng = detail::stream(opt.seed, 0xE57);
        for (auto& e : eta_est) e = std::exp(eta.draw_log(rng));
    }

    // g_k = E[ln Y | reference k] - theta ln rho_2 = a + xi(v_k) - xi(v_hi).
    std::vector<double> node_mean(m);
    detail::parallel_for(static_cast<std::size_t>(m), [&](std::size_t k) {
        double s = 0.0;
        for (double e : eta_est) s += node_value(static_cast<int>(k), e);
        node_mean[k] = s / static_cast<double>(mc_draws);
    });

    res.intercept = node_mean[m - 1];
    const int mid = (m - 1) / 2;
    res.xi.resize(m);
    for (int k = 0; k < m; ++k) res.xi[k] = node_mean[k] - node_mean[mid];

    struct Interp {
        int lo;
        double w; // weight on node lo + 1
    };
    auto locate = [&](double v) {
        int lo = std::clamp(static_cast<int>(std::floor((v - v_lo) / dv)), 0, m - 2);
        double w = std::clamp((v - res.grid[lo]) / (res.grid[lo + 1] - res.grid[lo]), 0.0, 1.0);
        return Interp{lo, w};
    };

    for (std::size_t h = 0; h < held_out.size(); ++h) {
        const auto& b = held_out[h];
        const double l1 = std::log(b.segments[0].right_kink);
        const double v1 = l1 - theta * std::log(b.segments[0].slope);
        const double v2 = l1 - theta * std::log(b.segments[1].slope);
        const Interp i1 = locate(v1);
        const Interp i2 = locate(v2);

        // Prediction minus theta ln rho_2 is a linear functional G of the
        // estimation draws: g_top + g(v1) - g(v2), interpolated.
        double g_sum = 0.0;
        double g_sq = 0.0;
        for (double e : eta_est) {
            const double top = node_value(m - 1, e);
            const double a1 = (1 - i1.w) * node_value(i1.lo, e) + i1.w * node_value(i1.lo + 1, e);
            const double a2 = (1 - i2.w) * node_value(i2.lo, e) + i2.w * node_value(i2.lo + 1, e);
            const double G = top + a1 - a2;
            g_sum += G;
            g_sq += G * G;
        }
        const double N = static_cast<double>(mc_draws);
        const double g_mean = g_sum / N;
        const double g_var = std::max(0.0, (g_sq - N * g_mean * g_mean) / (N - 1.0));

        auto rng = detail::stream(opt.seed, 0xE58, h);
        double y_sum = 0.0;
        double y_sq = 0.0;
        for (std::size_t d = 0; d < mc_draws; ++d) {
            const double y = std::log(utility_max_income(b, theta, std::exp(eta.draw_log(rng))));
            y_sum += y;
            y_sq += y * y;
        }
        const double y_mean = y_sum / N;
        const double y_var = std::max(0.0, (y_sq - N * y_mean * y_mean) / (N - 1.0));

        const double pred = theta * std::log(b.segments[1].slope) + g_mean;
        const double gap = std::abs(y_mean - pred);
        const double se = std::sqrt(g_var / N + y_var / N);
        res.gaps.push_back(gap);
        res.ses.push_back(se);
        res.max_gap = std::max(res.max_gap, gap);
        if (se > 0.0)
            res.max_ratio = std::max(res.max_ratio, gap / se);
        else if (gap > 0.0)
            res.max_ratio = kInfinity;
    }
    return res;
}

} // namespace eti
