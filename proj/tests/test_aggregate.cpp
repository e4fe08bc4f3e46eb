#include <eti/aggregate.hpp>

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace eti;
using eti::test::make_series;

namespace {

/// Heterogeneous panel of k-dimensional random series, each with invertible Q.
Panel random_panel(std::mt19937_64& rng, int n, int T, int k)
{
    Panel p;
    for (int i = 0; i < n; ++i) p.push_back(test::random_series(rng, T, k, "p" + std::to_string(i)));
    return p;
}

std::vector<RidgeFit> fits_for(const Panel& p, double lambda, PenaltyMode mode = PenaltyMode::Scaled)
{
    std::vector<RidgeFit> out;
    for (const auto& s : p) out.push_back(ridge_fit(s, lambda, mode));
    return out;
}

RidgeFit fake_fit(const Eigen::MatrixXd& W, double lambda = 1.0)
{
    RidgeFit f;
    f.W = W;
    f.Q = Eigen::MatrixXd::Identity(W.rows(), W.cols());
    f.S = Eigen::VectorXd::Zero(W.rows());
    f.beta_hat = Eigen::VectorXd::Zero(W.rows());
    f.lambda = lambda;
    return f;
}

} // namespace

TEST(DefaultGrid, MatchesReferenceTable)
{
    const std::vector<double> expect{0, 1e-7, 1e-6, 1e-5, 1e-4, 0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 1, 2, 3};
    EXPECT_EQ(default_lambda_grid(), expect);
}

TEST(Debias, SingleIndividualRecoversOls)
{
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 30; ++rep) {
        const auto s = test::random_series(rng, 9, 4);
        const auto ols = test::ols_oracle(s);
        for (double lambda : {1e-7, 0.01, 0.5, 3.0, 100.0}) {
            const auto f = std::vector<RidgeFit>{ridge_fit(s, lambda)};
            const auto rep_ = debias(f);
            EXPECT_LE((rep_.beta_tilde - ols).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, ols.norm()));
            EXPECT_LE(variance_alt_check(f, rep_), 1e-20);
        }
    }
}

TEST(Debias, IdenticalExactFits)
{
    const Eigen::Vector3d beta(0.5, -1.0, 2.0);
    Panel p;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> z(0, 1);
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (int t = 0; t < 6; ++t) {
        rows.push_back({1.0, z(rng), z(rng)});
        y.push_back(beta.dot(Eigen::Vector3d(rows.back().data())));
    }
    for (int i = 0; i < 5; ++i) p.push_back(make_series(rows, y, "s" + std::to_string(i)));
    for (double lambda : default_lambda_grid()) {
        const auto r = debias(fits_for(p, lambda));
        EXPECT_LE((r.beta_tilde - beta).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LE(r.V_hat.cwiseAbs().maxCoeff(), 1e-18);
        EXPECT_LE(r.std_errors.maxCoeff(), 1e-9);
    }
}

TEST(Debias, LambdaZeroIsAverageOfOls)
{
    std::mt19937_64 rng(3);
    const auto p = random_panel(rng, 60, 10, 4);
    Eigen::VectorXd oracle = Eigen::VectorXd::Zero(4);
    for (const auto& s : p) oracle += test::ols_oracle(s);
    oracle /= static_cast<double>(p.size());
    const auto r = debias(fits_for(p, 0.0));
    EXPECT_LE((r.beta_tilde - oracle).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((r.W_bar - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Debias, HomogeneousExactDataAtEveryLambda)
{
    // Each individual has its own regressors; y = b' beta exactly.
    const Eigen::Vector4d beta(9.5, 0.6, 0.2, 0.016);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0, 1);
    Panel p;
    for (int i = 0; i < 40; ++i) {
        std::vector<std::vector<double>> rows;
        std::vector<double> y;
        for (int t = 0; t < 8; ++t) {
            rows.push_back({1.0, -0.6 + 0.2 * z(rng), -0.3 + 0.2 * z(rng), static_cast<double>(t)});
            y.push_back(beta.dot(Eigen::Vector4d(rows.back().data())));
        }
        p.push_back(make_series(rows, y, std::to_string(i)));
    }
    for (auto mode : {PenaltyMode::Unit, PenaltyMode::Scaled})
        for (double lambda : default_lambda_grid()) {
            const auto r = debias(fits_for(p, lambda, mode));
            EXPECT_LE((r.beta_tilde - beta).cwiseAbs().maxCoeff(), 1e-8) << "lambda " << lambda;
        }
}

TEST(Debias, VarianceFormulasAgree)
{
    std::mt19937_64 rng(5);
    const auto p = random_panel(rng, 80, 7, 5);
    for (double lambda : {0.0, 1e-4, 0.1, 2.0}) {
        const auto f = fits_for(p, lambda);
        const auto r = debias(f);
        const double scale = std::max(1.0, r.V_hat.cwiseAbs().maxCoeff());
        EXPECT_LE(variance_alt_check(f, r), 1e-12 * scale);
        EXPECT_LE((r.V_hat - r.V_hat.transpose()).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r.V_hat).eigenvalues().minCoeff(),
                  -1e-12 * scale);
        EXPECT_TRUE(r.std_errors.allFinite());
        for (Eigen::Index k = 0; k < r.std_errors.size(); ++k)
            EXPECT_NEAR(r.std_errors(k), std::sqrt(r.V_hat(k, k) / 80.0), 1e-15);
    }
}

TEST(Debias, DegreesOfFreedomCorrection)
{
    std::mt19937_64 rng(6);
    const auto f = fits_for(random_panel(rng, 10, 8, 3), 0.1);
    const auto plain = debias(f);
    const auto corr = debias(f, {true});
    EXPECT_TRUE(corr.V_hat.isApprox(plain.V_hat * 10.0 / 9.0, 1e-14));
    EXPECT_LE(variance_alt_check(f, corr, {true}), 1e-12 * std::max(1.0, corr.V_hat.norm()));
}

TEST(Debias, PermutationInvariance)
{
    std::mt19937_64 rng(7);
    auto f = fits_for(random_panel(rng, 100, 9, 4), 0.01);
    const auto a = debias(f);
    std::shuffle(f.begin(), f.end(), rng);
    const auto b = debias(f);
    EXPECT_LE((a.beta_tilde - b.beta_tilde).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.V_hat - b.V_hat).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.W_bar - b.W_bar).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Debias, Errors)
{
    EXPECT_THROW(debias(std::vector<RidgeFit>{}), DomainError);

    // Every individual's last regressor is identically zero: W_i kill e_3.
    Panel p;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z(0, 1);
    for (int i = 0; i < 5; ++i) {
        std::vector<std::vector<double>> rows;
        std::vector<double> y;
        for (int t = 0; t < 6; ++t) {
            rows.push_back({1.0, z(rng), 0.0});
            y.push_back(z(rng));
        }
        p.push_back(make_series(rows, y, std::to_string(i)));
    }
    EXPECT_THROW(debias(fits_for(p, 0.1)), NonInvertibleWbar);
    EXPECT_THROW(zeta_diagnostic(fits_for(p, 0.1)), NonInvertibleWbar);

    std::mt19937_64 r2(9);
    auto mixed = fits_for(random_panel(r2, 2, 6, 3), 0.1);
    mixed[1].lambda = 0.2;
    EXPECT_THROW(debias(mixed), DomainError);
}

TEST(Sweep, ReusesMomentsAndRecordsErrors)
{
    std::mt19937_64 rng(10);
    auto p = random_panel(rng, 20, 8, 3);
    for (auto& s : p)
        for (auto& r : s.rows) r.x.spec = Spec::A; // tag only; 3-dim rows are fine for the sweep
    const auto entries = sweep(p, default_lambda_grid(), Spec::A);
    ASSERT_EQ(entries.size(), default_lambda_grid().size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        EXPECT_EQ(entries[i].lambda, default_lambda_grid()[i]);
        ASSERT_TRUE(entries[i].report.has_value());
        const auto direct = debias(fits_for(p, entries[i].lambda));
        EXPECT_EQ(entries[i].report->beta_tilde, direct.beta_tilde);
        EXPECT_EQ(entries[i].report->V_hat, direct.V_hat);
    }

    // A constant regressor makes lambda = 0 singular but later entries succeed.
    for (auto& r : p[3].rows) r.x.values(2) = 2.0;
    const auto e2 = sweep(p, {0.0, 0.1}, Spec::A);
    EXPECT_FALSE(e2[0].report.has_value());
    EXPECT_EQ(e2[0].error_kind, ErrorKind::numerical);
    EXPECT_NE(e2[0].error->find("'p3'"), std::string::npos);
    EXPECT_TRUE(e2[1].report.has_value());

    EXPECT_THROW(sweep(p, {}, Spec::A), ConfigError);
    EXPECT_THROW(sweep(p, {0.1, 0.0}, Spec::A), ConfigError);
    EXPECT_THROW(sweep(p, {0.1}, Spec::B), DomainError);
}

TEST(Sweep, ThreadCountDoesNotChangeResults)
{
    std::mt19937_64 rng(11);
    const auto p = random_panel(rng, 57, 8, 4);
    SweepOptions one;
    one.threads = 1;
    SweepOptions four;
    four.threads = 4;
    const auto a = sweep(p, {0.0, 0.01, 1.0}, Spec::A, one);
    const auto b = sweep(p, {0.0, 0.01, 1.0}, Spec::A, four);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].report->beta_tilde, b[i].report->beta_tilde);
        EXPECT_EQ(a[i].report->V_hat, b[i].report->V_hat);
    }
}

TEST(FirstSignificant, PicksFirstAscending)
{
    std::vector<SweepEntry> e(3);
    for (int i = 0; i < 3; ++i) {
        e[i].lambda = i;
        e[i].report = DebiasReport{};
        e[i].report->beta_tilde = Eigen::Vector2d(0, 1.0);
        e[i].report->std_errors = Eigen::Vector2d(1, 1.0 - 0.2 * i);
    }
    e[0].report.reset();
    e[0].error = "x";
    EXPECT_EQ(first_significant(e, 1, 1.96), std::nullopt);
    e[2].report->std_errors(1) = 0.5;
    EXPECT_EQ(first_significant(e, 1, 1.96), std::optional<std::size_t>(2));
}

TEST(Zeta, ZeroAtLambdaZero)
{
    std::mt19937_64 rng(12);
    const auto d = zeta_diagnostic(fits_for(random_panel(rng, 30, 8, 4), 0.0));
    EXPECT_LE(d.zeta.maxCoeff(), 1e-10);
    ASSERT_EQ(d.quantiles.size(), 101u);
    EXPECT_DOUBLE_EQ(d.quantiles.front().first, 0.0);
    EXPECT_DOUBLE_EQ(d.quantiles.back().first, 1.0);
}

TEST(Zeta, BoundAttainedAtReversedSelector)
{
    // W_bar = I; individual 0 maps e_theta to -e_theta.
    std::vector<RidgeFit> f{fake_fit(Eigen::Vector2d(1, -1).asDiagonal()),
                            fake_fit(Eigen::Vector2d(1, 3).asDiagonal())};
    const auto d = zeta_diagnostic(f, 1);
    EXPECT_NEAR(d.zeta(0), 1.0, 1e-15);
    EXPECT_NEAR(d.zeta(1), 2.0 / std::sqrt(20.0), 1e-15);
    EXPECT_NEAR(d.quantiles[50].second, 0.5 * (1.0 + 2.0 / std::sqrt(20.0)), 1e-15);
}

TEST(Zeta, AlwaysInUnitInterval)
{
    std::mt19937_64 rng(13);
    std::normal_distribution<double> z(0, 1);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<RidgeFit> f;
        for (int i = 0; i < 7; ++i) f.push_back(fake_fit(Eigen::MatrixXd::Random(4, 4) * 3.0));
        const auto d = zeta_diagnostic(f, rep % 4);
        EXPECT_GE(d.zeta.minCoeff(), 0.0);
        EXPECT_LE(d.zeta.maxCoeff(), 1.0);
    }
    const auto p = random_panel(rng, 40, 6, 4);
    for (double lambda : {1e-7, 0.1, 10.0}) {
        const auto d = zeta_diagnostic(fits_for(p, lambda));
        EXPECT_GE(d.zeta.minCoeff(), 0.0);
        EXPECT_LE(d.zeta.maxCoeff(), 1.0);
        EXPECT_TRUE(std::is_sorted(d.quantiles.begin(), d.quantiles.end(),
                                   [](auto& a, auto& b) { return a.second < b.second; }));
    }
}

TEST(EmpiricalQuantile, LinearInterpolation)
{
    EXPECT_DOUBLE_EQ(empirical_quantile({3, 1, 2, 4}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(empirical_quantile({3, 1, 2, 4}, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(empirical_quantile({3, 1, 2, 4}, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(empirical_quantile({5}, 0.3), 5.0);
}

TEST(FixedEffectsOracle, HandExample)
{
    // A: x = 0,1,2; y = 1,2,4 (Sxy 3, Sxx 2). B: x = 1,3; y = 0,4 (Sxy 4, Sxx 2).
    Panel p{make_series({{1, 0}, {1, 1}, {1, 2}}, {1, 2, 4}, "A"), make_series({{1, 1}, {1, 3}}, {0, 4}, "B")};
    const auto b = fixed_effects_oracle(p);
    ASSERT_EQ(b.size(), 1);
    EXPECT_NEAR(b(0), 7.0 / 4.0, 1e-14);
}

TEST(FixedEffectsOracle, HomogeneousSlopes)
{
    std::mt19937_64 rng(14);
    std::normal_distribution<double> z(0, 1);
    const Eigen::Vector2d slopes(0.7, -0.4);
    Panel p;
    for (int i = 0; i < 10; ++i) {
        const double a = 3 * z(rng);
        std::vector<std::vector<double>> rows;
        std::vector<double> y;
        for (int t = 0; t < 5; ++t) {
            rows.push_back({1.0, z(rng), z(rng)});
            y.push_back(a + slopes(0) * rows.back()[1] + slopes(1) * rows.back()[2]);
        }
        p.push_back(make_series(rows, y, std::to_string(i)));
    }
    EXPECT_LE((fixed_effects_oracle(p) - slopes).cwiseAbs().maxCoeff(), 1e-12);

    Panel flat{make_series({{1, 2}, {1, 2}}, {1, 3})};
    EXPECT_THROW(fixed_effects_oracle(flat), SingularSystem);
}

TEST(FixedEffectsOracle, LargeLambdaLimit)
{
    std::mt19937_64 rng(15);
    const auto p = random_panel(rng, 30, 10, 3);
    const auto fe = fixed_effects_oracle(p);
    const auto r = debias(fits_for(p, 1e6, PenaltyMode::Unit));
    for (Eigen::Index k = 0; k < fe.size(); ++k) EXPECT_NEAR(r.beta_tilde(k + 1), fe(k), 1e-3 * std::abs(fe(k)));
}

TEST(IncomeEffectInterval, ReferenceNumbers)
{
    const auto ci = income_effect_interval(0.0074, 0.0355, 5.96, 1.96);
    EXPECT_NEAR(ci.elasticity_low, -0.0622, 5e-5);
    EXPECT_NEAR(ci.elasticity_high, 0.0770, 5e-5);
    EXPECT_NEAR(ci.effect_low, -0.371, 5e-4);
    EXPECT_NEAR(ci.effect_high, 0.459, 5e-4);

    const auto deg = income_effect_interval(0.2, 0.0, 5.0);
    EXPECT_DOUBLE_EQ(deg.effect_low, 1.0);
    EXPECT_DOUBLE_EQ(deg.effect_high, 1.0);

    EXPECT_THROW(income_effect_interval(0.1, -1.0, 5.0), DomainError);
    EXPECT_THROW(income_effect_interval(0.1, 1.0, 0.0), DomainError);
}
