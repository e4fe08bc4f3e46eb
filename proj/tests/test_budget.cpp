#include <eti/budget.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace eti;

namespace {

BudgetSet two_segment(double rho1, double rho2, double kink, double r1)
{
    return make_budget({rho1, rho2}, {kink}, r1);
}

} // namespace

TEST(BudgetFromSchedule, TwoBrackets)
{
    TaxSchedule s{{{0.0, 0.20}, {10000.0, 0.40}}, 5000.0};
    const auto b = budget_from_schedule(s);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_DOUBLE_EQ(b.segments[0].slope, 0.8);
    EXPECT_DOUBLE_EQ(b.segments[1].slope, 0.6);
    EXPECT_DOUBLE_EQ(b.segments[0].right_kink, 10000.0);
    EXPECT_EQ(b.segments[1].right_kink, kInfinity);
    EXPECT_DOUBLE_EQ(b.segments[0].virtual_income, 5000.0);
    // Consumption at the kink from either side: 5000 + 0.8 * 10000 = R_2 + 0.6 * 10000.
    EXPECT_NEAR(b.segments[1].virtual_income, 7000.0, 1e-9);
    EXPECT_TRUE(validate(b).empty());
}

TEST(BudgetFromSchedule, SingleZeroRateBracket)
{
    const auto b = budget_from_schedule({{{0.0, 0.0}}, 1.0});
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b.first().slope, 1.0);
    EXPECT_EQ(b.first().virtual_income, 1.0);
    EXPECT_EQ(b.first().right_kink, kInfinity);
}

TEST(BudgetFromSchedule, DecreasingRatesAreNonConvex)
{
    EXPECT_THROW(budget_from_schedule({{{0.0, 0.40}, {10000.0, 0.20}}, 5000.0}), ConvexityViolation);
}

TEST(BudgetFromSchedule, DomainErrors)
{
    EXPECT_THROW(budget_from_schedule({{{0.0, 0.2}}, 0.0}), DomainError);
    EXPECT_THROW(budget_from_schedule({{{0.0, 0.2}}, -5.0}), DomainError);
    EXPECT_THROW(budget_from_schedule({{}, 5.0}), DomainError);
    EXPECT_THROW(budget_from_schedule({{{100.0, 0.2}}, 5.0}), DomainError);
    EXPECT_THROW(budget_from_schedule({{{0.0, 0.2}, {0.0, 0.3}}, 5.0}), DomainError);
    EXPECT_THROW(budget_from_schedule({{{0.0, 1.0}}, 5.0}), DomainError);
}

TEST(BudgetFromSchedule, EqualRatesMerge)
{
    const auto b = budget_from_schedule({{{0.0, 0.1}, {5000.0, 0.1}, {9000.0, 0.3}}, 100.0});
    ASSERT_EQ(b.size(), 2u);
    EXPECT_DOUBLE_EQ(b.segments[0].right_kink, 9000.0);
    EXPECT_TRUE(validate(b).empty());
}

TEST(BudgetFromSchedule, RandomSchedulesAlwaysValidate)
{
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 2000; ++rep) {
        TaxSchedule s;
        s.nonlabor_income = 1.0 + 1e5 * u(rng);
        const int J = 1 + static_cast<int>(u(rng) * 6);
        double thr = 0.0, rate = 0.3 * u(rng);
        for (int j = 0; j < J; ++j) {
            s.brackets.push_back({thr, rate});
            thr += 1.0 + 5e4 * u(rng);
            rate = std::min(0.99, rate + (u(rng) < 0.2 ? 0.0 : 0.2 * u(rng)));
        }
        const auto b = budget_from_schedule(s);
        EXPECT_TRUE(validate(b).empty());
        for (std::size_t j = 0; j + 1 < b.size(); ++j) {
            const auto& l = b.segments[j];
            const auto& r = b.segments[j + 1];
            EXPECT_LE(std::abs(r.virtual_income - l.virtual_income - (l.slope - r.slope) * l.right_kink),
                      1e-9 * std::max(1.0, l.virtual_income));
            EXPECT_GT(r.virtual_income, l.virtual_income);
        }
    }
}

TEST(Validate, ReportsViolations)
{
    EXPECT_TRUE(validate(two_segment(0.8, 0.6, 10000, 5000)).empty());

    // Continuity-consistent but with increasing slopes.
    EXPECT_EQ(validate(two_segment(0.5, 0.8, 1000, 5000)),
              std::vector<Violation>{Violation::ConvexityViolation});

    auto broken = two_segment(0.8, 0.6, 10000, 5000);
    broken.segments[1].virtual_income += 1.0;
    EXPECT_EQ(validate(broken), std::vector<Violation>{Violation::RecursionViolation});

    EXPECT_EQ(validate(BudgetSet{}), std::vector<Violation>{Violation::Empty});

    auto bounded = two_segment(0.8, 0.6, 10000, 5000);
    bounded.segments[1].right_kink = 20000;
    EXPECT_EQ(validate(bounded), std::vector<Violation>{Violation::SentinelViolation});

    auto neg = make_budget({0.8, 0.6, 0.4}, {1000, 500}, 10.0);
    const auto v = validate(neg);
    EXPECT_NE(std::find(v.begin(), v.end(), Violation::KinkOrderViolation), v.end());
}

TEST(RegressorsSpecA, Examples)
{
    auto r = regressors_spec_a(two_segment(1.0, 0.5, 2.0, 1.0), 3);
    ASSERT_EQ(r.values.size(), 4);
    EXPECT_EQ(r.values(0), 1.0);
    EXPECT_NEAR(r.values(1), -0.693147, 1e-6);
    EXPECT_NEAR(r.values(2), -0.693147, 1e-6);
    EXPECT_EQ(r.values(3), 3.0);
    EXPECT_EQ(r.spec, Spec::A);

    auto lin = regressors_spec_a(make_budget({0.5}, {}, 1.0), 0);
    EXPECT_NEAR(lin.values(1), -0.693147, 1e-6);
    EXPECT_EQ(lin.values(2), 0.0);
    EXPECT_EQ(lin.values(3), 0.0);

    auto r2 = regressors_spec_a(two_segment(0.8, 0.6, 10000, 5000), 1);
    EXPECT_NEAR(r2.values(1), -0.510826, 1e-6);
    EXPECT_NEAR(r2.values(2), -0.287682, 1e-6);
    EXPECT_EQ(r2.values(3), 1.0);
}

TEST(RegressorsSpecB, Examples)
{
    auto b = two_segment(1.0, 0.5, 2.0, 1.0);
    EXPECT_DOUBLE_EQ(b.segments[1].virtual_income, 2.0);
    auto r = regressors_spec_b(b, 4);
    ASSERT_EQ(r.values.size(), 6);
    EXPECT_NEAR(r.values(1), -0.693147, 1e-6);
    EXPECT_NEAR(r.values(2), std::log(2.0), 1e-15);
    EXPECT_NEAR(r.values(3), -0.693147, 1e-6);
    EXPECT_NEAR(r.values(4), std::log(2.0), 1e-15);
    EXPECT_EQ(r.values(5), 4.0);

    auto unit = regressors_spec_b(make_budget({1.0}, {}, 1.0), 0);
    EXPECT_EQ(unit.values, (Eigen::VectorXd(6) << 1, 0, 0, 0, 0, 0).finished());
}

TEST(Regressors, DomainErrors)
{
    auto b = two_segment(0.8, 0.6, 10000, 5000);
    b.segments[1].slope = 0.0;
    EXPECT_THROW(regressors_spec_a(b, 0), DomainError);
    auto c = two_segment(0.8, 0.6, 10000, 5000);
    c.segments[0].virtual_income = -1.0;
    EXPECT_THROW(regressors_spec_b(c, 0), DomainError);
    EXPECT_NO_THROW(regressors_spec_a(c, 0));
}

TEST(Regressors, SpecAIsSubsetOfSpecB)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
        const int J = 1 + static_cast<int>(u(rng) * 4);
        std::vector<double> slopes{0.3 + 0.9 * u(rng)};
        std::vector<double> kinks;
        for (int j = 1; j < J; ++j) {
            slopes.push_back(slopes.back() * (0.3 + 0.6 * u(rng)));
            kinks.push_back((kinks.empty() ? 0.0 : kinks.back()) + 100 + 1e4 * u(rng));
        }
        const auto b = make_budget(slopes, kinks, 10 + 1e4 * u(rng));
        const int t = static_cast<int>(u(rng) * 20);
        const auto a = regressors_spec_a(b, t);
        const auto bb = regressors_spec_b(b, t);
        EXPECT_EQ(a.values(0), bb.values(0));
        EXPECT_EQ(a.values(1), bb.values(1));
        EXPECT_EQ(a.values(2), bb.values(3));
        EXPECT_EQ(a.values(3), bb.values(5));
        if (J == 1) {
            EXPECT_EQ(bb.values(3), 0.0);
            EXPECT_EQ(bb.values(4), 0.0);
        }
    }
}
