#include "ccpo/credit.hpp"
#include "ccpo/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

using namespace ccpo;

namespace {

// Straight-line reference for within-group normalization (sample std, N - 1).
std::vector<double> reference_advantage(const std::vector<double>& r, double eps) {
    long double mean = 0;
    for (double x : r) mean += x;
    mean /= r.size();
    long double ss = 0;
    for (double x : r) ss += (x - mean) * (x - mean);
    const long double sd = std::sqrt(ss / (r.size() - 1));
    std::vector<double> out;
    for (double x : r) out.push_back(static_cast<double>((x - mean) / (sd + eps)));
    return out;
}

std::vector<double> random_values(Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) x = lo + (hi - lo) * rng.uniform();
    return v;
}

}  // namespace

TEST(MarginalContribution, Examples) {
    EXPECT_EQ(marginal_contribution(1, 0), 1.0);
    EXPECT_EQ(marginal_contribution(1, 1), 0.0);
    EXPECT_EQ(marginal_contribution(0, 1), -1.0);
    const auto mc = make_contribution(2, 7, 1.0, 0.0);
    EXPECT_EQ(mc.agent_id, 2u);
    EXPECT_EQ(mc.rollout_id, 7u);
    EXPECT_EQ(mc.delta, 1.0);
}

TEST(MarginalContribution, RejectsNonFinite) {
    EXPECT_THROW(marginal_contribution(std::nan(""), 0), InvalidInput);
    EXPECT_THROW(marginal_contribution(0, std::numeric_limits<double>::infinity()), InvalidInput);
}

TEST(MarginalContribution, BoundedForUnitRewards) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double a = rng.uniform(), b = rng.uniform();
        const double d = marginal_contribution(a, b);
        EXPECT_EQ(d, a - b);
        EXPECT_LE(std::abs(d), 1.0);
    }
}

TEST(RunningStats, MakeValidates) {
    EXPECT_THROW(RunningStats::make(1.0, 50), InvalidInput);
    EXPECT_THROW(RunningStats::make(0.0, 50), InvalidInput);
    EXPECT_THROW(RunningStats::make(0.5, 0), InvalidInput);
    const auto s = RunningStats::make(0.99, 50);
    EXPECT_EQ(s.decay, 0.99);
    EXPECT_EQ(s.min_samples, 50u);
    EXPECT_EQ(s.observed_count, 0u);
}

TEST(EmaUpdate, FirstStepArithmetic) {
    const std::vector<double> batch{0.5, 0.5};
    const auto s = ema_update(RunningStats::make(0.99, 50), batch);
    EXPECT_NEAR(s.mean, 0.005, 1e-15);
    EXPECT_EQ(s.variance, 0.0);
    EXPECT_EQ(s.observed_count, 2u);
}

TEST(EmaUpdate, PopulationVarianceOfBatch) {
    // batch [0, 1]: population variance 0.25 (sample would be 0.5).
    auto s = RunningStats::make(0.5, 50);
    s = ema_update(s, std::vector<double>{0.0, 1.0});
    EXPECT_DOUBLE_EQ(s.mean, 0.25);
    EXPECT_DOUBLE_EQ(s.variance, 0.125);
}

TEST(EmaUpdate, FixedPoint) {
    auto s = RunningStats::make(0.9, 50);
    s.mean = 0.5;
    s.variance = 0.25;
    const auto t = ema_update(s, std::vector<double>{0.0, 1.0});
    EXPECT_DOUBLE_EQ(t.mean, 0.5);
    EXPECT_DOUBLE_EQ(t.variance, 0.25);
}

TEST(EmaUpdate, GeometricSeries) {
    auto s = RunningStats::make(0.99, 50);
    const std::vector<double> ones{1.0};
    for (int t = 1; t <= 300; ++t) {
        s = ema_update(s, ones);
        EXPECT_NEAR(s.mean, 1.0 - std::pow(0.99, t), 1e-12);
    }
    EXPECT_EQ(s.observed_count, 300u);
}

TEST(EmaUpdate, RejectsBadBatches) {
    const auto s = RunningStats::make(0.99, 50);
    EXPECT_THROW(ema_update(s, std::vector<double>{}), InvalidInput);
    EXPECT_THROW(ema_update(s, std::vector<double>{1.0, std::nan("")}), InvalidInput);
}

TEST(EmaUpdate, PropertyGeometricConvergenceAndNonNegativeVariance) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const double decay = 0.05 + 0.9 * rng.uniform();
        auto s = RunningStats::make(decay, 1);
        s.mean = 4.0 * rng.uniform() - 2.0;
        s.variance = rng.uniform();
        const double m0 = s.mean, v0 = s.variance;
        // Two-point batch with population mean m and variance v.
        const double m = 2.0 * rng.uniform() - 1.0, v = rng.uniform();
        const std::vector<double> batch{m - std::sqrt(v), m + std::sqrt(v)};
        const double bm = (batch[0] + batch[1]) / 2;
        const double bv = ((batch[0] - bm) * (batch[0] - bm) + (batch[1] - bm) * (batch[1] - bm)) / 2;
        const int steps = 1 + static_cast<int>(rng.below(60));
        for (int t = 0; t < steps; ++t) {
            s = ema_update(s, batch);
            ASSERT_GE(s.variance, 0.0);
        }
        EXPECT_NEAR(std::abs(s.mean - bm), std::abs(m0 - bm) * std::pow(decay, steps), 1e-12);
        EXPECT_NEAR(std::abs(s.variance - bv), std::abs(v0 - bv) * std::pow(decay, steps), 1e-12);
    }
}

TEST(Standardize, IdentityBeforeActivation) {
    auto s = RunningStats::make(0.99, 50);
    s.mean = 0.3;
    s.variance = 4.0;
    s.observed_count = 49;
    EXPECT_EQ(standardize(0.7, s), 0.7);
    s.observed_count = 50;
    EXPECT_NEAR(standardize(0.7, s), 0.4 / (2.0 + 1e-8), 1e-15);
}

TEST(Standardize, Examples) {
    auto s = RunningStats::make(0.99, 1);
    s.observed_count = 10;
    s.mean = 0.25;
    s.variance = 0.5;
    EXPECT_EQ(standardize(0.25, s), 0.0);
    s.mean = 0.0;
    s.variance = 1.0;
    EXPECT_NEAR(standardize(2.0, s, 1e-8), 2.0 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(standardize(2.0, s, 1e-8), 2.0, 1e-7);
}

TEST(Shape, Examples) {
    EXPECT_EQ(shape(0.0, 3.0), 0.0);
    EXPECT_NEAR(shape(1.0, 1.0), 0.761594, 1e-6);
    const double hi = shape(1e6, 1.0), lo = shape(-1e6, 1.0);
    EXPECT_LT(hi, 1.0);
    EXPECT_GT(lo, -1.0);
    EXPECT_GT(hi, 0.999999);
    EXPECT_EQ(hi, -lo);
    EXPECT_THROW(shape(1.0, 0.0), InvalidInput);
}

TEST(Shape, TanhOracleFromSeries) {
    // tanh(1) = (e^2 - 1) / (e^2 + 1), with e^2 from its Taylor series.
    long double e2 = 0, term = 1;
    for (int k = 0; k < 40; ++k) {
        e2 += term;
        term *= 2.0L / (k + 1);
    }
    EXPECT_NEAR(shape(1.0, 1.0), static_cast<double>((e2 - 1) / (e2 + 1)), 1e-15);
}

TEST(Shape, PropertyBoundedOddMonotone) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double z = (rng.uniform() - 0.5) * std::pow(10.0, 6.0 * rng.uniform());
        const double alpha = 0.01 + 5.0 * rng.uniform();
        const double r = shape(z, alpha);
        EXPECT_LT(std::abs(r), 1.0) << z;
        EXPECT_EQ(shape(-z, alpha), -r);
        EXPECT_LE(shape(z - 1e-3, alpha), r);
    }
}

TEST(GroupAdvantage, Examples) {
    const auto a = group_advantage(std::vector<double>{1, 0, 0, 1});
    ASSERT_EQ(a.size(), 4u);
    const double expected[] = {0.866025, -0.866025, -0.866025, 0.866025};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(a[i], expected[i], 1e-6);
    const auto b = group_advantage(std::vector<double>{1, 0});
    EXPECT_NEAR(b[0], 0.707106, 1e-6);
    EXPECT_NEAR(b[1], -0.707106, 1e-6);
    for (double x : group_advantage(std::vector<double>{0.3, 0.3, 0.3, 0.3})) EXPECT_EQ(x, 0.0);
}

TEST(GroupAdvantage, RejectsSingletons) {
    EXPECT_THROW(group_advantage(std::vector<double>{1.0}), InvalidInput);
    EXPECT_THROW(group_advantage(std::vector<double>{}), InvalidInput);
}

TEST(GroupAdvantage, PropertyAgainstReference) {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(15);
        auto r = random_values(rng, n, -1, 1);
        const auto got = group_advantage(r);
        const auto want = reference_advantage(r, kDefaultEpsilon);
        ASSERT_EQ(got.size(), n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], want[i], 1e-9);

        // Zero mean when the input spread is well above epsilon.
        const double m = std::accumulate(got.begin(), got.end(), 0.0) / n;
        EXPECT_LE(std::abs(m), 1e-7);

        // Shift invariance.
        const double c = 10.0 * (rng.uniform() - 0.5);
        for (double& x : r) x += c;
        const auto shifted = group_advantage(r);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(shifted[i], got[i], 1e-9);

        // Constant groups give exact zeros.
        const std::vector<double> flat(n, r[0]);
        for (double x : group_advantage(flat)) EXPECT_EQ(x, 0.0);
    }
}

TEST(ShapedAdvantages, ComposesShapeAndGroup) {
    const auto stats = RunningStats::make(0.99, 50);
    const auto batch = shaped_advantages(std::vector<double>{1, 0, 0, 1}, stats, {1.0, 1e-8});
    EXPECT_NEAR(batch.shaped_rewards[0], 0.761594, 1e-6);
    EXPECT_EQ(batch.shaped_rewards[1], 0.0);
    EXPECT_NEAR(batch.advantages[0], 0.866025, 1e-6);
    EXPECT_NEAR(batch.advantages[1], -0.866025, 1e-6);
    EXPECT_EQ(batch.advantages.size(), batch.shaped_rewards.size());
}

TEST(ClippedSurrogate, Examples) {
    EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, 1.0, 0.2), -1.2);
    EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, -1.0, 0.2), 0.8);
    for (double a : {-2.0, -0.3, 0.0, 0.7, 5.0}) EXPECT_EQ(clipped_surrogate(1.0, a, 0.2), -a);
    EXPECT_THROW(clipped_surrogate(0.0, 1.0, 0.2), InvalidInput);
    EXPECT_THROW(clipped_surrogate(-1.0, 1.0, 0.2), InvalidInput);
}

TEST(ClippedSurrogate, PropertyFlatOnceClipBinds) {
    Rng rng(5);
    const double h = 1e-6;
    for (int i = 0; i < 500; ++i) {
        const double eps = 0.05 + 0.4 * rng.uniform();
        const double a = 0.1 + 3.0 * rng.uniform();
        // Positive advantage above the upper clip, negative advantage below the lower clip.
        const double up = 1.0 + eps + 0.01 + rng.uniform();
        const double down = (1.0 - eps - 0.01) * (0.05 + 0.9 * rng.uniform());
        const double d_up = (clipped_surrogate(up + h, a, eps) - clipped_surrogate(up - h, a, eps)) / (2 * h);
        const double d_down = (clipped_surrogate(down + h, -a, eps) - clipped_surrogate(down - h, -a, eps)) / (2 * h);
        EXPECT_LE(std::abs(d_up), 1e-9);
        EXPECT_LE(std::abs(d_down), 1e-9);
        EXPECT_EQ(clipped_surrogate_slope(up, a, eps), 0.0);
        EXPECT_EQ(clipped_surrogate_slope(down, -a, eps), 0.0);
        // Inside the trust region the objective slope is the advantage.
        const double inside = 1.0 - 0.99 * eps + 1.98 * eps * rng.uniform();
        EXPECT_EQ(clipped_surrogate_slope(inside, a, eps), a);
        EXPECT_NEAR(-(clipped_surrogate(inside + h, a, eps) - clipped_surrogate(inside - h, a, eps)) / (2 * h), a, 1e-6);
    }
}
