#include "ccpo/oracles/battery.hpp"
#include "ccpo/oracles/scenario.hpp"
#include "ccpo/oracles/trust_region.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <variant>
#include <vector>

using namespace ccpo;
using namespace ccpo::oracles;

namespace {

// Claims an outcome space too large to enumerate.
struct HugeScenario {
    std::string name() const { return "huge"; }
    std::size_t dimension() const { return 2; }
    std::size_t outcome_count() const { return 1'000'001; }
    std::vector<Outcome> enumerate() const { return {}; }
    Draw sample(Rng&) const { return {}; }
    HugeScenario with_active_logits(std::span<const double>) const { return *this; }
};

// Both partners are always right, so the team wins whatever the active voter says.
VotingScenario constant_reward_scenario() {
    const auto env = make_pivotal_env();
    return VotingScenario("constant", env,
                          {voter_with_accuracy(env, 1.0), voter_with_accuracy(env, 1.0), make_voter_policy(env)}, 0, 2);
}

double max_z(const McEstimate& mc, const std::vector<double>& target) {
    double worst = 0.0;
    for (std::size_t d = 0; d < target.size(); ++d) {
        const double diff = std::abs(mc.mean[d] - target[d]);
        if (diff <= 1e-12) continue;
        worst = std::max(worst, diff / mc.standard_error[d]);
    }
    return worst;
}

}  // namespace

TEST(ExactGradient, BanditClosedForm) {
    const auto g = exact_gradient(bandit_scenario());
    ASSERT_EQ(g.size(), 2u);
    EXPECT_NEAR(g[0], 0.25, 1e-15);
    EXPECT_NEAR(g[1], -0.25, 1e-15);
}

TEST(ExactGradient, ConstantRewardIsZero) {
    for (double x : exact_gradient(constant_reward_scenario())) EXPECT_NEAR(x, 0.0, 1e-15);
    EXPECT_NEAR(exact_objective(constant_reward_scenario()), 1.0, 1e-15);
}

TEST(ExactGradient, SaturatedPolicyVanishes) {
    const auto s = bandit_scenario().with_active_logits(std::vector<double>{30.0, 0.0});
    for (double x : exact_gradient(s)) EXPECT_LE(std::abs(x), 1e-12);
}

TEST(ExactGradient, PropertyMatchesFiniteDifferenceOfObjective) {
    const double h = 1e-6;
    for (const auto& any : scenario_battery()) {
        std::visit(
            [&](const auto& s) {
                const auto g = exact_gradient(s);
                const auto base = s.active_logits();
                for (std::size_t d = 0; d < g.size(); ++d) {
                    auto up = base, down = base;
                    up[d] += h;
                    down[d] -= h;
                    const double fd = (exact_objective(s.with_active_logits(up)) -
                                       exact_objective(s.with_active_logits(down))) / (2 * h);
                    EXPECT_NEAR(g[d], fd, 1e-7) << s.name() << " d=" << d;
                }
            },
            any);
    }
}

TEST(ExactGradient, RefusesHugeOutcomeSpaces) {
    EXPECT_THROW(exact_gradient(HugeScenario{}), Refusal);
    EXPECT_THROW(exact_optimal_baseline(HugeScenario{}), Refusal);
}

TEST(McGradient, FreeriderCounterfactualIsExactlyZero) {
    Rng rng(1);
    const auto mc = mc_gradient({EstimatorKind::counterfactual, 0.0, 20000}, freerider_scenario(), rng);
    for (double m : mc.mean) EXPECT_EQ(m, 0.0);
    EXPECT_EQ(mc.variance, 0.0);
    EXPECT_EQ(exact_variance(freerider_scenario(), {EstimatorKind::counterfactual}), 0.0);
}

TEST(McGradient, SharedAndCounterfactualAreUnbiased) {
    Rng root(2);
    std::uint64_t stream = 0;
    for (const auto& any : scenario_battery()) {
        std::visit(
            [&](const auto& s) {
                const auto exact = exact_gradient(s);
                Rng rng = root.split(stream++);
                const auto set = draw_samples(s, rng, 100000);
                EXPECT_LE(max_z(estimate(set, {EstimatorKind::shared}), exact), 4.0) << s.name();
                EXPECT_LE(max_z(estimate(set, {EstimatorKind::counterfactual}), exact), 4.0) << s.name();
                EXPECT_LE(max_z(estimate(set, {EstimatorKind::baseline_term}), std::vector<double>(exact.size(), 0.0)), 4.0)
                    << s.name();
            },
            any);
    }
}

TEST(McGradient, MonteCarloVarianceTracksExact) {
    Rng rng(3);
    const auto s = pivotal_vote_scenario();
    for (auto kind : {EstimatorKind::shared, EstimatorKind::counterfactual}) {
        const auto mc = mc_gradient({kind, 0.0, 100000}, s, rng);
        const double exact = exact_variance(s, {kind});
        EXPECT_NEAR(mc.variance, exact, 0.05 * exact + 1e-6);
    }
}

TEST(McGradient, MeanBaselineReducesVarianceOnSymmetricBandit) {
    Rng rng(4);
    const auto s = bandit_scenario();
    const auto set = draw_samples(s, rng, 100000);
    Rng boot(5);
    const auto diff = bootstrap_variance_difference(set, {EstimatorKind::shared}, {EstimatorKind::scalar_baseline, 0.5},
                                                    boot, 1000);
    EXPECT_LT(diff.var_b, diff.var_a);
    EXPECT_TRUE(diff.b_significantly_lower());
}

TEST(OptimalBaseline, ConstantRewardGivesThatConstant) {
    EXPECT_NEAR(exact_optimal_baseline(constant_reward_scenario()), 1.0, 1e-15);
    Rng rng(6);
    const auto b = optimal_baseline(constant_reward_scenario(), rng, 10000);
    EXPECT_NEAR(b.formula, 1.0, 1e-15);
    EXPECT_EQ(b.grid_argmin, 1.0);
}

TEST(OptimalBaseline, ConstantScoreNormGivesMeanReward) {
    // Two-action uniform policy: |score|^2 = 1/2 on every outcome.
    Rng rng(7);
    const auto set = draw_samples(bandit_scenario(), rng, 20000);
    double mean_r = 0.0;
    for (const auto& a : set.atoms) mean_r += a.count * a.reward;
    mean_r /= set.samples;
    EXPECT_NEAR(optimal_baseline(set).formula, mean_r, 1e-12);
    EXPECT_NEAR(exact_optimal_baseline(bandit_scenario()), 0.5, 1e-15);
}

TEST(OptimalBaseline, FormulaAgreesWithGrid) {
    Rng root(8);
    std::uint64_t stream = 0;
    for (const auto& any : scenario_battery()) {
        std::visit(
            [&](const auto& s) {
                Rng rng = root.split(stream++);
                const auto b = optimal_baseline(s, rng, 100000);
                EXPECT_LE(std::abs(b.formula - b.grid_argmin), 0.02) << s.name();
                EXPECT_NEAR(b.formula, exact_optimal_baseline(s), 0.02) << s.name();
            },
            any);
    }
}

TEST(OptimalBaseline, RefusesZeroScore) {
    SampleSet set;
    set.dimension = 2;
    set.samples = 10;
    set.atoms.push_back({0, {0.0, 0.0}, 1.0, 0.0, 10.0});
    EXPECT_THROW(empirical_optimal_baseline(set), Refusal);
    Rng rng(9);
    EXPECT_THROW(optimal_baseline(bandit_scenario(), rng, 100), InvalidInput);
}

TEST(VarianceComparison, FreeriderIsTrivial) {
    Rng rng(10);
    const auto rep = variance_comparison(freerider_scenario(), rng, 20000, 200);
    EXPECT_EQ(rep.var_cf, 0.0);
    EXPECT_LE(rep.var_cf, rep.var_shared);
    EXPECT_TRUE(rep.implication_holds);
}

TEST(VarianceComparison, StrongPartnerSeparates) {
    Rng rng(11);
    const auto rep = variance_comparison(strong_partner_scenario(), rng, 100000, 1000);
    EXPECT_TRUE(rep.condition_holds);
    EXPECT_LT(rep.var_cf, rep.var_shared);
    EXPECT_TRUE(rep.cf_significantly_lower());
    EXPECT_TRUE(rep.implication_holds);
}

TEST(VarianceComparison, RandomSweepHasNoCounterexample) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::visit(
            [&](const auto& s) {
                Rng rng(seed);
                const auto rep = variance_comparison(s, rng, 20000, 200);
                EXPECT_TRUE(rep.implication_holds) << s.name();
            },
            random_scenario(seed));
    }
}

TEST(ClipKl, Examples) {
    const std::vector<double> old_p{0.5, 0.5}, new_p{0.6, 0.4};
    const auto rep = clip_kl_check(old_p, new_p, 0.2);
    EXPECT_TRUE(rep.ratio_in_bounds);
    EXPECT_NEAR(rep.kl, 0.020411, 1e-6);
    EXPECT_NEAR(rep.bound, 0.223144, 1e-6);
    EXPECT_TRUE(rep.holds);
    const auto same = clip_kl_check(old_p, old_p, 0.2);
    EXPECT_EQ(same.kl, 0.0);
    EXPECT_TRUE(same.holds);
    const std::vector<double> far{0.9, 0.1};
    EXPECT_FALSE(clip_kl_check(old_p, far, 0.2).ratio_in_bounds);
}

TEST(ClipKl, RandomPairsRespectBound) {
    Rng rng(12);
    const auto rep = clip_kl_battery(rng, 2000, 0.2);
    EXPECT_EQ(rep.violations, 0u);
    EXPECT_LE(rep.worst, rep.bound);
    for (double eps : {0.05, 0.5, 0.9}) {
        Rng r2(13);
        EXPECT_EQ(clip_kl_battery(r2, 500, eps).violations, 0u);
    }
}

TEST(TrustRegion, Constant) {
    EXPECT_NEAR(trust_region_constant(0.9), 254.558, 1e-3);
    EXPECT_NEAR(trust_region_constant(0.9), 180.0 * std::sqrt(2.0), 1e-9);
    EXPECT_NEAR(trust_region_constant(0.5), 4.0 * std::sqrt(2.0), 1e-12);
}

TEST(TrustRegion, ValuesMatchIteration) {
    Rng rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t S = 2 + rng.below(5), A = 2 + rng.below(5);
        const auto mdp = random_mdp(rng, S, A, trial % 2 ? 0.9 : 0.5);
        const auto pi = random_policy(rng, S, A);
        std::vector<double> v(S, 0.0);
        for (int it = 0; it < 2000; ++it) {
            std::vector<double> next(S, 0.0);
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t a = 0; a < A; ++a) {
                    double cont = 0.0;
                    for (std::size_t n = 0; n < S; ++n) cont += mdp.p(s, a, n) * v[n];
                    next[s] += pi(s, a) * (mdp.r(s, a) + mdp.gamma * cont);
                }
            v = next;
        }
        const auto exact = state_values(mdp, pi);
        for (std::size_t s = 0; s < S; ++s) EXPECT_NEAR(exact(s), v[s], 1e-9);
        EXPECT_NEAR(visitation(mdp, pi).sum(), 1.0, 1e-12);
        // Advantages average to zero under the policy.
        const auto adv = advantages(mdp, pi);
        for (std::size_t s = 0; s < S; ++s) EXPECT_NEAR(pi.row(s).dot(adv.row(s)), 0.0, 1e-12);
    }
}

TEST(TrustRegion, IdentityUpdate) {
    Rng rng(15);
    const auto mdp = random_mdp(rng, 4, 3, 0.9);
    const auto pi = random_policy(rng, 4, 3);
    const auto rep = block_gain_check(mdp, pi, pi, 0.0);
    EXPECT_NEAR(rep.lhs, 0.0, 1e-12);
    EXPECT_NEAR(rep.rhs, 0.0, 1e-9);
    EXPECT_TRUE(rep.holds);
}

TEST(TrustRegion, KlPreconditionIsEnforced) {
    Rng rng(16);
    const auto mdp = random_mdp(rng, 3, 3, 0.5);
    const auto pi = random_policy(rng, 3, 3);
    const auto moved = perturbed_policy(rng, pi, 0.5);
    const double kl = max_state_kl(pi, moved);
    ASSERT_GT(kl, 0.0);
    EXPECT_THROW(block_gain_check(mdp, pi, moved, kl / 2), PreconditionError);
    EXPECT_NO_THROW(block_gain_check(mdp, pi, moved, kl));
}

TEST(TrustRegion, RandomBatteryHolds) {
    Rng rng(17);
    const auto rep = block_gain_battery(rng, 200);
    EXPECT_EQ(rep.trials, 200u);
    EXPECT_EQ(rep.violations, 0u);
}

TEST(TrustRegion, MdpValidation) {
    Rng rng(18);
    auto mdp = random_mdp(rng, 3, 2, 0.9);
    mdp.transition[0] += 0.1;
    EXPECT_THROW(mdp.validate(), InvalidInput);
}

TEST(InducedMdp, SequentialReturnIsTeamAccuracy) {
    const auto env = make_hint_env();
    Rng rng(19);
    auto a1 = make_agent1_policy(env), a2 = make_agent2_policy(env);
    randomize_logits(a1, rng, 1.0);
    randomize_logits(a2, rng, 1.0);
    const auto mdp = induced_mdp(env, a2, 0.9);
    EXPECT_NO_THROW(mdp.validate());
    double expected = 0.0;
    for (std::size_t x = 0; x < env.prompts; ++x) {
        const auto p1 = a1.probs(x);
        for (ActionId m = 0; m < env.messages; ++m) expected += p1[m] * a2.probs(env.agent2_context(x, m))[env.truth[x]];
    }
    expected /= env.prompts;
    EXPECT_NEAR(discounted_return(mdp, induced_policy(a1, env.prompts)), expected, 1e-12);
}

TEST(InducedMdp, VotingReturnMatchesEnumeration) {
    const auto env = make_pivotal_env();
    const std::vector<LogLinearPolicy> panel{voter_with_accuracy(env, 0.9), voter_with_accuracy(env, 0.7),
                                             voter_with_accuracy(env, 0.6)};
    const auto mdp = induced_mdp(env, panel, 2, 0.5);
    EXPECT_NO_THROW(mdp.validate());
    // Every prompt has the same accuracies, so J = P(majority right) = 0.9*0.7 + 0.6*(0.9*0.3 + 0.1*0.7).
    EXPECT_NEAR(discounted_return(mdp, induced_policy(panel[2], env.prompts)), 0.63 + 0.6 * 0.34, 1e-12);
}
