#pragma once

// Verification suites behind `ccpo verify`. Each check becomes one
// VerificationResult{name, passed, measured, bound}.

#include "ccpo/harness/outputs.hpp"
#include "ccpo/oracles/battery.hpp"
#include "ccpo/oracles/scenario.hpp"
#include "ccpo/oracles/trust_region.hpp"
#include "ccpo/voting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace ccpo::harness {

inline constexpr std::size_t kMcSamples = 100'000;

namespace detail {

// max_d |mean_d - target_d| / se_d, with 1e-12 of absolute slack for round-off in the exact target.
inline double max_z(const std::vector<double>& mean, const std::vector<double>& target,
                    const std::vector<double>& se) {
    double worst = 0.0;
    for (std::size_t d = 0; d < mean.size(); ++d) {
        const double diff = std::abs(mean[d] - target[d]);
        if (diff <= 1e-12) continue;
        worst = std::max(worst, se[d] > 0.0 ? diff / se[d] : std::numeric_limits<double>::infinity());
    }
    return worst;
}

inline VerificationResult at_most(std::string name, double measured, double bound, std::string detail = {}) {
    return {std::move(name), measured <= bound, measured, bound, std::move(detail)};
}

// Correctness of the plurality-or-abstain decision from a count table.
inline bool decision_correct(const std::vector<int>& counts, ActionId truth) {
    const int top = *std::max_element(counts.begin(), counts.end());
    if (top == 0) return false;
    return counts[truth] == top && std::count(counts.begin(), counts.end(), top) == 1;
}

}  // namespace detail

inline std::vector<VerificationResult> unbiasedness_suite(std::uint64_t seed) {
    using namespace oracles;
    std::vector<VerificationResult> out;
    Rng root(seed);
    std::uint64_t stream = 0;
    for (const auto& any : scenario_battery()) {
        std::visit([&](const auto& s) {
            const auto exact = exact_gradient(s);
            const std::vector<double> zero(exact.size(), 0.0);
            for (auto kind : {EstimatorKind::shared, EstimatorKind::counterfactual}) {
                Rng rng = root.split(stream++);
                const auto est = mc_gradient({kind, 0.0, kMcSamples}, s, rng);
                out.push_back(detail::at_most(
                    "unbiasedness/" + s.name() + (kind == EstimatorKind::shared ? "/shared" : "/counterfactual"),
                    detail::max_z(est.mean, exact, est.standard_error), 4.0));
            }
            Rng rng = root.split(stream++);
            const auto est = mc_gradient({EstimatorKind::baseline_term, 0.0, kMcSamples}, s, rng);
            out.push_back(detail::at_most("unbiasedness/" + s.name() + "/baseline_term_nulls",
                                          detail::max_z(est.mean, zero, est.standard_error), 4.0));
        }, any);
    }
    return out;
}

inline std::vector<VerificationResult> variance_suite(std::uint64_t seed, std::size_t sweep = 100) {
    using namespace oracles;
    std::vector<VerificationResult> out;
    Rng root(seed);

    Rng r0 = root.split(0);
    const auto strong = variance_comparison(strong_partner_scenario(), r0, kMcSamples);
    out.push_back({"variance/strong_partner/condition", strong.condition_holds, strong.condition_lhs,
                   strong.condition_rhs, {}});
    out.push_back({"variance/strong_partner/cf_lower_ci", strong.cf_significantly_lower() && strong.var_cf < strong.var_shared,
                   strong.diff_ci_low, 0.0,
                   "var_shared=" + fixed9(strong.var_shared) + " var_cf=" + fixed9(strong.var_cf)});

    Rng r1 = root.split(1);
    const auto fr = variance_comparison(freerider_scenario(), r1, kMcSamples);
    out.push_back({"variance/freerider/cf_zero", fr.var_cf == 0.0 && fr.var_cf <= fr.var_shared && fr.condition_holds,
                   fr.var_cf, 0.0, {}});

    // Symmetric bandit: |g|^2 is constant, so b = E[R] is the optimal scalar baseline.
    const auto bandit = bandit_scenario();
    Rng r2 = root.split(2);
    Rng r3 = root.split(3);
    const auto set = draw_samples(bandit, r2, kMcSamples);
    const double mean_reward = exact_objective(bandit);
    const auto diff = bootstrap_variance_difference(set, {EstimatorKind::shared, 0.0, kMcSamples},
                                                    {EstimatorKind::scalar_baseline, mean_reward, kMcSamples}, r3);
    out.push_back({"variance/bandit/mean_baseline_lower_ci", diff.b_significantly_lower(), diff.ci_low, 0.0, {}});

    std::size_t violations = 0, with_condition = 0;
    for (std::size_t i = 0; i < sweep; ++i) {
        Rng rng = root.split(100 + i);
        const auto rep = std::visit([&](const auto& s) { return variance_comparison(s, rng, kMcSamples); },
                                    random_scenario(seed * 1000 + i));
        with_condition += rep.condition_holds;
        violations += !rep.implication_holds;
    }
    out.push_back(detail::at_most("variance/sweep_implication_violations", static_cast<double>(violations), 0.0,
                                  std::to_string(with_condition) + " of " + std::to_string(sweep) +
                                      " scenarios satisfied the condition"));
    return out;
}

inline std::vector<VerificationResult> baseline_suite(std::uint64_t seed) {
    using namespace oracles;
    std::vector<VerificationResult> out;
    Rng root(seed);
    std::uint64_t stream = 0;
    for (const auto& any : scenario_battery()) {
        std::visit([&](const auto& s) {
            Rng rng = root.split(stream++);
            const auto b = optimal_baseline(s, rng, kMcSamples);
            out.push_back(detail::at_most("baseline/" + s.name() + "/formula_vs_grid", std::abs(b.formula - b.grid_argmin),
                                          0.02, "formula=" + fixed9(b.formula) + " grid=" + fixed9(b.grid_argmin)));
        }, any);
    }
    return out;
}

inline std::vector<VerificationResult> kl_suite(std::uint64_t seed) {
    using namespace oracles;
    std::vector<VerificationResult> out;
    const std::vector<double> old_p{0.5, 0.5}, new_p{0.6, 0.4};
    const auto ex = clip_kl_check(old_p, new_p, 0.2);
    out.push_back({"kl/two_point_example", ex.ratio_in_bounds && ex.holds, ex.kl, ex.bound, {}});
    const auto same = clip_kl_check(old_p, old_p, 0.2);
    out.push_back({"kl/identical", same.kl == 0.0 && same.holds, same.kl, same.bound, {}});
    Rng rng(seed);
    const auto bat = clip_kl_battery(rng, 10'000, 0.2);
    out.push_back(detail::at_most("kl/random_pairs_violations", static_cast<double>(bat.violations), 0.0,
                                  "max kl " + fixed9(bat.worst) + " of " + std::to_string(bat.trials) + " pairs"));
    return out;
}

inline std::vector<VerificationResult> trust_region_suite(std::uint64_t seed) {
    using namespace oracles;
    std::vector<VerificationResult> out;
    const double c = trust_region_constant(0.9);
    out.push_back(detail::at_most("trust-region/constant_gamma_0.9", std::abs(c - 180.0 * std::sqrt(2.0)), 1e-9,
                                  "C=" + fixed9(c)));

    Rng rng(seed);
    const auto bat = block_gain_battery(rng, 500);
    out.push_back(detail::at_most("trust-region/random_mdp_violations", static_cast<double>(bat.violations), 0.0,
                                  "worst rhs-lhs " + fixed9(bat.worst)));

    const auto mdp = random_mdp(rng, 4, 3, 0.9);
    const auto pi = random_policy(rng, 4, 3);
    const auto same = block_gain_check(mdp, pi, pi, 0.0);
    out.push_back({"trust-region/identity_update", same.holds && same.lhs == 0.0, std::abs(same.rhs), 1e-12, {}});

    // Induced single-agent MDPs with the partners frozen: valid, and their value is the exact objective.
    Rng prng = rng.split(1);
    auto env = make_hint_env();
    auto a1 = make_agent1_policy(env);
    auto a2 = make_agent2_policy(env);
    oracles::randomize_logits(a1, prng, 1.0);
    oracles::randomize_logits(a2, prng, 1.0);
    const auto seq_mdp = induced_mdp(env, a2, 0.9);
    double objective = 0.0;
    for (std::size_t p = 0; p < env.prompts; ++p)
        objective += exact_objective(SequentialScenario("p", env, a1, a2, p, SoloSampling::independent));
    objective /= static_cast<double>(env.prompts);
    out.push_back(detail::at_most("trust-region/induced_sequential_value",
                                  std::abs(discounted_return(seq_mdp, induced_policy(a1, env.prompts)) - objective), 1e-12));

    const auto venv = make_pivotal_env();
    std::vector<LogLinearPolicy> panel;
    for (std::size_t i = 0; i < venv.agents; ++i) {
        panel.push_back(make_voter_policy(venv));
        oracles::randomize_logits(panel.back(), prng, 1.0);
    }
    std::size_t induced_violations = 0;
    for (std::size_t k = 0; k < venv.agents; ++k) {
        const auto vm = induced_mdp(venv, panel, k, 0.9);
        const auto old_pi = induced_policy(panel[k], venv.prompts);
        const auto new_pi = perturbed_policy(prng, old_pi, 0.1);
        if (!block_gain_check(vm, old_pi, new_pi, max_state_kl(old_pi, new_pi)).holds) ++induced_violations;
    }
    out.push_back(detail::at_most("trust-region/induced_voting_violations", static_cast<double>(induced_violations), 0.0));
    return out;
}

inline std::vector<VerificationResult> pivotality_suite(std::uint64_t seed) {
    std::vector<VerificationResult> out;
    std::size_t exceptions = 0, checked = 0;
    for (std::size_t answers = 2; answers <= 4; ++answers)
        for (std::size_t idx = 0; idx < answers * answers * answers; ++idx) {
            const std::vector<ActionId> tuple{idx % answers, (idx / answers) % answers, idx / (answers * answers)};
            for (ActionId truth = 0; truth < answers; ++truth) {
                const auto cf = counterfactual_rewards(tuple, truth);
                std::vector<int> counts(answers, 0);
                for (ActionId a : tuple) ++counts[a];
                const bool full = detail::decision_correct(counts, truth);
                for (std::size_t i = 0; i < tuple.size(); ++i) {
                    --counts[tuple[i]];
                    const bool pivotal = full != detail::decision_correct(counts, truth);
                    ++counts[tuple[i]];
                    ++checked;
                    if (pivotal != (cf.deltas[i] != 0.0)) ++exceptions;
                }
            }
        }
    out.push_back(detail::at_most("pivotality/exhaustive_k3_exceptions", static_cast<double>(exceptions), 0.0,
                                  std::to_string(checked) + " (tuple, truth, agent) cases"));

    Rng root(seed);
    const auto env = make_pivotal_env();
    const std::vector<LogLinearPolicy> panel(3, voter_with_accuracy(env, 0.6));
    Rng rng = root.split(0);
    double correct = 0.0;
    for (std::size_t j = 0; j < kMcSamples; ++j) correct += sample_votes(env, panel, 0, rng).team_reward;
    const double p = 0.6, analytic = 3 * p * p - 2 * p * p * p;
    const double m = static_cast<double>(kMcSamples);
    const double se = std::sqrt(analytic * (1.0 - analytic) / m);
    out.push_back(detail::at_most("pivotality/majority_accuracy_p0.6", std::abs(correct / m - analytic) / se, 3.0,
                                  "mc=" + fixed9(correct / m) + " analytic=" + fixed9(analytic)));

    // Voter 3 at 0.5 beside two 0.9 partners: nonzero marginal iff partners split and voter 3 is right.
    const auto piv = oracles::pivotal_vote_scenario();
    Rng rng2 = root.split(1);
    double nonzero = 0.0;
    for (std::size_t j = 0; j < kMcSamples; ++j) {
        const auto d = piv.sample(rng2);
        nonzero += d.reward != d.cf_reward;
    }
    const double rate = 2 * 0.9 * 0.1 * 0.5;
    const double rse = std::sqrt(rate * (1.0 - rate) / m);
    out.push_back(detail::at_most("pivotality/pivotal_rate", std::abs(nonzero / m - rate) / rse, 4.0,
                                  "mc=" + fixed9(nonzero / m) + " analytic=" + fixed9(rate)));
    return out;
}

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"unbiasedness", "variance", "baseline", "kl", "trust-region", "pivotality", "all"};
    return names;
}

// Throws InvalidInput for an unknown suite name.
inline std::vector<VerificationResult> run_suite(const std::string& name, std::uint64_t seed) {
    if (name == "unbiasedness") return unbiasedness_suite(seed);
    if (name == "variance") return variance_suite(seed);
    if (name == "baseline") return baseline_suite(seed);
    if (name == "kl") return kl_suite(seed);
    if (name == "trust-region") return trust_region_suite(seed);
    if (name == "pivotality") return pivotality_suite(seed);
    if (name == "all") {
        std::vector<VerificationResult> all;
        for (const auto& n : suite_names()) {
            if (n == "all") continue;
            auto part = run_suite(n, seed);
            all.insert(all.end(), part.begin(), part.end());
        }
        return all;
    }
    throw InvalidInput("unknown suite '" + name + "'");
}

}  // namespace ccpo::harness
