#pragma once

// Fixed scenario battery and a seeded generator of random scenarios.

#include "ccpo/envs.hpp"
#include "ccpo/oracles/scenario.hpp"
#include "ccpo/rng.hpp"

#include <random>
#include <string>
#include <vector>

namespace ccpo::oracles {

inline void randomize_logits(LogLinearPolicy& policy, Rng& rng, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    for (double& x : policy.params()) x = n(rng);
}

// Partner accuracies (0.9, 0.9) and a coin-flip third voter; voter 3 is active.
inline VotingScenario pivotal_vote_scenario(double third = 0.5) {
    const auto env = make_pivotal_env();
    return VotingScenario("vote_pivotal", env,
                          {voter_with_accuracy(env, 0.9), voter_with_accuracy(env, 0.9), voter_with_accuracy(env, third)},
                          0, 2);
}

// Strong partners (0.9): the counterfactual panel is right most of the time.
inline VotingScenario strong_partner_scenario() {
    const auto env = make_pivotal_env();
    return VotingScenario("vote_strong_partner", env,
                          {voter_with_accuracy(env, 0.9), voter_with_accuracy(env, 0.9), voter_with_accuracy(env, 0.6)},
                          0, 2);
}

// Single uniform agent on a two-armed bandit; the empty panel abstains, so R_cf = 0.
inline VotingScenario bandit_scenario() {
    const auto env = make_bandit_env();
    return VotingScenario("bandit", env, {make_voter_policy(env)}, 0, 0);
}

inline SequentialScenario freerider_scenario() {
    const auto env = make_freerider_env();
    Rng rng(11);
    auto a1 = make_agent1_policy(env);
    randomize_logits(a1, rng, 1.0);
    return SequentialScenario("seq_freerider", env, a1, agent2_with_accuracy(env, 0.8), 1, SoloSampling::coupled);
}

inline SequentialScenario hint_scenario(SoloSampling solo) {
    const auto env = make_hint_env();
    Rng rng(23);
    auto a1 = make_agent1_policy(env);
    auto a2 = make_agent2_policy(env);
    randomize_logits(a1, rng, 1.0);
    randomize_logits(a2, rng, 1.5);
    return SequentialScenario(solo == SoloSampling::coupled ? "seq_hint_coupled" : "seq_hint_independent", env, a1,
                              a2, 3, solo);
}

inline VotingScenario random_vote_scenario(std::uint64_t seed, std::size_t agents, std::size_t answers) {
    Rng rng(seed);
    VotingTaskEnv env;
    env.prompts = 1;
    env.answers = answers;
    env.agents = agents;
    env.truth = {rng.below(answers)};
    std::vector<LogLinearPolicy> panel;
    for (std::size_t i = 0; i < agents; ++i) {
        panel.push_back(make_voter_policy(env));
        randomize_logits(panel.back(), rng, 1.5);
    }
    const std::size_t active = rng.below(agents);
    return VotingScenario("vote_random_" + std::to_string(seed), env, std::move(panel), 0, active);
}

inline std::vector<AnyScenario> scenario_battery() {
    return {freerider_scenario(),
            hint_scenario(SoloSampling::independent),
            hint_scenario(SoloSampling::coupled),
            pivotal_vote_scenario(),
            strong_partner_scenario(),
            random_vote_scenario(5, 4, 3),
            bandit_scenario()};
}

// Random sequential or voting scenario for the variance sweep.
inline AnyScenario random_scenario(std::uint64_t seed) {
    Rng rng = Rng(seed).split(0x5eed);
    if (rng.below(2) == 0) {
        const std::size_t agents = 2 + rng.below(4), answers = 2 + rng.below(3);
        return random_vote_scenario(rng.next_u64(), agents, answers);
    }
    SequentialTaskEnv env;
    env.prompts = 2 + rng.below(4);
    env.answers = 2 + rng.below(3);
    env.messages = 2 + rng.below(4);
    env.truth.resize(env.prompts);
    for (auto& t : env.truth) t = rng.below(env.answers);
    env.views = 1 + rng.below(env.prompts);
    env.agent2_view.resize(env.prompts);
    for (auto& v : env.agent2_view) v = rng.below(env.views);
    env.hint_informativeness = static_cast<double>(rng.below(5)) / 4.0;
    auto a1 = make_agent1_policy(env);
    auto a2 = make_agent2_policy(env);
    randomize_logits(a1, rng, 1.5);
    randomize_logits(a2, rng, 1.5);
    const auto solo = rng.below(2) == 0 ? SoloSampling::coupled : SoloSampling::independent;
    const std::size_t prompt = rng.below(env.prompts);
    return SequentialScenario("seq_random_" + std::to_string(seed), env, a1, a2, prompt, solo);
}

}  // namespace ccpo::oracles
