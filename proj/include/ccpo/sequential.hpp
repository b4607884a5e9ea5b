#pragma once

// Think-Solve dyad: joint rollouts paired with solo counterfactuals, Agent-1
// marginal credit, and Agent 2's gated fusion of joint and solo signals.

#include "ccpo/credit.hpp"
#include "ccpo/envs.hpp"
#include "ccpo/policy.hpp"
#include "ccpo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace ccpo {

// How the solo (message-free) Agent-2 answer is drawn.
//
// coupled: the solo answer reuses the uniform variate of the joint Agent-2
// draw, so the counterfactual differs from the joint rollout only in the
// removed message. independent: a fresh uniform. Both are independent of
// Agent 1's action.
enum class SoloSampling { coupled, independent };

struct SequentialRollout {
    std::size_t prompt = 0;
    ActionId message = 0;
    ActionId answer = 0;
    double joint_reward = 0.0;
    ActionId solo_answer = 0;
    double solo_reward = 0.0;
    double agent1_logprob = 0.0;
    double agent2_logprob = 0.0;
    double agent2_solo_logprob = 0.0;

    double delta() const { return joint_reward - solo_reward; }
};

inline SequentialRollout sample_pair(const SequentialTaskEnv& env, const LogLinearPolicy& agent1,
                                     const LogLinearPolicy& agent2, std::size_t prompt, Rng& rng,
                                     SoloSampling solo = SoloSampling::coupled) {
    SequentialRollout r;
    r.prompt = prompt;
    r.message = sample(agent1, prompt, rng);
    r.agent1_logprob = log_prob(agent1, prompt, r.message);

    const ContextId joint_ctx = env.agent2_context(prompt, r.message);
    const ContextId solo_ctx = env.agent2_context(prompt, std::nullopt);
    const double u = rng.uniform();
    r.answer = sample_with_uniform(agent2, joint_ctx, u);
    r.agent2_logprob = log_prob(agent2, joint_ctx, r.answer);
    r.joint_reward = env.reward(prompt, r.answer);

    const double u_solo = solo == SoloSampling::coupled ? u : rng.uniform();
    r.solo_answer = sample_with_uniform(agent2, solo_ctx, u_solo);
    r.agent2_solo_logprob = log_prob(agent2, solo_ctx, r.solo_answer);
    r.solo_reward = env.reward(prompt, r.solo_answer);
    return r;
}

// N joint rollouts for one prompt, the j-th paired with the j-th solo draw.
inline std::vector<SequentialRollout> collect_pairs(const SequentialTaskEnv& env, const LogLinearPolicy& agent1,
                                                    const LogLinearPolicy& agent2, std::size_t prompt,
                                                    std::size_t n, Rng& rng,
                                                    SoloSampling solo = SoloSampling::coupled) {
    detail::require(n >= 2, "collect_pairs: need at least two rollouts per prompt");
    std::vector<SequentialRollout> out;
    out.reserve(n);
    for (std::size_t j = 0; j < n; ++j) out.push_back(sample_pair(env, agent1, agent2, prompt, rng, solo));
    return out;
}

using RolloutGroup = std::vector<SequentialRollout>;

// Agent-1 advantages for a batch of prompt groups.
//
// Every group is standardized against the statistics as they were before this
// batch; the whole batch of deltas is then folded into `delta_stats` once.
inline std::vector<AdvantageBatch> agent1_advantages(std::span<const RolloutGroup> groups, RunningStats& delta_stats,
                                                     const ShapingConfig& shaping) {
    detail::require(!groups.empty(), "agent1_advantages: no rollouts");
    const RunningStats snapshot = delta_stats;
    std::vector<AdvantageBatch> out;
    std::vector<double> all_deltas;
    for (const auto& group : groups) {
        detail::require(!group.empty(), "agent1_advantages: empty rollout group");
        std::vector<double> deltas;
        for (const auto& r : group) deltas.push_back(marginal_contribution(r.joint_reward, r.solo_reward));
        out.push_back(shaped_advantages(deltas, snapshot, shaping));
        all_deltas.insert(all_deltas.end(), deltas.begin(), deltas.end());
    }
    delta_stats = ema_update(delta_stats, all_deltas);
    return out;
}

inline AdvantageBatch agent1_advantages(const RolloutGroup& rollouts, RunningStats& delta_stats,
                                        const ShapingConfig& shaping) {
    return agent1_advantages(std::span<const RolloutGroup>(&rollouts, 1), delta_stats, shaping).front();
}

struct GateState {
    RunningStats delta_stats;
    RunningStats joint_stats;
    RunningStats solo_stats;
    double eta = 1.0;

    static GateState make(double decay, std::uint64_t min_samples, double eta) {
        detail::require(eta > 0.0, "GateState: eta must be positive");
        const auto s = RunningStats::make(decay, min_samples);
        return {s, s, s, eta};
    }
};

// sigmoid(eta * mu / (sigma + eps)) from the historical delta statistics, kept inside (0, 1).
inline double trust_gate(const GateState& gate, double epsilon = kDefaultEpsilon) {
    detail::require(epsilon > 0.0, "trust_gate: epsilon must be positive");
    const double u = gate.eta * gate.delta_stats.mean / (gate.delta_stats.stddev() + epsilon);
    const double g = u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::clamp(g, std::numeric_limits<double>::denorm_min(), hi);
}

// Agent-2 advantages from the fused score g * z_joint + (1 - g) * z_solo.
//
// `gate_value` is applied to every rollout in the batch. Joint and solo
// statistics are updated after standardization. The solo answers only enter
// through z_solo; they are not reinforced as trajectories.
inline std::vector<AdvantageBatch> agent2_advantages(std::span<const RolloutGroup> groups, GateState& gate,
                                                     double epsilon, double gate_value) {
    detail::require(!groups.empty(), "agent2_advantages: no rollouts");
    detail::require(gate_value >= 0.0 && gate_value <= 1.0, "agent2_advantages: gate must lie in [0, 1]");
    const RunningStats joint_snapshot = gate.joint_stats;
    const RunningStats solo_snapshot = gate.solo_stats;
    std::vector<AdvantageBatch> out;
    std::vector<double> joint_all, solo_all;
    for (const auto& group : groups) {
        detail::require(!group.empty(), "agent2_advantages: empty rollout group");
        std::vector<double> fused;
        for (const auto& r : group) {
            const double z_joint = standardize(r.joint_reward, joint_snapshot, epsilon);
            const double z_solo = standardize(r.solo_reward, solo_snapshot, epsilon);
            fused.push_back(gate_value * z_joint + (1.0 - gate_value) * z_solo);
            joint_all.push_back(r.joint_reward);
            solo_all.push_back(r.solo_reward);
        }
        AdvantageBatch batch;
        batch.epsilon = epsilon;
        batch.advantages = group_advantage(fused, epsilon);
        batch.shaped_rewards = std::move(fused);
        out.push_back(std::move(batch));
    }
    gate.joint_stats = ema_update(gate.joint_stats, joint_all);
    gate.solo_stats = ema_update(gate.solo_stats, solo_all);
    return out;
}

inline AdvantageBatch agent2_advantages(const RolloutGroup& rollouts, GateState& gate, double epsilon = kDefaultEpsilon) {
    const double g = trust_gate(gate, epsilon);
    return agent2_advantages(std::span<const RolloutGroup>(&rollouts, 1), gate, epsilon, g).front();
}

struct SequentialCredit {
    std::vector<AdvantageBatch> agent1;
    std::vector<AdvantageBatch> agent2;
    double gate = 0.5;
};

// Full CCPO credit for one batch: gate from pre-update statistics, then both agents.
inline SequentialCredit sequential_ccpo_credit(std::span<const RolloutGroup> groups, GateState& gate,
                                               const ShapingConfig& shaping) {
    SequentialCredit credit;
    credit.gate = trust_gate(gate, shaping.epsilon);
    credit.agent1 = agent1_advantages(groups, gate.delta_stats, shaping);
    credit.agent2 = agent2_advantages(groups, gate, shaping.epsilon, credit.gate);
    return credit;
}

}  // namespace ccpo
