#pragma once

// K-agent voting: aggregation, removal counterfactuals (no extra sampling),
// per-agent marginals and the two advantage schemes.

#include "ccpo/credit.hpp"
#include "ccpo/envs.hpp"
#include "ccpo/policy.hpp"
#include "ccpo/rng.hpp"

#include <algorithm>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace ccpo {

// A voting decision: an answer, or std::nullopt for ABSTAIN.
using Decision = std::optional<ActionId>;

struct VoteRule {
    enum class Kind { strict_plurality_or_abstain };
    Kind kind = Kind::strict_plurality_or_abstain;
    bool abstain_scores_zero = true;
};

// Unique plurality answer, or ABSTAIN when the top count is shared.
inline Decision vote(std::span<const ActionId> answers, const VoteRule& = {}) {
    detail::require(!answers.empty(), "vote: need at least one answer");
    std::vector<std::pair<ActionId, std::size_t>> counts;
    for (ActionId a : answers) {
        auto it = std::find_if(counts.begin(), counts.end(), [a](const auto& c) { return c.first == a; });
        if (it == counts.end())
            counts.emplace_back(a, 1);
        else
            ++it->second;
    }
    std::size_t best = 0, ties = 0;
    Decision winner;
    for (const auto& [a, n] : counts) {
        if (n > best) {
            best = n;
            ties = 1;
            winner = a;
        } else if (n == best) {
            ++ties;
        }
    }
    return ties == 1 ? winner : std::nullopt;
}

inline double decision_reward(const Decision& d, ActionId truth) { return d && *d == truth ? 1.0 : 0.0; }

struct CounterfactualOutcome {
    double team_reward = 0.0;
    std::vector<double> cf_rewards;
    std::vector<double> deltas;
};

// Team reward and, for each agent, the reward after removing its answer and
// re-voting. Pure: touches no policy or RNG. With a single agent the removal
// leaves an empty panel, which abstains.
inline CounterfactualOutcome counterfactual_rewards(std::span<const ActionId> answers, ActionId truth,
                                                    const VoteRule& rule = {}) {
    detail::require(!answers.empty(), "counterfactual_rewards: need at least one answer");
    CounterfactualOutcome out;
    out.team_reward = decision_reward(vote(answers, rule), truth);
    std::vector<ActionId> rest;
    rest.reserve(answers.size());
    for (std::size_t i = 0; i < answers.size(); ++i) {
        rest.clear();
        for (std::size_t k = 0; k < answers.size(); ++k)
            if (k != i) rest.push_back(answers[k]);
        const double cf = rest.empty() ? 0.0 : decision_reward(vote(rest, rule), truth);
        out.cf_rewards.push_back(cf);
        out.deltas.push_back(marginal_contribution(out.team_reward, cf));
    }
    return out;
}

struct VotingRollout {
    std::size_t prompt = 0;
    std::vector<ActionId> answers;
    Decision decision;
    double team_reward = 0.0;
    std::vector<double> per_agent_cf_reward;
    std::vector<double> per_agent_delta;
    std::vector<double> per_agent_logprob;
};

inline VotingRollout sample_votes(const VotingTaskEnv& env, std::span<const LogLinearPolicy> policies,
                                  std::size_t prompt, Rng& rng, const VoteRule& rule = {}) {
    detail::require(policies.size() == env.agents, "sample_votes: one policy per agent required");
    detail::require(prompt < env.prompts, "sample_votes: prompt out of range");
    VotingRollout r;
    r.prompt = prompt;
    for (const auto& pi : policies) {
        const ActionId a = sample(pi, prompt, rng);
        r.answers.push_back(a);
        r.per_agent_logprob.push_back(log_prob(pi, prompt, a));
    }
    r.decision = vote(r.answers, rule);
    auto cf = counterfactual_rewards(r.answers, env.truth[prompt], rule);
    r.team_reward = cf.team_reward;
    r.per_agent_cf_reward = std::move(cf.cf_rewards);
    r.per_agent_delta = std::move(cf.deltas);
    return r;
}

using VoteGroup = std::vector<VotingRollout>;

inline VoteGroup collect_votes(const VotingTaskEnv& env, std::span<const LogLinearPolicy> policies,
                               std::size_t prompt, std::size_t n, Rng& rng, const VoteRule& rule = {}) {
    detail::require(n >= 2, "collect_votes: need at least two rollouts per prompt");
    VoteGroup out;
    out.reserve(n);
    for (std::size_t j = 0; j < n; ++j) out.push_back(sample_votes(env, policies, prompt, rng, rule));
    return out;
}

// Within-prompt normalization of team rewards.
inline std::vector<double> joint_advantages(std::span<const double> team_rewards, double epsilon = kDefaultEpsilon) {
    return group_advantage(team_rewards, epsilon);
}

// w_i = max(0, delta_i) / (sum_k max(0, delta_k) + eps).
inline std::vector<double> allocation_weights(std::span<const double> deltas, double epsilon = kDefaultEpsilon) {
    detail::require(epsilon > 0.0, "allocation_weights: epsilon must be positive");
    double total = 0.0;
    for (double d : deltas) total += std::max(0.0, d);
    std::vector<double> w;
    w.reserve(deltas.size());
    for (double d : deltas) w.push_back(std::max(0.0, d) / (total + epsilon));
    return w;
}

inline std::vector<double> allocate(double joint_advantage, std::span<const double> deltas,
                                    double epsilon = kDefaultEpsilon) {
    auto w = allocation_weights(deltas, epsilon);
    for (double& x : w) x *= joint_advantage;
    return w;
}

// Direct scheme for one prompt: deltas[i] holds agent i's N marginals; each
// agent is shaped and normalized against its own statistics, which are then
// updated with that agent's deltas.
inline std::vector<AdvantageBatch> direct_advantages(const std::vector<std::vector<double>>& deltas,
                                                     std::span<RunningStats> per_agent_stats,
                                                     const ShapingConfig& shaping) {
    detail::require(deltas.size() == per_agent_stats.size(), "direct_advantages: one statistics block per agent");
    std::vector<AdvantageBatch> out;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        out.push_back(shaped_advantages(deltas[i], per_agent_stats[i], shaping));
        per_agent_stats[i] = ema_update(per_agent_stats[i], deltas[i]);
    }
    return out;
}

// Per-agent, per-group advantages. Indexed [agent][group].
using VotingCredit = std::vector<std::vector<AdvantageBatch>>;

// Direct scheme over a batch of prompts; statistics are updated once per agent per batch.
inline VotingCredit direct_advantages(std::span<const VoteGroup> groups, std::span<RunningStats> per_agent_stats,
                                      const ShapingConfig& shaping) {
    detail::require(!groups.empty(), "direct_advantages: no rollouts");
    const std::size_t k = per_agent_stats.size();
    VotingCredit credit(k);
    for (std::size_t i = 0; i < k; ++i) {
        const RunningStats snapshot = per_agent_stats[i];
        std::vector<double> all;
        for (const auto& group : groups) {
            std::vector<double> d;
            for (const auto& r : group) d.push_back(r.per_agent_delta.at(i));
            credit[i].push_back(shaped_advantages(d, snapshot, shaping));
            all.insert(all.end(), d.begin(), d.end());
        }
        per_agent_stats[i] = ema_update(per_agent_stats[i], all);
    }
    return credit;
}

// Allocation scheme: normalize team rewards per prompt, split by non-negative marginals.
inline VotingCredit allocated_advantages(std::span<const VoteGroup> groups, std::size_t agents, double epsilon) {
    VotingCredit credit(agents);
    for (const auto& group : groups) {
        std::vector<double> team;
        for (const auto& r : group) team.push_back(r.team_reward);
        const auto joint = joint_advantages(team, epsilon);
        std::vector<AdvantageBatch> per_agent(agents);
        for (auto& b : per_agent) b.epsilon = epsilon;
        for (std::size_t j = 0; j < group.size(); ++j) {
            const auto alloc = allocate(joint[j], group[j].per_agent_delta, epsilon);
            for (std::size_t i = 0; i < agents; ++i) {
                per_agent[i].shaped_rewards.push_back(joint[j]);
                per_agent[i].advantages.push_back(alloc[i]);
            }
        }
        for (std::size_t i = 0; i < agents; ++i) credit[i].push_back(std::move(per_agent[i]));
    }
    return credit;
}

}  // namespace ccpo
