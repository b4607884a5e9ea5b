#pragma once

// GRPO-style optimization loop: rollout collection, topology-dispatched credit,
// clipped policy-gradient ascent per agent, KL monitoring.

#include "ccpo/credit.hpp"
#include "ccpo/envs.hpp"
#include "ccpo/error.hpp"
#include "ccpo/policy.hpp"
#include "ccpo/rng.hpp"
#include "ccpo/sequential.hpp"
#include "ccpo/voting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace ccpo {

enum class Schedule { synchronous, alternating };
enum class CreditMode { ccpo, shared };
enum class VotingScheme { direct, allocated };

struct TrainerConfig {
    // Recommended learning rate for the tabular toy policies (the default targets LLM fine-tuning).
    static constexpr double kToyLearningRate = 0.5;

    double learning_rate = 1e-6;
    std::size_t batch_size = 64;
    std::size_t samples_per_prompt = 4;
    double clip_eps = 0.2;
    double grad_clip = 1.0;
    double alpha = 1.0;
    double eta = 1.0;
    double ema_decay = 0.99;
    std::uint64_t min_samples = 50;
    double epsilon = kDefaultEpsilon;
    Schedule schedule = Schedule::synchronous;
    CreditMode credit_mode = CreditMode::ccpo;
    VotingScheme voting_scheme = VotingScheme::direct;
    SoloSampling solo_sampling = SoloSampling::coupled;
    std::size_t steps = 100;
    std::uint64_t seed = 0;
    // Zero-based ids of agents whose parameters are never updated.
    std::vector<std::size_t> frozen_agents;

    ShapingConfig shaping() const { return {alpha, epsilon}; }

    bool operator==(const TrainerConfig&) const = default;

    // Throws InvalidInput naming the offending config key and its bound.
    void validate() const {
        auto fail = [](const std::string& key, const auto& value, const std::string& bound) {
            std::ostringstream os;
            os << key << " = " << value << " is out of range: " << bound;
            throw InvalidInput(os.str());
        };
        if (!(learning_rate > 0.0 && std::isfinite(learning_rate))) fail("trainer.learning_rate", learning_rate, "must be > 0");
        if (batch_size < 1) fail("trainer.batch_size", batch_size, "must be >= 1");
        if (samples_per_prompt < 2) fail("trainer.samples_per_prompt", samples_per_prompt, "must be >= 2");
        if (!(clip_eps > 0.0 && clip_eps < 1.0)) fail("trainer.clip_eps", clip_eps, "must lie in (0, 1)");
        if (!(grad_clip > 0.0)) fail("trainer.grad_clip", grad_clip, "must be > 0");
        if (steps < 1) fail("trainer.steps", steps, "must be >= 1");
        if (!(alpha > 0.0)) fail("shaping.alpha", alpha, "must be > 0");
        if (!(eta > 0.0)) fail("shaping.eta", eta, "must be > 0");
        if (!(ema_decay > 0.0 && ema_decay < 1.0)) fail("shaping.ema_decay", ema_decay, "must lie in (0, 1)");
        if (min_samples < 1) fail("shaping.min_samples", min_samples, "must be >= 1");
        if (!(epsilon > 0.0)) fail("shaping.epsilon", epsilon, "must be > 0");
    }
};

struct SequentialSystem {
    SequentialTaskEnv env;
    LogLinearPolicy agent1;
    LogLinearPolicy agent2;
    GateState gate;
};

struct VotingSystem {
    VotingTaskEnv env;
    std::vector<LogLinearPolicy> agents;
    std::vector<RunningStats> stats;
};

struct TrainerState {
    std::variant<SequentialSystem, VotingSystem> system;
    std::size_t step = 0;

    std::size_t agent_count() const {
        return std::visit([](const auto& s) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(s)>, SequentialSystem>)
                return 2;
            else
                return s.agents.size();
        }, system);
    }

    const LogLinearPolicy& policy(std::size_t agent) const {
        if (auto* s = std::get_if<SequentialSystem>(&system)) return agent == 0 ? s->agent1 : s->agent2;
        return std::get<VotingSystem>(system).agents.at(agent);
    }
    LogLinearPolicy& policy(std::size_t agent) {
        return const_cast<LogLinearPolicy&>(std::as_const(*this).policy(agent));
    }

    bool is_sequential() const { return std::holds_alternative<SequentialSystem>(system); }
};

inline TrainerState make_sequential_state(SequentialTaskEnv env, LogLinearPolicy agent1, LogLinearPolicy agent2,
                                          const TrainerConfig& config) {
    env.validate();
    detail::require(agent1.contexts() == env.agent1_contexts() && agent1.actions() == env.messages,
                    "make_sequential_state: agent 1 policy shape does not match the environment");
    detail::require(agent2.contexts() == env.agent2_contexts() && agent2.actions() == env.answers,
                    "make_sequential_state: agent 2 policy shape does not match the environment");
    SequentialSystem sys{std::move(env), std::move(agent1), std::move(agent2),
                         GateState::make(config.ema_decay, config.min_samples, config.eta)};
    return {std::move(sys), 0};
}

inline TrainerState make_voting_state(VotingTaskEnv env, std::vector<LogLinearPolicy> agents,
                                      const TrainerConfig& config) {
    env.validate();
    detail::require(agents.size() == env.agents, "make_voting_state: one policy per agent required");
    for (const auto& a : agents)
        detail::require(a.contexts() == env.prompts && a.actions() == env.answers,
                        "make_voting_state: voter policy shape does not match the environment");
    std::vector<RunningStats> stats(agents.size(), RunningStats::make(config.ema_decay, config.min_samples));
    VotingSystem sys{std::move(env), std::move(agents), std::move(stats)};
    return {std::move(sys), 0};
}

struct CollectedBatch {
    std::vector<RolloutGroup> sequential;
    std::vector<VoteGroup> voting;

    std::size_t groups() const { return sequential.empty() ? voting.size() : sequential.size(); }
};

// The RNG stream for step t of a run seeded with `seed`.
inline Rng step_rng(std::uint64_t seed, std::size_t step) { return Rng(seed).split(step); }

// batch_size prompts drawn uniformly, N rollouts each. Prompt choice uses
// stream 0 of the step RNG and group b uses stream b + 1, so groups can be
// collected in any order.
inline CollectedBatch collect_batch(const TrainerState& state, const TrainerConfig& config, const Rng& rng) {
    CollectedBatch batch;
    Rng prompt_rng = rng.split(0);
    if (const auto* s = std::get_if<SequentialSystem>(&state.system)) {
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const std::size_t prompt = prompt_rng.below(s->env.prompts);
            Rng group_rng = rng.split(b + 1);
            batch.sequential.push_back(collect_pairs(s->env, s->agent1, s->agent2, prompt, config.samples_per_prompt,
                                                     group_rng, config.solo_sampling));
        }
    } else {
        const auto& v = std::get<VotingSystem>(state.system);
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const std::size_t prompt = prompt_rng.below(v.env.prompts);
            Rng group_rng = rng.split(b + 1);
            batch.voting.push_back(collect_votes(v.env, v.agents, prompt, config.samples_per_prompt, group_rng));
        }
    }
    return batch;
}

// Per-agent advantages indexed [agent][group][rollout], plus reporting extras.
struct BatchCredit {
    std::vector<std::vector<std::vector<double>>> advantages;
    std::vector<double> mean_delta;
    // 0 when no gate is in use.
    double gate = 0.0;
};

namespace detail {

inline std::vector<std::vector<double>> unpack(const std::vector<AdvantageBatch>& batches) {
    std::vector<std::vector<double>> out;
    for (const auto& b : batches) out.push_back(b.advantages);
    return out;
}

template <class Group, class Reward>
std::vector<std::vector<double>> shared_advantages(const std::vector<Group>& groups, double epsilon, Reward reward) {
    std::vector<std::vector<double>> out;
    for (const auto& g : groups) {
        std::vector<double> r;
        for (const auto& roll : g) r.push_back(reward(roll));
        out.push_back(group_advantage(r, epsilon));
    }
    return out;
}

}  // namespace detail

// Computes advantages for every agent and advances the EMA statistics (ccpo mode only).
inline BatchCredit compute_credit(TrainerState& state, const CollectedBatch& batch, const TrainerConfig& config) {
    BatchCredit credit;
    const ShapingConfig shaping = config.shaping();
    if (auto* s = std::get_if<SequentialSystem>(&state.system)) {
        const auto& groups = batch.sequential;
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& g : groups)
            for (const auto& r : g) sum += r.delta(), ++n;
        credit.mean_delta = {sum / static_cast<double>(n), 0.0};
        if (config.credit_mode == CreditMode::ccpo) {
            auto c = sequential_ccpo_credit(groups, s->gate, shaping);
            credit.advantages = {detail::unpack(c.agent1), detail::unpack(c.agent2)};
            credit.gate = c.gate;
        } else {
            auto shared = detail::shared_advantages(groups, config.epsilon,
                                                    [](const SequentialRollout& r) { return r.joint_reward; });
            credit.advantages = {shared, shared};
        }
        return credit;
    }

    auto& v = std::get<VotingSystem>(state.system);
    const auto& groups = batch.voting;
    const std::size_t k = v.agents.size();
    credit.mean_delta.assign(k, 0.0);
    std::size_t n = 0;
    for (const auto& g : groups)
        for (const auto& r : g) {
            for (std::size_t i = 0; i < k; ++i) credit.mean_delta[i] += r.per_agent_delta[i];
            ++n;
        }
    for (double& d : credit.mean_delta) d /= static_cast<double>(n);

    if (config.credit_mode == CreditMode::shared) {
        auto shared = detail::shared_advantages(groups, config.epsilon,
                                                [](const VotingRollout& r) { return r.team_reward; });
        credit.advantages.assign(k, shared);
        return credit;
    }
    VotingCredit vc = config.voting_scheme == VotingScheme::direct
                          ? direct_advantages(groups, v.stats, shaping)
                          : allocated_advantages(groups, k, config.epsilon);
    for (const auto& per_agent : vc) credit.advantages.push_back(detail::unpack(per_agent));
    return credit;
}

// One (context, action, behaviour log-prob) sample of an agent's batch.
struct ActionSample {
    ContextId context = 0;
    ActionId action = 0;
    double old_logprob = 0.0;
};

// The agent's own actions in the batch, aligned with BatchCredit::advantages[agent].
inline std::vector<std::vector<ActionSample>> agent_samples(const TrainerState& state, const CollectedBatch& batch,
                                                            std::size_t agent) {
    std::vector<std::vector<ActionSample>> out;
    if (const auto* s = std::get_if<SequentialSystem>(&state.system)) {
        for (const auto& g : batch.sequential) {
            auto& row = out.emplace_back();
            for (const auto& r : g) {
                if (agent == 0)
                    row.push_back({r.prompt, r.message, r.agent1_logprob});
                else
                    row.push_back({s->env.agent2_context(r.prompt, r.message), r.answer, r.agent2_logprob});
            }
        }
    } else {
        for (const auto& g : batch.voting) {
            auto& row = out.emplace_back();
            for (const auto& r : g) row.push_back({r.prompt, r.answers.at(agent), r.per_agent_logprob.at(agent)});
        }
    }
    return out;
}

// Mean over the batch of d/d(theta) of the clipped surrogate objective:
// slope(rho, A) * rho * score. On-policy (rho = 1) this is A * score.
inline std::vector<double> surrogate_gradient(const LogLinearPolicy& policy,
                                              const std::vector<std::vector<ActionSample>>& samples,
                                              const std::vector<std::vector<double>>& advantages, double clip_eps) {
    std::vector<double> grad(policy.params().size(), 0.0);
    std::size_t count = 0;
    for (std::size_t g = 0; g < samples.size(); ++g) {
        for (std::size_t j = 0; j < samples[g].size(); ++j) {
            const auto& s = samples[g][j];
            const double ratio = std::exp(log_prob(policy, s.context, s.action) - s.old_logprob);
            const double weight = clipped_surrogate_slope(ratio, advantages[g][j], clip_eps) * ratio;
            ++count;
            if (weight == 0.0) continue;
            const auto sc = score(policy, s.context, s.action);
            for (std::size_t a = 0; a < sc.size(); ++a) grad[s.context * policy.actions() + a] += weight * sc[a];
        }
    }
    if (count > 0)
        for (double& x : grad) x /= static_cast<double>(count);
    return grad;
}

inline double l2_norm(std::span<const double> v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    return std::sqrt(ss);
}

struct StepReport {
    std::size_t step = 0;
    std::vector<double> per_agent_mean_advantage;
    std::vector<double> per_agent_mean_delta;
    double gate_value = 0.0;
    double train_accuracy = 0.0;
    double max_kl = 0.0;
    // Pre-clipping gradient norm per agent (computed for every agent, updated or not).
    std::vector<double> grad_norms;
    std::vector<bool> updated;
    // Whether every visited context kept all probability ratios inside [1 - clip, 1 + clip].
    bool ratios_within_clip = true;
};

inline bool agent_scheduled(const TrainerConfig& config, std::size_t agent, std::size_t step, std::size_t agents) {
    if (std::find(config.frozen_agents.begin(), config.frozen_agents.end(), agent) != config.frozen_agents.end())
        return false;
    return config.schedule == Schedule::synchronous || step % agents == agent;
}

inline double batch_accuracy(const CollectedBatch& batch) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& g : batch.sequential)
        for (const auto& r : g) sum += r.joint_reward, ++n;
    for (const auto& g : batch.voting)
        for (const auto& r : g) sum += r.team_reward, ++n;
    return n ? sum / static_cast<double>(n) : 0.0;
}

// Collect, credit, update. Advances state.step.
inline StepReport step(TrainerState& state, const TrainerConfig& config) {
    const std::size_t agents = state.agent_count();
    const CollectedBatch batch = collect_batch(state, config, step_rng(config.seed, state.step));
    const BatchCredit credit = compute_credit(state, batch, config);

    StepReport report;
    report.step = state.step;
    report.gate_value = credit.gate;
    report.train_accuracy = batch_accuracy(batch);
    report.per_agent_mean_delta = credit.mean_delta;

    for (std::size_t i = 0; i < agents; ++i) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& g : credit.advantages[i])
            for (double a : g) sum += a, ++n;
        report.per_agent_mean_advantage.push_back(sum / static_cast<double>(n));

        LogLinearPolicy& policy = state.policy(i);
        const auto samples = agent_samples(state, batch, i);
        auto grad = surrogate_gradient(policy, samples, credit.advantages[i], config.clip_eps);
        const double norm = l2_norm(grad);
        if (!std::isfinite(norm)) {
            std::ostringstream os;
            os << "non-finite gradient for agent " << i + 1 << " at step " << state.step;
            throw NumericalError(os.str());
        }
        report.grad_norms.push_back(norm);
        const bool update = agent_scheduled(config, i, state.step, agents);
        report.updated.push_back(update);
        if (!update || norm == 0.0) continue;

        const double scale = norm > config.grad_clip ? config.grad_clip / norm : 1.0;
        std::set<ContextId> visited;
        for (const auto& g : samples)
            for (const auto& s : g) visited.insert(s.context);
        std::vector<std::vector<double>> before;
        for (ContextId c : visited) before.push_back(policy.probs(c));

        auto params = policy.params();
        for (std::size_t p = 0; p < params.size(); ++p) params[p] += config.learning_rate * scale * grad[p];

        std::size_t idx = 0;
        const double kl_bound = -std::log(1.0 - config.clip_eps);
        for (ContextId c : visited) {
            const auto after = policy.probs(c);
            const auto& old = before[idx++];
            const double kl = kl_divergence(old, after);
            bool in_range = true;
            for (std::size_t a = 0; a < old.size(); ++a) {
                const double r = after[a] / old[a];
                if (old[a] > 0.0 && (r < 1.0 - config.clip_eps || r > 1.0 + config.clip_eps)) in_range = false;
            }
            if (!in_range) report.ratios_within_clip = false;
            if (in_range && kl > kl_bound + 1e-12)
                throw PreconditionError("KL monitor: ratio-bounded update exceeded -log(1 - clip_eps)");
            report.max_kl = std::max(report.max_kl, kl);
        }
    }
    ++state.step;
    return report;
}

inline std::vector<StepReport> train(TrainerState& state, const TrainerConfig& config) {
    config.validate();
    std::vector<StepReport> reports;
    reports.reserve(config.steps);
    for (std::size_t t = 0; t < config.steps; ++t) reports.push_back(step(state, config));
    return reports;
}

// Greedy team accuracy, one sweep over the (uniformly weighted) prompt set.
inline double evaluate(const TrainerState& state) {
    if (const auto* s = std::get_if<SequentialSystem>(&state.system)) {
        double correct = 0.0;
        for (std::size_t x = 0; x < s->env.prompts; ++x) {
            const ActionId m = greedy_action(s->agent1, x);
            correct += s->env.reward(x, greedy_action(s->agent2, s->env.agent2_context(x, m)));
        }
        return correct / static_cast<double>(s->env.prompts);
    }
    const auto& v = std::get<VotingSystem>(state.system);
    double correct = 0.0;
    for (std::size_t x = 0; x < v.env.prompts; ++x) {
        std::vector<ActionId> answers;
        for (const auto& a : v.agents) answers.push_back(greedy_action(a, x));
        correct += decision_reward(vote(answers), v.env.truth[x]);
    }
    return correct / static_cast<double>(v.env.prompts);
}

// Greedy Agent-2 accuracy answering from the prompt alone.
inline double solo_evaluate(const TrainerState& state) {
    const auto* s = std::get_if<SequentialSystem>(&state.system);
    if (!s) throw InvalidInput("solo_evaluate: only defined for the sequential topology");
    double correct = 0.0;
    for (std::size_t x = 0; x < s->env.prompts; ++x)
        correct += s->env.reward(x, greedy_action(s->agent2, s->env.agent2_context(x, std::nullopt)));
    return correct / static_cast<double>(s->env.prompts);
}

}  // namespace ccpo
