#pragma once

#include "ccpo/error.hpp"
#include "ccpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace ccpo {

inline constexpr std::size_t kMaxPrompts = 32;
inline constexpr std::size_t kMaxMessages = 8;
inline constexpr std::size_t kMaxAnswers = 8;
inline constexpr std::size_t kMaxVoters = 5;

// Logit that makes a softmax row exactly one-hot in double precision (for <= 8 actions).
inline constexpr double kSaturatedLogit = 50.0;

inline double exact_match(ActionId answer, ActionId truth) { return answer == truth ? 1.0 : 0.0; }

// Think-Solve task family.
//
// Agent 1 sees the prompt and emits one of `messages` symbols. Agent 2 sees a
// possibly aliased view of the prompt (`agent2_view`) plus the message, and
// answers. Only the first round(hint_informativeness * messages) symbols are
// readable by Agent 2; unreadable symbols land in the same context as "no
// message", which is also the context used for solo answers.
//
// Agent-2 context layout: view * (messages + 1) + slot, slot == messages is
// the empty message.
struct SequentialTaskEnv {
    std::size_t prompts = 1;
    std::size_t answers = 2;
    std::size_t messages = 2;
    std::vector<ActionId> truth;
    std::vector<std::size_t> agent2_view;
    std::size_t views = 1;
    double hint_informativeness = 0.0;

    void validate() const {
        detail::require(prompts >= 1 && prompts <= kMaxPrompts, "SequentialTaskEnv: prompts must lie in [1, 32]");
        detail::require(answers >= 2 && answers <= kMaxAnswers, "SequentialTaskEnv: answers must lie in [2, 8]");
        detail::require(messages >= 1 && messages <= kMaxMessages, "SequentialTaskEnv: messages must lie in [1, 8]");
        detail::require(truth.size() == prompts, "SequentialTaskEnv: truth table must have one entry per prompt");
        for (ActionId t : truth) detail::require(t < answers, "SequentialTaskEnv: truth answer out of range");
        detail::require(agent2_view.size() == prompts, "SequentialTaskEnv: agent2_view must have one entry per prompt");
        detail::require(views >= 1, "SequentialTaskEnv: views must be positive");
        for (std::size_t v : agent2_view) detail::require(v < views, "SequentialTaskEnv: view id out of range");
        detail::require(hint_informativeness >= 0.0 && hint_informativeness <= 1.0,
                        "SequentialTaskEnv: hint_informativeness must lie in [0, 1]");
    }

    std::size_t readable_messages() const {
        return static_cast<std::size_t>(std::lround(hint_informativeness * static_cast<double>(messages)));
    }

    std::size_t agent1_contexts() const { return prompts; }
    std::size_t agent2_contexts() const { return views * (messages + 1); }

    // Agent 2's context for (prompt, message); std::nullopt is the empty message.
    ContextId agent2_context(std::size_t prompt, std::optional<ActionId> message) const {
        detail::require(prompt < prompts, "SequentialTaskEnv: prompt out of range");
        std::size_t slot = messages;
        if (message) {
            detail::require(*message < messages, "SequentialTaskEnv: message out of range");
            if (*message < readable_messages()) slot = *message;
        }
        return agent2_view[prompt] * (messages + 1) + slot;
    }

    double reward(std::size_t prompt, ActionId answer) const { return exact_match(answer, truth.at(prompt)); }

    // The answer that is correct in this Agent-2 context, if every prompt behind it agrees.
    std::optional<ActionId> agent2_context_truth(ContextId context) const {
        const std::size_t view = context / (messages + 1);
        std::optional<ActionId> found;
        for (std::size_t p = 0; p < prompts; ++p) {
            if (agent2_view[p] != view) continue;
            if (found && *found != truth[p]) return std::nullopt;
            found = truth[p];
        }
        return found;
    }
};

// K-agent voting task family; every agent sees the prompt and proposes an answer.
struct VotingTaskEnv {
    std::size_t prompts = 1;
    std::size_t answers = 2;
    std::size_t agents = 3;
    std::vector<ActionId> truth;

    void validate() const {
        detail::require(prompts >= 1 && prompts <= kMaxPrompts, "VotingTaskEnv: prompts must lie in [1, 32]");
        detail::require(answers >= 2 && answers <= kMaxAnswers, "VotingTaskEnv: answers must lie in [2, 8]");
        detail::require(agents >= 1 && agents <= kMaxVoters, "VotingTaskEnv: agents must lie in [1, 5]");
        detail::require(truth.size() == prompts, "VotingTaskEnv: truth table must have one entry per prompt");
        for (ActionId t : truth) detail::require(t < answers, "VotingTaskEnv: truth answer out of range");
    }
};

inline std::vector<ActionId> balanced_truth(std::size_t prompts, std::size_t answers) {
    std::vector<ActionId> t(prompts);
    for (std::size_t p = 0; p < prompts; ++p) t[p] = p % answers;
    return t;
}

// Agent 2 reads the prompt but no message: Agent 1 can never change the outcome.
inline SequentialTaskEnv make_freerider_env() {
    SequentialTaskEnv env;
    env.prompts = 4;
    env.answers = 4;
    env.messages = 4;
    env.truth = balanced_truth(env.prompts, env.answers);
    env.views = env.prompts;
    env.agent2_view.resize(env.prompts);
    for (std::size_t p = 0; p < env.prompts; ++p) env.agent2_view[p] = p;
    env.hint_informativeness = 0.0;
    return env;
}

// Agent 2 is prompt-blind; the truth is only recoverable through Agent 1's message.
inline SequentialTaskEnv make_hint_env() {
    SequentialTaskEnv env;
    env.prompts = 8;
    env.answers = 4;
    env.messages = 8;
    env.truth = balanced_truth(env.prompts, env.answers);
    env.views = 1;
    env.agent2_view.assign(env.prompts, 0);
    env.hint_informativeness = 1.0;
    return env;
}

// Three voters, binary answers: with mixed-strength agents one vote is often decisive.
inline VotingTaskEnv make_pivotal_env() {
    VotingTaskEnv env;
    env.prompts = 4;
    env.answers = 2;
    env.agents = 3;
    env.truth = balanced_truth(env.prompts, env.answers);
    return env;
}

// Single prompt, two arms, arm 0 rewarded, one agent.
inline VotingTaskEnv make_bandit_env() {
    VotingTaskEnv env;
    env.prompts = 1;
    env.answers = 2;
    env.agents = 1;
    env.truth = {0};
    return env;
}

// Logit for the correct answer that gives it probability p, other answers tied at logit 0.
inline double correct_logit(double p, std::size_t actions) {
    detail::require(p > 0.0 && p <= 1.0, "correct_logit: probability must lie in (0, 1]");
    if (p >= 1.0) return kSaturatedLogit;
    return std::log(p * static_cast<double>(actions - 1) / (1.0 - p));
}

inline void set_correct_prob(LogLinearPolicy& policy, ContextId context, ActionId correct, double p) {
    auto row = policy.logits(context);
    std::fill(row.begin(), row.end(), 0.0);
    row[correct] = correct_logit(p, policy.actions());
}

inline LogLinearPolicy make_agent1_policy(const SequentialTaskEnv& env) {
    return LogLinearPolicy(env.agent1_contexts(), env.messages);
}

inline LogLinearPolicy make_agent2_policy(const SequentialTaskEnv& env) {
    return LogLinearPolicy(env.agent2_contexts(), env.answers);
}

// Agent 2 correct with probability p in every context whose truth is determined.
inline LogLinearPolicy agent2_with_accuracy(const SequentialTaskEnv& env, double p) {
    auto policy = make_agent2_policy(env);
    for (ContextId c = 0; c < policy.contexts(); ++c)
        if (auto t = env.agent2_context_truth(c)) set_correct_prob(policy, c, *t, p);
    return policy;
}

inline LogLinearPolicy make_voter_policy(const VotingTaskEnv& env) {
    return LogLinearPolicy(env.prompts, env.answers);
}

inline LogLinearPolicy voter_with_accuracy(const VotingTaskEnv& env, double p) {
    auto policy = make_voter_policy(env);
    for (std::size_t x = 0; x < env.prompts; ++x) set_correct_prob(policy, x, env.truth[x], p);
    return policy;
}

}  // namespace ccpo
