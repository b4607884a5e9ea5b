#pragma once

#include "ccpo/error.hpp"
#include "ccpo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ccpo {

using ContextId = std::size_t;
using ActionId = std::size_t;

// Tabular softmax policy: one row of logits per context.
class LogLinearPolicy {
public:
    LogLinearPolicy() = default;

    LogLinearPolicy(std::size_t contexts, std::size_t actions)
        : LogLinearPolicy(contexts, actions, std::vector<double>(contexts * actions, 0.0)) {}

    LogLinearPolicy(std::size_t contexts, std::size_t actions, std::vector<double> params)
        : contexts_(contexts), actions_(actions), params_(std::move(params)) {
        detail::require(contexts > 0 && actions > 0, "LogLinearPolicy: contexts and actions must be positive");
        detail::require(params_.size() == contexts * actions, "LogLinearPolicy: parameter table has wrong size");
        for (double p : params_) detail::require(std::isfinite(p), "LogLinearPolicy: parameters must be finite");
    }

    std::size_t contexts() const noexcept { return contexts_; }
    std::size_t actions() const noexcept { return actions_; }

    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }

    std::span<const double> logits(ContextId c) const {
        check_context(c);
        return {params_.data() + c * actions_, actions_};
    }
    std::span<double> logits(ContextId c) {
        check_context(c);
        return {params_.data() + c * actions_, actions_};
    }

    // Softmax of the context's logits (max-shifted).
    std::vector<double> probs(ContextId c) const {
        const auto row = logits(c);
        const double m = *std::max_element(row.begin(), row.end());
        std::vector<double> p(actions_);
        double z = 0.0;
        for (std::size_t a = 0; a < actions_; ++a) z += (p[a] = std::exp(row[a] - m));
        for (double& x : p) x /= z;
        return p;
    }

    void check_context(ContextId c) const {
        if (c >= contexts_)
            throw InvalidInput("policy: context " + std::to_string(c) + " out of range (" +
                               std::to_string(contexts_) + " contexts)");
    }
    void check_action(ActionId a) const {
        if (a >= actions_)
            throw InvalidInput("policy: action " + std::to_string(a) + " out of range (" +
                               std::to_string(actions_) + " actions)");
    }

    friend bool operator==(const LogLinearPolicy&, const LogLinearPolicy&) = default;

private:
    std::size_t contexts_ = 0;
    std::size_t actions_ = 0;
    std::vector<double> params_;
};

// Inverse-CDF draw from `probs` with a given uniform u in [0, 1).
inline ActionId inverse_cdf(std::span<const double> probs, double u) {
    double cum = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
        cum += probs[a];
        if (u < cum) return a;
    }
    // Rounding left u above the final partial sum; take the last action with mass.
    for (std::size_t a = probs.size(); a-- > 0;)
        if (probs[a] > 0.0) return a;
    return probs.size() - 1;
}

inline ActionId sample_with_uniform(const LogLinearPolicy& policy, ContextId context, double u) {
    return inverse_cdf(policy.probs(context), u);
}

// One uniform draw, then inverse CDF over softmax(params[context]).
inline ActionId sample(const LogLinearPolicy& policy, ContextId context, Rng& rng) {
    policy.check_context(context);
    return sample_with_uniform(policy, context, rng.uniform());
}

inline double log_prob(const LogLinearPolicy& policy, ContextId context, ActionId action) {
    policy.check_action(action);
    const auto row = policy.logits(context);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double l : row) z += std::exp(l - m);
    return row[action] - m - std::log(z);
}

// Gradient of log pi(action | context) w.r.t. that context's logits: onehot(action) - probs.
inline std::vector<double> score(const LogLinearPolicy& policy, ContextId context, ActionId action) {
    policy.check_action(action);
    auto g = policy.probs(context);
    for (double& x : g) x = -x;
    g[action] += 1.0;
    return g;
}

// Argmax action; ties go to the lowest index.
inline ActionId greedy_action(const LogLinearPolicy& policy, ContextId context) {
    const auto row = policy.logits(context);
    return static_cast<ActionId>(std::max_element(row.begin(), row.end()) - row.begin());
}

// KL(p || q) over a shared support. Terms with p = 0 contribute nothing.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    detail::require(p.size() == q.size(), "kl_divergence: size mismatch");
    double kl = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        if (p[a] <= 0.0) continue;
        kl += p[a] * (std::log(p[a]) - std::log(q[a]));
    }
    return std::max(kl, 0.0);
}

}  // namespace ccpo
