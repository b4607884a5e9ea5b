#pragma once

// Topology-agnostic credit machinery: marginal contributions, EMA reward
// statistics, tanh shaping, within-prompt group advantages and the clipped
// surrogate term.

#include "ccpo/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace ccpo {

inline constexpr double kDefaultEpsilon = 1e-8;

struct MarginalContribution {
    std::size_t agent_id = 0;
    std::size_t rollout_id = 0;
    double delta = 0.0;
};

// Team reward minus the reward of the same rollout with one agent removed.
inline double marginal_contribution(double team_reward, double counterfactual_reward) {
    detail::require(std::isfinite(team_reward) && std::isfinite(counterfactual_reward),
                    "marginal_contribution: rewards must be finite");
    return team_reward - counterfactual_reward;
}

inline MarginalContribution make_contribution(std::size_t agent, std::size_t rollout, double team_reward,
                                              double counterfactual_reward) {
    return {agent, rollout, marginal_contribution(team_reward, counterfactual_reward)};
}

// Exponential moving average of a reward stream's mean and variance.
//
// `observed_count` counts individual values folded in, not batches. Until it
// reaches `min_samples` the statistics are considered inactive and
// standardization is the identity.
struct RunningStats {
    double mean = 0.0;
    double variance = 0.0;
    double decay = 0.99;
    std::uint64_t observed_count = 0;
    std::uint64_t min_samples = 50;

    static RunningStats make(double decay, std::uint64_t min_samples) {
        detail::require(decay > 0.0 && decay < 1.0, "RunningStats: decay must lie in (0, 1)");
        detail::require(min_samples >= 1, "RunningStats: min_samples must be positive");
        RunningStats s;
        s.decay = decay;
        s.min_samples = min_samples;
        return s;
    }

    bool active() const noexcept { return observed_count >= min_samples; }
    double stddev() const noexcept { return std::sqrt(std::max(variance, 0.0)); }
};

namespace detail {

inline double mean_of(std::span<const double> xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Divides by n.
inline double population_variance(std::span<const double> xs, double mean) {
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(xs.size());
}

// Divides by n - 1.
inline double sample_stddev(std::span<const double> xs, double mean) {
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

// Folds one batch into the EMA. Batch variance uses the population convention.
inline RunningStats ema_update(RunningStats stats, std::span<const double> batch_values) {
    detail::require(!batch_values.empty(), "ema_update: batch must be non-empty");
    for (double v : batch_values) detail::require(std::isfinite(v), "ema_update: batch values must be finite");

    const double batch_mean = detail::mean_of(batch_values);
    const double batch_var = detail::population_variance(batch_values, batch_mean);
    const double lambda = stats.decay;
    stats.mean = lambda * stats.mean + (1.0 - lambda) * batch_mean;
    stats.variance = std::max(0.0, lambda * stats.variance + (1.0 - lambda) * batch_var);
    stats.observed_count += batch_values.size();
    return stats;
}

// (delta - mean) / (std + eps) once the statistics are active; identity before.
inline double standardize(double delta, const RunningStats& stats, double epsilon = kDefaultEpsilon) {
    detail::require(epsilon > 0.0, "standardize: epsilon must be positive");
    if (!stats.active()) return delta;
    return (delta - stats.mean) / (stats.stddev() + epsilon);
}

struct ShapingConfig {
    double alpha = 1.0;
    double epsilon = kDefaultEpsilon;

    void validate() const {
        detail::require(alpha > 0.0, "ShapingConfig: alpha must be positive");
        detail::require(epsilon > 0.0, "ShapingConfig: epsilon must be positive");
    }
};

// Bounded shaped reward tanh(alpha * z). tanh rounds to exactly 1 past |x| ~ 19, so
// the result is pulled back to the largest double below 1 to keep the bound strict.
inline double shape(double z, double alpha) {
    detail::require(alpha > 0.0, "shape: alpha must be positive");
    detail::require(!std::isnan(z), "shape: z must not be NaN");
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::clamp(std::tanh(alpha * z), -hi, hi);
}

// Within-prompt group-relative advantages (r - mean) / (sample_std + eps).
//
// A group whose values are all identical carries no ranking information and
// yields exact zeros.
inline std::vector<double> group_advantage(std::span<const double> shaped_rewards,
                                           double epsilon = kDefaultEpsilon) {
    detail::require(shaped_rewards.size() >= 2, "group_advantage: need at least two samples per group");
    detail::require(epsilon > 0.0, "group_advantage: epsilon must be positive");

    std::vector<double> out(shaped_rewards.size(), 0.0);
    const double first = shaped_rewards.front();
    if (std::all_of(shaped_rewards.begin(), shaped_rewards.end(), [first](double r) { return r == first; }))
        return out;

    const double mean = detail::mean_of(shaped_rewards);
    const double denom = detail::sample_stddev(shaped_rewards, mean) + epsilon;
    for (std::size_t j = 0; j < shaped_rewards.size(); ++j) out[j] = (shaped_rewards[j] - mean) / denom;
    return out;
}

struct AdvantageBatch {
    std::vector<double> shaped_rewards;
    std::vector<double> advantages;
    double epsilon = kDefaultEpsilon;
};

// standardize -> shape -> group_advantage against a fixed statistics snapshot.
inline AdvantageBatch shaped_advantages(std::span<const double> deltas, const RunningStats& stats,
                                        const ShapingConfig& shaping) {
    shaping.validate();
    AdvantageBatch batch;
    batch.epsilon = shaping.epsilon;
    batch.shaped_rewards.reserve(deltas.size());
    for (double d : deltas) batch.shaped_rewards.push_back(shape(standardize(d, stats, shaping.epsilon), shaping.alpha));
    batch.advantages = group_advantage(batch.shaped_rewards, shaping.epsilon);
    return batch;
}

// Plain group normalization of raw rewards (shared-reward baseline, joint advantages).
inline AdvantageBatch normalized_rewards(std::span<const double> rewards, double epsilon) {
    AdvantageBatch batch;
    batch.epsilon = epsilon;
    batch.shaped_rewards.assign(rewards.begin(), rewards.end());
    batch.advantages = group_advantage(rewards, epsilon);
    return batch;
}

// Clipped surrogate loss: -min(rho * A, clip(rho, 1 - eps, 1 + eps) * A).
inline double clipped_surrogate(double ratio, double advantage, double clip_eps) {
    detail::require(ratio > 0.0 && std::isfinite(ratio), "clipped_surrogate: ratio must be positive");
    detail::require(clip_eps > 0.0 && clip_eps < 1.0, "clipped_surrogate: clip_eps must lie in (0, 1)");
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return -std::min(ratio * advantage, clipped * advantage);
}

// d/d(ratio) of the surrogate *objective* min(rho A, clip(rho) A) (the
// negated loss). Zero once the clip is binding in the direction of A.
inline double clipped_surrogate_slope(double ratio, double advantage, double clip_eps) {
    detail::require(ratio > 0.0 && std::isfinite(ratio), "clipped_surrogate_slope: ratio must be positive");
    detail::require(clip_eps > 0.0 && clip_eps < 1.0, "clipped_surrogate_slope: clip_eps must lie in (0, 1)");
    if (advantage > 0.0 && ratio > 1.0 + clip_eps) return 0.0;
    if (advantage < 0.0 && ratio < 1.0 - clip_eps) return 0.0;
    return advantage;
}

}  // namespace ccpo
