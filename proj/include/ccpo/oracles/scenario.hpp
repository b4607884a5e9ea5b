#pragma once

// Enumerable single-prompt scenarios for one active agent (others frozen),
// and the estimators checked against them: exact gradients by enumeration,
// Monte Carlo score-function estimators, optimal scalar baselines and the
// shared-vs-counterfactual variance comparison.

#include "ccpo/error.hpp"
#include "ccpo/policy.hpp"
#include "ccpo/rng.hpp"
#include "ccpo/sequential.hpp"
#include "ccpo/voting.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace ccpo::oracles {

namespace detail {
using ccpo::detail::require;
}  // namespace detail

inline constexpr std::size_t kMaxEnumeratedOutcomes = 1'000'000;

// One joint outcome with its probability, as seen by the active agent.
struct Outcome {
    double prob = 0.0;
    ActionId action = 0;
    std::vector<double> score;
    double reward = 0.0;
    double cf_reward = 0.0;
};

// One sampled joint outcome.
struct Draw {
    ActionId action = 0;
    std::vector<double> score;
    double reward = 0.0;
    double cf_reward = 0.0;
};

// clang-format off
template <class S>
concept GradientScenario = requires(const S& s, Rng& rng, std::vector<double> row) {
    { s.name() } -> std::convertible_to<std::string>;
    { s.dimension() } -> std::convertible_to<std::size_t>;
    { s.outcome_count() } -> std::convertible_to<std::size_t>;
    { s.enumerate() } -> std::same_as<std::vector<Outcome>>;
    { s.sample(rng) } -> std::same_as<Draw>;
    { s.with_active_logits(row) } -> std::same_as<S>;
};
// clang-format on

// Joint pmf of (inverse_cdf(P, u), inverse_cdf(Q, u)) for a shared uniform u:
// the overlap of the two actions' CDF intervals.
inline std::vector<std::vector<double>> quantile_coupling(std::span<const double> p, std::span<const double> q) {
    auto edges = [](std::span<const double> w) {
        std::vector<double> e(w.size() + 1, 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) e[i + 1] = e[i] + w[i];
        e.back() = 1.0;
        return e;
    };
    const auto f = edges(p), g = edges(q);
    std::vector<std::vector<double>> joint(p.size(), std::vector<double>(q.size(), 0.0));
    for (std::size_t a = 0; a < p.size(); ++a)
        for (std::size_t b = 0; b < q.size(); ++b)
            joint[a][b] = std::max(0.0, std::min(f[a + 1], g[b + 1]) - std::max(f[a], g[b]));
    return joint;
}

// Think-Solve with Agent 1 active on a fixed prompt; counterfactual = solo Agent-2 answer.
class SequentialScenario {
public:
    SequentialScenario(std::string name, SequentialTaskEnv env, LogLinearPolicy agent1, LogLinearPolicy agent2,
                       std::size_t prompt, SoloSampling solo)
        : name_(std::move(name)), env_(std::move(env)), agent1_(std::move(agent1)), agent2_(std::move(agent2)),
          prompt_(prompt), solo_(solo) {
        env_.validate();
        detail::require(prompt_ < env_.prompts, "SequentialScenario: prompt out of range");
    }

    std::string name() const { return name_; }
    std::size_t dimension() const { return env_.messages; }
    std::size_t outcome_count() const { return env_.messages * env_.answers * env_.answers; }

    std::vector<Outcome> enumerate() const {
        std::vector<Outcome> out;
        const auto p1 = agent1_.probs(prompt_);
        const auto solo = agent2_.probs(env_.agent2_context(prompt_, std::nullopt));
        for (ActionId m = 0; m < env_.messages; ++m) {
            const auto joint = agent2_.probs(env_.agent2_context(prompt_, m));
            std::vector<std::vector<double>> pair;
            if (solo_ == SoloSampling::coupled) {
                pair = quantile_coupling(joint, solo);
            } else {
                pair.assign(joint.size(), std::vector<double>(solo.size()));
                for (std::size_t a = 0; a < joint.size(); ++a)
                    for (std::size_t b = 0; b < solo.size(); ++b) pair[a][b] = joint[a] * solo[b];
            }
            const auto sc = score(agent1_, prompt_, m);
            for (ActionId a = 0; a < env_.answers; ++a)
                for (ActionId b = 0; b < env_.answers; ++b) {
                    const double pr = p1[m] * pair[a][b];
                    if (pr > 0.0) out.push_back({pr, m, sc, env_.reward(prompt_, a), env_.reward(prompt_, b)});
                }
        }
        return out;
    }

    Draw sample(Rng& rng) const {
        const auto r = sample_pair(env_, agent1_, agent2_, prompt_, rng, solo_);
        return {r.message, score(agent1_, prompt_, r.message), r.joint_reward, r.solo_reward};
    }

    SequentialScenario with_active_logits(std::span<const double> row) const {
        SequentialScenario copy = *this;
        auto dst = copy.agent1_.logits(prompt_);
        detail::require(row.size() == dst.size(), "with_active_logits: row size mismatch");
        std::copy(row.begin(), row.end(), dst.begin());
        return copy;
    }

    std::vector<double> active_logits() const {
        auto r = agent1_.logits(prompt_);
        return {r.begin(), r.end()};
    }

private:
    std::string name_;
    SequentialTaskEnv env_;
    LogLinearPolicy agent1_;
    LogLinearPolicy agent2_;
    std::size_t prompt_;
    SoloSampling solo_;
};

// K-agent voting with agent `active` varying on a fixed prompt; counterfactual = re-vote without it.
class VotingScenario {
public:
    VotingScenario(std::string name, VotingTaskEnv env, std::vector<LogLinearPolicy> policies, std::size_t prompt,
                   std::size_t active)
        : name_(std::move(name)), env_(std::move(env)), policies_(std::move(policies)), prompt_(prompt),
          active_(active) {
        env_.validate();
        detail::require(policies_.size() == env_.agents, "VotingScenario: one policy per agent required");
        detail::require(prompt_ < env_.prompts, "VotingScenario: prompt out of range");
        detail::require(active_ < env_.agents, "VotingScenario: active agent out of range");
    }

    std::string name() const { return name_; }
    std::size_t dimension() const { return env_.answers; }
    std::size_t outcome_count() const {
        std::size_t n = 1;
        for (std::size_t i = 0; i < env_.agents; ++i) n *= env_.answers;
        return n;
    }

    std::vector<Outcome> enumerate() const {
        std::vector<std::vector<double>> probs;
        for (const auto& pi : policies_) probs.push_back(pi.probs(prompt_));
        std::vector<Outcome> out;
        std::vector<ActionId> answers(env_.agents, 0);
        const std::size_t total = outcome_count();
        for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rest = idx;
            double pr = 1.0;
            for (std::size_t i = 0; i < env_.agents; ++i) {
                answers[i] = rest % env_.answers;
                rest /= env_.answers;
                pr *= probs[i][answers[i]];
            }
            if (pr <= 0.0) continue;
            const auto cf = counterfactual_rewards(answers, env_.truth[prompt_]);
            out.push_back({pr, answers[active_], score(policies_[active_], prompt_, answers[active_]), cf.team_reward,
                           cf.cf_rewards[active_]});
        }
        return out;
    }

    Draw sample(Rng& rng) const {
        const auto r = sample_votes(env_, policies_, prompt_, rng);
        const ActionId a = r.answers[active_];
        return {a, score(policies_[active_], prompt_, a), r.team_reward, r.per_agent_cf_reward[active_]};
    }

    VotingScenario with_active_logits(std::span<const double> row) const {
        VotingScenario copy = *this;
        auto dst = copy.policies_[active_].logits(prompt_);
        detail::require(row.size() == dst.size(), "with_active_logits: row size mismatch");
        std::copy(row.begin(), row.end(), dst.begin());
        return copy;
    }

    std::vector<double> active_logits() const {
        auto r = policies_[active_].logits(prompt_);
        return {r.begin(), r.end()};
    }

private:
    std::string name_;
    VotingTaskEnv env_;
    std::vector<LogLinearPolicy> policies_;
    std::size_t prompt_;
    std::size_t active_;
};

static_assert(GradientScenario<SequentialScenario>);
static_assert(GradientScenario<VotingScenario>);

using AnyScenario = std::variant<SequentialScenario, VotingScenario>;

template <GradientScenario S>
std::vector<Outcome> enumerate_checked(const S& s) {
    if (s.outcome_count() > kMaxEnumeratedOutcomes)
        throw Refusal("scenario '" + std::string(s.name()) + "' has " + std::to_string(s.outcome_count()) +
                      " joint outcomes; exact enumeration is limited to 1e6");
    return s.enumerate();
}

// J = sum_tau P(tau) R(tau).
template <GradientScenario S>
double exact_objective(const S& s) {
    double j = 0.0;
    for (const auto& o : enumerate_checked(s)) j += o.prob * o.reward;
    return j;
}

// grad J = sum_tau P(tau) score(tau) R(tau), by full enumeration.
template <GradientScenario S>
std::vector<double> exact_gradient(const S& s) {
    std::vector<double> g(s.dimension(), 0.0);
    for (const auto& o : enumerate_checked(s))
        for (std::size_t d = 0; d < g.size(); ++d) g[d] += o.prob * o.score[d] * o.reward;
    return g;
}

// b* = E[|g|^2 R] / E[|g|^2] by enumeration.
template <GradientScenario S>
double exact_optimal_baseline(const S& s) {
    double num = 0.0, den = 0.0;
    for (const auto& o : enumerate_checked(s)) {
        double n2 = 0.0;
        for (double x : o.score) n2 += x * x;
        num += o.prob * n2 * o.reward;
        den += o.prob * n2;
    }
    if (den <= 0.0) throw Refusal("optimal baseline undefined: score norm is identically zero");
    return num / den;
}

enum class EstimatorKind {
    shared,           // g * R
    counterfactual,   // g * (R - R_cf)
    scalar_baseline,  // g * (R - b)
    baseline_term,    // g * R_cf
};

struct EstimatorSpec {
    EstimatorKind kind = EstimatorKind::shared;
    double baseline = 0.0;
    std::size_t samples = 100'000;
};

inline double estimator_coefficient(const EstimatorSpec& spec, double reward, double cf_reward) {
    switch (spec.kind) {
        case EstimatorKind::shared: return reward;
        case EstimatorKind::counterfactual: return reward - cf_reward;
        case EstimatorKind::scalar_baseline: return reward - spec.baseline;
        case EstimatorKind::baseline_term: return cf_reward;
    }
    return 0.0;
}

// Exact trace-of-covariance of an estimator, by enumeration.
template <GradientScenario S>
double exact_variance(const S& s, const EstimatorSpec& spec) {
    const auto outcomes = enumerate_checked(s);
    std::vector<double> mean(s.dimension(), 0.0);
    double second = 0.0;
    for (const auto& o : outcomes) {
        const double c = estimator_coefficient(spec, o.reward, o.cf_reward);
        for (std::size_t d = 0; d < mean.size(); ++d) {
            mean[d] += o.prob * c * o.score[d];
            second += o.prob * c * c * o.score[d] * o.score[d];
        }
    }
    double m2 = 0.0;
    for (double m : mean) m2 += m * m;
    return second - m2;
}

// M draws compressed into distinct atoms. The active agent's score depends
// only on its action, so (action, R, R_cf) identifies an atom.
struct SampleSet {
    struct Atom {
        ActionId action = 0;
        std::vector<double> score;
        double reward = 0.0;
        double cf_reward = 0.0;
        double count = 0.0;
    };
    std::size_t dimension = 0;
    std::size_t samples = 0;
    std::vector<Atom> atoms;
};

template <GradientScenario S>
SampleSet draw_samples(const S& s, Rng& rng, std::size_t m) {
    SampleSet set;
    set.dimension = s.dimension();
    set.samples = m;
    for (std::size_t i = 0; i < m; ++i) {
        Draw d = s.sample(rng);
        auto it = std::find_if(set.atoms.begin(), set.atoms.end(), [&](const SampleSet::Atom& a) {
            return a.action == d.action && a.reward == d.reward && a.cf_reward == d.cf_reward;
        });
        if (it == set.atoms.end())
            set.atoms.push_back({d.action, std::move(d.score), d.reward, d.cf_reward, 1.0});
        else
            it->count += 1.0;
    }
    return set;
}

struct McEstimate {
    std::vector<double> mean;
    std::vector<double> standard_error;
    // Trace of the empirical covariance (divisor M - 1).
    double variance = 0.0;
    std::size_t samples = 0;
};

namespace detail {

// Moments of coefficient(atom) * score(atom) under per-atom weights summing to `total`.
inline McEstimate estimator_moments(const SampleSet& set, const std::vector<double>& weights, double total,
                                    const EstimatorSpec& spec) {
    McEstimate est;
    est.samples = static_cast<std::size_t>(total);
    est.mean.assign(set.dimension, 0.0);
    est.standard_error.assign(set.dimension, 0.0);
    for (std::size_t i = 0; i < set.atoms.size(); ++i) {
        const auto& a = set.atoms[i];
        const double c = estimator_coefficient(spec, a.reward, a.cf_reward);
        for (std::size_t d = 0; d < set.dimension; ++d) est.mean[d] += weights[i] * c * a.score[d];
    }
    for (double& m : est.mean) m /= total;
    std::vector<double> var(set.dimension, 0.0);
    for (std::size_t i = 0; i < set.atoms.size(); ++i) {
        const auto& a = set.atoms[i];
        const double c = estimator_coefficient(spec, a.reward, a.cf_reward);
        for (std::size_t d = 0; d < set.dimension; ++d) {
            const double dev = c * a.score[d] - est.mean[d];
            var[d] += weights[i] * dev * dev;
        }
    }
    for (std::size_t d = 0; d < set.dimension; ++d) {
        var[d] /= (total - 1.0);
        est.variance += var[d];
        est.standard_error[d] = std::sqrt(var[d] / total);
    }
    return est;
}

inline std::vector<double> atom_counts(const SampleSet& set) {
    std::vector<double> w;
    for (const auto& a : set.atoms) w.push_back(a.count);
    return w;
}

}  // namespace detail

inline McEstimate estimate(const SampleSet& set, const EstimatorSpec& spec) {
    detail::require(set.samples >= 2, "estimate: need at least two samples");
    return detail::estimator_moments(set, detail::atom_counts(set), static_cast<double>(set.samples), spec);
}

// Monte Carlo mean, per-component standard error and trace variance of an estimator.
template <GradientScenario S>
McEstimate mc_gradient(const EstimatorSpec& spec, const S& s, Rng& rng) {
    detail::require(spec.samples >= 2, "mc_gradient: need at least two samples");
    return estimate(draw_samples(s, rng, spec.samples), spec);
}

struct BaselineEstimate {
    // Empirical ratio E[|g|^2 R] / E[|g|^2].
    double formula = 0.0;
    // Argmin over b in {0, 0.01, ..., 1} of the empirical estimator variance.
    double grid_argmin = 0.0;
    double grid_min_variance = 0.0;
};

inline double weighted_score_norm(const SampleSet& set) {
    double den = 0.0;
    for (const auto& a : set.atoms) {
        double n2 = 0.0;
        for (double x : a.score) n2 += x * x;
        den += a.count * n2;
    }
    return den;
}

inline double empirical_optimal_baseline(const SampleSet& set) {
    double num = 0.0;
    for (const auto& a : set.atoms) {
        double n2 = 0.0;
        for (double x : a.score) n2 += x * x;
        num += a.count * n2 * a.reward;
    }
    const double den = weighted_score_norm(set);
    if (den <= 0.0) throw Refusal("optimal baseline undefined: score norm is identically zero on the sample");
    return num / den;
}

inline BaselineEstimate optimal_baseline(const SampleSet& set) {
    BaselineEstimate out;
    out.formula = empirical_optimal_baseline(set);
    out.grid_min_variance = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= 100; ++step) {
        const double b = step / 100.0;
        const double v = estimate(set, {EstimatorKind::scalar_baseline, b, set.samples}).variance;
        if (v < out.grid_min_variance) {
            out.grid_min_variance = v;
            out.grid_argmin = b;
        }
    }
    return out;
}

template <GradientScenario S>
BaselineEstimate optimal_baseline(const S& s, Rng& rng, std::size_t m) {
    detail::require(m >= 10'000, "optimal_baseline: need at least 1e4 samples");
    return optimal_baseline(draw_samples(s, rng, m));
}

struct VarianceDifference {
    double var_a = 0.0;
    double var_b = 0.0;
    // Bootstrap standard error and 95% percentile interval of var_a - var_b.
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;

    bool b_significantly_lower() const { return ci_low > 0.0; }
};

// Variance of two estimators on the same sample, with a multinomial (atom-count) bootstrap of the difference.
inline VarianceDifference bootstrap_variance_difference(const SampleSet& set, const EstimatorSpec& a,
                                                        const EstimatorSpec& b, Rng& rng,
                                                        std::size_t resamples = 1000) {
    detail::require(resamples >= 2, "bootstrap: need at least two resamples");
    VarianceDifference out;
    out.var_a = estimate(set, a).variance;
    out.var_b = estimate(set, b).variance;

    const double total = static_cast<double>(set.samples);
    const auto counts = detail::atom_counts(set);
    std::vector<double> w(counts.size());
    std::vector<double> diffs;
    diffs.reserve(resamples);
    for (std::size_t r = 0; r < resamples; ++r) {
        // Multinomial(M, counts / M) via sequential conditional binomials.
        auto remaining = static_cast<long long>(set.samples);
        double remaining_mass = total;
        for (std::size_t i = 0; i < counts.size(); ++i) {
            if (i + 1 == counts.size() || remaining == 0) {
                w[i] = static_cast<double>(remaining);
                remaining = 0;
                continue;
            }
            const double p = std::clamp(counts[i] / remaining_mass, 0.0, 1.0);
            std::binomial_distribution<long long> bin(remaining, p);
            const long long n = bin(rng);
            w[i] = static_cast<double>(n);
            remaining -= n;
            remaining_mass -= counts[i];
        }
        diffs.push_back(detail::estimator_moments(set, w, total, a).variance -
                        detail::estimator_moments(set, w, total, b).variance);
    }
    double mean = 0.0;
    for (double d : diffs) mean += d;
    mean /= static_cast<double>(diffs.size());
    double ss = 0.0;
    for (double d : diffs) ss += (d - mean) * (d - mean);
    out.se = std::sqrt(ss / static_cast<double>(diffs.size() - 1));
    std::sort(diffs.begin(), diffs.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(diffs.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, diffs.size() - 1);
        return diffs[lo] + (pos - static_cast<double>(lo)) * (diffs[hi] - diffs[lo]);
    };
    out.ci_low = quantile(0.025);
    out.ci_high = quantile(0.975);
    return out;
}

struct VarianceReport {
    double var_shared = 0.0;
    double var_cf = 0.0;
    // Bootstrap standard error and 95% interval of var_shared - var_cf.
    double diff_se = 0.0;
    double diff_ci_low = 0.0;
    double diff_ci_high = 0.0;
    double b_star = 0.0;
    // E[|g|^2 (R_cf - b*)^2] and E[|g|^2 b*^2].
    double condition_lhs = 0.0;
    double condition_rhs = 0.0;
    bool condition_holds = false;
    // condition_holds implies var_cf <= var_shared + 3 SE.
    bool implication_holds = true;

    bool cf_significantly_lower() const { return diff_ci_low > 0.0; }
};

inline VarianceReport variance_comparison(const SampleSet& set, Rng& rng, std::size_t resamples = 1000) {
    VarianceReport rep;
    const auto diff = bootstrap_variance_difference(set, {EstimatorKind::shared, 0.0, set.samples},
                                                    {EstimatorKind::counterfactual, 0.0, set.samples}, rng, resamples);
    rep.var_shared = diff.var_a;
    rep.var_cf = diff.var_b;
    rep.diff_se = diff.se;
    rep.diff_ci_low = diff.ci_low;
    rep.diff_ci_high = diff.ci_high;

    const double total = static_cast<double>(set.samples);
    rep.b_star = empirical_optimal_baseline(set);
    for (const auto& a : set.atoms) {
        double n2 = 0.0;
        for (double x : a.score) n2 += x * x;
        rep.condition_lhs += a.count * n2 * (a.cf_reward - rep.b_star) * (a.cf_reward - rep.b_star);
        rep.condition_rhs += a.count * n2 * rep.b_star * rep.b_star;
    }
    rep.condition_lhs /= total;
    rep.condition_rhs /= total;
    rep.condition_holds = rep.condition_lhs <= rep.condition_rhs;
    rep.implication_holds = !rep.condition_holds || rep.var_cf <= rep.var_shared + 3.0 * rep.diff_se;
    return rep;
}

template <GradientScenario S>
VarianceReport variance_comparison(const S& s, Rng& rng, std::size_t m, std::size_t resamples = 1000) {
    detail::require(m >= 2, "variance_comparison: need at least two samples");
    Rng sample_rng = rng.split(1);
    Rng boot_rng = rng.split(2);
    return variance_comparison(draw_samples(s, sample_rng, m), boot_rng, resamples);
}

}  // namespace ccpo::oracles
