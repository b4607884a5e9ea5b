#pragma once

// Clip-to-KL bound and the block-update gain bound on small tabular MDPs.
// Values, advantages and visitation are exact linear solves.

#include "ccpo/envs.hpp"
#include "ccpo/error.hpp"
#include "ccpo/policy.hpp"
#include "ccpo/rng.hpp"
#include "ccpo/voting.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ccpo::oracles {

namespace detail {
using ccpo::detail::require;
}  // namespace detail

struct ClipKlReport {
    bool ratio_in_bounds = false;
    double kl = 0.0;
    double bound = 0.0;
    // false only when every ratio is in bounds and kl > bound + 1e-12.
    bool holds = true;
};

inline double clip_kl_bound(double clip_eps) {
    detail::require(clip_eps > 0.0 && clip_eps < 1.0, "clip_kl_bound: clip epsilon must lie in (0, 1)");
    return -std::log1p(-clip_eps);
}

inline ClipKlReport clip_kl_check(std::span<const double> old_probs, std::span<const double> new_probs,
                                  double clip_eps) {
    detail::require(old_probs.size() == new_probs.size() && !old_probs.empty(),
                    "clip_kl_check: distributions must share a support");
    ClipKlReport rep;
    rep.bound = clip_kl_bound(clip_eps);
    rep.ratio_in_bounds = true;
    for (std::size_t a = 0; a < old_probs.size(); ++a) {
        if (old_probs[a] <= 0.0) continue;
        const double r = new_probs[a] / old_probs[a];
        if (r < 1.0 - clip_eps || r > 1.0 + clip_eps) rep.ratio_in_bounds = false;
    }
    rep.kl = kl_divergence(old_probs, new_probs);
    rep.holds = !rep.ratio_in_bounds || rep.kl <= rep.bound + 1e-12;
    return rep;
}

inline std::vector<double> random_simplex_point(Rng& rng, std::size_t n) {
    std::exponential_distribution<double> expo(1.0);
    std::vector<double> p(n);
    double total = 0.0;
    for (double& x : p) total += (x = expo(rng));
    for (double& x : p) x /= total;
    return p;
}

struct PolicyPair {
    std::vector<double> old_probs;
    std::vector<double> new_probs;
};

// A pair whose likelihood ratios all lie in [1 - eps, 1 + eps]. Ratios are
// drawn uniformly, shifted so the new distribution normalizes, and the draw is
// rejected if the shift pushes a ratio out of bounds. Every fourth attempt
// pins the ratios to the two endpoints to stress the bound.
inline PolicyPair random_ratio_bounded_pair(Rng& rng, std::size_t actions, double clip_eps) {
    detail::require(actions >= 2, "random_ratio_bounded_pair: need at least two actions");
    for (std::size_t attempt = 0;; ++attempt) {
        PolicyPair pair;
        pair.old_probs = random_simplex_point(rng, actions);
        const bool extreme = rng.below(4) == 0;
        std::vector<double> r(actions);
        for (double& x : r)
            x = extreme ? (rng.below(2) == 0 ? 1.0 - clip_eps : 1.0 + clip_eps)
                        : 1.0 - clip_eps + 2.0 * clip_eps * rng.uniform();
        double s = 0.0;
        for (std::size_t a = 0; a < actions; ++a) s += pair.old_probs[a] * r[a];
        bool ok = true;
        pair.new_probs.resize(actions);
        for (std::size_t a = 0; a < actions; ++a) {
            r[a] += 1.0 - s;
            if (r[a] < 1.0 - clip_eps || r[a] > 1.0 + clip_eps) ok = false;
            pair.new_probs[a] = pair.old_probs[a] * r[a];
        }
        if (ok) return pair;
        if (attempt > 10'000) throw NumericalError("random_ratio_bounded_pair: rejection sampler stalled");
    }
}

struct BatteryReport {
    std::size_t trials = 0;
    std::size_t violations = 0;
    // Largest observed left-hand side (KL, or bound slack, depending on the battery).
    double worst = 0.0;
    double bound = 0.0;
};

inline BatteryReport clip_kl_battery(Rng& rng, std::size_t trials = 10'000, double clip_eps = 0.2) {
    BatteryReport rep;
    rep.bound = clip_kl_bound(clip_eps);
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t actions = 2 + rng.below(kMaxAnswers - 1);
        const auto pair = random_ratio_bounded_pair(rng, actions, clip_eps);
        const auto check = clip_kl_check(pair.old_probs, pair.new_probs, clip_eps);
        ++rep.trials;
        if (!check.ratio_in_bounds) throw NumericalError("clip_kl_battery: generator produced an out-of-bounds pair");
        if (!check.holds) ++rep.violations;
        rep.worst = std::max(rep.worst, check.kl);
    }
    return rep;
}

// Row-stochastic S x A policy table.
using TabularPolicy = Eigen::MatrixXd;

struct TabularMDP {
    std::size_t states = 1;
    std::size_t actions = 1;
    // transition[(s * actions + a) * states + s'].
    std::vector<double> transition;
    // reward[s * actions + a], in [0, 1].
    std::vector<double> reward;
    double gamma = 0.9;
    std::vector<double> start;

    double p(std::size_t s, std::size_t a, std::size_t next) const {
        return transition[(s * actions + a) * states + next];
    }
    double r(std::size_t s, std::size_t a) const { return reward[s * actions + a]; }

    void validate() const {
        detail::require(states >= 1 && actions >= 1, "TabularMDP: need at least one state and action");
        detail::require(gamma > 0.0 && gamma < 1.0, "TabularMDP: gamma must lie in (0, 1)");
        detail::require(transition.size() == states * actions * states, "TabularMDP: transition table has wrong size");
        detail::require(reward.size() == states * actions, "TabularMDP: reward table has wrong size");
        detail::require(start.size() == states, "TabularMDP: start distribution has wrong size");
        for (std::size_t sa = 0; sa < states * actions; ++sa) {
            double total = 0.0;
            for (std::size_t n = 0; n < states; ++n) {
                const double x = transition[sa * states + n];
                detail::require(x >= 0.0, "TabularMDP: negative transition probability");
                total += x;
            }
            detail::require(std::abs(total - 1.0) <= 1e-12, "TabularMDP: transition row does not sum to 1");
            detail::require(reward[sa] >= 0.0 && reward[sa] <= 1.0, "TabularMDP: reward must lie in [0, 1]");
        }
        double total = 0.0;
        for (double x : start) total += x;
        detail::require(std::abs(total - 1.0) <= 1e-12, "TabularMDP: start distribution does not sum to 1");
    }
};

namespace detail {

inline void check_policy(const TabularMDP& mdp, const TabularPolicy& pi) {
    require(static_cast<std::size_t>(pi.rows()) == mdp.states && static_cast<std::size_t>(pi.cols()) == mdp.actions,
            "tabular policy shape does not match the MDP");
    for (Eigen::Index s = 0; s < pi.rows(); ++s)
        require(std::abs(pi.row(s).sum() - 1.0) <= 1e-9 && pi.row(s).minCoeff() >= 0.0,
                "tabular policy row is not a distribution");
}

inline Eigen::MatrixXd state_transition(const TabularMDP& mdp, const TabularPolicy& pi) {
    const auto S = static_cast<Eigen::Index>(mdp.states);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(S, S);
    for (std::size_t s = 0; s < mdp.states; ++s)
        for (std::size_t a = 0; a < mdp.actions; ++a)
            for (std::size_t n = 0; n < mdp.states; ++n)
                P(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n)) +=
                    pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * mdp.p(s, a, n);
    return P;
}

inline Eigen::VectorXd start_vector(const TabularMDP& mdp) {
    return Eigen::Map<const Eigen::VectorXd>(mdp.start.data(), static_cast<Eigen::Index>(mdp.states));
}

}  // namespace detail

// V_pi = (I - gamma P_pi)^-1 r_pi.
inline Eigen::VectorXd state_values(const TabularMDP& mdp, const TabularPolicy& pi) {
    detail::check_policy(mdp, pi);
    const auto S = static_cast<Eigen::Index>(mdp.states);
    Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(S);
    for (std::size_t s = 0; s < mdp.states; ++s)
        for (std::size_t a = 0; a < mdp.actions; ++a)
            r_pi(static_cast<Eigen::Index>(s)) += pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * mdp.r(s, a);
    const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(S, S) - mdp.gamma * detail::state_transition(mdp, pi);
    return M.partialPivLu().solve(r_pi);
}

inline Eigen::MatrixXd action_values(const TabularMDP& mdp, const TabularPolicy& pi) {
    const Eigen::VectorXd v = state_values(mdp, pi);
    Eigen::MatrixXd q(static_cast<Eigen::Index>(mdp.states), static_cast<Eigen::Index>(mdp.actions));
    for (std::size_t s = 0; s < mdp.states; ++s)
        for (std::size_t a = 0; a < mdp.actions; ++a) {
            double next = 0.0;
            for (std::size_t n = 0; n < mdp.states; ++n) next += mdp.p(s, a, n) * v(static_cast<Eigen::Index>(n));
            q(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = mdp.r(s, a) + mdp.gamma * next;
        }
    return q;
}

inline Eigen::MatrixXd advantages(const TabularMDP& mdp, const TabularPolicy& pi) {
    const Eigen::VectorXd v = state_values(mdp, pi);
    return action_values(mdp, pi).colwise() - v;
}

// Unnormalized discounted return from the start distribution.
inline double discounted_return(const TabularMDP& mdp, const TabularPolicy& pi) {
    return detail::start_vector(mdp).dot(state_values(mdp, pi));
}

// Normalized discounted visitation d(s) = (1 - gamma) sum_t gamma^t P(s_t = s).
inline Eigen::VectorXd visitation(const TabularMDP& mdp, const TabularPolicy& pi) {
    detail::check_policy(mdp, pi);
    const auto S = static_cast<Eigen::Index>(mdp.states);
    const Eigen::MatrixXd M =
        (Eigen::MatrixXd::Identity(S, S) - mdp.gamma * detail::state_transition(mdp, pi)).transpose();
    return (1.0 - mdp.gamma) * M.partialPivLu().solve(detail::start_vector(mdp));
}

inline double max_state_kl(const TabularPolicy& old_pi, const TabularPolicy& new_pi) {
    double worst = 0.0;
    for (Eigen::Index s = 0; s < old_pi.rows(); ++s) {
        const Eigen::VectorXd p = old_pi.row(s).transpose(), q = new_pi.row(s).transpose();
        worst = std::max(worst, kl_divergence(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
                                              std::span<const double>(q.data(), static_cast<std::size_t>(q.size()))));
    }
    return worst;
}

// C(gamma) = 2 gamma sqrt(2) / (1 - gamma)^2.
inline double trust_region_constant(double gamma) {
    detail::require(gamma > 0.0 && gamma < 1.0, "trust_region_constant: gamma must lie in (0, 1)");
    return 2.0 * gamma * std::sqrt(2.0) / ((1.0 - gamma) * (1.0 - gamma));
}

struct BlockGainReport {
    double lhs = 0.0;  // J(new) - J(old)
    double rhs = 0.0;  // delta_L - C(gamma) eps sqrt(delta)
    double surrogate_gain = 0.0;
    double epsilon = 0.0;
    double constant = 0.0;
    double max_kl = 0.0;
    bool holds = false;
};

// J(new) - J(old) >= delta_L - C(gamma) eps sqrt(delta_kl), with
// delta_L = 1/(1 - gamma) sum_s d_old(s) sum_a pi_new(a|s) A_old(s, a) and
// eps = max |A_old(s, a)|.
inline BlockGainReport block_gain_check(const TabularMDP& mdp, const TabularPolicy& old_pi,
                                        const TabularPolicy& new_pi, double delta_kl) {
    mdp.validate();
    detail::require(mdp.states * mdp.actions <= 64, "block_gain_check: S * A must not exceed 64");
    detail::check_policy(mdp, old_pi);
    detail::check_policy(mdp, new_pi);
    detail::require(delta_kl >= 0.0, "block_gain_check: KL radius must be non-negative");
    BlockGainReport rep;
    rep.max_kl = max_state_kl(old_pi, new_pi);
    if (rep.max_kl > delta_kl)
        throw PreconditionError("block_gain_check: max-state KL " + std::to_string(rep.max_kl) +
                                " exceeds the radius " + std::to_string(delta_kl));
    const Eigen::MatrixXd adv = advantages(mdp, old_pi);
    const Eigen::VectorXd d = visitation(mdp, old_pi);
    rep.surrogate_gain = d.dot(new_pi.cwiseProduct(adv).rowwise().sum()) / (1.0 - mdp.gamma);
    rep.epsilon = adv.cwiseAbs().maxCoeff();
    rep.constant = trust_region_constant(mdp.gamma);
    rep.lhs = discounted_return(mdp, new_pi) - discounted_return(mdp, old_pi);
    rep.rhs = rep.surrogate_gain - rep.constant * rep.epsilon * std::sqrt(delta_kl);
    rep.holds = rep.lhs >= rep.rhs - 1e-9;
    return rep;
}

inline TabularMDP random_mdp(Rng& rng, std::size_t states, std::size_t actions, double gamma) {
    TabularMDP mdp;
    mdp.states = states;
    mdp.actions = actions;
    mdp.gamma = gamma;
    for (std::size_t sa = 0; sa < states * actions; ++sa) {
        const auto row = random_simplex_point(rng, states);
        mdp.transition.insert(mdp.transition.end(), row.begin(), row.end());
        mdp.reward.push_back(rng.uniform());
    }
    mdp.start = random_simplex_point(rng, states);
    mdp.validate();
    return mdp;
}

inline TabularPolicy softmax_rows(const Eigen::MatrixXd& logits) {
    TabularPolicy pi(logits.rows(), logits.cols());
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
        const Eigen::RowVectorXd e = (logits.row(s).array() - logits.row(s).maxCoeff()).exp();
        pi.row(s) = e / e.sum();
    }
    return pi;
}

inline TabularPolicy random_policy(Rng& rng, std::size_t states, std::size_t actions) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd logits(static_cast<Eigen::Index>(states), static_cast<Eigen::Index>(actions));
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
    return softmax_rows(logits);
}

// Log-space Gaussian perturbation of every row.
inline TabularPolicy perturbed_policy(Rng& rng, const TabularPolicy& pi, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    Eigen::MatrixXd logits = pi.array().log().matrix();
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] += n(rng);
    return softmax_rows(logits);
}

// Random MDPs (S, A in [2, 8], gamma alternating 0.5 / 0.9) with KL-bounded perturbations.
inline BatteryReport block_gain_battery(Rng& rng, std::size_t trials = 500) {
    BatteryReport rep;
    rep.worst = -std::numeric_limits<double>::infinity();
    std::uniform_real_distribution<double> log_scale(std::log(1e-3), std::log(1.0));
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t S = 2 + rng.below(7), A = 2 + rng.below(7);
        const double gamma = t % 2 == 0 ? 0.5 : 0.9;
        const auto mdp = random_mdp(rng, S, A, gamma);
        const auto old_pi = random_policy(rng, S, A);
        const auto new_pi = perturbed_policy(rng, old_pi, std::exp(log_scale(rng)));
        const auto check = block_gain_check(mdp, old_pi, new_pi, max_state_kl(old_pi, new_pi));
        ++rep.trials;
        if (!check.holds) ++rep.violations;
        rep.worst = std::max(rep.worst, check.rhs - check.lhs);
    }
    return rep;
}

// Agent 1's view with Agent 2 frozen: one state per prompt plus an absorbing
// terminal. r(p, m) is the expected joint reward of message m.
inline TabularMDP induced_mdp(const SequentialTaskEnv& env, const LogLinearPolicy& agent2, double gamma) {
    env.validate();
    TabularMDP mdp;
    mdp.states = env.prompts + 1;
    mdp.actions = env.messages;
    mdp.gamma = gamma;
    const std::size_t terminal = env.prompts;
    mdp.transition.assign(mdp.states * mdp.actions * mdp.states, 0.0);
    mdp.reward.assign(mdp.states * mdp.actions, 0.0);
    for (std::size_t s = 0; s < mdp.states; ++s)
        for (std::size_t m = 0; m < mdp.actions; ++m) {
            mdp.transition[(s * mdp.actions + m) * mdp.states + terminal] = 1.0;
            if (s == terminal) continue;
            const auto probs = agent2.probs(env.agent2_context(s, m));
            mdp.reward[s * mdp.actions + m] = probs[env.truth[s]];
        }
    mdp.start.assign(mdp.states, 1.0 / static_cast<double>(env.prompts));
    mdp.start[terminal] = 0.0;
    mdp.validate();
    return mdp;
}

// Voter k's view with the rest of the panel frozen.
inline TabularMDP induced_mdp(const VotingTaskEnv& env, std::span<const LogLinearPolicy> policies, std::size_t k,
                              double gamma) {
    env.validate();
    detail::require(policies.size() == env.agents && k < env.agents, "induced_mdp: bad panel");
    TabularMDP mdp;
    mdp.states = env.prompts + 1;
    mdp.actions = env.answers;
    mdp.gamma = gamma;
    const std::size_t terminal = env.prompts;
    mdp.transition.assign(mdp.states * mdp.actions * mdp.states, 0.0);
    mdp.reward.assign(mdp.states * mdp.actions, 0.0);
    std::size_t others = 1;
    for (std::size_t i = 1; i < env.agents; ++i) others *= env.answers;
    for (std::size_t s = 0; s < mdp.states; ++s)
        for (std::size_t a = 0; a < mdp.actions; ++a) {
            mdp.transition[(s * mdp.actions + a) * mdp.states + terminal] = 1.0;
            if (s == terminal) continue;
            double expected = 0.0;
            std::vector<ActionId> answers(env.agents);
            for (std::size_t idx = 0; idx < others; ++idx) {
                std::size_t rest = idx;
                double pr = 1.0;
                for (std::size_t i = 0; i < env.agents; ++i) {
                    if (i == k) {
                        answers[i] = a;
                        continue;
                    }
                    answers[i] = rest % env.answers;
                    rest /= env.answers;
                    pr *= policies[i].probs(s)[answers[i]];
                }
                expected += pr * decision_reward(vote(answers), env.truth[s]);
            }
            mdp.reward[s * mdp.actions + a] = expected;
        }
    mdp.start.assign(mdp.states, 1.0 / static_cast<double>(env.prompts));
    mdp.start[terminal] = 0.0;
    mdp.validate();
    return mdp;
}

// A policy's rows on the prompt states, uniform on the terminal.
inline TabularPolicy induced_policy(const LogLinearPolicy& policy, std::size_t prompts) {
    TabularPolicy pi(static_cast<Eigen::Index>(prompts + 1), static_cast<Eigen::Index>(policy.actions()));
    for (std::size_t s = 0; s < prompts; ++s) {
        const auto p = policy.probs(s);
        for (std::size_t a = 0; a < p.size(); ++a)
            pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = p[a];
    }
    pi.row(static_cast<Eigen::Index>(prompts)).setConstant(1.0 / static_cast<double>(policy.actions()));
    return pi;
}

}  // namespace ccpo::oracles
