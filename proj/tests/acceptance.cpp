// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "ccpo/credit.hpp"
#include "ccpo/harness/cli.hpp"
#include "ccpo/harness/suites.hpp"
#include "ccpo/policy.hpp"
#include "ccpo/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace ccpo;
using namespace ccpo::harness;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 20241;

struct Verdict {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

// Every check of a suite must pass; the first failure is named.
Verdict all_pass(const std::vector<VerificationResult>& results, const std::string& label) {
    for (const auto& r : results)
        if (!r.passed)
            return {false, r.name + " measured=" + fmt("%.6g", r.measured) + " bound=" + fmt("%.6g", r.bound) +
                               (r.detail.empty() ? "" : " (" + r.detail + ")")};
    return {true, std::to_string(results.size()) + " " + label + " checks"};
}

Verdict within_time(Verdict v, double seconds, double limit) {
    v.detail += ", " + fmt("%.1f", seconds) + " s (limit " + fmt("%.0f", limit) + " s)";
    if (seconds >= limit) v.passed = false;
    return v;
}

Verdict unbiasedness() {
    const auto results = unbiasedness_suite(kSeed);
    std::size_t seq = 0, vote = 0;
    for (const auto& any : oracles::scenario_battery())
        (std::holds_alternative<oracles::SequentialScenario>(any) ? seq : vote) += 1;
    Verdict v = all_pass(results, "4-SE");
    v.detail += " over " + std::to_string(seq) + " sequential + " + std::to_string(vote) + " voting scenarios";
    if (seq + vote < 5 || seq == 0 || vote == 0) v.passed = false;
    return v;
}

Verdict variance_reduction() {
    const auto results = variance_suite(kSeed, 100);
    Verdict v = all_pass(results, "variance");
    for (const auto& r : results)
        if (r.name == "variance/strong_partner/cf_lower_ci") v.detail += ", " + r.detail;
    return v;
}

Verdict optimal_baseline() { return all_pass(baseline_suite(kSeed), "formula-vs-grid"); }

Verdict clip_kl() {
    Rng rng(kSeed);
    const auto rep = oracles::clip_kl_battery(rng, 10'000, 0.2);
    const bool bound_ok = std::abs(rep.bound - 0.223144) < 1e-6;
    return {rep.trials == 10'000 && rep.violations == 0 && bound_ok,
            std::to_string(rep.violations) + " violations in " + std::to_string(rep.trials) + " pairs, max KL " +
                fmt("%.6f", rep.worst) + " <= " + fmt("%.6f", rep.bound)};
}

Verdict block_gain() {
    const double c = oracles::trust_region_constant(0.9);
    const double closed = 2.0 * 0.9 * std::sqrt(2.0) / 0.01;
    Rng rng(kSeed);
    const auto rep = oracles::block_gain_battery(rng, 500);
    return {std::abs(c - closed) <= 1e-9 && std::abs(c - 254.558) < 5e-4 && rep.trials == 500 && rep.violations == 0,
            std::to_string(rep.violations) + " violations in " + std::to_string(rep.trials) + " MDPs, C(0.9)=" +
                fmt("%.9f", c)};
}

Verdict free_riding() {
    const auto env = make_freerider_env();
    TrainerConfig cfg;
    cfg.learning_rate = TrainerConfig::kToyLearningRate;
    cfg.batch_size = 16;
    cfg.steps = 50;
    cfg.seed = kSeed;
    cfg.frozen_agents = {1};
    Rng init(kSeed);
    auto a1 = make_agent1_policy(env);
    for (double& x : a1.params()) x = init.uniform() - 0.5;
    const auto a2 = agent2_with_accuracy(env, 0.8);

    auto state = make_sequential_state(env, a1, a2, cfg);
    std::size_t nonzero_credit = 0, nonzero_grad = 0, samples = 0;
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        // Inspect the per-sample credit on a copy, then take the real step.
        TrainerState probe = state;
        const auto batch = collect_batch(probe, cfg, step_rng(cfg.seed, probe.step));
        const auto credit = compute_credit(probe, batch, cfg);
        for (const auto& g : batch.sequential)
            for (const auto& r : g) nonzero_credit += r.delta() != 0.0;
        for (const auto& g : credit.advantages[0])
            for (double a : g) nonzero_credit += a != 0.0, ++samples;
        nonzero_grad += step(state, cfg).grad_norms[0] != 0.0;
    }
    const bool ccpo_ok = nonzero_credit == 0 && nonzero_grad == 0 && state.policy(0) == a1;

    cfg.credit_mode = CreditMode::shared;
    auto shared = make_sequential_state(env, a1, a2, cfg);
    std::size_t first = 0;
    for (std::size_t t = 0; t < cfg.steps && first == 0; ++t)
        if (step(shared, cfg).grad_norms[0] > 0.0) first = t + 1;
    return {ccpo_ok && first > 0,
            "ccpo: " + std::to_string(nonzero_credit) + " nonzero Agent-1 credits of " + std::to_string(samples) + ", " +
                std::to_string(nonzero_grad) + " nonzero gradients in 50 steps; shared: first nonzero gradient at step " +
                (first ? std::to_string(first) : std::string("none"))};
}

Verdict collaboration() {
    const auto env = make_hint_env();
    TrainerConfig cfg;
    cfg.learning_rate = TrainerConfig::kToyLearningRate;
    cfg.batch_size = 16;
    cfg.steps = 2000;
    cfg.seed = kSeed;
    auto state = make_sequential_state(env, make_agent1_policy(env), make_agent2_policy(env), cfg);
    train(state, cfg);
    const double joint = evaluate(state), solo = solo_evaluate(state);
    return {joint >= 0.9 && joint - solo >= 0.2,
            "joint " + fmt("%.4f", joint) + ", solo " + fmt("%.4f", solo) + ", gap " + fmt("%.4f", joint - solo)};
}

Verdict voting_mechanics() {
    const auto results = pivotality_suite(kSeed);
    Verdict v = all_pass(results, "pivotality");
    for (const auto& r : results) v.detail += "; " + r.name + " " + r.detail;
    return v;
}

// Hand-rolled generators, 1000 instances per invariant.
Verdict pipeline_numerics() {
    constexpr int kInstances = 1000;
    Rng rng(kSeed);
    std::size_t failures = 0;
    std::string first_failure;
    auto check = [&](bool ok, const char* what) {
        if (!ok && failures++ == 0) first_failure = what;
    };

    for (int i = 0; i < kInstances; ++i) {
        const double z = (rng.uniform() - 0.5) * std::pow(10.0, 8.0 * rng.uniform());
        const double alpha = 0.01 + 10.0 * rng.uniform();
        const double r = shape(z, alpha);
        check(std::abs(r) < 1.0 && shape(-z, alpha) == -r, "tanh bound");
    }
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t n = 2 + rng.below(20);
        std::vector<double> x(n);
        for (double& v : x) v = 2.0 * rng.uniform() - 1.0;
        const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : x) ss += (v - m) * (v - m);
        const auto a = group_advantage(x);
        if (std::sqrt(ss / (n - 1)) > 10 * kDefaultEpsilon)
            check(std::abs(std::accumulate(a.begin(), a.end(), 0.0) / n) <= 1e-7, "zero-mean advantage");
        const double c = 4.0 * rng.uniform() - 2.0;
        std::vector<double> shifted = x;
        for (double& v : shifted) v += c;
        const auto b = group_advantage(shifted);
        for (std::size_t j = 0; j < n; ++j) check(std::abs(a[j] - b[j]) <= 1e-9, "shift invariance");
    }
    for (int i = 0; i < kInstances; ++i) {
        const std::vector<double> flat(2 + rng.below(20), 2.0 * rng.uniform() - 1.0);
        for (double v : group_advantage(flat)) check(v == 0.0, "constant-group zero");
    }
    for (int i = 0; i < kInstances; ++i) {
        const double decay = 0.01 + 0.98 * rng.uniform();
        auto s = RunningStats::make(decay, 1);
        s.mean = 4.0 * rng.uniform() - 2.0;
        const double m0 = s.mean, target = 2.0 * rng.uniform() - 1.0;
        const std::vector<double> batch(1 + rng.below(5), target);
        const int t = 1 + static_cast<int>(rng.below(100));
        for (int k = 0; k < t; ++k) s = ema_update(s, batch);
        check(std::abs(std::abs(s.mean - target) - std::abs(m0 - target) * std::pow(decay, t)) <= 1e-12,
              "EMA geometric convergence");
    }
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t actions = 2 + rng.below(7);
        LogLinearPolicy p(1, actions);
        for (double& x : p.params()) x = 6.0 * rng.uniform() - 3.0;
        const ActionId a = rng.below(actions);
        const auto g = score(p, 0, a);
        for (std::size_t k = 0; k < actions; ++k) {
            auto up = p, down = p;
            up.logits(0)[k] += 1e-5;
            down.logits(0)[k] -= 1e-5;
            check(std::abs(g[k] - (log_prob(up, 0, a) - log_prob(down, 0, a)) / 2e-5) <= 1e-6, "score vs finite difference");
        }
    }
    return {failures == 0, failures == 0 ? "5 invariants x " + std::to_string(kInstances) + " instances, 0 failures"
                                         : std::to_string(failures) + " failures, first: " + first_failure};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict determinism() {
    const fs::path root = fs::temp_directory_path() / "ccpo_acceptance_determinism";
    fs::remove_all(root);
    const std::string conf = (fs::path(CCPO_SOURCE_DIR) / "configs" / "pivotal.conf").string();
    std::ostringstream out, err;
    for (const char* run : {"a", "b"})
        if (run_cli({"train", "--config", conf, "--out", (root / run).string()}, out, err) != 0)
            return {false, "train failed: " + err.str()};
    const std::string a = slurp(root / "a" / "steps.csv"), b = slurp(root / "b" / "steps.csv");
    const bool same = !a.empty() && a == b && slurp(root / "a" / "summary.json") == slurp(root / "b" / "summary.json");
    return {same, std::to_string(a.size()) + "-byte steps.csv, " + (same ? "identical" : "different") + " across two runs"};
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Verdict()> run;
        double time_limit;
    };
    const std::vector<Criterion> criteria{
        {"unbiasedness", unbiasedness, 120},
        {"variance reduction", variance_reduction, 300},
        {"optimal baseline", optimal_baseline, 0},
        {"clip-KL bound", clip_kl, 0},
        {"block-gain bound", block_gain, 0},
        {"free-riding elimination", free_riding, 0},
        {"collaboration effectiveness", collaboration, 60},
        {"voting mechanics", voting_mechanics, 0},
        {"pipeline numerics", pipeline_numerics, 0},
        {"determinism", determinism, 0},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& c = criteria[i];
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.time_limit > 0) v = within_time(v, secs, c.time_limit);
        failed += !v.passed;
        std::cout << (v.passed ? "PASS" : "FAIL") << " [" << i + 1 << "] " << c.name << ": " << v.detail << std::endl;
    }
    std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
