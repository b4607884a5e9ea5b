#pragma once

// Flat `section.key = value` config files. '#' starts a comment. Omitted keys
// keep their defaults; unknown keys are errors.

#include "ccpo/envs.hpp"
#include "ccpo/error.hpp"
#include "ccpo/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ccpo::harness {

class ConfigError : public InvalidInput {
public:
    enum class Kind { missing_file, parse, unknown_key, range };

    ConfigError(Kind kind, const std::string& what) : InvalidInput(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

enum class Topology { sequential, voting };

struct EnvSpec {
    Topology topology = Topology::sequential;
    // freerider | hint | pivotal | bandit | custom. Explicit env.* keys override the preset.
    std::string preset = "freerider";
    std::size_t prompts = 4;
    std::size_t answers = 4;
    std::size_t messages = 4;
    std::size_t agents = 2;
    double hint_informativeness = 0.0;
    // identity: Agent 2 sees the prompt; blind: every prompt looks the same to Agent 2.
    std::string agent2_view = "identity";
    // Empty means truth(p) = p mod answers.
    std::vector<ActionId> truth;
    // 1-based agent id -> probability of the correct answer at init. Unlisted agents start uniform.
    std::map<std::size_t, double> correct_prob;

    bool operator==(const EnvSpec&) const = default;
};

struct Config {
    TrainerConfig trainer;
    EnvSpec env;

    bool operator==(const Config&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

template <class T>
std::string join(const std::vector<T>& xs, std::size_t offset = 0) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(xs[i] + offset);
    }
    return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

inline void apply_preset(EnvSpec& env, const std::string& preset) {
    env.preset = preset;
    env.truth.clear();
    if (preset == "freerider") {
        const auto e = make_freerider_env();
        env.topology = Topology::sequential;
        env.prompts = e.prompts, env.answers = e.answers, env.messages = e.messages;
        env.agents = 2, env.hint_informativeness = e.hint_informativeness, env.agent2_view = "identity";
    } else if (preset == "hint") {
        const auto e = make_hint_env();
        env.topology = Topology::sequential;
        env.prompts = e.prompts, env.answers = e.answers, env.messages = e.messages;
        env.agents = 2, env.hint_informativeness = e.hint_informativeness, env.agent2_view = "blind";
    } else if (preset == "pivotal" || preset == "bandit") {
        const auto e = preset == "pivotal" ? make_pivotal_env() : make_bandit_env();
        env.topology = Topology::voting;
        env.prompts = e.prompts, env.answers = e.answers, env.agents = e.agents;
    } else if (preset != "custom") {
        throw ConfigError(ConfigError::Kind::range,
                          "env.preset = " + preset + " is out of range: must be freerider, hint, pivotal, bandit or custom");
    }
}

class Parser {
public:
    Parser(std::string origin, std::size_t line) : origin_(std::move(origin)), line_(line) {}

    [[noreturn]] void fail(const std::string& key, const std::string& expected, const std::string& got) const {
        throw ConfigError(ConfigError::Kind::parse, origin_ + ":" + std::to_string(line_) + ": " + key +
                                                        ": expected " + expected + ", got '" + got + "'");
    }

    double real(const std::string& key, const std::string& v) const {
        double x = 0.0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) fail(key, "a number", v);
        return x;
    }

    std::uint64_t integer(const std::string& key, const std::string& v) const {
        std::uint64_t x = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) fail(key, "a non-negative integer", v);
        return x;
    }

    std::vector<std::uint64_t> integers(const std::string& key, const std::string& v) const {
        std::vector<std::uint64_t> out;
        for (const auto& item : split_list(v)) out.push_back(integer(key, item));
        return out;
    }

    template <class E>
    E choice(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) const {
        std::string names;
        for (const auto& [name, value] : options) {
            if (v == name) return value;
            names += names.empty() ? name : std::string(" | ") + name;
        }
        fail(key, names, v);
    }

private:
    std::string origin_;
    std::size_t line_;
};

[[noreturn]] inline void range_error(const std::string& key, const std::string& value, const std::string& bound) {
    throw ConfigError(ConfigError::Kind::range, key + " = " + value + " is out of range: " + bound);
}

}  // namespace detail

// Ranges that TrainerConfig::validate does not see: environment shape and init values.
inline void validate(const Config& c) {
    try {
        c.trainer.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidInput& e) {
        throw ConfigError(ConfigError::Kind::range, e.what());
    }
    const auto& e = c.env;
    using detail::range_error;
    if (e.prompts < 1 || e.prompts > kMaxPrompts) range_error("env.prompts", std::to_string(e.prompts), "must lie in [1, 32]");
    if (e.answers < 2 || e.answers > kMaxAnswers) range_error("env.answers", std::to_string(e.answers), "must lie in [2, 8]");
    if (!e.truth.empty() && e.truth.size() != e.prompts)
        range_error("env.truth", detail::join(e.truth), "must list one answer per prompt");
    for (ActionId t : e.truth)
        if (t >= e.answers) range_error("env.truth", detail::join(e.truth), "answers must be < env.answers");
    std::size_t agents = 2;
    if (e.topology == Topology::sequential) {
        if (e.messages < 1 || e.messages > kMaxMessages)
            range_error("env.messages", std::to_string(e.messages), "must lie in [1, 8]");
        if (!(e.hint_informativeness >= 0.0 && e.hint_informativeness <= 1.0))
            range_error("env.hint_informativeness", detail::format_double(e.hint_informativeness), "must lie in [0, 1]");
        if (e.agent2_view != "identity" && e.agent2_view != "blind")
            range_error("env.agent2_view", e.agent2_view, "must be identity or blind");
    } else {
        agents = e.agents;
        if (agents < 1 || agents > kMaxVoters) range_error("env.agents", std::to_string(agents), "must lie in [1, 5]");
    }
    for (std::size_t id : c.trainer.frozen_agents)
        if (id >= agents)
            range_error("trainer.frozen_agents", std::to_string(id + 1), "agent ids must lie in [1, " + std::to_string(agents) + "]");
    for (const auto& [id, p] : e.correct_prob) {
        const std::string key = "init.agent" + std::to_string(id) + ".correct_prob";
        if (id < 1 || id > agents) range_error(key, detail::format_double(p), "no such agent");
        if (e.topology == Topology::sequential && id == 1)
            range_error(key, detail::format_double(p), "Agent 1 emits messages and has no correct answer");
        if (!(p > 0.0 && p <= 1.0)) range_error(key, detail::format_double(p), "must lie in (0, 1]");
    }
}

inline Config parse_config(std::string_view text, const std::string& origin = "<config>") {
    struct Entry {
        std::string value;
        std::size_t line;
    };
    std::map<std::string, Entry> entries;
    std::vector<std::string> order;
    std::istringstream in{std::string(text)};
    std::string raw;
    for (std::size_t line = 1; std::getline(in, raw); ++line) {
        const auto hash = raw.find('#');
        const std::string s = detail::trim(std::string_view(raw).substr(0, hash));
        if (s.empty()) continue;
        const auto eq = s.find('=');
        const std::string key = eq == std::string::npos ? "" : detail::trim(std::string_view(s).substr(0, eq));
        if (eq == std::string::npos || key.empty() ||
            !std::all_of(key.begin(), key.end(), [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.'; }))
            throw ConfigError(ConfigError::Kind::parse,
                              origin + ":" + std::to_string(line) + ": parse error: expected 'key = value', got '" + s + "'");
        if (entries.count(key))
            throw ConfigError(ConfigError::Kind::parse, origin + ":" + std::to_string(line) + ": duplicate key '" + key + "'");
        entries[key] = {detail::trim(std::string_view(s).substr(eq + 1)), line};
        order.push_back(key);
    }

    Config c;
    if (auto it = entries.find("env.preset"); it != entries.end())
        detail::apply_preset(c.env, it->second.value);
    else
        detail::apply_preset(c.env, c.env.preset);

    auto& t = c.trainer;
    auto& e = c.env;
    for (const auto& key : order) {
        const auto& [v, line] = entries[key];
        const detail::Parser p(origin, line);
        if (key == "trainer.learning_rate") t.learning_rate = p.real(key, v);
        else if (key == "trainer.batch_size") t.batch_size = p.integer(key, v);
        else if (key == "trainer.samples_per_prompt") t.samples_per_prompt = p.integer(key, v);
        else if (key == "trainer.clip_eps") t.clip_eps = p.real(key, v);
        else if (key == "trainer.grad_clip") t.grad_clip = p.real(key, v);
        else if (key == "trainer.steps") t.steps = p.integer(key, v);
        else if (key == "trainer.seed") t.seed = p.integer(key, v);
        else if (key == "trainer.schedule")
            t.schedule = p.choice<Schedule>(key, v, {{"synchronous", Schedule::synchronous}, {"alternating", Schedule::alternating}});
        else if (key == "trainer.credit_mode")
            t.credit_mode = p.choice<CreditMode>(key, v, {{"ccpo", CreditMode::ccpo}, {"shared", CreditMode::shared}});
        else if (key == "trainer.voting_scheme")
            t.voting_scheme = p.choice<VotingScheme>(key, v, {{"direct", VotingScheme::direct}, {"allocated", VotingScheme::allocated}});
        else if (key == "trainer.solo_sampling")
            t.solo_sampling = p.choice<SoloSampling>(key, v, {{"coupled", SoloSampling::coupled}, {"independent", SoloSampling::independent}});
        else if (key == "trainer.frozen_agents") {
            t.frozen_agents.clear();
            for (auto id : p.integers(key, v)) {
                if (id < 1) detail::range_error(key, v, "agent ids are 1-based");
                t.frozen_agents.push_back(id - 1);
            }
        }
        else if (key == "shaping.alpha") t.alpha = p.real(key, v);
        else if (key == "shaping.eta") t.eta = p.real(key, v);
        else if (key == "shaping.ema_decay") t.ema_decay = p.real(key, v);
        else if (key == "shaping.min_samples") t.min_samples = p.integer(key, v);
        else if (key == "shaping.epsilon") t.epsilon = p.real(key, v);
        else if (key == "env.preset") {}
        else if (key == "env.topology")
            e.topology = p.choice<Topology>(key, v, {{"sequential", Topology::sequential}, {"voting", Topology::voting}});
        else if (key == "env.prompts") e.prompts = p.integer(key, v);
        else if (key == "env.answers") e.answers = p.integer(key, v);
        else if (key == "env.messages") e.messages = p.integer(key, v);
        else if (key == "env.agents") e.agents = p.integer(key, v);
        else if (key == "env.hint_informativeness") e.hint_informativeness = p.real(key, v);
        else if (key == "env.agent2_view") e.agent2_view = v;
        else if (key == "env.truth") {
            e.truth.clear();
            for (auto x : p.integers(key, v)) e.truth.push_back(x);
        }
        else if (key.rfind("init.agent", 0) == 0 && key.size() > 23 && key.substr(key.size() - 13) == ".correct_prob") {
            const std::string id = key.substr(10, key.size() - 23);
            e.correct_prob[p.integer(key, id)] = p.real(key, v);
        }
        else
            throw ConfigError(ConfigError::Kind::unknown_key,
                              origin + ":" + std::to_string(line) + ": unknown config key '" + key + "'");
    }
    if (e.topology == Topology::sequential) e.agents = 2;
    validate(c);
    return c;
}

// Reads and validates a config file. CCPO_SEED, when set, replaces trainer.seed.
inline Config load_config(const std::filesystem::path& path, bool env_override = true) {
    std::ifstream in(path);
    if (!in) throw ConfigError(ConfigError::Kind::missing_file, "cannot open config file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    Config c = parse_config(buf.str(), path.string());
    if (const char* seed = env_override ? std::getenv("CCPO_SEED") : nullptr)
        c.trainer.seed = detail::Parser("CCPO_SEED", 0).integer("CCPO_SEED", seed);
    return c;
}

inline std::string serialize(const Config& c) {
    const auto& t = c.trainer;
    const auto& e = c.env;
    auto name = [](auto value, std::initializer_list<const char*> names) { return std::string(names.begin()[static_cast<int>(value)]); };
    using detail::format_double;
    std::ostringstream os;
    os << "trainer.learning_rate = " << format_double(t.learning_rate) << "\n"
       << "trainer.batch_size = " << t.batch_size << "\n"
       << "trainer.samples_per_prompt = " << t.samples_per_prompt << "\n"
       << "trainer.clip_eps = " << format_double(t.clip_eps) << "\n"
       << "trainer.grad_clip = " << format_double(t.grad_clip) << "\n"
       << "trainer.steps = " << t.steps << "\n"
       << "trainer.seed = " << t.seed << "\n"
       << "trainer.schedule = " << name(t.schedule, {"synchronous", "alternating"}) << "\n"
       << "trainer.credit_mode = " << name(t.credit_mode, {"ccpo", "shared"}) << "\n"
       << "trainer.voting_scheme = " << name(t.voting_scheme, {"direct", "allocated"}) << "\n"
       << "trainer.solo_sampling = " << name(t.solo_sampling, {"coupled", "independent"}) << "\n"
       << "trainer.frozen_agents = " << detail::join(t.frozen_agents, 1) << "\n"
       << "shaping.alpha = " << format_double(t.alpha) << "\n"
       << "shaping.eta = " << format_double(t.eta) << "\n"
       << "shaping.ema_decay = " << format_double(t.ema_decay) << "\n"
       << "shaping.min_samples = " << t.min_samples << "\n"
       << "shaping.epsilon = " << format_double(t.epsilon) << "\n"
       << "env.preset = " << e.preset << "\n"
       << "env.topology = " << name(e.topology, {"sequential", "voting"}) << "\n"
       << "env.prompts = " << e.prompts << "\n"
       << "env.answers = " << e.answers << "\n"
       << "env.messages = " << e.messages << "\n"
       << "env.agents = " << e.agents << "\n"
       << "env.hint_informativeness = " << format_double(e.hint_informativeness) << "\n"
       << "env.agent2_view = " << e.agent2_view << "\n"
       << "env.truth = " << detail::join(e.truth) << "\n";
    for (const auto& [id, p] : e.correct_prob) os << "init.agent" << id << ".correct_prob = " << format_double(p) << "\n";
    return os.str();
}

inline SequentialTaskEnv build_sequential_env(const EnvSpec& spec) {
    SequentialTaskEnv env;
    env.prompts = spec.prompts;
    env.answers = spec.answers;
    env.messages = spec.messages;
    env.truth = spec.truth.empty() ? balanced_truth(spec.prompts, spec.answers) : spec.truth;
    env.hint_informativeness = spec.hint_informativeness;
    if (spec.agent2_view == "blind") {
        env.views = 1;
        env.agent2_view.assign(spec.prompts, 0);
    } else {
        env.views = spec.prompts;
        env.agent2_view.resize(spec.prompts);
        for (std::size_t p = 0; p < spec.prompts; ++p) env.agent2_view[p] = p;
    }
    env.validate();
    return env;
}

inline VotingTaskEnv build_voting_env(const EnvSpec& spec) {
    VotingTaskEnv env;
    env.prompts = spec.prompts;
    env.answers = spec.answers;
    env.agents = spec.agents;
    env.truth = spec.truth.empty() ? balanced_truth(spec.prompts, spec.answers) : spec.truth;
    env.validate();
    return env;
}

inline TrainerState build_state(const Config& c) {
    const auto& spec = c.env;
    if (spec.topology == Topology::sequential) {
        auto env = build_sequential_env(spec);
        auto a2 = make_agent2_policy(env);
        if (auto it = spec.correct_prob.find(2); it != spec.correct_prob.end()) a2 = agent2_with_accuracy(env, it->second);
        auto a1 = make_agent1_policy(env);
        return make_sequential_state(std::move(env), std::move(a1), std::move(a2), c.trainer);
    }
    auto env = build_voting_env(spec);
    std::vector<LogLinearPolicy> agents;
    for (std::size_t i = 1; i <= env.agents; ++i) {
        auto it = spec.correct_prob.find(i);
        agents.push_back(it == spec.correct_prob.end() ? make_voter_policy(env) : voter_with_accuracy(env, it->second));
    }
    return make_voting_state(std::move(env), std::move(agents), c.trainer);
}

}  // namespace ccpo::harness
