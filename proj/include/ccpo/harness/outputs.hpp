#pragma once

// Run records and their on-disk form: steps.csv, summary.json, plotdata/.
// Numbers in CSVs use fixed 9-decimal formatting so reruns compare byte for byte.

#include "ccpo/harness/config.hpp"
#include "ccpo/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccpo::harness {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct VerificationResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double bound = 0.0;
    std::string detail;
};

struct RunRecord {
    std::string run_id;
    Config config;
    std::vector<StepReport> steps;
    double final_accuracy = 0.0;
    std::optional<double> solo_accuracy;
    std::vector<VerificationResult> verification;
};

inline std::string fixed9(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", x);
    return buf;
}

// Seed plus a hash of the serialized config. No wall-clock component, so reruns are byte-identical.
inline std::string make_run_id(const Config& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : serialize(c)) h = (h ^ ch) * 0x100000001b3ULL;
    char buf[64];
    std::snprintf(buf, sizeof buf, "seed%llu-%016llx", static_cast<unsigned long long>(c.trainer.seed),
                  static_cast<unsigned long long>(h));
    return buf;
}

inline RunRecord run_training(const Config& c) {
    RunRecord rec;
    rec.run_id = make_run_id(c);
    rec.config = c;
    TrainerState state = build_state(c);
    rec.steps = train(state, c.trainer);
    rec.final_accuracy = evaluate(state);
    if (state.is_sequential()) rec.solo_accuracy = solo_evaluate(state);
    return rec;
}

inline constexpr const char* kStepsHeader = "step,agent,mean_delta,mean_advantage,gate,train_acc,max_kl,grad_norm";

// One row per (step, agent); both are 1-based.
inline std::string steps_csv(const std::vector<StepReport>& steps) {
    std::string out = std::string(kStepsHeader) + "\n";
    for (const auto& s : steps)
        for (std::size_t i = 0; i < s.grad_norms.size(); ++i) {
            out += std::to_string(s.step + 1) + "," + std::to_string(i + 1) + "," + fixed9(s.per_agent_mean_delta[i]) +
                   "," + fixed9(s.per_agent_mean_advantage[i]) + "," + fixed9(s.gate_value) + "," +
                   fixed9(s.train_accuracy) + "," + fixed9(s.max_kl) + "," + fixed9(s.grad_norms[i]) + "\n";
        }
    return out;
}

// step,train_acc,agent1_grad_norm,...
inline std::string learning_curve_csv(const std::vector<StepReport>& steps) {
    std::string out = "step,train_acc";
    const std::size_t agents = steps.empty() ? 0 : steps.front().grad_norms.size();
    for (std::size_t i = 0; i < agents; ++i) out += ",agent" + std::to_string(i + 1) + "_grad_norm";
    out += "\n";
    for (const auto& s : steps) {
        out += std::to_string(s.step + 1) + "," + fixed9(s.train_accuracy);
        for (double g : s.grad_norms) out += "," + fixed9(g);
        out += "\n";
    }
    return out;
}

inline nlohmann::ordered_json verification_json(const std::vector<VerificationResult>& results) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : results) {
        nlohmann::ordered_json j;
        j["name"] = r.name;
        j["passed"] = r.passed;
        j["measured"] = r.measured;
        j["bound"] = r.bound;
        if (!r.detail.empty()) j["detail"] = r.detail;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline nlohmann::ordered_json summary_json(const RunRecord& rec) {
    nlohmann::ordered_json j;
    j["run_id"] = rec.run_id;
    j["config"] = serialize(rec.config);
    j["steps"] = rec.steps.size();
    nlohmann::ordered_json metrics;
    metrics["accuracy"] = rec.final_accuracy;
    if (rec.solo_accuracy) metrics["solo_accuracy"] = *rec.solo_accuracy;
    j["final_metrics"] = metrics;
    j["verification"] = verification_json(rec.verification);
    return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    out.close();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void make_dirs(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline std::vector<std::filesystem::path> write_outputs(const RunRecord& rec, const std::filesystem::path& dir) {
    make_dirs(dir / "plotdata");
    std::vector<std::filesystem::path> paths{dir / "steps.csv", dir / "summary.json", dir / "plotdata" / "learning_curve.csv"};
    write_text(paths[0], steps_csv(rec.steps));
    write_text(paths[1], summary_json(rec).dump(2) + "\n");
    write_text(paths[2], learning_curve_csv(rec.steps));
    return paths;
}

// Summary for a verification-only run.
inline std::string verification_summary(const std::vector<VerificationResult>& results) {
    nlohmann::ordered_json j;
    j["verification"] = verification_json(results);
    return j.dump(2) + "\n";
}

}  // namespace ccpo::harness
