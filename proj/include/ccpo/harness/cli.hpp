#pragma once

// `ccpo` command line. Exit codes: 0 ok, 1 failed verification or I/O error,
// 2 usage or config error.

#include "ccpo/harness/config.hpp"
#include "ccpo/harness/outputs.hpp"
#include "ccpo/harness/suites.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <cstdint>
#include <utility>
#include <string>
#include <vector>

namespace ccpo::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline void report_run(const RunRecord& rec, const std::filesystem::path& dir, std::ostream& out) {
    write_outputs(rec, dir);
    out << rec.run_id << ": " << rec.steps.size() << " steps, accuracy " << fixed9(rec.final_accuracy);
    if (rec.solo_accuracy) out << ", solo accuracy " << fixed9(*rec.solo_accuracy);
    out << " -> " << dir.string() << "\n";
}

// The base config with one key replaced, re-validated through the parser.
inline Config with_override(const Config& base, const std::string& key, const std::string& value) {
    std::string text;
    std::istringstream in(serialize(base));
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(key + " =", 0) != 0) text += line + "\n";
    text += key + " = " + value + "\n";
    return parse_config(text, "--param " + key);
}

inline std::string compare_csv(const std::vector<StepReport>& ccpo, const std::vector<StepReport>& shared) {
    std::string out = "step,ccpo_train_acc,shared_train_acc,ccpo_agent1_grad_norm,shared_agent1_grad_norm\n";
    for (std::size_t t = 0; t < std::min(ccpo.size(), shared.size()); ++t)
        out += std::to_string(t + 1) + "," + fixed9(ccpo[t].train_accuracy) + "," + fixed9(shared[t].train_accuracy) +
               "," + fixed9(ccpo[t].grad_norms[0]) + "," + fixed9(shared[t].grad_norms[0]) + "\n";
    return out;
}

}  // namespace detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Counterfactual credit assignment for cooperative multi-agent policy optimization", "ccpo"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", suite, param, values;
    std::uint64_t seed = 0;

    auto* train_cmd = app.add_subcommand("train", "Train on a config and write steps.csv, summary.json, plotdata/");
    train_cmd->add_option("--config", config_path, "Config file")->required();
    train_cmd->add_option("--out", out_dir, "Output directory");

    auto* verify_cmd = app.add_subcommand("verify", "Run a verification suite");
    verify_cmd->add_option("--suite", suite, "Suite name")->required()->check(CLI::IsMember(suite_names()));
    verify_cmd->add_option("--seed", seed, "RNG seed");
    auto* verify_out = verify_cmd->add_option("--out", out_dir, "Write summary.json here");

    auto* compare_cmd = app.add_subcommand("compare", "Run ccpo and shared credit on the same env and seed");
    compare_cmd->add_option("--config", config_path, "Config file")->required();
    compare_cmd->add_option("--out", out_dir, "Output directory");

    auto* sweep_cmd = app.add_subcommand("sweep", "Train once per value of one config key");
    sweep_cmd->add_option("--config", config_path, "Config file")->required();
    sweep_cmd->add_option("--param", param, "Config key, e.g. trainer.learning_rate")->required();
    sweep_cmd->add_option("--values", values, "Comma-separated values")->required();
    sweep_cmd->add_option("--out", out_dir, "Output directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        if (train_cmd->parsed()) {
            detail::report_run(run_training(load_config(config_path)), out_dir, out);
            return kExitOk;
        }
        if (verify_cmd->parsed()) {
            const auto results = run_suite(suite, seed);
            std::size_t failed = 0;
            for (const auto& r : results) {
                failed += !r.passed;
                out << (r.passed ? "PASS " : "FAIL ") << r.name << " measured=" << r.measured << " bound=" << r.bound;
                if (!r.detail.empty()) out << " (" << r.detail << ")";
                out << "\n";
            }
            out << results.size() - failed << "/" << results.size() << " checks passed, " << failed << " violations\n";
            if (verify_out->count() > 0) {
                make_dirs(out_dir);
                write_text(std::filesystem::path(out_dir) / "summary.json", verification_summary(results));
            }
            return failed == 0 ? kExitOk : kExitFailure;
        }
        if (compare_cmd->parsed()) {
            Config c = load_config(config_path);
            c.trainer.credit_mode = CreditMode::ccpo;
            const auto ccpo_run = run_training(c);
            c.trainer.credit_mode = CreditMode::shared;
            const auto shared_run = run_training(c);
            const std::filesystem::path dir(out_dir);
            detail::report_run(ccpo_run, dir / "ccpo", out);
            detail::report_run(shared_run, dir / "shared", out);
            make_dirs(dir / "plotdata");
            write_text(dir / "plotdata" / "compare.csv", detail::compare_csv(ccpo_run.steps, shared_run.steps));
            return kExitOk;
        }
        if (sweep_cmd->parsed()) {
            const Config base = load_config(config_path);
            const std::filesystem::path dir(out_dir);
            std::vector<std::pair<std::string, Config>> runs;
            for (const auto& v : detail::split_list(values)) runs.emplace_back(v, detail::with_override(base, param, v));
            if (runs.empty()) throw ConfigError(ConfigError::Kind::parse, "--values: no values given");
            std::string table = "value,accuracy,solo_accuracy\n";
            for (const auto& [v, cfg] : runs) {
                const auto rec = run_training(cfg);
                detail::report_run(rec, dir / (param + "=" + v), out);
                table += v + "," + fixed9(rec.final_accuracy) + "," + (rec.solo_accuracy ? fixed9(*rec.solo_accuracy) : "") + "\n";
            }
            make_dirs(dir);
            write_text(dir / "sweep.csv", table);
            return kExitOk;
        }
    } catch (const InvalidInput& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace ccpo::harness
