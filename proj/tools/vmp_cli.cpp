// experiment runner: equivalence sweeps, gradient checks, training and
// ablation runs, structure reports, and the paired-disagreement test.
// exit codes: 0 clean, 1 failed check or diverged run, 2 bad usage or config.
#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "vmp/errors.hpp"
#include "vmp/mcnemar.hpp"
#include "vmp/reports.hpp"
#include "vmp/train.hpp"

namespace fs = std::filesystem;
using namespace vmp;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

// desk-scale defaults: two-frame 8x8 clips, a two-block classifier, and the
// interleaved two-anchor task; small enough that every run finishes in seconds
train::TrainConfig desk_config() {
    train::TrainConfig cfg;
    cfg.model.embed_dim = 8;
    cfg.model.depth = 2;
    cfg.model.state_dim = 2;
    cfg.model.classes = 2;
    cfg.model.frames = 2;
    cfg.model.in_channels = 3;
    cfg.model.height = 8;
    cfg.model.width = 8;
    cfg.model.patch_t = 1;
    cfg.model.patch_h = 4;
    cfg.model.patch_w = 4;
    cfg.model.conv_kernel = 2;
    cfg.model.mask_backward = false;
    cfg.model.residual_connections = false;
    return cfg;
}

train::TrainConfig load_config(const std::string& path) {
    if (path.empty()) return desk_config();
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config file " + path + " is not valid JSON: " + e.what());
    }
    return reports::train_config_from_json(j);
}

bool parse_toggle(const std::string& value, const std::string& flag) {
    if (value == "on") return true;
    if (value == "off") return false;
    throw UsageError(flag + " takes on or off, got '" + value + "'");
}

void ensure_out(const std::string& out) {
    if (!out.empty()) fs::create_directories(out);
}

void write_json(const std::string& out, const std::string& name,
                const nlohmann::ordered_json& j) {
    reports::write_text_file((fs::path(out) / name).string(), j.dump(2) + "\n");
}

void print_checks(const std::vector<reports::Check>& checks) {
    for (const reports::Check& c : checks) {
        std::printf("%-40s max_error=%-12.3e tolerance=%-9.0e %s\n", c.name.c_str(), c.max_error,
                    c.tolerance, c.pass ? "PASS" : "FAIL");
    }
}

int run_verify_cmd(int cases, std::uint64_t seed, const std::string& out) {
    reports::VerifyReport report = reports::run_verify(cases, seed);
    nlohmann::ordered_json j = reports::to_json(report);
    if (!out.empty()) {
        ensure_out(out);
        const std::string fixture_dir = (fs::path(out) / "fixtures").string();
        reports::write_scan_fixtures(fixture_dir, 16, seed);
        const reports::FixtureResult replay = reports::run_fixture_dir(fixture_dir);
        report.checks.push_back(
            reports::make_check("fixture_replay", replay.max_gap, 1e-8));
        report.pass = report.pass && replay.pass;
        j = reports::to_json(report);
        write_json(out, "report.json", j);
    }
    print_checks(report.checks);
    std::printf("verify: %s (%d cases, seed %llu)\n", report.pass ? "PASS" : "FAIL", report.cases,
                static_cast<unsigned long long>(report.seed));
    return report.pass ? 0 : kExitFail;
}

int run_gradcheck_cmd(std::uint64_t seed, const std::string& out) {
    const reports::GradcheckReport report = reports::run_gradcheck(seed);
    if (!out.empty()) {
        ensure_out(out);
        write_json(out, "report.json", reports::to_json(report));
    }
    print_checks(report.checks);
    std::printf("gradcheck: %s (seed %llu)\n", report.pass ? "PASS" : "FAIL",
                static_cast<unsigned long long>(report.seed));
    return report.pass ? 0 : kExitFail;
}

int run_train_cmd(const train::TrainConfig& cfg, const std::string& out) {
    const train::TrainReport report = train::train(cfg);
    if (!out.empty()) {
        ensure_out(out);
        write_json(out, "report.json", reports::to_json(report, cfg));
        reports::write_text_file((fs::path(out) / "metrics.csv").string(),
                                 reports::metrics_csv(report));
        reports::write_text_file((fs::path(out) / "history.jsonl").string(),
                                 reports::history_jsonl(report));
    }
    for (const train::EvalPoint& p : report.history) {
        std::printf("step=%-5d train_loss=%.4f train_acc=%.3f val_loss=%.4f val_acc=%.3f\n",
                    p.step, p.train_loss, p.train_accuracy, p.val_loss, p.val_accuracy);
    }
    std::printf("train: config_hash=%s final_val_accuracy=%.3f wall=%.1fs\n",
                report.config_hash.c_str(), report.final_val_accuracy, report.wall_seconds);
    return 0;
}

int run_ablate_cmd(const train::TrainConfig& base, std::uint64_t seed, const std::string& out) {
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = seed; s < seed + 5; ++s) seeds.push_back(s);
    const train::AblationReport report = train::ablate(base, seeds);
    const std::string csv = reports::ablation_csv(report);
    if (!out.empty()) {
        ensure_out(out);
        write_json(out, "report.json", reports::to_json(report, base));
        reports::write_text_file((fs::path(out) / "ablation.csv").string(), csv);
    }
    std::fputs(csv.c_str(), stdout);
    const double baseline = report.variants.front().mean_accuracy;
    const double both = report.variants.back().mean_accuracy;
    std::printf("ablate: both-on mean %.3f vs baseline mean %.3f (%s), wall=%.1fs\n", both,
                baseline, both >= baseline ? "improved or equal" : "regressed",
                report.wall_seconds);
    return both >= baseline ? 0 : kExitFail;
}

int run_structure_cmd(int tokens, std::uint64_t seed, const std::string& out) {
    const reports::StructureRun run = reports::run_structure(tokens, seed);
    if (!out.empty()) {
        ensure_out(out);
        write_json(out, "report.json", reports::to_json(run));
        reports::write_text_file((fs::path(out) / "structure.csv").string(),
                                 reports::structure_csv(run));
    }
    std::printf("scan upper-triangle nonzeros:      %d\n", run.structure.scan_upper_nonzeros);
    std::printf("attention upper-triangle nonzeros: %d (dense would be %d)\n",
                run.structure.attention_upper_nonzeros, tokens * (tokens - 1) / 2);
    std::printf("structure: %s (%d tokens, seed %llu)\n", run.pass ? "PASS" : "FAIL", run.n,
                static_cast<unsigned long long>(run.seed));
    return run.pass ? 0 : kExitFail;
}

int run_mcnemar_cmd(long long n01, long long n10, const std::string& out) {
    stats::ContingencyTable t;
    t.n01 = n01;
    t.n10 = n10;
    const stats::McNemarResult r = stats::mcnemar(t);
    const char* level = r.significant_001  ? "p<0.001"
                        : r.significant_01 ? "p<0.01"
                        : r.significant_05 ? "p<0.05"
                                           : "not significant at 0.05";
    std::printf("chi_square=%.1f\n", r.chi_square);
    std::printf("significance: %s\n", level);
    if (!out.empty()) {
        ensure_out(out);
        write_json(out, "report.json",
                   nlohmann::ordered_json{{"n01", t.n01},
                                          {"n10", t.n10},
                                          {"chi_square", r.chi_square},
                                          {"significant_05", r.significant_05},
                                          {"significant_01", r.significant_01},
                                          {"significant_001", r.significant_001}});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"selective-scan experiment runner"};
    app.require_subcommand(1);

    std::string out;
    std::string config_path;
    std::string mask = "unset";
    std::string residual = "unset";
    std::uint64_t seed = 0;
    int cases = 1000;
    long long n01 = 0;
    long long n10 = 0;

    CLI::App* verify = app.add_subcommand("verify", "scan-vs-table equivalence and invariants");
    verify->add_option("--cases", cases, "random instances to sweep")->default_val(1000);
    verify->add_option("--seed", seed, "sweep seed")->default_val(7);
    verify->add_option("--out", out, "directory for report.json and fixtures");

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference agreement for every taped op");
    gradcheck->add_option("--seed", seed, "sweep seed")->default_val(11);
    gradcheck->add_option("--out", out, "directory for report.json");

    CLI::App* train_cmd = app.add_subcommand("train", "train the desk-scale classifier");
    train_cmd->add_option("--config", config_path, "strict JSON training config");
    train_cmd->add_option("--seed", seed, "override the config seed");
    train_cmd->add_option("--mask", mask, "mask the backward direction (on|off)");
    train_cmd->add_option("--residual", residual, "elementwise residual scan path (on|off)");
    train_cmd->add_option("--out", out, "directory for report.json, metrics.csv, history.jsonl");

    CLI::App* ablate = app.add_subcommand("ablate", "four-way toggle study over 5 paired seeds");
    ablate->add_option("--config", config_path, "strict JSON training config");
    ablate->add_option("--seed", seed, "first of five consecutive seeds")->default_val(1);
    ablate->add_option("--out", out, "directory for report.json and ablation.csv");

    CLI::App* structure =
        app.add_subcommand("structure", "row-mass comparison of scan table vs attention");
    structure->add_option("--cases", cases, "token count")->default_val(16);
    structure->add_option("--seed", seed, "instance seed")->default_val(3);
    structure->add_option("--out", out, "directory for report.json and structure.csv");

    CLI::App* mcnemar_cmd =
        app.add_subcommand("mcnemar", "paired-disagreement chi-square significance test");
    mcnemar_cmd->add_option("--n01", n01, "wrong by A, right by B")->required();
    mcnemar_cmd->add_option("--n10", n10, "right by A, wrong by B")->required();
    mcnemar_cmd->add_option("--out", out, "directory for report.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (verify->parsed()) return run_verify_cmd(cases, seed, out);
        if (gradcheck->parsed()) return run_gradcheck_cmd(seed, out);
        if (train_cmd->parsed() || ablate->parsed()) {
            train::TrainConfig cfg = load_config(config_path);
            CLI::App* cmd = train_cmd->parsed() ? train_cmd : ablate;
            if (cmd->count("--seed")) cfg.seed = seed;
            if (mask != "unset") cfg.model.mask_backward = parse_toggle(mask, "--mask");
            if (residual != "unset")
                cfg.model.residual_connections = parse_toggle(residual, "--residual");
            if (train_cmd->parsed()) return run_train_cmd(cfg, out);
            return run_ablate_cmd(cfg, seed, out);
        }
        if (structure->parsed()) return run_structure_cmd(cases, seed, out);
        if (mcnemar_cmd->parsed()) return run_mcnemar_cmd(n01, n10, out);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ArgumentError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFail;
    }
    return kExitUsage;
}
