#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vmp/oracle.hpp"
#include "vmp/train.hpp"

namespace vmp::reports {

std::uint64_t fnv1a64(std::string_view text);

/// Canonical JSON of every training-relevant setting, fixed key order.
nlohmann::ordered_json train_config_to_json(const train::TrainConfig& config);

/// Strict parse: defaults plus overrides, unknown keys rejected with
/// ConfigError. The "model" key nests the model config object.
train::TrainConfig train_config_from_json(const nlohmann::json& j);

/// 16 hex digits of fnv1a64 over the canonical dump.
std::string config_hash(const train::TrainConfig& config);

/// One named tolerance check inside a report. pass == max_error <= tolerance,
/// so a 0.0 tolerance demands exactness.
struct Check {
    std::string name;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

Check make_check(std::string name, double max_error, double tolerance);

/// Randomized equivalence and invariant sweep: per-variant scan-vs-table
/// gaps, the residual recurrence law, exact structural laws, the single-token
/// mask collapse, attention equivalences, and discretization branch
/// continuity. Deterministic in (cases, seed).
struct VerifyReport {
    int cases = 0;
    std::uint64_t seed = 0;
    std::vector<Check> checks;
    bool pass = false;
};

VerifyReport run_verify(int cases, std::uint64_t seed);
nlohmann::ordered_json to_json(const VerifyReport& report);

/// Central-difference agreement for every taped operation plus the
/// end-to-end shrunk classifier.
struct GradcheckReport {
    std::uint64_t seed = 0;
    std::vector<Check> checks;
    bool pass = false;
};

GradcheckReport run_gradcheck(std::uint64_t seed);
nlohmann::ordered_json to_json(const GradcheckReport& report);

/// Row-mass comparison of a forward coefficient table against softmax
/// attention scores on one random instance: where each formulation puts
/// weight on the diagonal, the past, and the future.
struct StructureRun {
    std::uint64_t seed = 0;
    int n = 0;
    oracle::StructureReport structure;
    bool pass = false;  // scan strictly causal, attention fully dense
};

StructureRun run_structure(int n, std::uint64_t seed);
nlohmann::ordered_json to_json(const StructureRun& run);
std::string structure_csv(const StructureRun& run);

nlohmann::ordered_json to_json(const train::TrainReport& report,
                               const train::TrainConfig& config);
/// one JSON record per evaluation point
std::string history_jsonl(const train::TrainReport& report);
std::string metrics_csv(const train::TrainReport& report);

/// Ablation serializations carry no wall clock so reruns with one seed set
/// are byte-identical.
nlohmann::ordered_json to_json(const train::AblationReport& report,
                               const train::TrainConfig& base);
std::string ablation_csv(const train::AblationReport& report);

/// Scan fixtures: one directory per case holding the inputs as MPTENSOR
/// files, the flags as JSON, and the expected output computed through the
/// dense coefficient table rather than the scan itself.
void write_scan_fixtures(const std::string& dir, int cases, std::uint64_t seed);

struct FixtureResult {
    int cases = 0;
    double max_gap = 0.0;
    bool pass = false;
};

/// Replays every case_* subdirectory through the sequential scan and
/// compares against the stored table output.
FixtureResult run_fixture_dir(const std::string& dir, double tolerance = 1e-8);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace vmp::reports
