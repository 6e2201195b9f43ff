// acceptance gate: one line per primary criterion, nonzero exit on any miss.
// every check measures against the library's public surface; the dense
// coefficient tables, the Pade exponential, and central differences act as
// independent referees.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "support.hpp"
#include "vmp/mcnemar.hpp"
#include "vmp/oracle.hpp"
#include "vmp/reports.hpp"
#include "vmp/rng.hpp"
#include "vmp/ssm.hpp"
#include "vmp/train.hpp"

using namespace vmp;

namespace {

int failures = 0;

void line(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %-38s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

const reports::Check& find_check(const reports::VerifyReport& report, const std::string& name) {
    for (const reports::Check& c : report.checks)
        if (c.name == name) return c;
    std::fprintf(stderr, "missing check %s\n", name.c_str());
    std::exit(2);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

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
    cfg.task = train::TaskKind::Interleaved;
    return cfg;
}

}  // namespace

int main() {
    // randomized sweep shared by the first three criteria and the attention one
    const auto sweep_start = std::chrono::steady_clock::now();
    const reports::VerifyReport sweep = reports::run_verify(1000, 42);
    const double sweep_seconds = seconds_since(sweep_start);

    {
        double worst = 0.0;
        bool pass = true;
        for (const char* name :
             {"scan_forward_vs_table", "scan_backward_vs_table", "scan_bidirectional_vs_table",
              "scan_bidirectional_masked_vs_table", "scan_forward_residual_vs_table",
              "scan_block_vs_table"}) {
            const reports::Check& c = find_check(sweep, name);
            worst = std::max(worst, c.max_error);
            pass = pass && c.max_error <= 1e-8;
        }
        pass = pass && sweep_seconds < 60.0;
        line("oracle equivalence", pass,
             "1000 instances, 6 variants, worst gap " + fmt(worst) + " (tol 1e-8), " +
                 fmt(sweep_seconds) + "s (budget 60s)");
    }

    {
        const double causal = find_check(sweep, "forward_table_strictly_causal").max_error;
        const double diag = find_check(sweep, "masked_diagonal_equals_forward").max_error;
        const double off = find_check(sweep, "masked_offdiagonal_unchanged").max_error;
        const double single = find_check(sweep, "single_token_masked_collapse").max_error;
        const bool pass = causal == 0.0 && diag == 0.0 && off == 0.0 && single == 0.0;
        line("structural laws, exact", pass,
             "causal " + fmt(causal) + ", masked diag " + fmt(diag) + ", off-diag " + fmt(off) +
                 ", single-token " + fmt(single) + " (all must be 0)");
    }

    {
        // the sweep evaluates the recurrence on its 1000 instances, ten times
        // the demanded 100
        const reports::Check& c = find_check(sweep, "residual_recurrence_law");
        line("residual recurrence law", c.max_error <= 1e-12,
             "1000 instances, worst residue " + fmt(c.max_error) + " (tol 1e-12)");
    }

    {
        // evolution matrices against an independent Pade 6/6 exponential
        Rng rng(271828);
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            const int s = rng.uniform_int(1, 4);
            const int d = rng.uniform_int(1, 4);
            const ssm::AKind kind = i % 2 == 0 ? ssm::AKind::Diagonal : ssm::AKind::Dense;
            const ssm::SsmParams p = ssm::random_params(rng, s, d, kind);
            const TokenSequence x = ssm::random_tokens(rng, 4, d);
            for (const ssm::DiscretizedStep& step : ssm::discretize_all(p, x)) {
                DenseMatrix delta_a(s, s);
                if (kind == ssm::AKind::Diagonal) {
                    for (int k = 0; k < s; ++k) delta_a(k, k) = step.delta * p.a(k, 0);
                } else {
                    delta_a = scale(p.a, step.delta);
                }
                const DenseMatrix ref = testsupport::pade_exp(delta_a);
                if (kind == ssm::AKind::Diagonal) {
                    for (int k = 0; k < s; ++k)
                        worst = std::max(worst, std::abs(step.a_bar(k, 0) - ref(k, k)));
                } else {
                    worst = std::max(worst, max_abs_diff(step.a_bar, ref));
                }
            }
        }
        const double seam = find_check(sweep, "discretization_branch_seam").max_error;
        const bool pass = worst <= 1e-10 && seam <= 1e-9;
        line("discretization", pass,
             "a_bar vs Pade " + fmt(worst) + " (tol 1e-10), series seam " + fmt(seam) +
                 " (tol 1e-9)");
    }

    {
        const auto start = std::chrono::steady_clock::now();
        const reports::GradcheckReport grad = reports::run_gradcheck(11);
        const double elapsed = seconds_since(start);
        double worst = 0.0;
        for (const reports::Check& c : grad.checks) worst = std::max(worst, c.max_error);
        const bool pass = grad.pass && elapsed < 300.0;
        line("gradient checks", pass,
             std::to_string(grad.checks.size()) + " checks incl. end-to-end model, worst rel-err " +
                 fmt(worst) + " (tol 1e-4), " + fmt(elapsed) + "s (budget 300s)");
    }

    {
        stats::ContingencyTable t;
        t.n01 = 1833;
        t.n10 = 469;
        const stats::McNemarResult r = stats::mcnemar(t);
        const bool pass = std::abs(r.chi_square - 808.2) <= 0.05 && r.significant_001;
        char chi[32];
        std::snprintf(chi, sizeof(chi), "%.1f", r.chi_square);
        line("mcnemar reproduction", pass,
             "chi-square " + std::string(chi) + " (expect 808.2 +/- 0.05), " +
                 (r.significant_001 ? "p<0.001" : "not significant"));
    }

    {
        const double eq = find_check(sweep, "attention_matrix_vs_summation").max_error;
        const double comm = find_check(sweep, "attention_projection_commutation").max_error;
        const bool pass = eq <= 1e-12 && comm <= 1e-12;
        line("self-attention reference", pass,
             "summation vs matrix " + fmt(eq) + ", projection commutation " + fmt(comm) +
                 " (tol 1e-12)");
    }

    train::AblationReport ablation;
    {
        const auto start = std::chrono::steady_clock::now();
        ablation = train::ablate(desk_config(), {1, 2, 3, 4, 5});
        const double elapsed = seconds_since(start);
        const double baseline = ablation.variants.front().mean_accuracy;
        const double both = ablation.variants.back().mean_accuracy;
        const bool pass = ablation.variants.size() == 4 && both >= baseline && elapsed < 900.0;
        line("toy ablation separation", pass,
             "mask+residual mean " + fmt(both) + " vs baseline mean " + fmt(baseline) +
                 ", 4-row table, 5 paired seeds, " + fmt(elapsed) + "s (budget 900s)");
    }

    {
        const reports::VerifyReport sweep_again = reports::run_verify(1000, 42);
        const bool verify_same =
            reports::to_json(sweep).dump() == reports::to_json(sweep_again).dump();
        const train::AblationReport ablation_again = train::ablate(desk_config(), {1, 2, 3, 4, 5});
        const bool ablate_same =
            reports::ablation_csv(ablation) == reports::ablation_csv(ablation_again) &&
            reports::to_json(ablation, desk_config()).dump() ==
                reports::to_json(ablation_again, desk_config()).dump();
        line("determinism", verify_same && ablate_same,
             std::string("verify rerun ") + (verify_same ? "byte-identical" : "differs") +
                 ", ablate rerun " + (ablate_same ? "byte-identical" : "differs"));
    }

    std::printf("\nfour-way ablation table:\n%s", reports::ablation_csv(ablation).c_str());
    std::printf("\nacceptance: %s\n", failures == 0 ? "ALL PASS" : "FAILURES PRESENT");
    return failures == 0 ? 0 : 1;
}
