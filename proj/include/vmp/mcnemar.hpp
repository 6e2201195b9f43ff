#pragma once

#include "vmp/errors.hpp"

namespace vmp::stats {

/// Paired-classifier outcome counts. n01 counts items model A got wrong and
/// model B got right; n10 the reverse; n00/n11 the agreements.
struct ContingencyTable {
    long long n00 = 0;
    long long n01 = 0;
    long long n10 = 0;
    long long n11 = 0;

    long long total() const { return n00 + n01 + n10 + n11; }
};

/// 1-dof chi-square critical values at the three conventional levels.
inline constexpr double kChiSquare05 = 3.841;
inline constexpr double kChiSquare01 = 6.635;
inline constexpr double kChiSquare001 = 10.828;

struct McNemarResult {
    double chi_square = 0.0;
    bool significant_05 = false;
    bool significant_01 = false;
    bool significant_001 = false;
};

/// chi^2 = (n01 - n10)^2 / (n01 + n10), one degree of freedom.
/// Throws ArgumentError on negative counts and DomainError when the
/// disagreement count n01 + n10 is zero (the statistic is undefined).
inline McNemarResult mcnemar(const ContingencyTable& t) {
    if (t.n00 < 0 || t.n01 < 0 || t.n10 < 0 || t.n11 < 0) {
        throw ArgumentError("mcnemar: counts must be nonnegative");
    }
    const double disagree = static_cast<double>(t.n01 + t.n10);
    if (t.n01 + t.n10 == 0) {
        throw DomainError("mcnemar: n01 + n10 is zero, the statistic is undefined");
    }
    const double diff = static_cast<double>(t.n01 - t.n10);
    McNemarResult r;
    r.chi_square = diff * diff / disagree;
    r.significant_05 = r.chi_square > kChiSquare05;
    r.significant_01 = r.chi_square > kChiSquare01;
    r.significant_001 = r.chi_square > kChiSquare001;
    return r;
}

}  // namespace vmp::stats
