#include "vmp/finite_diff.hpp"

#include <cmath>
#include <string>

#include "vmp/errors.hpp"

namespace vmp {

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double h) {
    if (!(h > 0.0)) throw ArgumentError("finite_diff_grad: step must be positive");
    std::vector<double> grad(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = x[k];
        x[k] = saved + h;
        const double fp = f(x);
        x[k] = saved - h;
        const double fm = f(x);
        x[k] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw DomainError("finite_diff_grad: non-finite value at coordinate " +
                              std::to_string(k));
        }
        grad[k] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ArgumentError("max_rel_err: length mismatch");
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double denom = std::max({1.0, std::abs(a[k]), std::abs(b[k])});
        worst = std::max(worst, std::abs(a[k] - b[k]) / denom);
    }
    return worst;
}

}  // namespace vmp
