#pragma once

#include <functional>
#include <vector>

namespace vmp {

/// Central-difference gradient (f(x + h e_k) - f(x - h e_k)) / (2h) per
/// coordinate. This is the independent reference every hand-written adjoint
/// in the project is checked against, so it must never share code with them.
/// Throws DomainError naming the coordinate if f evaluates to a non-finite
/// value.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double h);

/// max_k |a_k - b_k| / max(1, |a_k|, |b_k|), the relative error measure used
/// by all gradient checks.
double max_rel_err(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace vmp
