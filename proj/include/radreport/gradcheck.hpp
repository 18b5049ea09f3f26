#pragma once

#include <functional>
#include <string>
#include <vector>

#include "radreport/tensor.hpp"

namespace radreport {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tol = 0.0;
    std::vector<std::string> failing;

    bool passed() const { return failing.empty(); }
    double worst() const;
};

// Central-difference check against analytic gradients.
//
// `grad_fn` zeroes the gradient buffers and fills them analytically;
// `loss_fn` re-evaluates the loss at the current parameter values. Per
// tensor, at least `min_coords` coordinates (all, when fewer) are sampled
// and |analytic - cd| / max(1e-8, |analytic| + |cd|) is compared to tol.
//
// Run the double instantiation for tight tolerances (eps ~ 1e-3, tol
// 1e-3); the float one only resolves eps ~ 1e-2.
template <typename S>
GradCheckReport finite_difference_check(std::vector<NamedParam<S>>& params,
                                        const std::function<double()>& loss_fn,
                                        const std::function<void()>& grad_fn, double eps,
                                        double tol, uint64_t seed, int64_t min_coords = 32);

}  // namespace radreport
