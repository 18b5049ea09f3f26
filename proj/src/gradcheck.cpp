#include "radreport/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "radreport/rng.hpp"

namespace radreport {

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
}

template <typename S>
GradCheckReport finite_difference_check(std::vector<NamedParam<S>>& params,
                                        const std::function<double()>& loss_fn,
                                        const std::function<void()>& grad_fn, double eps,
                                        double tol, uint64_t seed, int64_t min_coords) {
    grad_fn();

    GradCheckReport report;
    report.tol = tol;
    Rng rng(seed);
    for (auto& p : params) {
        GradCheckEntry entry;
        entry.name = p.name;
        const int64_t n = p.value->numel();

        std::vector<int64_t> coords;
        if (n <= min_coords) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            std::vector<int64_t> all(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
            rng.shuffle(all);
            coords.assign(all.begin(), all.begin() + static_cast<long>(min_coords));
        }

        for (int64_t c : coords) {
            const S saved = p.value->at(c);
            p.value->at(c) = static_cast<S>(static_cast<double>(saved) + eps);
            const double up = loss_fn();
            p.value->at(c) = static_cast<S>(static_cast<double>(saved) - eps);
            const double down = loss_fn();
            p.value->at(c) = saved;
            const double cd = (up - down) / (2.0 * eps);
            const double analytic = static_cast<double>(p.grad->at(c));
            const double rel =
                std::abs(analytic - cd) / std::max(1e-8, std::abs(analytic) + std::abs(cd));
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.coords_checked;
        }
        if (entry.max_rel_err > tol) report.failing.push_back(p.name);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

template GradCheckReport finite_difference_check<float>(std::vector<NamedParam<float>>&,
                                                        const std::function<double()>&,
                                                        const std::function<void()>&, double,
                                                        double, uint64_t, int64_t);
template GradCheckReport finite_difference_check<double>(std::vector<NamedParam<double>>&,
                                                         const std::function<double()>&,
                                                         const std::function<void()>&, double,
                                                         double, uint64_t, int64_t);

}  // namespace radreport
