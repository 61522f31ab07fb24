#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sentdiff/autodiff.hpp"
#include "sentdiff/rng.hpp"

namespace testutil {

// Central-difference gradient check against analytic gradients.
//
// compute_loss must rebuild the full forward pass from current parameter
// values (same seeds every call). compute_loss_and_grads must additionally
// leave analytic gradients in each Param::grad.
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    int64_t checked = 0;
};

inline GradCheckResult gradcheck(const std::vector<sentdiff::Param<double>*>& params,
                                 const std::function<double()>& compute_loss,
                                 const std::function<double()>& compute_loss_and_grads,
                                 double step = 1e-5, int64_t max_coords_per_tensor = 0,
                                 uint64_t seed = 17) {
    for (auto* p : params) p->zero_grad();
    (void)compute_loss_and_grads();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad.data);

    GradCheckResult result;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto* p = params[pi];
        const int64_t n = p->value.numel();
        std::vector<int64_t> coords;
        if (max_coords_per_tensor <= 0 || n <= max_coords_per_tensor) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            sentdiff::rng::Stream stream(sentdiff::rng::derive(seed, 0x9cu, pi));
            coords = stream.sample_without_replacement(n, max_coords_per_tensor);
        }
        for (int64_t c : coords) {
            const double saved = p->value[c];
            p->value[c] = saved + step;
            const double up = compute_loss();
            p->value[c] = saved - step;
            const double down = compute_loss();
            p->value[c] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double a = analytic[pi][static_cast<size_t>(c)];
            const double denom = std::max(std::abs(a), std::abs(fd));
            if (denom < 1e-10) continue;  // both effectively zero
            const double rel = std::abs(a - fd) / denom;
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_tensor = p->name;
            }
        }
    }
    return result;
}

}  // namespace testutil
