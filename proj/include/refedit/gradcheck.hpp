#ifndef REFEDIT_GRADCHECK_HPP
#define REFEDIT_GRADCHECK_HPP

// Central-difference gradient verification. The loss function is re-evaluated
// with each checked weight nudged by ±h, and the slope is compared against the
// grad that backward() produced. Meant to run on the double instantiation,
// where the difference quotient itself is accurate to ~h^2.

#include <cmath>
#include <cstddef>
#include <string>

#include "refedit/rng.hpp"
#include "refedit/tensor.hpp"

namespace refedit {

template <typename T>
struct GradReport {
    T max_rel_err = T(0);
    std::string worst_param;
    size_t worst_index = 0;
    T worst_analytic = T(0);
    T worst_numeric = T(0);
    size_t checked = 0;
};

// loss_fn: () -> Tensor<T> scalar, closing over `params`. Large parameters are
// strided down to at most max_per_param probe points; rng (optional) selects
// the stride offset so repeated suites probe different elements.
template <typename T, typename LossFn>
GradReport<T> finite_diff_check(LossFn&& loss_fn, ParamMap<T>& params, T h = T(1e-5),
                                size_t max_per_param = 64, Rng* rng = nullptr) {
    for (auto& [name, p] : params) {
        (void)name;
        p.set_requires_grad(true);
        p.zero_grad();
    }
    {
        Tensor<T> loss = loss_fn();
        backward(loss);
    }
    GradReport<T> report;
    for (auto& [name, p] : params) {
        const size_t n = p.numel();
        if (n == 0) continue;
        const size_t stride = std::max<size_t>(1, n / max_per_param);
        const size_t offset = rng ? static_cast<size_t>(rng->below(stride)) : 0;
        for (size_t i = offset; i < n; i += stride) {
            const T saved = p.node->value[i];
            const T step = h * (T(1) + std::abs(saved));
            p.node->value[i] = saved + step;
            T up = loss_fn().item();
            p.node->value[i] = saved - step;
            T down = loss_fn().item();
            p.node->value[i] = saved;
            const T numeric = (up - down) / (T(2) * step);
            const T analytic = p.node->grad.empty() ? T(0) : p.node->grad[i];
            const T rel =
                std::abs(numeric - analytic) / (std::abs(numeric) + std::abs(analytic) + T(1e-12));
            report.checked += 1;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = i;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

// single-tensor convenience: checks every coordinate of x
template <typename T, typename LossFn>
GradReport<T> finite_diff_check(LossFn&& loss_fn, Tensor<T>& x, T h = T(1e-5)) {
    ParamMap<T> params{{"x", x}};
    return finite_diff_check(loss_fn, params, h, x.numel() ? x.numel() : 1);
}

}  // namespace refedit

#endif  // REFEDIT_GRADCHECK_HPP
