#ifndef TACT_GRADCHECK_HPP
#define TACT_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "tact/rng.hpp"
#include "tact/tensor.hpp"

// Finite-difference verification of analytic gradients. Runs in double
// precision; central differences with h = 1e-5 * max(1, |x|) per coordinate.
// The forward output is projected onto a fixed random vector so every op can
// be checked through a scalar.

namespace tact::nn {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_name;
    std::size_t worst_index = 0;
    std::size_t checked = 0;

    bool passes(double tolerance) const { return max_rel_error < tolerance; }
};

template <Real T>
struct GradCheckVar {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

// forward(): full recomputation from the current variable values.
// backward(gout): zero grads, run backward from the projection vector.
template <Real T>
GradCheckReport gradient_check(const std::function<Tensor<T>()>& forward,
                               const std::function<void(const Tensor<T>&)>& backward,
                               const std::vector<GradCheckVar<T>>& vars,
                               std::uint64_t projection_seed = 17) {
    Tensor<T> y0 = forward();
    Tensor<T> proj(y0.shape);
    auto rng = make_rng(projection_seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : proj.data) v = static_cast<T>(u(rng));

    backward(proj);

    auto project = [&](const Tensor<T>& y) {
        double s = 0;
        for (std::size_t i = 0; i < y.numel(); ++i)
            s += static_cast<double>(y.data[i]) * static_cast<double>(proj.data[i]);
        return s;
    };

    GradCheckReport report;
    for (const auto& var : vars) {
        for (std::size_t i = 0; i < var.value->numel(); ++i) {
            const T saved = var.value->data[i];
            const double h = 1e-5 * std::max(1.0, std::abs(static_cast<double>(saved)));
            var.value->data[i] = saved + static_cast<T>(h);
            const double fp = project(forward());
            var.value->data[i] = saved - static_cast<T>(h);
            const double fm = project(forward());
            var.value->data[i] = saved;

            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = static_cast<double>(var.grad->data[i]);
            const double denom =
                std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            const double rel = std::abs(numeric - analytic) / denom;
            ++report.checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_name = var.name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace tact::nn

#endif
