#pragma once

// Central finite differences, the verification oracle every hand-written
// backward pass in this project is checked against.

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace puma {

using ScalarFn = std::function<double(const std::vector<double>&)>;

inline std::vector<double> finite_difference_gradient(const ScalarFn& f,
                                                      const std::vector<double>& x,
                                                      double h = 1e-5) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("finite_difference_gradient: h must be positive");
    }
    std::vector<double> grad(x.size(), 0.0);
    std::vector<double> probe = x;
    for (size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Norm-based relative error between an analytic gradient and its finite
// difference estimate; well defined even when single coordinates vanish.
inline double gradient_relative_error(std::span<const double> analytic,
                                      std::span<const double> numeric) {
    if (analytic.size() != numeric.size()) {
        throw std::invalid_argument("gradient_relative_error: length mismatch");
    }
    double diff2 = 0.0;
    double ref2 = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double d = analytic[i] - numeric[i];
        diff2 += d * d;
        ref2 += numeric[i] * numeric[i];
    }
    const double ref = std::sqrt(ref2);
    if (ref < 1e-12) {
        return std::sqrt(diff2);
    }
    return std::sqrt(diff2) / ref;
}

}  // namespace puma
