#pragma once

// Dense row-major 2-D tensors of 64-bit floats and the small kernel set the
// rest of the project is built from: affine maps, layer norm (with the
// backward pass needed by hand-written backprop), elementwise activations,
// and softmax cross-entropy.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "puma/rng.hpp"

namespace puma {

struct Tensor2 {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    size_t size() const { return rows * cols; }

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }

    double* row_ptr(size_t r) { return data.data() + r * cols; }
    const double* row_ptr(size_t r) const { return data.data() + r * cols; }

    std::span<double> row(size_t r) { return {row_ptr(r), cols}; }
    std::span<const double> row(size_t r) const { return {row_ptr(r), cols}; }

    bool same_shape(const Tensor2& other) const {
        return rows == other.rows && cols == other.cols;
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    static Tensor2 gaussian(size_t r, size_t c, Rng& rng, double sd) {
        Tensor2 t(r, c);
        for (double& v : t.data) {
            v = rng.gaussian(0.0, sd);
        }
        return t;
    }
};

inline std::string shape_str(const Tensor2& t) {
    return "(" + std::to_string(t.rows) + "x" + std::to_string(t.cols) + ")";
}

inline std::string shape_str(size_t r, size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

// ---------------------------------------------------------------------------
// Row-vector kernels. These carry essentially all of the training cost, so
// they are written as straight loops over contiguous memory.
// ---------------------------------------------------------------------------

// y = x.W + b for a single row x of length W.rows; y has length W.cols.
inline void vec_affine(std::span<const double> x, const Tensor2& W,
                       std::span<const double> b, std::span<double> y) {
    if (x.size() != W.rows || b.size() != W.cols || y.size() != W.cols) {
        throw std::invalid_argument("vec_affine: shape mismatch, x len " +
                                    std::to_string(x.size()) + " vs W " + shape_str(W));
    }
    for (size_t c = 0; c < W.cols; ++c) {
        y[c] = b[c];
    }
    for (size_t k = 0; k < W.rows; ++k) {
        const double xk = x[k];
        if (xk == 0.0) {
            continue;
        }
        const double* wrow = W.row_ptr(k);
        for (size_t c = 0; c < W.cols; ++c) {
            y[c] += xk * wrow[c];
        }
    }
}

// dx = W.dy (pullback of vec_affine with respect to its input row).
inline void vec_affine_backward_input(const Tensor2& W, std::span<const double> dy,
                                      std::span<double> dx) {
    if (dy.size() != W.cols || dx.size() != W.rows) {
        throw std::invalid_argument("vec_affine_backward_input: shape mismatch");
    }
    for (size_t k = 0; k < W.rows; ++k) {
        const double* wrow = W.row_ptr(k);
        double acc = 0.0;
        for (size_t c = 0; c < W.cols; ++c) {
            acc += wrow[c] * dy[c];
        }
        dx[k] = acc;
    }
}

// dW += outer(x, dy); db += dy. Accumulates so batches can sum in place.
inline void vec_affine_backward_params(std::span<const double> x, std::span<const double> dy,
                                       Tensor2& dW, std::span<double> db) {
    if (x.size() != dW.rows || dy.size() != dW.cols || db.size() != dW.cols) {
        throw std::invalid_argument("vec_affine_backward_params: shape mismatch");
    }
    for (size_t k = 0; k < dW.rows; ++k) {
        const double xk = x[k];
        if (xk == 0.0) {
            continue;
        }
        double* wrow = dW.row_ptr(k);
        for (size_t c = 0; c < dW.cols; ++c) {
            wrow[c] += xk * dy[c];
        }
    }
    for (size_t c = 0; c < dW.cols; ++c) {
        db[c] += dy[c];
    }
}

// Matrix form: returns x.W + b broadcast over the rows of x.
inline Tensor2 dense_affine(const Tensor2& x, const Tensor2& W, std::span<const double> b) {
    if (x.cols != W.rows) {
        throw std::invalid_argument("dense_affine: x " + shape_str(x) +
                                    " is incompatible with W " + shape_str(W));
    }
    if (b.size() != W.cols) {
        throw std::invalid_argument("dense_affine: bias length " + std::to_string(b.size()) +
                                    " does not match W " + shape_str(W));
    }
    Tensor2 y(x.rows, W.cols);
    for (size_t r = 0; r < x.rows; ++r) {
        vec_affine(x.row(r), W, b, y.row(r));
    }
    return y;
}

// ---------------------------------------------------------------------------
// Layer norm over a row, population variance, eps inside the square root.
// ---------------------------------------------------------------------------

struct LayerNormCache {
    std::vector<double> xhat;
    double inv_std = 0.0;
};

inline void layer_norm_forward(std::span<const double> x, std::span<const double> gamma,
                               std::span<const double> beta, double eps,
                               std::span<double> y, LayerNormCache* cache = nullptr) {
    const size_t n = x.size();
    if (gamma.size() != n || beta.size() != n || y.size() != n) {
        throw std::invalid_argument("layer_norm: length mismatch (x " + std::to_string(n) +
                                    ", gamma " + std::to_string(gamma.size()) + ", beta " +
                                    std::to_string(beta.size()) + ")");
    }
    if (!(eps > 0.0)) {
        throw std::invalid_argument("layer_norm: eps must be positive");
    }
    double mean = 0.0;
    for (double v : x) {
        mean += v;
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) {
        const double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    if (cache != nullptr) {
        cache->xhat.resize(n);
        cache->inv_std = inv_std;
    }
    for (size_t i = 0; i < n; ++i) {
        const double xhat = (x[i] - mean) * inv_std;
        if (cache != nullptr) {
            cache->xhat[i] = xhat;
        }
        y[i] = xhat * gamma[i] + beta[i];
    }
}

inline std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gamma,
                                      std::span<const double> beta, double eps) {
    std::vector<double> y(x.size());
    layer_norm_forward(x, gamma, beta, eps, y);
    return y;
}

// dx from dy given the cached normalization; optionally accumulates the
// gamma/beta gradients (skipped for frozen norms).
inline void layer_norm_backward(std::span<const double> dy, std::span<const double> gamma,
                                const LayerNormCache& cache, std::span<double> dx,
                                std::span<double> dgamma = {}, std::span<double> dbeta = {}) {
    const size_t n = dy.size();
    if (cache.xhat.size() != n || gamma.size() != n || dx.size() != n) {
        throw std::invalid_argument("layer_norm_backward: length mismatch");
    }
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double g = dy[i] * gamma[i];
        mean_g += g;
        mean_gx += g * cache.xhat[i];
    }
    mean_g /= static_cast<double>(n);
    mean_gx /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const double g = dy[i] * gamma[i];
        dx[i] = (g - mean_g - cache.xhat[i] * mean_gx) * cache.inv_std;
    }
    if (!dgamma.empty()) {
        for (size_t i = 0; i < n; ++i) {
            dgamma[i] += dy[i] * cache.xhat[i];
        }
    }
    if (!dbeta.empty()) {
        for (size_t i = 0; i < n; ++i) {
            dbeta[i] += dy[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations. GELU uses the tanh approximation
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
// which has a closed-form derivative.
// ---------------------------------------------------------------------------

enum class Activation : uint8_t { tanh_kind = 0, gelu = 1, relu = 2 };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::tanh_kind: return "tanh";
        case Activation::gelu: return "gelu";
        case Activation::relu: return "relu";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return Activation::tanh_kind;
    if (name == "gelu") return Activation::gelu;
    if (name == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation: " + name);
}

namespace detail {
constexpr double kGeluCoef = 0.044715;
// sqrt(2/pi)
constexpr double kGeluScale = 0.7978845608028653558798921198687637;
}  // namespace detail

inline double activate(double x, Activation kind) {
    switch (kind) {
        case Activation::tanh_kind:
            return std::tanh(x);
        case Activation::gelu: {
            const double g = detail::kGeluScale * (x + detail::kGeluCoef * x * x * x);
            return 0.5 * x * (1.0 + std::tanh(g));
        }
        case Activation::relu:
            return x > 0.0 ? x : 0.0;
    }
    return 0.0;
}

// Derivative evaluated at the pre-activation value.
inline double activate_grad(double x, Activation kind) {
    switch (kind) {
        case Activation::tanh_kind: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case Activation::gelu: {
            const double g = detail::kGeluScale * (x + detail::kGeluCoef * x * x * x);
            const double t = std::tanh(g);
            const double dg = detail::kGeluScale * (1.0 + 3.0 * detail::kGeluCoef * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dg;
        }
        case Activation::relu:
            return x > 0.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

inline void activate(std::span<const double> x, Activation kind, std::span<double> y) {
    for (size_t i = 0; i < x.size(); ++i) {
        y[i] = activate(x[i], kind);
    }
}

inline Tensor2 activate(const Tensor2& x, Activation kind) {
    Tensor2 y(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i) {
        y.data[i] = activate(x.data[i], kind);
    }
    return y;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy with max subtraction. grad = softmax - onehot(label).
// ---------------------------------------------------------------------------

struct SoftmaxXentResult {
    double loss = 0.0;
    std::vector<double> grad;
    std::vector<double> probs;
};

inline SoftmaxXentResult softmax_cross_entropy(std::span<const double> logits, size_t label) {
    if (label >= logits.size()) {
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(logits.size()) +
                                    " logits");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        max_logit = std::max(max_logit, v);
    }
    SoftmaxXentResult out;
    out.probs.resize(logits.size());
    double sum_exp = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out.probs[i] = std::exp(logits[i] - max_logit);
        sum_exp += out.probs[i];
    }
    const double inv_sum = 1.0 / sum_exp;
    for (double& p : out.probs) {
        p *= inv_sum;
    }
    out.loss = -(logits[label] - max_logit - std::log(sum_exp));
    out.grad = out.probs;
    out.grad[label] -= 1.0;
    return out;
}

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace puma
