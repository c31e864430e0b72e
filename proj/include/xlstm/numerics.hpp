// Elementwise and normalization primitives with hand-written reverse-mode
// derivatives. Everything here is a pure function over value-semantic
// tensors; normalizations act over the last axis.
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "xlstm/tensor.hpp"

namespace xlstm {

template <class Real>
struct NormParams {
    std::vector<Real> scale;                 // length = normalized extent
    std::optional<std::vector<Real>> shift;  // LayerNorm only
    Real epsilon = Real(1e-6);
};

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

template <class Real>
inline Real sigmoid(Real x) {
    if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
    Real e = std::exp(x);
    return e / (Real(1) + e);
}

// log(sigmoid(x)), stable for large |x|.
template <class Real>
inline Real log_sigmoid(Real x) {
    if (x >= Real(0)) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

template <class Real>
inline Real swish(Real x) {
    return x * sigmoid(x);
}

template <class Real>
inline Real swish_grad(Real x) {
    Real s = sigmoid(x);
    return s * (Real(1) + x * (Real(1) - s));
}

template <class Real>
inline Real softcap_scalar(Real x, Real a) {
    return a * std::tanh(x / a);
}

template <class Real>
inline Real softcap_grad_scalar(Real x, Real a) {
    Real t = std::tanh(x / a);
    return Real(1) - t * t;
}

// ---------------------------------------------------------------------------
// softcap: a * tanh(x / a)
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> softcap(const Tensor<Real>& x, Real a) {
    if (!(a > Real(0)))
        throw std::invalid_argument("softcap: cap must be positive");
    Tensor<Real> out = x;
    for (auto& v : out.data) v = softcap_scalar(v, a);
    return out;
}

template <class Real>
Tensor<Real> softcap_backward(const Tensor<Real>& x, Real a,
                              const Tensor<Real>& upstream) {
    if (!(a > Real(0)))
        throw std::invalid_argument("softcap: cap must be positive");
    if (!x.same_shape(upstream))
        throw std::invalid_argument("softcap_backward: shape mismatch");
    Tensor<Real> dx = x;
    for (std::size_t i = 0; i < dx.numel(); ++i)
        dx[i] = upstream[i] * softcap_grad_scalar(x[i], a);
    return dx;
}

// ---------------------------------------------------------------------------
// rmsnorm: scale * x / sqrt(mean(x^2) + eps), over the last axis
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
inline void check_norm_shapes(const Tensor<Real>& x, const NormParams<Real>& p) {
    if (x.last_extent() != p.scale.size())
        throw std::invalid_argument("norm: scale length != last axis extent");
    if (!(p.epsilon > Real(0)) && p.epsilon != Real(0))
        throw std::invalid_argument("norm: epsilon must be non-negative");
}

}  // namespace detail

template <class Real>
void rmsnorm_row(const Real* x, const Real* scale, Real eps, std::size_t n,
                 Real* out) {
    Real ss = Real(0);
    for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
    Real r = Real(1) / std::sqrt(ss / Real(n) + eps);
    for (std::size_t i = 0; i < n; ++i) out[i] = scale[i] * x[i] * r;
}

template <class Real>
void rmsnorm_row_backward(const Real* x, const Real* scale, Real eps,
                          std::size_t n, const Real* g, Real* dx,
                          Real* dscale) {
    Real ss = Real(0);
    for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
    Real r = Real(1) / std::sqrt(ss / Real(n) + eps);
    Real dot = Real(0);  // sum_i g_i * scale_i * x_i
    for (std::size_t i = 0; i < n; ++i) dot += g[i] * scale[i] * x[i];
    Real c = r * r * r * dot / Real(n);
    for (std::size_t i = 0; i < n; ++i) {
        dx[i] += r * scale[i] * g[i] - c * x[i];
        dscale[i] += g[i] * x[i] * r;
    }
}

template <class Real>
Tensor<Real> rmsnorm(const Tensor<Real>& x, const NormParams<Real>& p) {
    detail::check_norm_shapes(x, p);
    std::size_t n = x.last_extent();
    Tensor<Real> out = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
        rmsnorm_row(x.data.data() + r * n, p.scale.data(), p.epsilon, n,
                    out.data.data() + r * n);
    return out;
}

template <class Real>
void rmsnorm_backward(const Tensor<Real>& x, const NormParams<Real>& p,
                      const Tensor<Real>& upstream, Tensor<Real>& dx,
                      std::vector<Real>& dscale) {
    detail::check_norm_shapes(x, p);
    if (!x.same_shape(upstream))
        throw std::invalid_argument("rmsnorm_backward: shape mismatch");
    std::size_t n = x.last_extent();
    dx = Tensor<Real>::zeros(x.shape);
    dscale.assign(n, Real(0));
    for (std::size_t r = 0; r < x.rows(); ++r)
        rmsnorm_row_backward(x.data.data() + r * n, p.scale.data(), p.epsilon,
                             n, upstream.data.data() + r * n,
                             dx.data.data() + r * n, dscale.data());
}

// ---------------------------------------------------------------------------
// layernorm: scale * (x - mean) / sqrt(var + eps) [+ shift], over last axis
// ---------------------------------------------------------------------------

template <class Real>
void layernorm_row(const Real* x, const Real* scale, const Real* shift,
                   Real eps, std::size_t n, Real* out) {
    Real mean = Real(0);
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= Real(n);
    Real var = Real(0);
    for (std::size_t i = 0; i < n; ++i) {
        Real d = x[i] - mean;
        var += d * d;
    }
    var /= Real(n);
    Real r = Real(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = scale[i] * (x[i] - mean) * r;
        if (shift) out[i] += shift[i];
    }
}

template <class Real>
void layernorm_row_backward(const Real* x, const Real* scale, Real eps,
                            std::size_t n, const Real* g, Real* dx,
                            Real* dscale, Real* dshift) {
    Real mean = Real(0);
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= Real(n);
    Real var = Real(0);
    for (std::size_t i = 0; i < n; ++i) {
        Real d = x[i] - mean;
        var += d * d;
    }
    var /= Real(n);
    Real r = Real(1) / std::sqrt(var + eps);

    // xhat_i = (x_i - mean) * r;  dxhat_i = g_i * scale_i
    Real sum_dxhat = Real(0), sum_dxhat_xhat = Real(0);
    for (std::size_t i = 0; i < n; ++i) {
        Real xhat = (x[i] - mean) * r;
        Real dxhat = g[i] * scale[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
    }
    for (std::size_t i = 0; i < n; ++i) {
        Real xhat = (x[i] - mean) * r;
        Real dxhat = g[i] * scale[i];
        dx[i] += r * (dxhat - sum_dxhat / Real(n) -
                      xhat * sum_dxhat_xhat / Real(n));
        dscale[i] += g[i] * xhat;
        if (dshift) dshift[i] += g[i];
    }
}

template <class Real>
Tensor<Real> layernorm(const Tensor<Real>& x, const NormParams<Real>& p) {
    detail::check_norm_shapes(x, p);
    if (p.shift && p.shift->size() != p.scale.size())
        throw std::invalid_argument("layernorm: shift length mismatch");
    std::size_t n = x.last_extent();
    Tensor<Real> out = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
        layernorm_row(x.data.data() + r * n, p.scale.data(),
                      p.shift ? p.shift->data() : nullptr, p.epsilon, n,
                      out.data.data() + r * n);
    return out;
}

template <class Real>
void layernorm_backward(const Tensor<Real>& x, const NormParams<Real>& p,
                        const Tensor<Real>& upstream, Tensor<Real>& dx,
                        std::vector<Real>& dscale, std::vector<Real>& dshift) {
    detail::check_norm_shapes(x, p);
    if (!x.same_shape(upstream))
        throw std::invalid_argument("layernorm_backward: shape mismatch");
    std::size_t n = x.last_extent();
    dx = Tensor<Real>::zeros(x.shape);
    dscale.assign(n, Real(0));
    dshift.assign(n, Real(0));
    for (std::size_t r = 0; r < x.rows(); ++r)
        layernorm_row_backward(x.data.data() + r * n, p.scale.data(),
                               p.epsilon, n, upstream.data.data() + r * n,
                               dx.data.data() + r * n, dscale.data(),
                               p.shift ? dshift.data() : nullptr);
}

// ---------------------------------------------------------------------------
// Linear layer kernels (row-major weights: W is [n_out x n_in], y = W x + b)
// ---------------------------------------------------------------------------

template <class Real>
void linear_forward(const Real* X, const Real* W, const Real* b,
                    std::size_t rows, std::size_t n_in, std::size_t n_out,
                    Real* Y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = X + r * n_in;
        Real* y = Y + r * n_out;
        for (std::size_t o = 0; o < n_out; ++o) {
            const Real* w = W + o * n_in;
            Real acc = b ? b[o] : Real(0);
            for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
            y[o] = acc;
        }
    }
}

// Accumulates into dX, dW, db (callers zero-init).
template <class Real>
void linear_backward(const Real* X, const Real* W, const Real* dY,
                     std::size_t rows, std::size_t n_in, std::size_t n_out,
                     Real* dX, Real* dW, Real* db) {
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = X + r * n_in;
        const Real* dy = dY + r * n_out;
        Real* dx = dX ? dX + r * n_in : nullptr;
        for (std::size_t o = 0; o < n_out; ++o) {
            Real g = dy[o];
            if (g == Real(0)) continue;
            const Real* w = W + o * n_in;
            Real* dwrow = dW ? dW + o * n_in : nullptr;
            if (dx)
                for (std::size_t i = 0; i < n_in; ++i) dx[i] += g * w[i];
            if (dwrow)
                for (std::size_t i = 0; i < n_in; ++i) dwrow[i] += g * x[i];
            if (db) db[o] += g;
        }
    }
}

// ---------------------------------------------------------------------------
// SwiGLU MLP: out = W_down (swish(W_gate x) ⊙ (W_up x))
// Weights as tensors: w_gate, w_up are [d_ff x d_model], w_down is
// [d_model x d_ff]. x is [... x d_model].
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> swiglu_mlp(const Tensor<Real>& x, const Tensor<Real>& w_gate,
                        const Tensor<Real>& w_up, const Tensor<Real>& w_down) {
    if (w_gate.shape.size() != 2 || w_up.shape.size() != 2 ||
        w_down.shape.size() != 2)
        throw std::invalid_argument("swiglu_mlp: weights must be matrices");
    std::size_t d = x.last_extent();
    std::size_t dff = w_gate.shape[0];
    if (w_gate.shape[1] != d || !w_up.same_shape(w_gate) ||
        w_down.shape[0] != d || w_down.shape[1] != dff)
        throw std::invalid_argument("swiglu_mlp: dimension mismatch");
    std::size_t rows = x.rows();

    std::vector<Real> g(rows * dff), u(rows * dff);
    linear_forward(x.data.data(), w_gate.data.data(), (const Real*)nullptr,
                        rows, d, dff, g.data());
    linear_forward(x.data.data(), w_up.data.data(), (const Real*)nullptr,
                        rows, d, dff, u.data());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = swish(g[i]) * u[i];
    Tensor<Real> out = Tensor<Real>::zeros(x.shape);
    linear_forward(g.data(), w_down.data.data(), (const Real*)nullptr,
                        rows, dff, d, out.data.data());
    return out;
}

template <class Real>
void swiglu_mlp_backward(const Tensor<Real>& x, const Tensor<Real>& w_gate,
                         const Tensor<Real>& w_up, const Tensor<Real>& w_down,
                         const Tensor<Real>& upstream, Tensor<Real>& dx,
                         Tensor<Real>& dw_gate, Tensor<Real>& dw_up,
                         Tensor<Real>& dw_down) {
    std::size_t d = x.last_extent();
    std::size_t dff = w_gate.shape[0];
    std::size_t rows = x.rows();
    if (!upstream.same_shape(x))
        throw std::invalid_argument("swiglu_mlp_backward: shape mismatch");

    std::vector<Real> gpre(rows * dff), u(rows * dff), act(rows * dff);
    linear_forward(x.data.data(), w_gate.data.data(), (const Real*)nullptr,
                        rows, d, dff, gpre.data());
    linear_forward(x.data.data(), w_up.data.data(), (const Real*)nullptr,
                        rows, d, dff, u.data());
    for (std::size_t i = 0; i < act.size(); ++i)
        act[i] = swish(gpre[i]) * u[i];

    dx = Tensor<Real>::zeros(x.shape);
    dw_gate = Tensor<Real>::zeros(w_gate.shape);
    dw_up = Tensor<Real>::zeros(w_up.shape);
    dw_down = Tensor<Real>::zeros(w_down.shape);

    std::vector<Real> dact(rows * dff, Real(0));
    linear_backward(act.data(), w_down.data.data(), upstream.data.data(), rows,
                    dff, d, dact.data(), dw_down.data.data(), (Real*)nullptr);

    std::vector<Real> dgpre(rows * dff), du(rows * dff);
    for (std::size_t i = 0; i < dact.size(); ++i) {
        dgpre[i] = dact[i] * u[i] * swish_grad(gpre[i]);
        du[i] = dact[i] * swish(gpre[i]);
    }
    linear_backward(x.data.data(), w_gate.data.data(), dgpre.data(), rows, d,
                    dff, dx.data.data(), dw_gate.data.data(), (Real*)nullptr);
    linear_backward(x.data.data(), w_up.data.data(), du.data(), rows, d, dff,
                    dx.data.data(), dw_up.data.data(), (Real*)nullptr);
}

}  // namespace xlstm
