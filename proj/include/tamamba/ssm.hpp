#pragma once

// Zero-order-hold discretized selective scan and its texture-modulated
// variant.
//
//   abar = exp(delta * a)
//   bbar = (exp(delta * a) - 1) / a * b
//   h_k  = abar_k * h_{k-1} + bbar_k * x_k,   h_0 = 0
//   y_k  = c_k . h_k + d * x_k
//
// A is diagonal. The model keeps one diagonal per channel and stores it as
// a = -exp(log_a) so decay stays strictly negative under training.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tamamba/ops.hpp"
#include "tamamba/tensor.hpp"

namespace tamamba::ssm {

/// Below this magnitude of a, bbar uses the series limit delta*b*(1 + delta*a/2).
inline constexpr real kSeriesThreshold = real(1e-8);

struct Zoh {
    real abar;
    real bbar;
};

inline Zoh discretize_zoh(real a, real b, real delta) {
    if (!(delta >= real(0))) throw ArgumentError("discretize_zoh: step size must be non-negative");
    const real abar = std::exp(delta * a);
    if (std::abs(a) > kSeriesThreshold) return {abar, std::expm1(delta * a) / a * b};
    return {abar, delta * b * (real(1) + delta * a / real(2))};
}

/// Continuous parameters of a single-channel scan.
struct ScanParams {
    std::size_t length = 0;
    std::size_t n_state = 0;
    std::vector<real> a_diag;     // [N]
    std::vector<real> b_seq;      // [L,N]
    std::vector<real> c_seq;      // [L,N]
    real d_skip = 0;
    std::vector<real> delta_seq;  // [L]

    void validate() const {
        if (a_diag.size() != n_state || b_seq.size() != length * n_state || c_seq.size() != length * n_state ||
            delta_seq.size() != length) {
            throw ShapeError("ScanParams: sequence lengths disagree");
        }
        for (real d : delta_seq)
            if (!(d > real(0))) throw ArgumentError("ScanParams: step sizes must be strictly positive");
    }
};

struct DiscretizedParams {
    std::size_t length = 0;
    std::size_t n_state = 0;
    std::vector<real> abar;  // [L,N]
    std::vector<real> bbar;  // [L,N]
};

inline DiscretizedParams discretize(const ScanParams& p) {
    p.validate();
    DiscretizedParams out{p.length, p.n_state, std::vector<real>(p.length * p.n_state),
                          std::vector<real>(p.length * p.n_state)};
    for (std::size_t k = 0; k < p.length; ++k)
        for (std::size_t n = 0; n < p.n_state; ++n) {
            const auto z = discretize_zoh(p.a_diag[n], p.b_seq[k * p.n_state + n], p.delta_seq[k]);
            out.abar[k * p.n_state + n] = z.abar;
            out.bbar[k * p.n_state + n] = z.bbar;
        }
    return out;
}

/// Runs the discretized recurrence over x (one scalar per token).
inline std::vector<real> selective_scan(const DiscretizedParams& p, std::span<const real> c_seq, real d_skip,
                                        std::span<const real> x) {
    const std::size_t L = p.length, N = p.n_state;
    if (x.size() != L || c_seq.size() != L * N || p.abar.size() != L * N || p.bbar.size() != L * N) {
        throw ShapeError("selective_scan: sequence length mismatch");
    }
    std::vector<real> h(N, real(0));
    std::vector<real> y(L);
    for (std::size_t k = 0; k < L; ++k) {
        const real* ab = p.abar.data() + k * N;
        const real* bb = p.bbar.data() + k * N;
        const real* c = c_seq.data() + k * N;
        const real xk = x[k];
        real acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
            h[n] = ab[n] * h[n] + bb[n] * xk;
            acc += c[n] * h[n];
        }
        y[k] = acc + d_skip * xk;
    }
    return y;
}

namespace detail {

/// (z e^z - e^z + 1) / z^2, i.e. d/da of expm1(delta a)/a divided by delta^2.
inline real zoh_da_factor(real z) {
    if (std::abs(z) < real(1e-3)) return real(0.5) + z / real(3) + z * z / real(8);
    return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

}  // namespace detail

/// Differentiable multi-channel scan with discretization fused in.
///
///   x     [L,C]  token features
///   delta [L]    step size per token (> 0)
///   a     [C,N]  diagonal decay per channel (< 0)
///   b, c  [L,N]  per-token input/output rows shared across channels
///   d     [C]    skip weight per channel
///
/// Returns y [L,C]. Every channel runs its own N-state recurrence.
inline Tensor selective_scan_zoh(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                                 const Tensor& c, const Tensor& d) {
    if (x.rank() != 2 || a.rank() != 2 || b.rank() != 2 || c.rank() != 2) {
        throw ShapeError("selective_scan_zoh: x, a, b, c must be matrices");
    }
    const std::size_t L = x.dim(0), C = x.dim(1), N = a.dim(1);
    if (a.dim(0) != C || b.dim(0) != L || c.dim(0) != L || b.dim(1) != N || c.dim(1) != N || delta.numel() != L ||
        d.numel() != C) {
        throw ShapeError("selective_scan_zoh: length mismatch (x" + to_string(x.shape()) + ", a" +
                         to_string(a.shape()) + ", b" + to_string(b.shape()) + ")");
    }
    const real* xs = x.data().data();
    const real* ds = delta.data().data();
    const real* as = a.data().data();
    const real* bs = b.data().data();
    const real* cs = c.data().data();
    const real* dd = d.data().data();
    for (std::size_t k = 0; k < L; ++k)
        if (!(ds[k] > real(0))) throw NumericError("selective_scan_zoh: non-positive step size");

    const std::size_t CN = C * N;
    // abar, bbar coefficient f = expm1(delta a)/a, and states, all [L,C,N].
    auto abar = std::make_shared<std::vector<real>>(L * CN);
    auto fco = std::make_shared<std::vector<real>>(L * CN);
    auto hs = std::make_shared<std::vector<real>>(L * CN);
    std::vector<real> y(L * C);
    std::vector<real> h(CN, real(0));
    for (std::size_t k = 0; k < L; ++k) {
        const real dk = ds[k];
        const real* bk = bs + k * N;
        const real* ck = cs + k * N;
        real* abk = abar->data() + k * CN;
        real* fk = fco->data() + k * CN;
        real* hk = hs->data() + k * CN;
        for (std::size_t ch = 0; ch < C; ++ch) {
            const real xv = xs[k * C + ch];
            const real* ac = as + ch * N;
            real acc = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const real z = dk * ac[n];
                const real ab = std::exp(z);
                const real f = std::abs(ac[n]) > kSeriesThreshold ? std::expm1(z) / ac[n]
                                                                  : dk * (real(1) + z / real(2));
                const std::size_t i = ch * N + n;
                h[i] = ab * h[i] + f * bk[n] * xv;
                abk[i] = ab;
                fk[i] = f;
                hk[i] = h[i];
                acc += ck[n] * h[i];
            }
            y[k * C + ch] = acc + dd[ch] * xv;
        }
    }

    return Tensor::make_result(
        {L, C}, std::move(y), "selective_scan", {x, delta, a, b, c, d},
        [=](std::span<const real> g, std::vector<std::vector<real>>& gin) {
            const real* xs = x.data().data();
            const real* ds = delta.data().data();
            const real* as = a.data().data();
            const real* bs = b.data().data();
            const real* cs = c.data().data();
            const real* dd = d.data().data();
            auto& gx = gin[0];
            auto& gdelta = gin[1];
            auto& ga = gin[2];
            auto& gb = gin[3];
            auto& gc = gin[4];
            auto& gd = gin[5];
            std::vector<real> carry(CN, real(0));
            for (std::size_t kk = L; kk-- > 0;) {
                const real dk = ds[kk];
                const real* bk = bs + kk * N;
                const real* ck = cs + kk * N;
                const real* abk = abar->data() + kk * CN;
                const real* fk = fco->data() + kk * CN;
                const real* hk = hs->data() + kk * CN;
                const real* hprev = kk > 0 ? hs->data() + (kk - 1) * CN : nullptr;
                real gdk = 0;
                for (std::size_t ch = 0; ch < C; ++ch) {
                    const real gy = g[kk * C + ch];
                    const real xv = xs[kk * C + ch];
                    const real* ac = as + ch * N;
                    real gxv = gy * dd[ch];
                    if (!gd.empty()) gd[ch] += gy * xv;
                    for (std::size_t n = 0; n < N; ++n) {
                        const std::size_t i = ch * N + n;
                        const real gh = carry[i] + ck[n] * gy;
                        if (!gc.empty()) gc[kk * N + n] += gy * hk[i];
                        const real hp = hprev ? hprev[i] : real(0);
                        const real g_ab = gh * hp;
                        const real g_bb = gh * xv;  // d/d(f * b)
                        gxv += gh * fk[i] * bk[n];
                        if (!gb.empty()) gb[kk * N + n] += g_bb * fk[i];
                        const real gf = g_bb * bk[n];
                        const real an = ac[n];
                        const bool series = std::abs(an) <= kSeriesThreshold;
                        const real df_ddelta = series ? real(1) + dk * an : abk[i];
                        const real df_da = series ? dk * dk / real(2) : dk * dk * detail::zoh_da_factor(dk * an);
                        gdk += g_ab * an * abk[i] + gf * df_ddelta;
                        if (!ga.empty()) ga[i] += g_ab * dk * abk[i] + gf * df_da;
                        carry[i] = gh * abk[i];
                    }
                    if (!gx.empty()) gx[kk * C + ch] += gxv;
                }
                if (!gdelta.empty()) gdelta[kk] += gdk;
            }
        });
}

/// Learned projections of one texture-aware scan.
struct SsmWeights {
    Tensor proj_b;      // [C,N]
    Tensor proj_c;      // [C,N]
    Tensor proj_delta;  // [C,1]
    Tensor delta_bias;  // [1]
    Tensor log_a;       // [C,N], a = -exp(log_a)
    Tensor d_skip;      // [C]
};

/// a = -exp(log_a), strictly negative.
inline Tensor decay(const SsmWeights& w) { return -exp(w.log_a); }

struct Modulation {
    Tensor b_var;      // [L,N]
    Tensor delta_var;  // [L]
};

/// Texture-aware modulation of the input row and the step size:
///   b_var = v * (x W_b),  delta_var = softplus(v * (x W_delta) + bias)
inline Modulation texture_modulate(const Tensor& tokens, const Tensor& var_norm, const SsmWeights& w) {
    if (tokens.rank() != 2 || var_norm.numel() != tokens.dim(0)) {
        throw ShapeError("texture_modulate: one variance factor per token required");
    }
    const std::size_t L = tokens.dim(0);
    const Tensor v = var_norm.reshape({L});
    Modulation m;
    m.b_var = scale_rows(linear(tokens, w.proj_b), v);
    const Tensor pre = scale_rows(linear(tokens, w.proj_delta), v).reshape({L});
    m.delta_var = softplus(pre + w.delta_bias);
    return m;
}

/// Texture-aware scan over tokens [L,C] already ordered and embedded.
/// var_norm holds one normalized patch variance per token. An empty
/// sequence is returned unchanged.
inline Tensor ta_ssm_apply(const Tensor& tokens, const Tensor& var_norm, const SsmWeights& w) {
    if (tokens.rank() != 2) throw ShapeError("ta_ssm_apply expects tokens [L,C]");
    if (tokens.dim(0) == 0) return tokens;
    const Modulation m = texture_modulate(tokens, var_norm, w);
    const Tensor c = linear(tokens, w.proj_c);
    return selective_scan_zoh(tokens, m.delta_var, decay(w), m.b_var, c, w.d_skip);
}

}  // namespace tamamba::ssm
