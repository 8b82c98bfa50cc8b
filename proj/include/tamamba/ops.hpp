#pragma once

// Differentiable building blocks above the elementwise core: dense
// projections, convolution, normalization, rearrangements and the DFT.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "tamamba/tensor.hpp"

namespace tamamba {

// ---------------------------------------------------------------------------
// Index rearrangement
// ---------------------------------------------------------------------------

/// out[i] = x[src[i]]. Any index map works; repeated sources accumulate
/// in the adjoint. All pure rearrangements in the library route through here.
inline Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::size_t> src, std::string_view op = "gather") {
    if (numel(out_shape) != src.size()) throw ShapeError(std::string(op) + ": index map size mismatch");
    const auto xs = x.data();
    std::vector<real> y(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i] >= xs.size()) throw ArgumentError(std::string(op) + ": source index out of range");
        y[i] = xs[src[i]];
    }
    auto map = std::make_shared<const std::vector<std::size_t>>(std::move(src));
    return Tensor::make_result(std::move(out_shape), std::move(y), op, {x},
                               [map](std::span<const real> g, std::vector<std::vector<real>>& gin) {
                                   auto& gx = gin[0];
                                   for (std::size_t i = 0; i < g.size(); ++i) gx[(*map)[i]] += g[i];
                               });
}

/// [C,H,W] -> [H*W, C] (one row per pixel).
inline Tensor to_tokens(const Tensor& f) {
    if (f.rank() != 3) throw ShapeError("to_tokens expects [C,H,W], got " + to_string(f.shape()));
    const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
    std::vector<std::size_t> src(c * hw);
    for (std::size_t t = 0; t < hw; ++t)
        for (std::size_t k = 0; k < c; ++k) src[t * c + k] = k * hw + t;
    return gather(f, {hw, c}, std::move(src), "to_tokens");
}

/// [H*W, C] -> [C,H,W].
inline Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w) {
    if (tokens.rank() != 2 || tokens.dim(0) != h * w) throw ShapeError("from_tokens: token count mismatch");
    const std::size_t c = tokens.dim(1), hw = h * w;
    std::vector<std::size_t> src(c * hw);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t t = 0; t < hw; ++t) src[k * hw + t] = t * c + k;
    return gather(tokens, {c, h, w}, std::move(src), "from_tokens");
}

/// Concatenation of flattened tensors into one vector.
inline Tensor concat_flat(const std::vector<Tensor>& parts) {
    std::vector<real> y;
    std::vector<std::size_t> offsets;
    for (const auto& t : parts) {
        offsets.push_back(y.size());
        y.insert(y.end(), t.data().begin(), t.data().end());
    }
    const std::size_t n = y.size();
    return Tensor::make_result({n}, std::move(y), "concat", parts,
                               [offsets](std::span<const real> g, std::vector<std::vector<real>>& gin) {
                                   for (std::size_t p = 0; p < gin.size(); ++p)
                                       for (std::size_t i = 0; i < gin[p].size(); ++i) gin[p][i] += g[offsets[p] + i];
                               });
}

/// Rows of a [L,K] matrix selected by index.
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    if (x.rank() != 2) throw ShapeError("gather_rows expects a matrix");
    const std::size_t k = x.dim(1);
    std::vector<std::size_t> src;
    src.reserve(rows.size() * k);
    for (std::size_t r : rows) {
        if (r >= x.dim(0)) throw ArgumentError("gather_rows: row " + std::to_string(r) + " out of range");
        for (std::size_t j = 0; j < k; ++j) src.push_back(r * k + j);
    }
    return gather(x, {rows.size(), k}, std::move(src), "gather_rows");
}

/// Copy of `base` whose rows `rows[j]` are replaced by `values` row j.
/// Target rows must be distinct.
inline Tensor scatter_rows(const Tensor& base, const Tensor& values, std::span<const std::size_t> rows) {
    if (base.rank() != 2 || values.rank() != 2 || base.dim(1) != values.dim(1) || values.dim(0) != rows.size()) {
        throw ShapeError("scatter_rows: incompatible shapes " + to_string(base.shape()) + " / " +
                         to_string(values.shape()));
    }
    const std::size_t k = base.dim(1);
    std::vector<real> y = base.values();
    std::vector<char> hit(base.dim(0), 0);
    for (std::size_t j = 0; j < rows.size(); ++j) {
        if (rows[j] >= base.dim(0) || hit[rows[j]]) throw ArgumentError("scatter_rows: invalid or repeated row");
        hit[rows[j]] = 1;
        std::copy_n(values.data().begin() + static_cast<std::ptrdiff_t>(j * k), k,
                    y.begin() + static_cast<std::ptrdiff_t>(rows[j] * k));
    }
    auto idx = std::make_shared<const std::vector<std::size_t>>(rows.begin(), rows.end());
    auto mask = std::make_shared<const std::vector<char>>(std::move(hit));
    return Tensor::make_result(base.shape(), std::move(y), "scatter_rows", {base, values},
                               [idx, mask, k](std::span<const real> g, std::vector<std::vector<real>>& gin) {
                                   if (!gin[0].empty()) {
                                       for (std::size_t r = 0; r < mask->size(); ++r)
                                           if (!(*mask)[r])
                                               for (std::size_t j = 0; j < k; ++j) gin[0][r * k + j] += g[r * k + j];
                                   }
                                   if (!gin[1].empty()) {
                                       for (std::size_t i = 0; i < idx->size(); ++i)
                                           for (std::size_t j = 0; j < k; ++j)
                                               gin[1][i * k + j] += g[(*idx)[i] * k + j];
                                   }
                               });
}

/// Mirror index without edge repetition (…2 1 | 0 1 2 … n-1 | n-2 …).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    if (n == 1) return 0;
    const std::ptrdiff_t period = 2 * (m - 1);
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < m ? i : period - i);
}

/// Reflect-pads [C,H,W] at the bottom and right edges.
inline Tensor pad_reflect_br(const Tensor& x, std::size_t pad_h, std::size_t pad_w) {
    if (pad_h == 0 && pad_w == 0) return x;
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (pad_h >= h || pad_w >= w) throw ShapeError("reflect padding must be smaller than the extent");
    const std::size_t hp = h + pad_h, wp = w + pad_w;
    std::vector<std::size_t> src(c * hp * wp);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < hp; ++y)
            for (std::size_t xx = 0; xx < wp; ++xx)
                src[(k * hp + y) * wp + xx] = (k * h + reflect_index(static_cast<std::ptrdiff_t>(y), h)) * w +
                                              reflect_index(static_cast<std::ptrdiff_t>(xx), w);
    return gather(x, {c, hp, wp}, std::move(src), "pad_reflect");
}

/// Top-left [C,h,w] window of [C,H,W].
inline Tensor crop_tl(const Tensor& x, std::size_t h, std::size_t w) {
    const std::size_t c = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (h > H || w > W) throw ShapeError("crop larger than tensor");
    if (h == H && w == W) return x;
    std::vector<std::size_t> src(c * h * w);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) src[(k * h + y) * w + xx] = (k * H + y) * W + xx;
    return gather(x, {c, h, w}, std::move(src), "crop");
}

/// out[c, y*r+dy, x*r+dx] = in[c*r*r + dy*r + dx, y, x]
inline Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
    if (x.rank() != 3 || r == 0 || x.dim(0) % (r * r) != 0) {
        throw ShapeError("pixel_shuffle: channels of " + to_string(x.shape()) + " not divisible by r^2");
    }
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), c = cin / (r * r);
    const std::size_t H = h * r, W = w * r;
    std::vector<std::size_t> src(c * H * W);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t Y = 0; Y < H; ++Y)
            for (std::size_t X = 0; X < W; ++X) {
                const std::size_t ch = k * r * r + (Y % r) * r + (X % r);
                src[(k * H + Y) * W + X] = (ch * h + Y / r) * w + X / r;
            }
    return gather(x, {c, H, W}, std::move(src), "pixel_shuffle");
}

/// Inverse of pixel_shuffle.
inline Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
    if (x.rank() != 3 || r == 0 || x.dim(1) % r != 0 || x.dim(2) % r != 0) {
        throw ShapeError("pixel_unshuffle: extents of " + to_string(x.shape()) + " not divisible by r");
    }
    const std::size_t c = x.dim(0), H = x.dim(1), W = x.dim(2), h = H / r, w = W / r;
    std::vector<std::size_t> src(c * r * r * h * w);
    for (std::size_t ch = 0; ch < c * r * r; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const std::size_t k = ch / (r * r), dy = (ch % (r * r)) / r, dx = ch % r;
                src[(ch * h + y) * w + xx] = (k * H + y * r + dy) * W + xx * r + dx;
            }
    return gather(x, {c * r * r, h, w}, std::move(src), "pixel_unshuffle");
}

// ---------------------------------------------------------------------------
// Dense projection
// ---------------------------------------------------------------------------

/// y = x W + b over the last axis of x.
inline Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt) {
    if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
        throw ShapeError("linear: cannot apply " + to_string(weight.shape()) + " to " + to_string(x.shape()));
    }
    const std::size_t din = weight.dim(0), dout = weight.dim(1), rows = x.numel() / din;
    if (bias && (bias->rank() != 1 || bias->dim(0) != dout)) throw ShapeError("linear: bias extent mismatch");
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    const real* xs = x.data().data();
    const real* ws = weight.data().data();
    std::vector<real> y(rows * dout, real(0));
    for (std::size_t m = 0; m < rows; ++m) {
        real* yr = y.data() + m * dout;
        if (bias) std::copy(bias->data().begin(), bias->data().end(), yr);
        for (std::size_t i = 0; i < din; ++i) {
            const real xv = xs[m * din + i];
            const real* wr = ws + i * dout;
            for (std::size_t o = 0; o < dout; ++o) yr[o] += xv * wr[o];
        }
    }
    std::vector<Tensor> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    return Tensor::make_result(
        std::move(out_shape), std::move(y), "linear", std::move(inputs),
        [x, weight, din, dout, rows](std::span<const real> g, std::vector<std::vector<real>>& gin) {
            const real* xs = x.data().data();
            const real* ws = weight.data().data();
            auto& gx = gin[0];
            auto& gw = gin[1];
            for (std::size_t m = 0; m < rows; ++m) {
                const real* gr = g.data() + m * dout;
                for (std::size_t i = 0; i < din; ++i) {
                    if (!gx.empty()) {
                        const real* wr = ws + i * dout;
                        real acc = 0;
                        for (std::size_t o = 0; o < dout; ++o) acc += gr[o] * wr[o];
                        gx[m * din + i] += acc;
                    }
                    if (!gw.empty()) {
                        const real xv = xs[m * din + i];
                        real* gwr = gw.data() + i * dout;
                        for (std::size_t o = 0; o < dout; ++o) gwr[o] += xv * gr[o];
                    }
                }
                if (gin.size() > 2 && !gin[2].empty())
                    for (std::size_t o = 0; o < dout; ++o) gin[2][o] += gr[o];
            }
        });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

enum class PadMode { zero, reflect };

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    PadMode mode = PadMode::reflect;
    std::size_t groups = 1;
};

/// Cross-correlation of x[C_in,H,W] with k[C_out, C_in/groups, kh, kw].
/// groups == C_in == C_out gives a depth-wise convolution.
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias = std::nullopt,
                     Conv2dOptions opt = {}) {
    if (x.rank() != 3 || kernel.rank() != 4) throw ShapeError("conv2d expects x[C,H,W] and k[Co,Ci/g,kh,kw]");
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t cout = kernel.dim(0), cin_g = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t groups = opt.groups, stride = opt.stride, pad = opt.padding;
    if (groups == 0 || stride == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g) {
        throw ShapeError("conv2d: channel/group geometry invalid for x" + to_string(x.shape()) + " k" +
                         to_string(kernel.shape()));
    }
    const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
    if (kh == 0 || kw == 0 || kh > hp || kw > wp) throw ShapeError("conv2d: kernel does not fit padded input");
    if (opt.mode == PadMode::reflect && pad > 0 && (pad >= h || pad >= w)) {
        throw ShapeError("conv2d: reflect padding must be smaller than the input extent");
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) throw ShapeError("conv2d: bias extent mismatch");
    const std::size_t ho = (hp - kh) / stride + 1, wo = (wp - kw) / stride + 1;
    const std::size_t cout_g = cout / groups;

    // Source index of every padded cell; npos marks zero padding.
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    auto padmap = std::make_shared<std::vector<std::size_t>>(hp * wp);
    for (std::size_t y = 0; y < hp; ++y)
        for (std::size_t xx = 0; xx < wp; ++xx) {
            const auto sy = static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(pad);
            const auto sx = static_cast<std::ptrdiff_t>(xx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx < static_cast<std::ptrdiff_t>(w);
            if (inside) {
                (*padmap)[y * wp + xx] = static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx);
            } else if (opt.mode == PadMode::reflect) {
                (*padmap)[y * wp + xx] = reflect_index(sy, h) * w + reflect_index(sx, w);
            } else {
                (*padmap)[y * wp + xx] = npos;
            }
        }
    auto xp = std::make_shared<std::vector<real>>(cin * hp * wp, real(0));
    {
        const real* xs = x.data().data();
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t i = 0; i < hp * wp; ++i)
                if ((*padmap)[i] != npos) (*xp)[c * hp * wp + i] = xs[c * h * w + (*padmap)[i]];
    }

    std::vector<real> y(cout * ho * wo, real(0));
    const real* ks = kernel.data().data();
    for (std::size_t co = 0; co < cout; ++co) {
        real* yc = y.data() + co * ho * wo;
        if (bias) std::fill(yc, yc + ho * wo, (*bias)[co]);
        const std::size_t g = co / cout_g;
        for (std::size_t cl = 0; cl < cin_g; ++cl) {
            const real* xc = xp->data() + (g * cin_g + cl) * hp * wp;
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const real wv = ks[((co * cin_g + cl) * kh + ky) * kw + kx];
                    for (std::size_t oy = 0; oy < ho; ++oy) {
                        const real* xr = xc + (oy * stride + ky) * wp + kx;
                        real* yr = yc + oy * wo;
                        if (stride == 1) {
                            for (std::size_t ox = 0; ox < wo; ++ox) yr[ox] += wv * xr[ox];
                        } else {
                            for (std::size_t ox = 0; ox < wo; ++ox) yr[ox] += wv * xr[ox * stride];
                        }
                    }
                }
        }
    }

    std::vector<Tensor> inputs{x, kernel};
    if (bias) inputs.push_back(*bias);
    return Tensor::make_result(
        {cout, ho, wo}, std::move(y), "conv2d", std::move(inputs),
        [=](std::span<const real> g, std::vector<std::vector<real>>& gin) {
            const real* ks = kernel.data().data();
            const bool want_x = !gin[0].empty();
            const bool want_k = !gin[1].empty();
            std::vector<real> gxp(want_x ? cin * hp * wp : 0, real(0));
            for (std::size_t co = 0; co < cout; ++co) {
                const real* gc = g.data() + co * ho * wo;
                const std::size_t grp = co / cout_g;
                if (gin.size() > 2 && !gin[2].empty()) {
                    real acc = 0;
                    for (std::size_t i = 0; i < ho * wo; ++i) acc += gc[i];
                    gin[2][co] += acc;
                }
                for (std::size_t cl = 0; cl < cin_g; ++cl) {
                    const std::size_t ci = grp * cin_g + cl;
                    const real* xc = xp->data() + ci * hp * wp;
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::size_t kidx = ((co * cin_g + cl) * kh + ky) * kw + kx;
                            const real wv = ks[kidx];
                            real kacc = 0;
                            for (std::size_t oy = 0; oy < ho; ++oy) {
                                const std::size_t base = (oy * stride + ky) * wp + kx;
                                const real* gr = gc + oy * wo;
                                if (want_k) {
                                    const real* xr = xc + base;
                                    for (std::size_t ox = 0; ox < wo; ++ox) kacc += gr[ox] * xr[ox * stride];
                                }
                                if (want_x) {
                                    real* gxr = gxp.data() + ci * hp * wp + base;
                                    for (std::size_t ox = 0; ox < wo; ++ox) gxr[ox * stride] += wv * gr[ox];
                                }
                            }
                            if (want_k) gin[1][kidx] += kacc;
                        }
                }
            }
            if (want_x) {
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t i = 0; i < hp * wp; ++i)
                        if ((*padmap)[i] != npos) gin[0][c * h * w + (*padmap)[i]] += gxp[c * hp * wp + i];
            }
        });
}

// ---------------------------------------------------------------------------
// Normalization and pooling
// ---------------------------------------------------------------------------

/// Per-row standardization over the last axis followed by gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = real(1e-5)) {
    if (!(eps > real(0))) throw ArgumentError("layer_norm: eps must be positive");
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) throw ShapeError("layer_norm: affine extent mismatch");
    const std::size_t rows = x.numel() / d;
    const real* xs = x.data().data();
    auto xhat = std::make_shared<std::vector<real>>(x.numel());
    auto rstd = std::make_shared<std::vector<real>>(rows);
    std::vector<real> y(x.numel());
    for (std::size_t m = 0; m < rows; ++m) {
        const real* xr = xs + m * d;
        real mu = 0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<real>(d);
        real var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<real>(d);
        const real r = real(1) / std::sqrt(var + eps);
        (*rstd)[m] = r;
        for (std::size_t i = 0; i < d; ++i) {
            const real xh = (xr[i] - mu) * r;
            (*xhat)[m * d + i] = xh;
            y[m * d + i] = xh * gamma[i] + beta[i];
        }
    }
    return Tensor::make_result(
        x.shape(), std::move(y), "layer_norm", {x, gamma, beta},
        [=](std::span<const real> g, std::vector<std::vector<real>>& gin) {
            const real inv_d = real(1) / static_cast<real>(d);
            for (std::size_t m = 0; m < rows; ++m) {
                const real* gr = g.data() + m * d;
                const real* xh = xhat->data() + m * d;
                real mean_g = 0, mean_gx = 0;
                for (std::size_t i = 0; i < d; ++i) {
                    const real gh = gr[i] * gamma[i];
                    mean_g += gh;
                    mean_gx += gh * xh[i];
                    if (!gin[1].empty()) gin[1][i] += gr[i] * xh[i];
                    if (!gin[2].empty()) gin[2][i] += gr[i];
                }
                mean_g *= inv_d;
                mean_gx *= inv_d;
                if (!gin[0].empty()) {
                    for (std::size_t i = 0; i < d; ++i)
                        gin[0][m * d + i] += (*rstd)[m] * (gr[i] * gamma[i] - mean_g - xh[i] * mean_gx);
                }
            }
        });
}

/// Per-channel spatial mean: [C,H,W] -> [C].
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 3 || x.dim(1) * x.dim(2) == 0) throw ShapeError("global_avg_pool expects non-empty [C,H,W]");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<real> y(c, real(0));
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i = 0; i < hw; ++i) y[k] += x[k * hw + i];
        y[k] /= static_cast<real>(hw);
    }
    return Tensor::make_result({c}, std::move(y), "global_avg_pool", {x},
                               [c, hw](std::span<const real> g, std::vector<std::vector<real>>& gin) {
                                   for (std::size_t k = 0; k < c; ++k)
                                       for (std::size_t i = 0; i < hw; ++i)
                                           gin[0][k * hw + i] += g[k] / static_cast<real>(hw);
                               });
}

/// out[c,...] = x[c,...] * s[c] for x of shape [C, ...].
inline Tensor scale_channels(const Tensor& x, const Tensor& s) {
    if (x.rank() < 1 || s.rank() != 1 || s.dim(0) != x.dim(0)) throw ShapeError("scale_channels: extent mismatch");
    const std::size_t c = x.dim(0), inner = x.numel() / c;
    std::vector<real> y(x.numel());
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < inner; ++i) y[k * inner + i] = x[k * inner + i] * s[k];
    return Tensor::make_result(x.shape(), std::move(y), "scale_channels", {x, s},
                               [x, s, c, inner](std::span<const real> g, std::vector<std::vector<real>>& gin) {
                                   for (std::size_t k = 0; k < c; ++k)
                                       for (std::size_t i = 0; i < inner; ++i) {
                                           if (!gin[0].empty()) gin[0][k * inner + i] += g[k * inner + i] * s[k];
                                           if (!gin[1].empty()) gin[1][k] += g[k * inner + i] * x[k * inner + i];
                                       }
                               });
}

/// out[l,:] = x[l,:] * s[l] for x[L,K], s[L]. Same rule as scale_channels
/// read along rows.
inline Tensor scale_rows(const Tensor& x, const Tensor& s) {
    if (x.rank() != 2) throw ShapeError("scale_rows expects a matrix");
    return scale_channels(x, s);
}

// ---------------------------------------------------------------------------
// Discrete Fourier transform
// ---------------------------------------------------------------------------

struct Complex2D {
    Tensor re;
    Tensor im;
};

namespace detail {

/// Unnormalized separable 2-D DFT, X[u,v] = sum x[i,j] e^{-2 pi i (ui/H + vj/W)}.
/// Twiddles are indexed modulo the extent so periodic values are exact.
inline void dft2(const real* x_re, const real* x_im, std::size_t h, std::size_t w, real* out_re, real* out_im) {
    auto table = [](std::size_t n, std::vector<real>& c, std::vector<real>& s) {
        c.resize(n);
        s.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
            c[k] = static_cast<real>(std::cos(a));
            s[k] = static_cast<real>(std::sin(a));
        }
    };
    std::vector<real> ch, sh, cw, sw;
    table(h, ch, sh);
    table(w, cw, sw);
    // Rows first: T[i,v] = sum_j x[i,j] e^{-2 pi i vj/W}
    std::vector<real> t_re(h * w, real(0)), t_im(h * w, real(0));
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t v = 0; v < w; ++v) {
            real ar = 0, ai = 0;
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t k = (v * j) % w;
                const real xr = x_re[i * w + j];
                const real xi = x_im ? x_im[i * w + j] : real(0);
                ar += xr * cw[k] + xi * sw[k];
                ai += xi * cw[k] - xr * sw[k];
            }
            t_re[i * w + v] = ar;
            t_im[i * w + v] = ai;
        }
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            real ar = 0, ai = 0;
            for (std::size_t i = 0; i < h; ++i) {
                const std::size_t k = (u * i) % h;
                const real tr = t_re[i * w + v];
                const real ti = t_im[i * w + v];
                ar += tr * ch[k] + ti * sh[k];
                ai += ti * ch[k] - tr * sh[k];
            }
            out_re[u * w + v] = ar;
            out_im[u * w + v] = ai;
        }
}

}  // namespace detail

/// Unnormalized 2-D DFT of a real [H,W] tensor. Both parts are
/// differentiable; the adjoint of each is itself a DFT.
inline Complex2D fft2(const Tensor& x) {
    if (x.rank() != 2 || x.numel() == 0) throw ShapeError("fft2 expects a non-empty [H,W] tensor");
    const std::size_t h = x.dim(0), w = x.dim(1);
    std::vector<real> re(h * w), im(h * w);
    detail::dft2(x.data().data(), nullptr, h, w, re.data(), im.data());
    // Re X = sum x cos(theta), Im X = -sum x sin(theta); theta is symmetric in
    // (u,i) and (v,j), so the adjoint of Re is Re DFT(g) and of Im is Im DFT(g).
    auto adjoint = [h, w](bool take_imag) {
        return [h, w, take_imag](std::span<const real> g, std::vector<std::vector<real>>& gin) {
            std::vector<real> r(h * w), i(h * w);
            detail::dft2(g.data(), nullptr, h, w, r.data(), i.data());
            const auto& src = take_imag ? i : r;
            for (std::size_t k = 0; k < h * w; ++k) gin[0][k] += src[k];
        };
    };
    Complex2D out;
    out.re = Tensor::make_result({h, w}, std::move(re), "fft2.re", {x}, adjoint(false));
    out.im = Tensor::make_result({h, w}, std::move(im), "fft2.im", {x}, adjoint(true));
    return out;
}

/// Channel k of [C,H,W] as an [H,W] tensor.
inline Tensor channel(const Tensor& x, std::size_t k) {
    if (x.rank() != 3 || k >= x.dim(0)) throw ShapeError("channel index out of range");
    const std::size_t hw = x.dim(1) * x.dim(2);
    std::vector<std::size_t> src(hw);
    std::iota(src.begin(), src.end(), k * hw);
    return gather(x, {x.dim(1), x.dim(2)}, std::move(src), "channel");
}

}  // namespace tamamba
