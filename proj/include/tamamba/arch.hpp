#pragma once

// TAMambaIR network: texture-aware scan blocks (TASSB) chained over four
// scan directions into a multi-directional perception block (MDPB),
// grouped with a convolution + channel-attention branch (TASSG), between a
// convolutional feature extractor and a pixel-shuffle upsampler.

#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tamamba/ops.hpp"
#include "tamamba/ssm.hpp"
#include "tamamba/tensor.hpp"
#include "tamamba/texture_plan.hpp"

namespace tamamba::arch {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    std::size_t n_groups = 6;
    std::size_t depth = 6;
    std::size_t d_model = 32;
    std::size_t n_state = 8;
    std::size_t patch = 4;        // feature-space patch extent (square)
    real top_p = real(0.5);
    std::size_t scale = 2;
    PadMode padding = PadMode::reflect;
    std::size_t ca_reduction = 4;
    std::size_t pos_grid = 8;     // position table is pos_grid x pos_grid

    static ModelConfig standard() {
        ModelConfig c;
        c.n_groups = 7;
        c.depth = 7;
        return c;
    }
    static ModelConfig small() { return ModelConfig{}; }
    /// Desk-scale model used for toy training runs.
    static ModelConfig micro() {
        ModelConfig c;
        c.n_groups = 2;
        c.depth = 2;
        c.d_model = 16;
        return c;
    }

    void validate() const {
        if (n_groups < 1 || depth < 1) throw ArgumentError("ModelConfig: n_groups and depth must be >= 1");
        if (!(top_p > real(0) && top_p <= real(1))) throw ArgumentError("ModelConfig: top_p must lie in (0, 1]");
        if (scale < 1 || scale > 4) throw ArgumentError("ModelConfig: scale must be 1, 2, 3 or 4");
        if (d_model < 1 || n_state < 1 || patch < 1 || pos_grid < 1) throw ArgumentError("ModelConfig: zero extent");
        if (ca_reduction < 1 || d_model % ca_reduction != 0) {
            throw ArgumentError("ModelConfig: d_model must be divisible by the channel-attention reduction");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Scan directions
// ---------------------------------------------------------------------------

enum class ScanDirection { tl_horizontal, br_horizontal, tl_vertical, br_vertical };

inline constexpr std::array<ScanDirection, 4> kScanDirections{
    ScanDirection::tl_horizontal, ScanDirection::br_horizontal, ScanDirection::tl_vertical,
    ScanDirection::br_vertical};

inline std::string_view to_string(ScanDirection d) {
    switch (d) {
        case ScanDirection::tl_horizontal: return "tl_h";
        case ScanDirection::br_horizontal: return "br_h";
        case ScanDirection::tl_vertical: return "tl_v";
        case ScanDirection::br_vertical: return "br_v";
    }
    return "?";
}

/// Row-major grid indices visited in scan order.
inline std::vector<std::size_t> direction_order(std::size_t rows, std::size_t cols, ScanDirection dir) {
    const std::size_t n = rows * cols;
    std::vector<std::size_t> order;
    order.reserve(n);
    const bool vertical = dir == ScanDirection::tl_vertical || dir == ScanDirection::br_vertical;
    if (vertical) {
        for (std::size_t c = 0; c < cols; ++c)
            for (std::size_t r = 0; r < rows; ++r) order.push_back(r * cols + c);
    } else {
        for (std::size_t i = 0; i < n; ++i) order.push_back(i);
    }
    if (dir == ScanDirection::br_horizontal || dir == ScanDirection::br_vertical) {
        std::reverse(order.begin(), order.end());
    }
    return order;
}

template <class T>
std::vector<T> direction_reorder(std::span<const T> grid, std::size_t rows, std::size_t cols, ScanDirection dir) {
    if (grid.size() != rows * cols) throw ShapeError("direction_reorder: grid is not rows x cols");
    std::vector<T> seq;
    seq.reserve(grid.size());
    for (std::size_t i : direction_order(rows, cols, dir)) seq.push_back(grid[i]);
    return seq;
}

template <class T>
std::vector<T> direction_restore(std::span<const T> seq, std::size_t rows, std::size_t cols, ScanDirection dir) {
    if (seq.size() != rows * cols) throw ShapeError("direction_restore: sequence is not rows x cols");
    std::vector<T> grid(seq.size());
    const auto order = direction_order(rows, cols, dir);
    for (std::size_t k = 0; k < order.size(); ++k) grid[order[k]] = seq[k];
    return grid;
}

/// Pixel indices (y*W + x) for the given patches, patch after patch, each
/// patch traversed in `dir`. Also reports the owning patch of every token.
inline std::vector<std::size_t> patch_token_order(const texture::PatchGeometry& g, std::span<const std::size_t> patches,
                                                  ScanDirection dir, std::vector<std::size_t>* token_patch = nullptr) {
    const auto local = direction_order(g.patch_h, g.patch_w, dir);
    std::vector<std::size_t> order;
    order.reserve(patches.size() * local.size());
    if (token_patch) token_patch->clear();
    for (std::size_t p : patches) {
        const std::size_t y0 = (p / g.cols) * g.patch_h, x0 = (p % g.cols) * g.patch_w;
        for (std::size_t l : local) {
            order.push_back((y0 + l / g.patch_w) * g.width + x0 + l % g.patch_w);
            if (token_patch) token_patch->push_back(p);
        }
    }
    return order;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct TassbWeights {
    bool texture_aware = true;  // false: full scan, no filtering, no embedding
    Tensor in_w, in_b;          // [C,C], [C]
    Tensor dw_k, dw_b;          // [C,1,3,3], [C]
    ssm::SsmWeights ssm;
    texture::PositionTable pos;
    Tensor ln_g, ln_b;          // [C]
    Tensor out_w, out_b;        // [C,C], [C]

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + "in_w", in_w);
        fn(prefix + "in_b", in_b);
        fn(prefix + "dw_k", dw_k);
        fn(prefix + "dw_b", dw_b);
        fn(prefix + "ssm.proj_b", ssm.proj_b);
        fn(prefix + "ssm.proj_c", ssm.proj_c);
        fn(prefix + "ssm.proj_delta", ssm.proj_delta);
        fn(prefix + "ssm.delta_bias", ssm.delta_bias);
        fn(prefix + "ssm.log_a", ssm.log_a);
        fn(prefix + "ssm.d_skip", ssm.d_skip);
        if (texture_aware) fn(prefix + "pos", pos.rows);
        fn(prefix + "ln_g", ln_g);
        fn(prefix + "ln_b", ln_b);
        fn(prefix + "out_w", out_w);
        fn(prefix + "out_b", out_b);
    }
};

struct MdpbWeights {
    std::array<TassbWeights, 4> directional;
    TassbWeights full;
    Tensor conv_k, conv_b;  // [C,C,3,3], [C]

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        for (std::size_t i = 0; i < directional.size(); ++i)
            directional[i].visit(prefix + "dir" + std::to_string(i) + ".", fn);
        full.visit(prefix + "full.", fn);
        fn(prefix + "conv_k", conv_k);
        fn(prefix + "conv_b", conv_b);
    }
};

struct TassgWeights {
    Tensor conv_k, conv_b;  // [C,C,3,3], [C]
    Tensor ca_w1;           // [C, C/r]  (row-vector convention: GAP(F) W1)
    Tensor ca_w2;           // [C/r, C]
    Tensor ln_g, ln_b;      // [C]
    std::vector<MdpbWeights> blocks;

    void visit(const std::string& prefix, const ParamVisitor& fn) {
        fn(prefix + "conv_k", conv_k);
        fn(prefix + "conv_b", conv_b);
        fn(prefix + "ca_w1", ca_w1);
        fn(prefix + "ca_w2", ca_w2);
        fn(prefix + "ln_g", ln_g);
        fn(prefix + "ln_b", ln_b);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + "block" + std::to_string(i) + ".", fn);
    }
};

struct ConvWeights {
    Tensor k, b;
};

struct ModelWeights {
    ConvWeights head;                // 3 -> C
    std::vector<TassgWeights> groups;
    ConvWeights body;                // C -> C
    std::vector<ConvWeights> upsample;  // each followed by a pixel shuffle

    void visit(const ParamVisitor& fn) {
        fn("head.k", head.k);
        fn("head.b", head.b);
        for (std::size_t i = 0; i < groups.size(); ++i) groups[i].visit("group" + std::to_string(i) + ".", fn);
        fn("body.k", body.k);
        fn("body.b", body.b);
        for (std::size_t i = 0; i < upsample.size(); ++i) {
            fn("up" + std::to_string(i) + ".k", upsample[i].k);
            fn("up" + std::to_string(i) + ".b", upsample[i].b);
        }
    }

    std::vector<std::pair<std::string, Tensor*>> named_parameters() {
        std::vector<std::pair<std::string, Tensor*>> out;
        visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit([&](const std::string&, Tensor& t) { n += t.numel(); });
        return n;
    }
};

/// Upsampler stages: (output channels, shuffle factor) per stage.
inline std::vector<std::pair<std::size_t, std::size_t>> upsampler_stages(const ModelConfig& cfg) {
    const std::size_t c = cfg.d_model;
    switch (cfg.scale) {
        case 1: return {{3, 1}};
        case 2: return {{3 * 4, 2}};
        case 3: return {{3 * 9, 3}};
        case 4: return {{c * 4, 2}, {3 * 4, 2}};
        default: throw ArgumentError("unsupported scale " + std::to_string(cfg.scale));
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor uniform(Shape shape, real bound) {
        std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
        std::vector<real> v(numel(shape));
        for (auto& x : v) x = static_cast<real>(dist(rng_));
        return Tensor::from(std::move(shape), std::move(v), true);
    }
    /// Default fan-in scaled init used for dense and convolution weights.
    Tensor fan_in(Shape shape, std::size_t fan) { return uniform(std::move(shape), real(1) / std::sqrt(real(fan))); }
    static Tensor constant(Shape shape, real v) { return Tensor::full(std::move(shape), v, true); }
    real draw(real lo, real hi) {
        std::uniform_real_distribution<double> dist(lo, hi);
        return static_cast<real>(dist(rng_));
    }

private:
    std::mt19937_64 rng_;
};

inline TassbWeights init_tassb(const ModelConfig& cfg, Initializer& init, bool texture_aware) {
    const std::size_t c = cfg.d_model, n = cfg.n_state;
    TassbWeights w;
    w.texture_aware = texture_aware;
    w.in_w = init.fan_in({c, c}, c);
    w.in_b = init.fan_in({c}, c);
    w.dw_k = init.fan_in({c, 1, 3, 3}, 9);
    w.dw_b = init.fan_in({c}, 9);
    w.ssm.proj_b = init.fan_in({c, n}, c);
    w.ssm.proj_c = init.fan_in({c, n}, c);
    w.ssm.proj_delta = init.fan_in({c, 1}, c);
    // Step size starts log-uniform in [1e-3, 1e-1]; bias = softplus^{-1}(dt).
    const real dt = std::exp(init.draw(std::log(real(1e-3)), std::log(real(1e-1))));
    w.ssm.delta_bias = Initializer::constant({1}, dt + std::log(-std::expm1(-dt)));
    std::vector<real> log_a(c * n);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t k = 0; k < n; ++k) log_a[ch * n + k] = std::log(static_cast<real>(k + 1));
    w.ssm.log_a = Tensor::from({c, n}, std::move(log_a), true);
    w.ssm.d_skip = Initializer::constant({c}, 1);
    if (texture_aware) {
        w.pos.grid_rows = cfg.pos_grid;
        w.pos.grid_cols = cfg.pos_grid;
        w.pos.rows = init.uniform({cfg.pos_grid * cfg.pos_grid, c}, real(0.02));
    }
    w.ln_g = Initializer::constant({c}, 1);
    w.ln_b = Initializer::constant({c}, 0);
    w.out_w = init.fan_in({c, c}, c);
    w.out_b = init.fan_in({c}, c);
    return w;
}

}  // namespace detail

/// Deterministic initialization from a seed. Decay parameters start at
/// a_n = -n for n = 1..N_state in every channel.
inline ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    detail::Initializer init(seed);
    const std::size_t c = cfg.d_model;
    ModelWeights w;
    w.head = {init.fan_in({c, 3, 3, 3}, 27), init.fan_in({c}, 27)};
    for (std::size_t gi = 0; gi < cfg.n_groups; ++gi) {
        TassgWeights g;
        g.conv_k = init.fan_in({c, c, 3, 3}, 9 * c);
        g.conv_b = init.fan_in({c}, 9 * c);
        g.ca_w1 = init.fan_in({c, c / cfg.ca_reduction}, c);
        g.ca_w2 = init.fan_in({c / cfg.ca_reduction, c}, c / cfg.ca_reduction);
        g.ln_g = detail::Initializer::constant({c}, 1);
        g.ln_b = detail::Initializer::constant({c}, 0);
        for (std::size_t bi = 0; bi < cfg.depth; ++bi) {
            MdpbWeights m;
            for (auto& d : m.directional) d = detail::init_tassb(cfg, init, true);
            m.full = detail::init_tassb(cfg, init, false);
            m.conv_k = init.fan_in({c, c, 3, 3}, 9 * c);
            m.conv_b = init.fan_in({c}, 9 * c);
            g.blocks.push_back(std::move(m));
        }
        w.groups.push_back(std::move(g));
    }
    w.body = {init.fan_in({c, c, 3, 3}, 9 * c), init.fan_in({c}, 9 * c)};
    std::size_t in_ch = c;
    for (const auto& [out_ch, factor] : upsampler_stages(cfg)) {
        w.upsample.push_back({init.fan_in({out_ch, in_ch, 3, 3}, 9 * in_ch), init.fan_in({out_ch}, 9 * in_ch)});
        in_ch = out_ch / (factor * factor);
    }
    return w;
}

/// Zeroes every projection that feeds a residual sum: TASSB output
/// projections and the MDPB fusion convolutions. Every residual block then
/// computes the identity.
inline void zero_output_projections(ModelWeights& w) {
    auto zero = [](Tensor& t) { t = Tensor::zeros(t.shape(), true); };
    for (auto& g : w.groups)
        for (auto& m : g.blocks) {
            for (auto& d : m.directional) {
                zero(d.out_w);
                zero(d.out_b);
            }
            zero(m.full.out_w);
            zero(m.full.out_b);
            zero(m.conv_k);
            zero(m.conv_b);
        }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

inline Conv2dOptions same3x3(PadMode mode, std::size_t groups = 1) { return {1, 1, mode, groups}; }

/// Normalizer added to the mean selected variance.
inline constexpr real kVarianceEps = real(1e-6);

/// sigmoid(relu(GAP(F) W1) W2) gating each channel of F.
inline Tensor channel_attention(const Tensor& f, const Tensor& w1, const Tensor& w2) {
    if (f.rank() != 3 || w1.rank() != 2 || w2.rank() != 2 || w1.dim(0) != f.dim(0) || w2.dim(1) != f.dim(0) ||
        w1.dim(1) != w2.dim(0)) {
        throw ShapeError("channel_attention: weight shapes do not match the feature");
    }
    const Tensor pooled = global_avg_pool(f).reshape({1, f.dim(0)});
    const Tensor gate = sigmoid(linear(relu(linear(pooled, w1)), w2)).reshape({f.dim(0)});
    return scale_channels(f, gate);
}

struct TassbOptions {
    ScanDirection direction = ScanDirection::tl_horizontal;
    real top_p = real(0.5);
    std::size_t patch = 4;
    PadMode padding = PadMode::reflect;
};

/// projection -> depth-wise 3x3 -> SiLU -> texture-aware scan over the
/// top-p patches -> LayerNorm -> projection, plus the block input.
inline Tensor tassb_forward(const Tensor& f, const TassbWeights& w, const TassbOptions& opt) {
    if (f.rank() != 3) throw ShapeError("tassb_forward expects [C,H,W]");
    const std::size_t c = f.dim(0), h = f.dim(1), wd = f.dim(2);
    const Tensor u = from_tokens(linear(to_tokens(f), w.in_w, w.in_b), h, wd);
    const Tensor v = silu(conv2d(u, w.dw_k, w.dw_b, same3x3(opt.padding, c)));
    const Tensor vt = to_tokens(v);

    Tensor scanned;
    std::vector<std::size_t> order;
    if (w.texture_aware) {
        const auto g = texture::geometry(v.shape(), opt.patch, opt.patch);
        const Tensor vars = texture::patch_variances(v, opt.patch, opt.patch);
        const auto plan = texture::build_patch_plan(vars.data(), opt.top_p, g.rows, g.cols);
        const auto selected = plan.selected();
        std::vector<std::size_t> token_patch;
        order = patch_token_order(g, selected, opt.direction, &token_patch);

        // var_norm = Var(P) / (mean selected Var + eps), shared by all tokens of P.
        const Tensor sel_vars = gather(vars, {selected.size()}, {selected.begin(), selected.end()}, "select_vars");
        const Tensor norm = sel_vars / (mean(sel_vars) + kVarianceEps);
        std::vector<std::size_t> token_rank(order.size());
        for (std::size_t t = 0; t < order.size(); ++t) token_rank[t] = t / g.cells();
        const Tensor var_norm = gather(norm, {order.size()}, std::move(token_rank), "var_per_token");

        Tensor x = gather_rows(vt, order);
        x = texture::add_position_embedding(x, token_patch, w.pos, g.rows, g.cols);
        scanned = ssm::ta_ssm_apply(x, var_norm, w.ssm);
    } else {
        order = direction_order(h, wd, opt.direction);
        const Tensor ones = Tensor::full({order.size()}, real(1));
        scanned = ssm::ta_ssm_apply(gather_rows(vt, order), ones, w.ssm);
    }
    const Tensor merged = scatter_rows(vt, scanned, order);
    const Tensor out = linear(layer_norm(merged, w.ln_g, w.ln_b), w.out_w, w.out_b);
    return f + from_tokens(out, h, wd);
}

/// Four directional texture-aware stages, a full-scan stage and a 3x3
/// fusion convolution, with a residual around the whole block.
inline Tensor mdpb_forward(const Tensor& f, const MdpbWeights& w, const ModelConfig& cfg) {
    Tensor z = f;
    for (std::size_t i = 0; i < kScanDirections.size(); ++i) {
        z = tassb_forward(z, w.directional[i], {kScanDirections[i], cfg.top_p, cfg.patch, cfg.padding});
    }
    z = tassb_forward(z, w.full, {ScanDirection::tl_horizontal, real(1), cfg.patch, cfg.padding});
    return f + conv2d(z, w.conv_k, w.conv_b, same3x3(cfg.padding));
}

/// conv + channel attention branch added to the LayerNorm + MDPB stack.
inline Tensor tassg_forward(const Tensor& f, const TassgWeights& w, const ModelConfig& cfg) {
    const Tensor branch1 = channel_attention(conv2d(f, w.conv_k, w.conv_b, same3x3(cfg.padding)), w.ca_w1, w.ca_w2);
    Tensor z = from_tokens(layer_norm(to_tokens(f), w.ln_g, w.ln_b), f.dim(1), f.dim(2));
    for (const auto& block : w.blocks) z = mdpb_forward(z, block, cfg);
    return branch1 + z;
}

inline void check_weights(const ModelConfig& cfg, const ModelWeights& w) {
    const std::size_t c = cfg.d_model;
    if (w.groups.size() != cfg.n_groups || w.head.k.shape() != Shape{c, 3, 3, 3} ||
        w.upsample.size() != upsampler_stages(cfg).size()) {
        throw ShapeError("model weights do not match the configuration");
    }
    for (const auto& g : w.groups) {
        if (g.blocks.size() != cfg.depth || g.conv_k.shape() != Shape{c, c, 3, 3}) {
            throw ShapeError("model weights do not match the configuration");
        }
        for (const auto& b : g.blocks)
            if (b.full.ssm.log_a.shape() != Shape{c, cfg.n_state}) {
                throw ShapeError("model weights do not match the configuration (state size)");
            }
    }
}

namespace detail {

/// 3-tap Catmull-Rom weights (a = -0.5) for a sample at offset delta from
/// the centre tap, renormalized after dropping the fourth tap.
inline std::array<real, 3> interp_taps(real delta) {
    auto cubic = [](real t) {
        t = std::abs(t);
        if (t < 1) return (real(1.5) * t - real(2.5)) * t * t + 1;
        if (t < 2) return ((real(-0.5) * t + real(2.5)) * t - 4) * t + 2;
        return real(0);
    };
    std::array<real, 3> w{cubic(-1 - delta), cubic(-delta), cubic(1 - delta)};
    const real s = w[0] + w[1] + w[2];
    for (auto& e : w) e /= s;
    return w;
}

}  // namespace detail

enum class UpsamplerInit {
    zero,   // output starts at 0; the upsampling filter is learned
    cubic,  // polyphase cubic taps; the untrained network interpolates
};

/// Re-initializes the reconstruction path: channels 0..2 carry RGB from the
/// head through the body and the last group writes nothing into them. The
/// upsampler then either starts at zero or reads those channels with
/// polyphase cubic interpolation taps. Everything else keeps its random
/// initialization and stays trainable.
inline void seed_passthrough_path(ModelWeights& w, const ModelConfig& cfg, UpsamplerInit up = UpsamplerInit::cubic) {
    const std::size_t c = cfg.d_model;
    if (c < 3) throw ArgumentError("seed_passthrough_path: d_model must be >= 3");
    check_weights(cfg, w);
    auto edit = [](Tensor& t, const std::function<void(std::vector<real>&)>& fn) {
        std::vector<real> v = t.values();
        fn(v);
        t = Tensor::from(t.shape(), std::move(v), true);
    };
    auto conv_passthrough = [&](Tensor& k, Tensor& b, std::size_t cin) {
        edit(k, [&](std::vector<real>& v) {
            for (std::size_t o = 0; o < 3; ++o) {
                std::fill_n(v.begin() + o * cin * 9, cin * 9, real(0));
                v[(o * cin + o) * 9 + 4] = 1;
            }
        });
        edit(b, [](std::vector<real>& v) { std::fill_n(v.begin(), 3, real(0)); });
    };
    // Rows 0..2 of a [cout,cin,3,3] kernel (and bias) set to zero.
    auto conv_mute = [&](Tensor& k, Tensor& b) {
        edit(k, [&](std::vector<real>& v) { std::fill_n(v.begin(), 3 * c * 9, real(0)); });
        edit(b, [](std::vector<real>& v) { std::fill_n(v.begin(), 3, real(0)); });
    };
    // Columns 0..2 of a [C,C] projection (and bias) set to zero.
    auto linear_mute = [&](Tensor& m, Tensor& b) {
        edit(m, [&](std::vector<real>& v) {
            for (std::size_t r = 0; r < c; ++r) std::fill_n(v.begin() + r * c, 3, real(0));
        });
        edit(b, [](std::vector<real>& v) { std::fill_n(v.begin(), 3, real(0)); });
    };

    conv_passthrough(w.head.k, w.head.b, 3);
    auto& last = w.groups.back();
    conv_mute(last.conv_k, last.conv_b);
    edit(last.ln_g, [](std::vector<real>& v) { std::fill_n(v.begin(), 3, real(0)); });
    edit(last.ln_b, [](std::vector<real>& v) { std::fill_n(v.begin(), 3, real(0)); });
    for (auto& m : last.blocks) {
        for (auto& d : m.directional) linear_mute(d.out_w, d.out_b);
        linear_mute(m.full.out_w, m.full.out_b);
        conv_mute(m.conv_k, m.conv_b);
    }
    conv_passthrough(w.body.k, w.body.b, c);

    const auto stages = upsampler_stages(cfg);
    std::size_t cin = c;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const std::size_t r = stages[s].second;
        auto& st = w.upsample[s];
        edit(st.k, [&](std::vector<real>& v) {
            if (up == UpsamplerInit::zero && s + 1 == stages.size()) {
                std::fill(v.begin(), v.end(), real(0));
                return;
            }
            for (std::size_t o = 0; o < 3 * r * r; ++o) {
                const std::size_t ch = o / (r * r), dy = o % (r * r) / r, dx = o % r;
                // Offsets of the output phase from the source pixel centre.
                const auto ty = detail::interp_taps((real(dy) + real(0.5)) / real(r) - real(0.5));
                const auto tx = detail::interp_taps((real(dx) + real(0.5)) / real(r) - real(0.5));
                real* row = v.data() + o * cin * 9;
                std::fill_n(row, cin * 9, real(0));
                for (std::size_t ky = 0; ky < 3; ++ky)
                    for (std::size_t kx = 0; kx < 3; ++kx) row[ch * 9 + ky * 3 + kx] = ty[ky] * tx[kx];
            }
        });
        edit(st.b, [&](std::vector<real>& v) {
            const bool all = up == UpsamplerInit::zero && s + 1 == stages.size();
            std::fill_n(v.begin(), all ? v.size() : 3 * r * r, real(0));
        });
        cin = stages[s].first / (r * r);
    }
}

struct ForwardOptions {
    bool clamp_output = false;  // inference only
};

/// img [3,H,W] in [0,1] -> [3, scale*H, scale*W]. Inputs whose extents are
/// not multiples of the patch extent are reflect-padded and the output
/// cropped back.
inline Tensor model_forward(const Tensor& img, const ModelConfig& cfg, const ModelWeights& w,
                            ForwardOptions opt = {}) {
    cfg.validate();
    check_weights(cfg, w);
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("model_forward expects [3,H,W], got " + tamamba::to_string(img.shape()));
    const std::size_t h = img.dim(1), wd = img.dim(2);
    const std::size_t ph = (cfg.patch - h % cfg.patch) % cfg.patch, pw = (cfg.patch - wd % cfg.patch) % cfg.patch;
    const Tensor x = pad_reflect_br(img, ph, pw);

    const Tensor feats = conv2d(x, w.head.k, w.head.b, same3x3(cfg.padding));
    Tensor z = feats;
    for (const auto& g : w.groups) z = tassg_forward(z, g, cfg);
    z = conv2d(z + feats, w.body.k, w.body.b, same3x3(cfg.padding));
    const auto stages = upsampler_stages(cfg);
    for (std::size_t i = 0; i < stages.size(); ++i) {
        z = pixel_shuffle(conv2d(z, w.upsample[i].k, w.upsample[i].b, same3x3(cfg.padding)), stages[i].second);
    }
    Tensor out = crop_tl(z, h * cfg.scale, wd * cfg.scale);
    if (opt.clamp_output) {
        std::vector<real> v = out.values();
        for (auto& e : v) e = std::clamp(e, real(0), real(1));
        out = Tensor::from(out.shape(), std::move(v));
    }
    return out;
}

}  // namespace tamamba::arch
