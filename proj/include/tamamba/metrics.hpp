#pragma once

// Y-channel PSNR/SSIM, the texture-vs-degradation profile, and an analytic
// FLOPs accountant for the network.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "tamamba/arch.hpp"
#include "tamamba/tensor.hpp"
#include "tamamba/texture_plan.hpp"

namespace tamamba::metrics {

inline constexpr double kPsnrCap = 99.0;

/// BT.601 studio-swing luma on the 0..255 scale: [3,H,W] in [0,1] -> [H,W].
inline Tensor rgb_to_y(const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("rgb_to_y expects [3,H,W], got " + to_string(img.shape()));
    const std::size_t n = img.dim(1) * img.dim(2);
    const auto v = img.data();
    std::vector<real> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<real>(65.481 * v[i] + 128.553 * v[n + i] + 24.966 * v[2 * n + i] + 16.0);
    }
    return Tensor::from({img.dim(1), img.dim(2)}, std::move(y));
}

inline double mse(std::span<const real> a, std::span<const real> b) {
    if (a.size() != b.size()) throw ShapeError("mse: size mismatch");
    if (a.empty()) throw ArgumentError("mse: empty input");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s / double(a.size());
}

inline double psnr_from_mse(double m, double peak) {
    if (m <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

inline double psnr(std::span<const real> a, std::span<const real> b, double peak) {
    return psnr_from_mse(mse(a, b), peak);
}

inline double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch");
    return psnr(a.data(), b.data(), peak);
}

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size = 11, double sigma = 1.5) {
    std::vector<double> g(size);
    const double c = double(size - 1) / 2;
    for (std::size_t i = 0; i < size; ++i) g[i] = std::exp(-(double(i) - c) * (double(i) - c) / (2 * sigma * sigma));
    const double s = std::accumulate(g.begin(), g.end(), 0.0);
    for (auto& x : g) x /= s;
    return g;
}

// Valid-mode separable filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& x, std::size_t h, std::size_t w,
                                        const std::vector<double>& g) {
    const std::size_t k = g.size(), oh = h - k + 1, ow = w - k + 1;
    std::vector<double> rows(h * ow), out(oh * ow);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x0 = 0; x0 < ow; ++x0) {
            double s = 0;
            for (std::size_t i = 0; i < k; ++i) s += g[i] * x[y * w + x0 + i];
            rows[y * ow + x0] = s;
        }
    for (std::size_t y0 = 0; y0 < oh; ++y0)
        for (std::size_t x0 = 0; x0 < ow; ++x0) {
            double s = 0;
            for (std::size_t i = 0; i < k; ++i) s += g[i] * rows[(y0 + i) * ow + x0];
            out[y0 * ow + x0] = s;
        }
    return out;
}

}  // namespace detail

/// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, averaged over all fully contained windows.
inline double ssim(const Tensor& a, const Tensor& b, double peak) {
    if (a.rank() != 2 || a.shape() != b.shape()) throw ShapeError("ssim expects two equal [H,W] planes");
    const std::size_t h = a.dim(0), w = a.dim(1);
    if (h < 11 || w < 11) throw ArgumentError("ssim: image smaller than the 11x11 window");
    const auto g = detail::gaussian_window();
    std::vector<double> x(a.data().begin(), a.data().end()), y(b.data().begin(), b.data().end());
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
    const auto sxx = detail::filter_valid(xx, h, w, g), syy = detail::filter_valid(yy, h, w, g),
               sxy = detail::filter_valid(xy, h, w, g);
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / double(mx.size());
}

/// Drops `border` pixels on every side of an [H,W] plane.
inline Tensor shave(const Tensor& plane, std::size_t border) {
    if (border == 0) return plane;
    const std::size_t h = plane.dim(0), w = plane.dim(1);
    if (2 * border >= h || 2 * border >= w) throw ArgumentError("shave: border larger than the image");
    std::vector<real> v;
    v.reserve((h - 2 * border) * (w - 2 * border));
    for (std::size_t y = border; y < h - border; ++y)
        for (std::size_t x = border; x < w - border; ++x) v.push_back(plane[y * w + x]);
    return Tensor::from({h - 2 * border, w - 2 * border}, std::move(v));
}

/// Y-channel PSNR and SSIM of two RGB images in [0,1], shaving `border`.
struct QualityScore {
    double psnr = 0;
    double ssim = 0;
};

inline QualityScore y_quality(const Tensor& out, const Tensor& ref, std::size_t border = 0) {
    if (out.shape() != ref.shape()) throw ShapeError("y_quality: shape mismatch");
    const Tensor a = shave(rgb_to_y(out), border), b = shave(rgb_to_y(ref), border);
    QualityScore q;
    q.psnr = psnr(a, b, 255.0);
    q.ssim = a.dim(0) >= 11 && a.dim(1) >= 11 ? ssim(a, b, 255.0) : std::nan("");
    return q;
}

// ---------------------------------------------------------------------------
// Texture measures and the degradation profile
// ---------------------------------------------------------------------------

enum class TextureMeasure { variance, entropy };

/// Shannon entropy (bits) of an 8-bin histogram over [0, peak].
inline double histogram_entropy(std::span<const real> v, double peak, std::size_t bins = 8) {
    std::vector<std::size_t> hist(bins, 0);
    for (real x : v) {
        const double t = std::clamp(double(x) / peak, 0.0, 1.0);
        ++hist[std::min(bins - 1, static_cast<std::size_t>(t * double(bins)))];
    }
    double e = 0;
    for (std::size_t c : hist) {
        if (c == 0) continue;
        const double q = double(c) / double(v.size());
        e -= q * std::log2(q);
    }
    return e;
}

inline double texture_score(std::span<const real> v, TextureMeasure m, double peak = 255.0) {
    return m == TextureMeasure::variance ? double(texture::patch_variance(v)) : histogram_entropy(v, peak);
}

struct ProfileGroup {
    double mean_variance = 0;  // mean texture score of the group
    double mean_psnr = 0;
    std::size_t count = 0;
};

/// Groups run from the flattest patches (group 0) to the most textured.
struct DegradationProfile {
    std::vector<ProfileGroup> groups;
    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& g : groups) n += g.count;
        return n;
    }
};

struct ImagePair {
    Tensor degraded;   // [3,H,W] in [0,1]
    Tensor reference;  // same shape
};

/// Pools the non-overlapping patch x patch tiles of every pair's Y channel
/// (partial edge tiles dropped), ranks them by the texture score of the
/// degraded tile, and splits the ranking into n_groups equal buckets with
/// the remainder going to the last one.
inline DegradationProfile degradation_profile(const std::vector<ImagePair>& pairs, std::size_t patch,
                                              std::size_t n_groups = 10,
                                              TextureMeasure measure = TextureMeasure::variance) {
    if (pairs.empty()) throw ArgumentError("degradation_profile: no image pairs");
    if (patch == 0 || n_groups == 0) throw ArgumentError("degradation_profile: zero patch extent or group count");
    struct Item {
        double score, psnr;
    };
    std::vector<Item> items;
    std::vector<real> a(patch * patch), b(patch * patch);
    for (const auto& pr : pairs) {
        if (pr.degraded.shape() != pr.reference.shape()) throw ShapeError("degradation_profile: pair shape mismatch");
        const Tensor yd = rgb_to_y(pr.degraded), yr = rgb_to_y(pr.reference);
        const std::size_t h = yd.dim(0), w = yd.dim(1);
        for (std::size_t y0 = 0; y0 + patch <= h; y0 += patch)
            for (std::size_t x0 = 0; x0 + patch <= w; x0 += patch) {
                for (std::size_t y = 0; y < patch; ++y)
                    for (std::size_t x = 0; x < patch; ++x) {
                        a[y * patch + x] = yd[(y0 + y) * w + x0 + x];
                        b[y * patch + x] = yr[(y0 + y) * w + x0 + x];
                    }
                items.push_back({texture_score(a, measure), psnr(a, b, 255.0)});
            }
    }
    if (items.empty()) throw ArgumentError("degradation_profile: images smaller than one patch");
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return items[i].score < items[j].score; });

    DegradationProfile prof;
    prof.groups.resize(n_groups);
    const std::size_t base = items.size() / n_groups;
    for (std::size_t r = 0; r < order.size(); ++r) {
        const std::size_t gi = base == 0 ? n_groups - 1 : std::min(r / base, n_groups - 1);
        auto& g = prof.groups[gi];
        g.mean_variance += items[order[r]].score;
        g.mean_psnr += items[order[r]].psnr;
        ++g.count;
    }
    for (auto& g : prof.groups)
        if (g.count) {
            g.mean_variance /= double(g.count);
            g.mean_psnr /= double(g.count);
        }
    return prof;
}

/// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = double(i + j) / 2 + 1;
        i = j + 1;
    }
    return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = double(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0;
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ArgumentError("spearman: need two equal-length series of size >= 2");
    return pearson(average_ranks(x), average_ranks(y));
}

/// Spearman correlation between group index and mean PSNR over populated groups.
inline double profile_spearman(const DegradationProfile& p) {
    std::vector<double> rank, ps;
    for (std::size_t i = 0; i < p.groups.size(); ++i)
        if (p.groups[i].count) {
            rank.push_back(double(i));
            ps.push_back(p.groups[i].mean_psnr);
        }
    return spearman(rank, ps);
}

inline void write_profile_csv(std::ostream& os, const DegradationProfile& p) {
    os << "group,mean_variance,mean_psnr,count\n";
    os.precision(10);
    for (std::size_t i = 0; i < p.groups.size(); ++i) {
        const auto& g = p.groups[i];
        os << i << ',' << g.mean_variance << ',' << g.mean_psnr << ',' << g.count << '\n';
    }
}

// ---------------------------------------------------------------------------
// FLOPs accountant
// ---------------------------------------------------------------------------

/// Convention: one multiply-add = 2 FLOPs, exp / log / division = 4 FLOPs,
/// any other elementwise op = 1 FLOP.
struct FlopsReport {
    double p = 0;
    std::size_t height = 0, width = 0;  // input extents after patch padding
    std::size_t selected_tokens = 0;    // per texture-aware stage
    std::vector<std::pair<std::string, double>> stages;

    double stage(const std::string& name) const {
        for (const auto& [n, f] : stages)
            if (n == name) return f;
        throw ArgumentError("FlopsReport: no stage " + name);
    }
    double total() const {
        double t = 0;
        for (const auto& s : stages) t += s.second;
        return t;
    }
};

namespace flops {

inline constexpr double kMac = 2, kTranscendental = 4;

inline double conv3x3(std::size_t cin, std::size_t cout, std::size_t pixels, std::size_t groups = 1) {
    return kMac * 9.0 * double(cin / groups) * double(cout) * double(pixels) + double(cout * pixels);
}

/// Scan cost of one token: B, C and step projections, softplus, the
/// per-(channel, state) discretization and recurrence, and the skip term.
inline double scan_token(std::size_t c, std::size_t n, bool modulated) {
    double f = kMac * double(c) * double(2 * n + 1);  // x W_B, x W_C, x W_delta
    f += 2 * kTranscendental + 2;                      // softplus(z + bias)
    if (modulated) f += double(n) + 1 + double(c);     // var_norm * (B, delta) and position add
    // per (c, n): delta*a, exp, expm1 / a, * b, state update (2 MACs), readout MAC
    f += double(c * n) * (1 + kTranscendental + 2 * kTranscendental + 1 + 2 * kMac + kMac);
    f += kMac * double(c);  // D x
    return f;
}

/// Everything in a TASSB outside the scan: projections, depth-wise conv,
/// SiLU, LayerNorm, residual, and (texture-aware only) patch variances.
inline double tassb_dense(std::size_t c, std::size_t pixels, bool texture_aware) {
    double f = 2 * (kMac * double(c * c) + double(c)) * double(pixels);  // in / out projections
    f += conv3x3(c, c, pixels, c);
    f += double(c * pixels) * (kTranscendental + kTranscendental + 1);  // SiLU
    f += double(pixels) * (double(8 * c) + kTranscendental);            // LayerNorm
    f += double(c * pixels);                                            // residual
    if (texture_aware) f += 3.0 * double(c * pixels);                   // mean, squared deviation
    return f;
}

}  // namespace flops

/// Analytic FLOPs for one forward pass on an h x w input at selection
/// fraction p. "ta_ssm" covers only the texture-aware scans and is
/// proportional to the number of selected tokens.
inline FlopsReport count_flops(const arch::ModelConfig& cfg, std::size_t h, std::size_t w, real p) {
    arch::ModelConfig c2 = cfg;
    c2.top_p = p;
    c2.validate();
    const std::size_t P = cfg.patch, C = cfg.d_model, N = cfg.n_state;
    FlopsReport r;
    r.p = p;
    r.height = (h + P - 1) / P * P;
    r.width = (w + P - 1) / P * P;
    const std::size_t pixels = r.height * r.width;
    const std::size_t n_patches = (r.height / P) * (r.width / P);
    r.selected_tokens = texture::top_count(p, n_patches) * P * P;
    const double blocks = double(cfg.n_groups * cfg.depth);

    const double ta_ssm = blocks * 4 * double(r.selected_tokens) * flops::scan_token(C, N, true);
    const double full = blocks * double(pixels) * flops::scan_token(C, N, false);
    // group-level LayerNorm and branch sum are counted with the dense block work
    const double dense = blocks * (4 * flops::tassb_dense(C, pixels, true) + flops::tassb_dense(C, pixels, false)) +
                         double(cfg.n_groups) * double(pixels) * (double(9 * C) + flops::kTranscendental);
    double conv = double(cfg.n_groups) *
                  (flops::conv3x3(C, C, pixels) + double(cfg.depth) * (flops::conv3x3(C, C, pixels) + double(C * pixels)));
    conv += flops::conv3x3(C, C, pixels) + double(C * pixels);  // body + global residual
    const std::size_t hidden = C / cfg.ca_reduction;
    // pooling, two dense layers, sigmoid gate, channel scaling
    const double ca = double(cfg.n_groups) * (double(C * pixels) + flops::kMac * 2.0 * double(C * hidden) +
                                              double(C) * (flops::kTranscendental + 2) + double(C * pixels));
    double up = 0;
    std::size_t in_ch = C, px = pixels;
    for (const auto& [out_ch, factor] : arch::upsampler_stages(cfg)) {
        up += flops::conv3x3(in_ch, out_ch, px);
        in_ch = out_ch / (factor * factor);
        px *= factor * factor;
    }
    r.stages = {{"extractor", flops::conv3x3(3, C, pixels)},
                {"tassb_dense", dense},
                {"ta_ssm", ta_ssm},
                {"full_scan", full},
                {"conv", conv},
                {"channel_attention", ca},
                {"upsampler", up}};
    return r;
}

inline void write_flops_csv(std::ostream& os, const FlopsReport& r) {
    os << "# multiply-add = 2 FLOPs; exp/log/div = 4 FLOPs; p=" << r.p << " input=" << r.height << "x" << r.width
       << "\n";
    os << "stage,flops\n";
    os.precision(12);
    for (const auto& [n, f] : r.stages) os << n << ',' << f << '\n';
    os << "total," << r.total() << '\n';
}

/// One row per report: p, every stage, total. Reports must share stages.
inline void write_flops_sweep_csv(std::ostream& os, const std::vector<FlopsReport>& rs) {
    if (rs.empty()) throw ArgumentError("write_flops_sweep_csv: no reports");
    os << "# multiply-add = 2 FLOPs; exp/log/div = 4 FLOPs; input=" << rs[0].height << "x" << rs[0].width << "\n";
    os << 'p';
    for (const auto& s : rs[0].stages) os << ',' << s.first;
    os << ",total\n";
    os.precision(12);
    for (const auto& r : rs) {
        if (r.stages.size() != rs[0].stages.size()) throw ArgumentError("write_flops_sweep_csv: stage lists differ");
        os << r.p;
        for (const auto& s : r.stages) os << ',' << s.second;
        os << ',' << r.total() << '\n';
    }
}

}  // namespace tamamba::metrics
