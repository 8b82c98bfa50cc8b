// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. `acceptance --only 3 --only 7` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tamamba/arch.hpp"
#include "tamamba/metrics.hpp"
#include "tamamba/train.hpp"
#include "test_support.hpp"

using namespace tamamba;
using tamamba::testing::gradient_rel_error;
using tamamba::testing::random_tensor;
using tamamba::testing::weighted_sum;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. scan oracle

// One channel, one state at a time, exp() straight from the ZOH formulas.
std::vector<double> naive_scan(std::size_t L, std::size_t N, const std::vector<double>& a, const std::vector<double>& b,
                               const std::vector<double>& c, const std::vector<double>& dt, double d,
                               const std::vector<double>& x) {
    std::vector<double> h(N, 0.0), y(L);
    for (std::size_t k = 0; k < L; ++k) {
        double acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
            const double e = std::exp(dt[k] * a[n]);
            h[n] = e * h[n] + (e - 1.0) / a[n] * b[k * N + n] * x[k];
            acc += c[k * N + n] * h[n];
        }
        y[k] = acc + d * x[k];
    }
    return y;
}

Outcome scan_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<std::size_t> len(1, 64), st(1, 16), ch(1, 6);
    std::uniform_real_distribution<double> u(-1, 1), pos(0.01, 1.0), neg(-4.0, -0.05);
    double worst = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const std::size_t L = len(rng), N = st(rng), C = ch(rng);
        std::vector<double> b(L * N), c(L * N), dt(L), a(C * N), d(C), x(L * C);
        for (auto& v : b) v = u(rng);
        for (auto& v : c) v = u(rng);
        for (auto& v : dt) v = pos(rng);
        for (auto& v : a) v = neg(rng);
        for (auto& v : d) v = u(rng);
        for (auto& v : x) v = u(rng);

        const Tensor y = ssm::selective_scan_zoh(Tensor::from({L, C}, {x.begin(), x.end()}), Tensor::from({L}, {dt.begin(), dt.end()}),
                                            Tensor::from({C, N}, {a.begin(), a.end()}), Tensor::from({L, N}, {b.begin(), b.end()}),
                                            Tensor::from({L, N}, {c.begin(), c.end()}), Tensor::from({C}, {d.begin(), d.end()}));
        for (std::size_t ci = 0; ci < C; ++ci) {
            std::vector<double> xc(L), ac(a.begin() + ci * N, a.begin() + (ci + 1) * N);
            for (std::size_t k = 0; k < L; ++k) xc[k] = x[k * C + ci];
            const auto ref = naive_scan(L, N, ac, b, c, dt, d[ci], xc);

            ssm::ScanParams p;
            p.length = L;
            p.n_state = N;
            p.a_diag.assign(ac.begin(), ac.end());
            p.b_seq.assign(b.begin(), b.end());
            p.c_seq.assign(c.begin(), c.end());
            p.delta_seq.assign(dt.begin(), dt.end());
            p.d_skip = d[ci];
            const std::vector<real> xr(xc.begin(), xc.end());
            const auto ys = ssm::selective_scan(ssm::discretize(p), p.c_seq, p.d_skip, xr);
            for (std::size_t k = 0; k < L; ++k) {
                worst = std::max(worst, std::abs(double(y[k * C + ci]) - ref[k]));
                worst = std::max(worst, std::abs(double(ys[k]) - ref[k]));
            }
        }
    }
    const double t = seconds_since(t0);
    return {worst < 1e-10 && t < 10, "1000 instances, max |diff| " + fmt("%.3g", worst) + ", " + fmt("%.2f", t) + " s"};
}

// ---------------------------------------------------------------------------
// 2. gradient suite

template <class W>
void visit_params(W& w, const arch::ParamVisitor& fn) {
    if constexpr (std::is_same_v<W, arch::ModelWeights>)
        w.visit(fn);
    else
        w.visit("", fn);
}

// Feature input plus every parameter of w, all checked against central differences.
template <class W, class F>
double weights_gradient(const W& w, const Tensor& x, F forward) {
    W probe = w;
    std::vector<Tensor> inputs{x};
    visit_params(probe, [&](const std::string&, Tensor& t) { inputs.push_back(t); });
    return gradient_rel_error(
        [&](const std::vector<Tensor>& in) {
            W copy = w;
            std::size_t i = 1;
            visit_params(copy, [&](const std::string&, Tensor& t) { t = in[i++]; });
            return weighted_sum(forward(in[0], copy));
        },
        inputs);
}

arch::ModelWeights scrambled(const arch::ModelConfig& cfg, std::uint64_t seed) {
    auto w = arch::init_weights(cfg, seed);
    std::mt19937_64 rng(seed + 1);
    for (auto& [name, t] : w.named_parameters()) {
        if (name.ends_with("log_a") || name.ends_with("delta_bias")) continue;
        const bool gain = name.ends_with("ln_g");
        *t = random_tensor(t->shape(), rng, gain ? 0.5 : -0.4, gain ? 1.5 : 0.4, true);
    }
    return w;
}

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2002);
    std::vector<std::pair<std::string, double>> errs;
    auto check = [&](std::string name, const std::function<Tensor(const std::vector<Tensor>&)>& f,
                     const std::vector<Tensor>& in) { errs.emplace_back(std::move(name), gradient_rel_error(f, in)); };

    const auto x = random_tensor({2, 3, 4}, rng, -2, 2);
    const auto y = random_tensor({2, 3, 4}, rng, 0.5, 2);
    for (Unary k : {Unary::sigmoid, Unary::silu, Unary::softplus, Unary::exp, Unary::neg, Unary::square})
        check(std::string(detail::unary_name(k)), [k](const auto& in) { return weighted_sum(elementwise(k, in[0])); }, {x});
    const auto off_kink = Tensor::from({5}, {-1.5, -0.3, 0.4, 0.9, 2.0});
    check("relu", [](const auto& in) { return weighted_sum(relu(in[0])); }, {off_kink});
    check("abs", [](const auto& in) { return weighted_sum(abs(in[0])); }, {off_kink});
    for (Binary k : {Binary::add, Binary::sub, Binary::mul, Binary::div})
        check(std::string(detail::binary_name(k)), [k](const auto& in) { return weighted_sum(elementwise(k, in[0], in[1])); },
              {x, y});
    check("scalar broadcast", [](const auto& in) { return weighted_sum(in[0] * in[1] + in[1]); }, {x, Tensor::scalar(0.7)});
    check("sum", [](const auto& in) { return sum(square(in[0])); }, {x});
    check("mean", [](const auto& in) { return mean(square(in[0])); }, {x});
    check("reshape", [](const auto& in) { return weighted_sum(in[0].reshape({6, 4})); }, {x});
    check("gather", [](const auto& in) { return weighted_sum(gather(in[0], {5}, {3, 3, 0, 23, 7})); }, {x});
    check("tokens", [](const auto& in) { return weighted_sum(to_tokens(in[0])); }, {x});
    check("from_tokens", [](const auto& in) { return weighted_sum(from_tokens(in[0], 3, 4)); },
          {random_tensor({12, 2}, rng)});
    check("concat", [](const auto& in) { return weighted_sum(concat_flat({in[0], square(in[1])})); }, {x, y});
    const auto rows = random_tensor({5, 3}, rng), vals = random_tensor({2, 3}, rng);
    const std::vector<std::size_t> idx{4, 1};
    check("gather_rows", [&](const auto& in) { return weighted_sum(gather_rows(in[0], std::vector<std::size_t>{4, 1, 4})); },
          {rows});
    check("scatter_rows", [&](const auto& in) { return weighted_sum(scatter_rows(in[0], in[1], idx)); }, {rows, vals});
    check("scale_rows", [](const auto& in) { return weighted_sum(scale_rows(in[0], in[1])); },
          {rows, random_tensor({5}, rng)});
    const auto img = random_tensor({2, 5, 6}, rng);
    check("pad_reflect", [](const auto& in) { return weighted_sum(pad_reflect_br(in[0], 3, 2)); }, {img});
    check("crop", [](const auto& in) { return weighted_sum(crop_tl(in[0], 3, 4)); }, {img});
    check("pixel_shuffle", [](const auto& in) { return weighted_sum(pixel_shuffle(in[0], 2)); },
          {random_tensor({8, 2, 3}, rng)});
    check("pixel_unshuffle", [](const auto& in) { return weighted_sum(pixel_unshuffle(in[0], 2)); },
          {random_tensor({2, 4, 6}, rng)});
    check("channel", [](const auto& in) { return weighted_sum(channel(in[0], 1)); }, {img});
    check("scale_channels", [](const auto& in) { return weighted_sum(scale_channels(in[0], in[1])); },
          {img, random_tensor({2}, rng)});
    check("gap", [](const auto& in) { return weighted_sum(global_avg_pool(in[0])); }, {img});
    check("linear", [](const auto& in) { return weighted_sum(linear(in[0], in[1], in[2])); },
          {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)});
    const auto k4 = random_tensor({3, 2, 3, 3}, rng), b3 = random_tensor({3}, rng);
    for (PadMode mode : {PadMode::zero, PadMode::reflect})
        check(mode == PadMode::zero ? "conv2d zero pad" : "conv2d reflect pad",
              [mode](const auto& in) { return weighted_sum(conv2d(in[0], in[1], in[2], {1, 1, mode, 1})); }, {img, k4, b3});
    check("conv2d depthwise", [](const auto& in) { return weighted_sum(conv2d(in[0], in[1], in[2], {1, 1, PadMode::reflect, 2})); },
          {img, random_tensor({2, 1, 3, 3}, rng), random_tensor({2}, rng)});
    check("conv2d stride 2", [](const auto& in) { return weighted_sum(conv2d(in[0], in[1], std::nullopt, {2, 0, PadMode::zero, 1})); },
          {img, random_tensor({3, 2, 2, 3}, rng)});
    check("layer_norm", [](const auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2])); },
          {random_tensor({4, 5}, rng), random_tensor({5}, rng, 0.5, 1.5), random_tensor({5}, rng)});
    check("fft2",
          [](const auto& in) {
              const auto f = fft2(in[0]);
              return weighted_sum(f.re, 1) + weighted_sum(f.im, 2);
          },
          {random_tensor({3, 5}, rng)});

    const std::size_t L = 9, C = 3, N = 4;
    check("selective_scan_zoh",
          [](const auto& in) { return weighted_sum(ssm::selective_scan_zoh(in[0], in[1], in[2], in[3], in[4], in[5])); },
          {random_tensor({L, C}, rng), random_tensor({L}, rng, 0.05, 1), random_tensor({C, N}, rng, -3, -0.1),
           random_tensor({L, N}, rng), random_tensor({L, N}, rng), random_tensor({C}, rng)});
    ssm::SsmWeights sw{random_tensor({C, N}, rng, -0.5, 0.5), random_tensor({C, N}, rng, -0.5, 0.5),
                       random_tensor({C, 1}, rng, -0.5, 0.5), random_tensor({1}, rng, -1, 0),
                       random_tensor({C, N}, rng, -1, 1.5),   random_tensor({C}, rng)};
    const auto tok = random_tensor({L, C}, rng), var = random_tensor({L}, rng, 0.2, 2);
    const std::vector<Tensor> ssm_in{tok, var, sw.proj_b, sw.proj_c, sw.proj_delta, sw.delta_bias, sw.log_a, sw.d_skip};
    check("texture_modulate",
          [](const auto& in) {
              const auto m = ssm::texture_modulate(in[0], in[1], {in[2], in[3], in[4], in[5], in[6], in[7]});
              return weighted_sum(m.b_var, 3) + weighted_sum(m.delta_var, 4);
          },
          ssm_in);
    check("ta_ssm_apply",
          [](const auto& in) { return weighted_sum(ssm::ta_ssm_apply(in[0], in[1], {in[2], in[3], in[4], in[5], in[6], in[7]})); },
          ssm_in);

    const auto feat = random_tensor({2, 4, 6}, rng);
    check("patch_variances", [](const auto& in) { return weighted_sum(texture::patch_variances(in[0], 2, 2)); }, {feat});
    const std::vector<std::size_t> owner{2, 2, 0, 5, 1};
    check("position embedding",
          [&](const auto& in) {
              texture::PositionTable t{2, 3, in[1]};
              return weighted_sum(texture::add_position_embedding(in[0], owner, t, 2, 3));
          },
          {random_tensor({5, 2}, rng), random_tensor({6, 2}, rng)});
    {
        const auto pv = texture::patch_variances(feat, 2, 2);
        const auto plan = texture::build_patch_plan(pv.data(), 0.5, 2, 3);
        const auto patches = texture::patchify(random_tensor({2, 4, 6}, rng), 2, 2);
        std::vector<Tensor> in{feat};
        for (std::size_t i = 0; i < plan.selected_count; ++i) in.push_back(patches[plan.perm[i]]);
        check("scatter_back",
              [&](const auto& a) {
                  return weighted_sum(texture::scatter_back({a.begin() + 1, a.end()}, a[0], plan, 2, 2));
              },
              in);
    }
    check("channel_attention", [](const auto& in) { return weighted_sum(arch::channel_attention(in[0], in[1], in[2])); },
          {random_tensor({4, 3, 3}, rng), random_tensor({4, 2}, rng), random_tensor({2, 4}, rng)});

    arch::ModelConfig mc = arch::ModelConfig::micro();
    mc.d_model = 4;
    mc.n_state = 2;
    mc.pos_grid = 2;
    const auto mw = scrambled(mc, 31);
    const auto f8 = random_tensor({4, 8, 8}, rng);
    const auto& blk = mw.groups[0].blocks[0];
    errs.emplace_back("tassb", weights_gradient(blk.directional[1], f8, [&](const Tensor& f, const arch::TassbWeights& w) {
                          return arch::tassb_forward(f, w, {arch::ScanDirection::br_horizontal, mc.top_p, mc.patch, mc.padding});
                      }));
    errs.emplace_back("mdpb", weights_gradient(blk, f8, [&](const Tensor& f, const arch::MdpbWeights& w) {
                          return arch::mdpb_forward(f, w, mc);
                      }));
    errs.emplace_back("tassg", weights_gradient(mw.groups[1], f8, [&](const Tensor& f, const arch::TassgWeights& w) {
                          return arch::tassg_forward(f, w, mc);
                      }));
    errs.emplace_back("model (micro, d_model 4, 8x8)",
                      weights_gradient(mw, random_tensor({3, 8, 8}, rng, 0, 1),
                                       [&](const Tensor& im, const arch::ModelWeights& w) {
                                           return arch::model_forward(im, mc, w);
                                       }));
    check("total_loss", [](const auto& in) { return train::total_loss(in[0], in[1]); },
          {random_tensor({3, 4, 4}, rng), random_tensor({3, 4, 4}, rng)});

    const double t = seconds_since(t0);
    auto worst = std::max_element(errs.begin(), errs.end(), [](auto& a, auto& b) { return a.second < b.second; });
    Outcome o{worst->second < 1e-4 && t < 120, ""};
    for (const auto& [name, e] : errs)
        if (e >= 1e-4) o.detail += name + " rel " + fmt("%.3g", e) + "; ";
    o.detail += std::to_string(errs.size()) + " checks, worst " + fmt("%.3g", worst->second) + " (" + worst->first + "), " +
                fmt("%.1f", t) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 3. FLOPs linearity

Outcome flops_linearity() {
    const auto t0 = Clock::now();
    const auto cfg = arch::ModelConfig::standard();
    const std::size_t h = 720 / cfg.scale, w = 1280 / cfg.scale;
    const auto base = metrics::count_flops(cfg, h, w, 0.2);
    const std::size_t n_patches = (base.height / cfg.patch) * (base.width / cfg.patch);
    // ceil(p*N) with p = i/10, in integers
    auto ceil_count = [&](std::size_t i) { return (i * n_patches + 9) / 10; };
    bool ok = true;
    double r8 = 0;
    for (std::size_t i = 2; i <= 8; ++i) {
        const auto r = metrics::count_flops(cfg, h, w, real(i) / 10);
        const double ratio = r.stage("ta_ssm") / base.stage("ta_ssm");
        const double expect = double(ceil_count(i)) / double(ceil_count(2));
        ok = ok && std::abs(ratio - expect) < 1e-12 && std::abs(ratio - double(i) / 2) <= 0.5 / double(ceil_count(2));
        if (i == 8) r8 = ratio;
    }
    const double published = 0.3409 / 0.085;
    const double t = seconds_since(t0);
    ok = ok && std::abs(r8 - 4.0) <= 0.05 && std::abs(published - 4.0) <= 0.05 && t < 5;
    return {ok, "FLOPs(0.8)/FLOPs(0.2) = " + fmt("%.4f", r8) + " (reference 0.3409/0.085 = " + fmt("%.4f", published) + "), " +
                    fmt("%.3f", t) + " s"};
}

// ---------------------------------------------------------------------------
// 4. degradation trend

Outcome degradation_trend() {
    const auto t0 = Clock::now();
    std::vector<metrics::ImagePair> pairs;
    for (const auto& hr : data::synth_textures(0, 20, 96)) {
        const auto p = data::make_pair("", hr, 2);
        pairs.push_back({data::upscale_bicubic(p.lr, 2).tensor(), p.hr.tensor()});
    }
    const auto prof = metrics::degradation_profile(pairs, 8, 10);
    const double rho = metrics::profile_spearman(prof);
    const double t = seconds_since(t0);
    return {prof.groups.size() == 10 && rho <= -0.8 && t < 60,
            "spearman " + fmt("%.4f", rho) + " over " + std::to_string(prof.total()) + " tiles, " + fmt("%.2f", t) + " s"};
}

// ---------------------------------------------------------------------------
// 5. toy training

Outcome toy_training() {
    const auto t0 = Clock::now();
    std::vector<data::SrPair> train_set;
    const auto imgs = data::synth_textures(1, 20, 64);
    for (std::size_t i = 0; i < imgs.size(); ++i) train_set.push_back(data::make_pair(std::to_string(i), imgs[i], 2));
    train::TrainConfig cfg;
    cfg.model = arch::ModelConfig::micro();
    cfg.model.scale = 2;
    cfg.steps = 2000;
    cfg.adam.lr = 2e-4;
    cfg.patch = 32;
    cfg.seed = 7;
    const auto r = train::train_loop(train_set, cfg);

    double model = 0, bicubic = 0;
    const auto held = data::synth_textures(99, 6, 64);
    for (const auto& hr : held) {
        const auto p = data::make_pair("", hr, 2);
        model += metrics::y_quality(train::super_resolve(p.lr, cfg.model, r.weights).tensor(), p.hr.tensor(), 2).psnr;
        bicubic += metrics::y_quality(data::upscale_bicubic(p.lr, 2).tensor(), p.hr.tensor(), 2).psnr;
    }
    model /= double(held.size());
    bicubic /= double(held.size());
    const double s50 = train::smoothed_loss(r.log, 50, 50), send = train::smoothed_loss(r.log, 2000, 50);
    const double t = seconds_since(t0);
    return {model - bicubic >= 0.3 && send < 0.7 * s50 && t <= 1800,
            "held-out Y-PSNR " + fmt("%.3f", model) + " vs bicubic " + fmt("%.3f", bicubic) + " (" +
                fmt("%+.3f", model - bicubic) + " dB), smoothed loss " + fmt("%.5f", send) + " / " + fmt("%.5f", s50) +
                " = " + fmt("%.3f", send / s50) + ", " + fmt("%.0f", t) + " s"};
}

// ---------------------------------------------------------------------------
// 6. identity reachability

bool same_bits(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    const auto x = a.data(), y = b.data();
    return std::memcmp(x.data(), y.data(), x.size() * sizeof(real)) == 0;
}

Outcome identity_reachability() {
    std::mt19937_64 rng(6006);
    auto cfg = arch::ModelConfig::micro();
    auto w = scrambled(cfg, 61);
    arch::zero_output_projections(w);
    std::size_t checked = 0, identical = 0;
    for (const Shape& s : {Shape{16, 8, 8}, Shape{16, 12, 8}}) {
        const auto f = random_tensor(s, rng, -3, 3);
        for (const auto& g : w.groups)
            for (const auto& m : g.blocks) {
                for (std::size_t d = 0; d < 4; ++d) {
                    const auto out = arch::tassb_forward(f, m.directional[d],
                                                         {arch::kScanDirections[d], cfg.top_p, cfg.patch, cfg.padding});
                    identical += same_bits(out, f);
                    ++checked;
                }
                arch::TassbOptions full{arch::ScanDirection::tl_horizontal, 1, cfg.patch, cfg.padding};
                identical += same_bits(arch::tassb_forward(f, m.full, full), f);
                identical += same_bits(arch::mdpb_forward(f, m, cfg), f);
                checked += 2;
            }
    }
    return {identical == checked, std::to_string(identical) + "/" + std::to_string(checked) + " blocks bitwise identity"};
}

// ---------------------------------------------------------------------------
// 7. metric oracles

Outcome metric_oracles() {
    std::vector<std::string> bad;
    const double peak = 255;
    if (metrics::psnr_from_mse(peak * peak / 100, peak) != 20) bad.push_back("psnr");
    std::mt19937_64 rng(7007);
    const auto plane = metrics::rgb_to_y(random_tensor({3, 24, 20}, rng, 0, 1));
    if (metrics::ssim(plane, plane, peak) != 1) bad.push_back("ssim");
    const auto white = metrics::rgb_to_y(Tensor::full({3, 1, 1}, 1));
    const auto black = metrics::rgb_to_y(Tensor::zeros({3, 1, 1}));
    if (std::abs(white[0] - 235) > 1e-12 || black[0] != 16) bad.push_back("rgb_to_y");

    // 2x2 DFT: X(u,v) = sum d(y,x) (-1)^(uy+vx), all real.
    const auto out = random_tensor({3, 2, 2}, rng), ref = random_tensor({3, 2, 2}, rng);
    double l1 = 0, fr = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        double d[4];
        for (std::size_t i = 0; i < 4; ++i) {
            d[i] = out[c * 4 + i] - ref[c * 4 + i];
            l1 += std::abs(d[i]) / 12;
        }
        const double X[4] = {d[0] + d[1] + d[2] + d[3], d[0] - d[1] + d[2] - d[3], d[0] + d[1] - d[2] - d[3],
                             d[0] - d[1] - d[2] + d[3]};
        for (double v : X) fr += std::abs(v) / 4 / 3;
    }
    const double expect = 1.0 * l1 + 0.05 * fr;
    const double got = train::total_loss(out, ref, {1, 0.05}).item();
    if (std::abs(got - expect) > 1e-12) bad.push_back("total_loss");
    std::string detail = "total_loss " + fmt("%.15f", got) + " vs oracle " + fmt("%.15f", expect);
    for (const auto& b : bad) detail += "; " + b + " mismatch";
    return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------
// 8. determinism and persistence

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / "tamamba_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::vector<data::SrPair> set;
    const auto imgs = data::synth_textures(8, 4, 32);
    for (std::size_t i = 0; i < imgs.size(); ++i) set.push_back(data::make_pair(std::to_string(i), imgs[i], 2));
    auto run = [&](const std::string& tag) {
        train::TrainConfig cfg;
        cfg.steps = 25;
        cfg.batch = 2;
        cfg.patch = 16;
        cfg.seed = 808;
        cfg.checkpoint_path = dir / (tag + ".tamb");
        cfg.log_path = dir / (tag + ".csv");
        return train::train_loop(set, cfg);
    };
    const auto ra = run("a");
    run("b");
    const bool logs = slurp(dir / "a.csv") == slurp(dir / "b.csv") && !slurp(dir / "a.csv").empty();
    const bool ckpts = slurp(dir / "a.tamb") == slurp(dir / "b.tamb");

    const auto ck = train::load_checkpoint(dir / "a.tamb");
    std::ostringstream os(std::ios::binary);
    train::write_checkpoint(os, ck);
    bool round = os.str() == slurp(dir / "a.tamb");
    auto w = train::weights_from(ck, train::checkpoint_model_config(ck));
    auto orig = ra.weights;
    auto pa = w.named_parameters(), pb = orig.named_parameters();
    round = round && pa.size() == pb.size();
    for (std::size_t i = 0; round && i < pa.size(); ++i) round = same_bits(*pa[i].second, *pb[i].second);
    fs::remove_all(dir);
    return {logs && ckpts && round, std::string("loss logs ") + (logs ? "identical" : "differ") + ", checkpoints " +
                                        (ckpts ? "identical" : "differ") + ", round trip " + (round ? "bitwise" : "lossy")};
}

// ---------------------------------------------------------------------------
// 9. PatchPlan contract

Outcome patch_plan_contract() {
    std::mt19937_64 rng(9009);
    std::uniform_int_distribution<std::size_t> count(1, 300), pct(1, 100), levels(1, 6);
    std::size_t failures = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
        const std::size_t n = count(rng), k = pct(rng);
        const bool ties = t % 2 == 0;
        std::vector<real> v(n);
        if (ties) {
            const std::size_t lv = levels(rng);
            for (auto& x : v) x = real(rng() % lv);
        } else {
            std::uniform_real_distribution<double> u(0, 10);
            for (auto& x : v) x = real(u(rng));
        }
        const real p = real(k) / 100;
        const auto plan = texture::build_patch_plan(v, p);
        bool ok = plan.selected_count == (k * n + 99) / 100;
        std::vector<std::size_t> sorted = plan.perm;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < n; ++i) ok = ok && sorted[i] == i;
        for (std::size_t i = 1; i < n; ++i) {
            const auto a = plan.perm[i - 1], b = plan.perm[i];
            ok = ok && (v[a] > v[b] || (v[a] == v[b] && a < b));
        }
        if (!ties) {
            // same multiset in a shuffled grid selects the same values
            std::vector<std::size_t> shuf(n);
            std::iota(shuf.begin(), shuf.end(), std::size_t{0});
            std::shuffle(shuf.begin(), shuf.end(), rng);
            std::vector<real> pv(n);
            for (std::size_t i = 0; i < n; ++i) pv[i] = v[shuf[i]];
            const auto plan2 = texture::build_patch_plan(pv, p);
            std::set<std::size_t> s1(plan.selected().begin(), plan.selected().end()), s2;
            for (std::size_t g : plan2.selected()) s2.insert(shuf[g]);
            ok = ok && s1 == s2;
        }
        failures += !ok;
    }
    return {failures == 0, std::to_string(trials - failures) + "/" + std::to_string(trials) + " randomized plans hold"};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--only") only.insert(std::stoi(argv[++i]));

    const std::vector<Criterion> all{
        {1, "scan oracle equivalence", scan_oracle},
        {2, "gradient suite", gradient_suite},
        {3, "FLOPs linearity in top-p", flops_linearity},
        {4, "degradation grows with texture", degradation_trend},
        {5, "toy training beats bicubic", toy_training},
        {6, "identity reachability", identity_reachability},
        {7, "metric oracles", metric_oracles},
        {8, "determinism and persistence", determinism},
        {9, "patch plan contract", patch_plan_contract},
    };
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s [%d] %s: %s\n", o.ok ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
        std::fflush(stdout);
        failed += !o.ok;
    }
    return failed ? 1 : 0;
}
