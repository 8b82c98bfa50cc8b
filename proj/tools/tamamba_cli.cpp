// tamamba: batch entry points for corpus synthesis, degradation analysis,
// training, evaluation, inference and FLOPs reports.
//
// Exit codes: 0 ok, 1 usage, 2 data/I-O, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tamamba/arch.hpp"
#include "tamamba/data.hpp"
#include "tamamba/metrics.hpp"
#include "tamamba/train.hpp"

using namespace tamamba;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

enum class Level { quiet, info, debug };

Level log_level() {
    const char* v = std::getenv("TAMAMBA_LOG");
    if (!v) return Level::info;
    const std::string s(v);
    if (s == "quiet") return Level::quiet;
    if (s == "debug") return Level::debug;
    return Level::info;
}

void info(const std::string& msg) {
    if (log_level() != Level::quiet) std::cerr << msg << '\n';
}

struct ModelFlags {
    std::string preset = "micro";
    double top_p = 0.5;
    std::size_t scale = 2;
    std::size_t patch = 4;
    bool top_p_set = false, preset_set = false, scale_set = false, patch_set = false;

    void add(CLI::App* app) {
        app->add_option("--preset", preset, "model preset: micro, small or standard")
            ->check(CLI::IsMember({"micro", "small", "standard"}))
            ->each([this](const std::string&) { preset_set = true; });
        app->add_option("--top-p", top_p, "fraction of patches routed through the texture-aware scan")
            ->each([this](const std::string&) { top_p_set = true; });
        app->add_option("--scale", scale, "super-resolution factor (1-4)")
            ->each([this](const std::string&) { scale_set = true; });
        app->add_option("--model-patch", patch, "feature-space patch extent")
            ->each([this](const std::string&) { patch_set = true; });
    }

    arch::ModelConfig config() const {
        arch::ModelConfig c = preset == "standard" ? arch::ModelConfig::standard()
                              : preset == "small"  ? arch::ModelConfig::small()
                                                   : arch::ModelConfig::micro();
        c.top_p = top_p;
        c.scale = scale;
        c.patch = patch;
        c.validate();
        return c;
    }

    /// Configuration stored in the checkpoint, with explicit flags checked
    /// against it. top_p may be changed freely since it owns no weights.
    arch::ModelConfig resolve(const train::Checkpoint& ck) const {
        arch::ModelConfig c = train::checkpoint_model_config(ck);
        if (preset_set || scale_set || patch_set) {
            arch::ModelConfig want = config();
            want.top_p = c.top_p;
            if (!(want == c)) throw FormatError("checkpoint/config mismatch: flags describe a different model");
        }
        if (top_p_set) c.top_p = top_p;
        c.validate();
        return c;
    }
};

std::string csv_text(const std::function<void(std::ostream&)>& fn) {
    std::ostringstream os;
    fn(os);
    return os.str();
}

metrics::TextureMeasure parse_measure(const std::string& s) {
    return s == "entropy" ? metrics::TextureMeasure::entropy : metrics::TextureMeasure::variance;
}

// --- subcommands --------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::uint64_t seed = 0;
    std::size_t count = 20, extent = 96;
};

int cmd_synth(const SynthArgs& a) {
    const auto imgs = data::synth_textures(a.seed, a.count, a.extent);
    data::write_corpus(a.out, imgs);
    info("wrote " + std::to_string(imgs.size()) + " images to " + a.out);
    return kOk;
}

struct AnalyzeArgs {
    std::string data, out, checkpoint, measure = "variance";
    std::size_t scale = 2, patch = 8, groups = 10;
};

int cmd_analyze(const AnalyzeArgs& a) {
    const auto pairs = data::load_dataset(a.data, a.scale);
    std::optional<arch::ModelConfig> cfg;
    arch::ModelWeights w;
    if (!a.checkpoint.empty()) {
        const auto ck = train::load_checkpoint(a.checkpoint);
        cfg = train::checkpoint_model_config(ck);
        if (cfg->scale != a.scale) throw FormatError("checkpoint/config mismatch: checkpoint scale differs from --scale");
        w = train::weights_from(ck, *cfg);
    }
    std::vector<metrics::ImagePair> ips;
    for (const auto& p : pairs) {
        const data::ImageBuf up = cfg ? train::super_resolve(p.lr, *cfg, w) : data::upscale_bicubic(p.lr, a.scale);
        ips.push_back({up.tensor(), p.hr.tensor()});
    }
    const auto prof = metrics::degradation_profile(ips, a.patch, a.groups, parse_measure(a.measure));
    data::write_text_atomic(a.out, csv_text([&](std::ostream& os) { metrics::write_profile_csv(os, prof); }));
    std::ostringstream line;
    line.precision(6);
    line << "spearman=" << metrics::profile_spearman(prof) << " groups=" << a.groups << " tiles=" << prof.total();
    std::cout << line.str() << '\n';
    return kOk;
}

struct TrainArgs {
    std::string data, checkpoint = "model.tamb", log = "loss.csv";
    std::size_t steps = 2000, batch = 8, crop = 32, threads = 1, every = 0;
    double lr = 2e-4, clip = 0, l1 = 1, freq = 0.05;
    std::uint64_t seed = 0;
    bool no_augment = false;
    std::string init = "passthrough";
};

int cmd_train(const TrainArgs& a, const ModelFlags& mf) {
    train::TrainConfig tc;
    tc.model = mf.config();
    tc.steps = a.steps;
    tc.batch = a.batch;
    tc.patch = a.crop;
    tc.threads = a.threads;
    tc.checkpoint_every = a.every;
    tc.adam.lr = a.lr;
    tc.adam.clip_norm = a.clip;
    tc.loss = {a.l1, a.freq};
    tc.seed = a.seed;
    tc.augment = !a.no_augment;
    tc.init = a.init == "random"        ? train::InitScheme::random
              : a.init == "interpolating" ? train::InitScheme::interpolating
                                          : train::InitScheme::passthrough;
    tc.checkpoint_path = a.checkpoint;
    tc.log_path = a.log;
    const auto pairs = data::load_dataset(a.data, tc.model.scale);
    info("training on " + std::to_string(pairs.size()) + " images for " + std::to_string(a.steps) + " steps");
    const bool debug = log_level() == Level::debug;
    train::train_loop(pairs, tc, [&](const train::LogRow& r) {
        if (debug || (log_level() == Level::info && r.step % 100 == 0)) {
            std::ostringstream os;
            os << "step " << r.step << " loss " << r.loss << " lr " << r.lr;
            info(os.str());
        }
    });
    return kOk;
}

struct EvalArgs {
    std::string data, checkpoint, out;
    std::size_t border = 0;  // defaults to the scale
    bool border_set = false;
};

int cmd_eval(const EvalArgs& a, const ModelFlags& mf) {
    const auto ck = train::load_checkpoint(a.checkpoint);
    const auto cfg = mf.resolve(ck);
    const auto w = train::weights_from(ck, cfg);
    const auto pairs = data::load_dataset(a.data, cfg.scale);
    const std::size_t border = a.border_set ? a.border : cfg.scale;
    std::ostringstream os;
    os.precision(10);
    os << "image,psnr,ssim,bicubic_psnr,bicubic_ssim\n";
    double sums[4] = {0, 0, 0, 0};
    for (const auto& p : pairs) {
        const auto sr = train::super_resolve(p.lr, cfg, w);
        const auto bi = data::upscale_bicubic(p.lr, cfg.scale);
        const auto q = metrics::y_quality(sr.tensor(), p.hr.tensor(), border);
        const auto qb = metrics::y_quality(bi.tensor(), p.hr.tensor(), border);
        os << p.name << ',' << q.psnr << ',' << q.ssim << ',' << qb.psnr << ',' << qb.ssim << '\n';
        sums[0] += q.psnr;
        sums[1] += q.ssim;
        sums[2] += qb.psnr;
        sums[3] += qb.ssim;
    }
    const double n = double(pairs.size());
    os << "mean," << sums[0] / n << ',' << sums[1] / n << ',' << sums[2] / n << ',' << sums[3] / n << '\n';
    data::write_text_atomic(a.out, os.str());
    std::ostringstream line;
    line.precision(6);
    line << "mean_psnr=" << sums[0] / n << " mean_ssim=" << sums[1] / n << " bicubic_psnr=" << sums[2] / n;
    std::cout << line.str() << '\n';
    return kOk;
}

struct InferArgs {
    std::string input, checkpoint, out;
};

int cmd_infer(const InferArgs& a, const ModelFlags& mf) {
    const auto ck = train::load_checkpoint(a.checkpoint);
    const auto cfg = mf.resolve(ck);
    const auto w = train::weights_from(ck, cfg);
    std::vector<fs::path> files;
    if (fs::is_directory(a.input)) {
        files = data::list_pngs(a.input);
    } else if (fs::is_regular_file(a.input)) {
        files.push_back(a.input);
    } else {
        throw IoError("input not found: " + a.input);
    }
    if (files.empty()) throw IoError("no PNG images in " + a.input);
    for (const auto& f : files) {
        const auto sr = train::super_resolve(data::png_read(f), cfg, w);
        data::png_write(fs::path(a.out) / f.filename(), sr);
    }
    info("wrote " + std::to_string(files.size()) + " images to " + a.out);
    return kOk;
}

struct BenchArgs {
    std::string out;
    std::size_t height = 720, width = 1280;  // high-resolution output extents
};

int cmd_bench(const BenchArgs& a, const ModelFlags& mf) {
    const auto cfg = mf.config();
    if (a.height % cfg.scale || a.width % cfg.scale) throw ArgumentError("bench: extents must be divisible by the scale");
    std::vector<metrics::FlopsReport> rs;
    for (int i = 2; i <= 8; ++i) rs.push_back(metrics::count_flops(cfg, a.height / cfg.scale, a.width / cfg.scale, real(i) / 10));
    data::write_text_atomic(a.out, csv_text([&](std::ostream& os) { metrics::write_flops_sweep_csv(os, rs); }));
    std::ostringstream line;
    line.precision(6);
    line << "total_gflops p=0.2: " << rs.front().total() / 1e9 << " p=0.8: " << rs.back().total() / 1e9;
    std::cout << line.str() << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TAMambaIR image restoration tools"};
    app.set_config("--config", "", "TOML config file; keys mirror the long flag names");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "write a seeded synthetic texture corpus");
    synth->add_option("--out", sa.out, "output directory")->required();
    synth->add_option("--seed", sa.seed, "corpus seed");
    synth->add_option("--count", sa.count, "number of images");
    synth->add_option("--extent", sa.extent, "image side length (multiple of 8)");

    AnalyzeArgs aa;
    auto* analyze = app.add_subcommand("analyze", "PSNR per texture group of degraded images");
    analyze->add_option("--data", aa.data, "dataset directory with hr/ (and optional lr/)")->required();
    analyze->add_option("--out", aa.out, "profile CSV")->required();
    analyze->add_option("--scale", aa.scale, "degradation scale");
    analyze->add_option("--patch", aa.patch, "tile extent in pixels");
    analyze->add_option("--groups", aa.groups, "number of texture groups");
    analyze->add_option("--measure", aa.measure, "texture measure")->check(CLI::IsMember({"variance", "entropy"}));
    analyze->add_option("--checkpoint", aa.checkpoint, "restore with a trained model instead of bicubic");

    TrainArgs ta;
    ModelFlags train_model;
    auto* trn = app.add_subcommand("train", "train a model on a dataset directory");
    trn->add_option("--data", ta.data, "dataset directory")->required();
    trn->add_option("--checkpoint", ta.checkpoint, "output checkpoint");
    trn->add_option("--log", ta.log, "loss log CSV");
    trn->add_option("--steps", ta.steps, "optimizer steps");
    trn->add_option("--batch", ta.batch, "crops per step");
    trn->add_option("--crop", ta.crop, "high-resolution crop extent");
    trn->add_option("--lr", ta.lr, "initial learning rate");
    trn->add_option("--clip-norm", ta.clip, "global gradient-norm clip (0 = off)");
    trn->add_option("--l1-weight", ta.l1, "L1 loss weight");
    trn->add_option("--freq-weight", ta.freq, "frequency loss weight");
    trn->add_option("--seed", ta.seed, "seed for initialization and batch order");
    trn->add_option("--threads", ta.threads, "worker threads over batch items");
    trn->add_option("--checkpoint-every", ta.every, "also save every N steps");
    trn->add_flag("--no-augment", ta.no_augment, "disable flips and rotations");
    trn->add_option("--init", ta.init, "weight initialization")
        ->check(CLI::IsMember({"random", "passthrough", "interpolating"}))
        ->capture_default_str();
    train_model.add(trn);

    EvalArgs ea;
    ModelFlags eval_model;
    auto* evl = app.add_subcommand("eval", "Y-channel PSNR/SSIM of a checkpoint on a dataset");
    evl->add_option("--data", ea.data, "dataset directory")->required();
    evl->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
    evl->add_option("--out", ea.out, "per-image CSV")->required();
    evl->add_option("--border", ea.border, "pixels shaved before scoring (default: scale)")
        ->each([&](const std::string&) { ea.border_set = true; });
    eval_model.add(evl);

    InferArgs ia;
    ModelFlags infer_model;
    auto* inf = app.add_subcommand("infer", "super-resolve PNG images");
    inf->add_option("--input", ia.input, "PNG file or directory")->required();
    inf->add_option("--checkpoint", ia.checkpoint, "checkpoint file")->required();
    inf->add_option("--out", ia.out, "output directory")->required();
    infer_model.add(inf);

    BenchArgs ba;
    ModelFlags bench_model;
    auto* bench = app.add_subcommand("bench", "analytic FLOPs for p = 0.2 ... 0.8");
    bench->add_option("--out", ba.out, "FLOPs CSV")->required();
    bench->add_option("--height", ba.height, "output height");
    bench->add_option("--width", ba.width, "output width");
    bench_model.add(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*synth) return cmd_synth(sa);
        if (*analyze) return cmd_analyze(aa);
        if (*trn) return cmd_train(ta, train_model);
        if (*evl) return cmd_eval(ea, eval_model);
        if (*inf) return cmd_infer(ia, infer_model);
        if (*bench) return cmd_bench(ba, bench_model);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    } catch (const ArgumentError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}
