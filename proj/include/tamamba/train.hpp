#pragma once

// Training: L1 + frequency loss, Adam with step-halving milestones, the
// binary checkpoint format and a seeded, reproducible training loop.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "tamamba/arch.hpp"
#include "tamamba/data.hpp"
#include "tamamba/error.hpp"
#include "tamamba/ops.hpp"
#include "tamamba/tensor.hpp"

namespace tamamba::train {

namespace fs = std::filesystem;
using arch::ModelConfig;
using arch::ModelWeights;

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct LossConfig {
    real l1_weight = real(1);
    real freq_weight = real(0.05);

    void validate() const {
        if (!(l1_weight >= 0) || !(freq_weight >= 0)) throw ArgumentError("loss weights must be >= 0");
    }
};

/// Mean absolute difference of the unnormalized 2-D DFT coefficients
/// (real and imaginary parts), averaged over channels.
inline Tensor frequency_loss(const Tensor& out, const Tensor& ref) {
    if (out.shape() != ref.shape() || out.rank() != 3) {
        throw ShapeError("frequency_loss: shapes " + to_string(out.shape()) + " and " + to_string(ref.shape()));
    }
    const Tensor diff = out - ref;
    Tensor acc = Tensor::scalar(0);
    for (std::size_t c = 0; c < out.dim(0); ++c) {
        const Complex2D f = fft2(channel(diff, c));
        acc = acc + mean(abs(f.re) + abs(f.im));
    }
    return acc * (real(1) / real(out.dim(0)));
}

inline Tensor total_loss(const Tensor& out, const Tensor& ref, const LossConfig& cfg = {}) {
    cfg.validate();
    if (out.shape() != ref.shape()) {
        throw ShapeError("total_loss: shapes " + to_string(out.shape()) + " and " + to_string(ref.shape()));
    }
    Tensor loss = mean(abs(out - ref)) * cfg.l1_weight;
    if (cfg.freq_weight > 0) loss = loss + frequency_loss(out, ref) * cfg.freq_weight;
    return loss;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    real lr = real(2e-4);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    std::vector<real> milestones{real(0.5), real(0.75), real(0.9)};  // fractions of the run
    real clip_norm = 0;  // global gradient-norm clip; 0 disables
};

struct AdamState {
    AdamConfig cfg;
    std::size_t total_steps = 0;  // schedule length; 0 means constant lr
    std::size_t step = 0;         // updates applied so far
    std::vector<std::vector<real>> m, v;

    /// Learning rate for the update with 0-based index k.
    real lr_at(std::size_t k) const {
        real lr = cfg.lr;
        if (total_steps == 0) return lr;
        for (real f : cfg.milestones) {
            const auto at = static_cast<std::size_t>(std::llround(f * real(total_steps)));
            if (k >= at) lr *= real(0.5);
        }
        return lr;
    }
    real current_lr() const { return lr_at(step); }
};

/// One bias-corrected Adam update. Parameters are replaced by fresh leaves.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& st) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
    if (st.m.empty()) {
        for (const Tensor* p : params) {
            st.m.emplace_back(p->numel(), real(0));
            st.v.emplace_back(p->numel(), real(0));
        }
    }
    if (st.m.size() != params.size()) throw ShapeError("adam_step: optimizer state has the wrong parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i]->shape() || st.m[i].size() != params[i]->numel()) {
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
    }

    real gscale = 1;
    if (st.cfg.clip_norm > 0) {
        real sq = 0;
        for (const auto& g : grads)
            for (real e : g.values()) sq += e * e;
        const real norm = std::sqrt(sq);
        if (norm > st.cfg.clip_norm) gscale = st.cfg.clip_norm / norm;
    }

    const real lr = st.current_lr();
    const real b1 = st.cfg.beta1, b2 = st.cfg.beta2;
    st.step += 1;
    const real c1 = 1 - std::pow(b1, real(st.step));
    const real c2 = 1 - std::pow(b2, real(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<real> p = params[i]->values();
        const auto& g = grads[i].values();
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const real gj = g[j] * gscale;
            m[j] = b1 * m[j] + (1 - b1) * gj;
            v[j] = b2 * v[j] + (1 - b2) * gj * gj;
            p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + st.cfg.eps);
        }
        *params[i] = Tensor::from(params[i]->shape(), std::move(p), true);
    }
}

// ---------------------------------------------------------------------------
// Configuration echo
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"n_groups", c.n_groups},   {"depth", c.depth},
            {"d_model", c.d_model},     {"n_state", c.n_state},
            {"patch", c.patch},         {"top_p", c.top_p},
            {"scale", c.scale},         {"padding", c.padding == PadMode::reflect ? "reflect" : "zero"},
            {"ca_reduction", c.ca_reduction}, {"pos_grid", c.pos_grid}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.n_groups = j.at("n_groups").get<std::size_t>();
        c.depth = j.at("depth").get<std::size_t>();
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_state = j.at("n_state").get<std::size_t>();
        c.patch = j.at("patch").get<std::size_t>();
        c.top_p = j.at("top_p").get<real>();
        c.scale = j.at("scale").get<std::size_t>();
        const auto pad = j.at("padding").get<std::string>();
        if (pad != "reflect" && pad != "zero") throw FormatError("unknown padding mode " + pad);
        c.padding = pad == "reflect" ? PadMode::reflect : PadMode::zero;
        c.ca_reduction = j.at("ca_reduction").get<std::size_t>();
        c.pos_grid = j.at("pos_grid").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'T', 'A', 'M', 'B'};

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

inline constexpr DType native_dtype() { return sizeof(real) == 8 ? DType::f64 : DType::f32; }

struct CheckpointEntry {
    std::string name;
    DType dtype = native_dtype();
    Shape shape;
    std::vector<real> values;

    bool operator==(const CheckpointEntry&) const = default;
};

struct OptimizerSnapshot {
    std::uint64_t step = 0;
    std::uint64_t total_steps = 0;
    std::vector<CheckpointEntry> m, v;

    bool operator==(const OptimizerSnapshot&) const = default;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<CheckpointEntry> params;
    std::optional<OptimizerSnapshot> optimizer;
    std::string config;  // JSON echo of the run configuration
    std::uint64_t seed = 0;

    bool operator==(const Checkpoint&) const = default;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : params)
            if (e.name == name) return &e;
        return nullptr;
    }
};

namespace detail {

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    template <class U>
    void uint(U v) {
        std::uint8_t b[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        os_.write(reinterpret_cast<const char*>(b), sizeof(U));
    }
    void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void string(const std::string& s) {
        uint<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void entry(const CheckpointEntry& e) {
        string(e.name);
        uint<std::uint8_t>(static_cast<std::uint8_t>(e.dtype));
        uint<std::uint32_t>(static_cast<std::uint32_t>(e.shape.size()));
        for (std::size_t d : e.shape) uint<std::uint64_t>(d);
        for (real v : e.values) {
            if (e.dtype == DType::f64) {
                uint<std::uint64_t>(std::bit_cast<std::uint64_t>(static_cast<double>(v)));
            } else {
                uint<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            }
        }
    }

private:
    std::ostream& os_;
};

class Reader {
public:
    Reader(const std::vector<char>& buf, std::string where) : buf_(buf), where_(std::move(where)) {}

    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw FormatError("corrupt checkpoint " + where_ + ": truncated data");
    }
    template <class U>
    U uint() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<U>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i));
        }
        pos_ += sizeof(U);
        return v;
    }
    std::string string() {
        const auto n = uint<std::uint32_t>();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    CheckpointEntry entry() {
        CheckpointEntry e;
        e.name = string();
        const auto code = uint<std::uint8_t>();
        if (code > 1) throw FormatError("corrupt checkpoint " + where_ + ": unknown dtype code " + std::to_string(code));
        e.dtype = static_cast<DType>(code);
        const auto rank = uint<std::uint32_t>();
        if (rank > 8) throw FormatError("corrupt checkpoint " + where_ + ": rank " + std::to_string(rank));
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = uint<std::uint64_t>();
            if (d > (std::uint64_t(1) << 40)) throw FormatError("corrupt checkpoint " + where_ + ": extent too large");
            e.shape.push_back(static_cast<std::size_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        const std::size_t width = e.dtype == DType::f64 ? 8 : 4;
        if (n > (buf_.size() - pos_) / width) need(n * width);
        e.values.resize(n);
        for (auto& v : e.values) {
            if (e.dtype == DType::f64) {
                v = static_cast<real>(std::bit_cast<double>(uint<std::uint64_t>()));
            } else {
                v = static_cast<real>(std::bit_cast<float>(uint<std::uint32_t>()));
            }
        }
        return e;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    const std::vector<char>& buf_;
    std::string where_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    detail::Writer w(os);
    w.bytes(kCheckpointMagic, 4);
    w.uint<std::uint32_t>(ck.version);
    w.uint<std::uint64_t>(ck.params.size());
    for (const auto& e : ck.params) w.entry(e);
    w.uint<std::uint64_t>(ck.seed);
    w.string(ck.config);
    w.uint<std::uint8_t>(ck.optimizer ? 1 : 0);
    if (ck.optimizer) {
        const auto& o = *ck.optimizer;
        if (o.m.size() != o.v.size()) throw ArgumentError("optimizer snapshot: moment count mismatch");
        w.uint<std::uint64_t>(o.step);
        w.uint<std::uint64_t>(o.total_steps);
        w.uint<std::uint64_t>(o.m.size());
        for (const auto& e : o.m) w.entry(e);
        for (const auto& e : o.v) w.entry(e);
    }
}

inline Checkpoint parse_checkpoint(const std::vector<char>& buf, const std::string& where = "<memory>") {
    if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
        throw FormatError(where + " is not a checkpoint (bad magic)");
    }
    detail::Reader r(buf, where);
    r.need(4);
    for (int i = 0; i < 4; ++i) r.uint<std::uint8_t>();
    Checkpoint ck;
    ck.version = r.uint<std::uint32_t>();
    if (ck.version != kCheckpointVersion) {
        throw FormatError("checkpoint " + where + " has unsupported version " + std::to_string(ck.version));
    }
    const auto n = r.uint<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) ck.params.push_back(r.entry());
    ck.seed = r.uint<std::uint64_t>();
    ck.config = r.string();
    const auto has_opt = r.uint<std::uint8_t>();
    if (has_opt > 1) throw FormatError("corrupt checkpoint " + where + ": bad optimizer flag");
    if (has_opt) {
        OptimizerSnapshot o;
        o.step = r.uint<std::uint64_t>();
        o.total_steps = r.uint<std::uint64_t>();
        const auto k = r.uint<std::uint64_t>();
        for (std::uint64_t i = 0; i < k; ++i) o.m.push_back(r.entry());
        for (std::uint64_t i = 0; i < k; ++i) o.v.push_back(r.entry());
        ck.optimizer = std::move(o);
    }
    if (!r.done()) throw FormatError("corrupt checkpoint " + where + ": trailing bytes");
    return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
    data::atomic_write(path, [&](const fs::path& tmp) {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
        write_checkpoint(os, ck);
        os.close();
        if (!os) throw IoError("cannot write " + tmp.string());
    });
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_checkpoint(buf, path.string());
}

// ---------------------------------------------------------------------------
// Weights <-> checkpoint
// ---------------------------------------------------------------------------

inline std::vector<CheckpointEntry> entries_from(ModelWeights& w) {
    std::vector<CheckpointEntry> out;
    for (auto& [name, t] : w.named_parameters()) out.push_back({name, native_dtype(), t->shape(), t->values()});
    return out;
}

inline std::string config_echo(const ModelConfig& cfg, const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j = extra;
    j["model"] = to_json(cfg);
    return j.dump();
}

inline Checkpoint make_checkpoint(const ModelConfig& cfg, ModelWeights& w, std::uint64_t seed,
                                  const AdamState* adam = nullptr,
                                  const nlohmann::json& extra = nlohmann::json::object()) {
    Checkpoint ck;
    ck.params = entries_from(w);
    ck.seed = seed;
    ck.config = config_echo(cfg, extra);
    if (adam && !adam->m.empty()) {
        OptimizerSnapshot o;
        o.step = adam->step;
        o.total_steps = adam->total_steps;
        for (std::size_t i = 0; i < ck.params.size(); ++i) {
            o.m.push_back({"m." + ck.params[i].name, native_dtype(), ck.params[i].shape, adam->m.at(i)});
            o.v.push_back({"v." + ck.params[i].name, native_dtype(), ck.params[i].shape, adam->v.at(i)});
        }
        ck.optimizer = std::move(o);
    }
    return ck;
}

/// Model configuration recorded in a checkpoint's echo.
inline ModelConfig checkpoint_model_config(const Checkpoint& ck) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ck.config);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config echo is not JSON: ") + e.what());
    }
    if (!j.contains("model")) throw FormatError("checkpoint config echo has no model section");
    return model_config_from_json(j["model"]);
}

/// Rebuilds weights for cfg from a checkpoint. Every parameter must be
/// present with the expected shape and nothing else may be stored.
inline ModelWeights weights_from(const Checkpoint& ck, const ModelConfig& cfg) {
    ModelWeights w = arch::init_weights(cfg, 0);
    auto named = w.named_parameters();
    if (named.size() != ck.params.size()) {
        throw FormatError("checkpoint/config mismatch: checkpoint has " + std::to_string(ck.params.size()) +
                            " parameters, config expects " + std::to_string(named.size()));
    }
    for (auto& [name, t] : named) {
        const CheckpointEntry* e = ck.find(name);
        if (!e) throw FormatError("checkpoint/config mismatch: missing parameter " + name);
        if (e->shape != t->shape()) {
            throw FormatError("checkpoint/config mismatch: " + name + " has shape " + to_string(e->shape) +
                                ", expected " + to_string(t->shape()));
        }
        *t = Tensor::from(e->shape, e->values, true);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// random: plain fan-in init. passthrough / interpolating: see
// arch::seed_passthrough_path with a zero or cubic upsampler.
enum class InitScheme { random, passthrough, interpolating };

inline const char* init_scheme_name(InitScheme s) {
    switch (s) {
        case InitScheme::random: return "random";
        case InitScheme::passthrough: return "passthrough";
        case InitScheme::interpolating: return "interpolating";
    }
    return "?";
}

struct TrainConfig {
    ModelConfig model = ModelConfig::micro();
    LossConfig loss;
    AdamConfig adam;
    std::size_t steps = 2000;
    std::size_t batch = 8;
    std::size_t patch = 32;  // HR crop extent
    std::uint64_t seed = 0;
    bool augment = true;
    InitScheme init = InitScheme::passthrough;
    std::size_t threads = 1;
    std::size_t checkpoint_every = 0;  // 0: only at the end
    fs::path checkpoint_path;          // empty: do not write
    fs::path log_path;                 // empty: do not write

    nlohmann::json echo() const {
        return {{"steps", steps}, {"batch", batch}, {"patch", patch}, {"augment", augment},
                {"lr", adam.lr}, {"l1_weight", loss.l1_weight}, {"freq_weight", loss.freq_weight},
                {"clip_norm", adam.clip_norm}, {"init", init_scheme_name(init)}};
    }
};

/// Weights a run with this configuration starts from.
inline ModelWeights initial_weights(const TrainConfig& cfg) {
    ModelWeights w = arch::init_weights(cfg.model, cfg.seed);
    if (cfg.init != InitScheme::random)
        arch::seed_passthrough_path(w, cfg.model,
                                    cfg.init == InitScheme::interpolating ? arch::UpsamplerInit::cubic
                                                                          : arch::UpsamplerInit::zero);
    return w;
}

struct LogRow {
    std::size_t step;
    real loss;
    real lr;
};

inline std::string loss_log_csv(const std::vector<LogRow>& rows) {
    std::string s = "step,loss,lr\n";
    char line[96];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", r.step, static_cast<double>(r.loss),
                      static_cast<double>(r.lr));
        s += line;
    }
    return s;
}

/// Mean of the losses over the `window` steps ending at step `end` (1-based).
inline real smoothed_loss(const std::vector<LogRow>& rows, std::size_t end, std::size_t window) {
    if (end == 0 || end > rows.size() || window == 0) throw ArgumentError("smoothed_loss: step out of range");
    const std::size_t begin = end > window ? end - window : 0;
    real s = 0;
    for (std::size_t i = begin; i < end; ++i) s += rows[i].loss;
    return s / real(end - begin);
}

struct TrainResult {
    ModelWeights weights;
    AdamState adam;
    std::vector<LogRow> log;
    Checkpoint checkpoint;
};

namespace detail {

struct SampleResult {
    real loss = 0;
    std::vector<Tensor> grads;
};

inline SampleResult run_sample(const data::Crop& crop, const TrainConfig& cfg, const ModelWeights& w,
                               const std::vector<Tensor>& leaves) {
    const Tensor out = arch::model_forward(crop.lr, cfg.model, w);
    const Tensor loss = total_loss(out, crop.hr, cfg.loss);
    return {loss.item(), grad(loss, leaves)};
}

}  // namespace detail

/// Seeded training. The weights are initialized from cfg.seed and batches
/// are drawn from a generator derived from the same seed, so two runs with
/// the same inputs produce identical logs and parameters. Batch items may be
/// processed on several threads; gradients are always reduced in item order.
inline TrainResult train_loop(const std::vector<data::SrPair>& dataset, const TrainConfig& cfg,
                              const std::function<void(const LogRow&)>& on_step = {}) {
    if (dataset.empty()) throw ArgumentError("train_loop: empty dataset");
    if (cfg.batch == 0) throw ArgumentError("train_loop: batch must be >= 1");
    cfg.model.validate();
    cfg.loss.validate();
    for (const auto& p : dataset) {
        if (p.scale != cfg.model.scale) throw ArgumentError("train_loop: pair " + p.name + " has the wrong scale");
    }

    TrainResult res;
    res.weights = initial_weights(cfg);
    res.adam.cfg = cfg.adam;
    res.adam.total_steps = cfg.steps;
    std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ull);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

    const auto save = [&] {
        if (!cfg.checkpoint_path.empty()) {
            save_checkpoint(cfg.checkpoint_path, make_checkpoint(cfg.model, res.weights, cfg.seed, &res.adam, cfg.echo()));
        }
        if (!cfg.log_path.empty()) data::write_text_atomic(cfg.log_path, loss_log_csv(res.log));
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.batch));
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        std::vector<data::Crop> crops;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            crops.push_back(data::crop_augment(dataset[pick(rng)], cfg.patch, rng, cfg.augment));
        }

        auto named = res.weights.named_parameters();
        std::vector<Tensor*> params;
        std::vector<Tensor> leaves;
        for (auto& [name, t] : named) {
            params.push_back(t);
            leaves.push_back(*t);
        }

        std::vector<detail::SampleResult> results(cfg.batch);
        if (threads == 1) {
            for (std::size_t b = 0; b < cfg.batch; ++b) results[b] = detail::run_sample(crops[b], cfg, res.weights, leaves);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(threads);
            for (std::size_t t = 0; t < threads; ++t) {
                pool.emplace_back([&, t] {
                    try {
                        for (std::size_t b = t; b < cfg.batch; b += threads) {
                            results[b] = detail::run_sample(crops[b], cfg, res.weights, leaves);
                        }
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) th.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }

        real loss = 0;
        std::vector<std::vector<real>> acc(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) acc[i].assign(params[i]->numel(), real(0));
        for (const auto& r : results) {
            loss += r.loss;
            for (std::size_t i = 0; i < params.size(); ++i) {
                const auto& g = r.grads[i].values();
                for (std::size_t j = 0; j < g.size(); ++j) acc[i][j] += g[j];
            }
        }
        const real inv = real(1) / real(cfg.batch);
        loss *= inv;
        std::vector<Tensor> grads;
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (auto& e : acc[i]) e *= inv;
            grads.push_back(Tensor::from(params[i]->shape(), std::move(acc[i])));
        }

        const real lr = res.adam.current_lr();
        adam_step(params, grads, res.adam);
        res.log.push_back({step, loss, lr});
        if (on_step) on_step(res.log.back());
        if (cfg.checkpoint_every && step % cfg.checkpoint_every == 0 && step != cfg.steps) save();
    }

    res.checkpoint = make_checkpoint(cfg.model, res.weights, cfg.seed, &res.adam, cfg.echo());
    save();
    return res;
}

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

/// Clamped super-resolution of a whole image, without recording a graph.
inline data::ImageBuf super_resolve(const data::ImageBuf& lr, const ModelConfig& cfg, const ModelWeights& w) {
    NoGradGuard guard;
    return data::ImageBuf::from_tensor(arch::model_forward(lr.tensor(), cfg, w, {.clamp_output = true}));
}

}  // namespace tamamba::train
