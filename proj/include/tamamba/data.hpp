#pragma once

// Image buffers and PNG I/O, bicubic resampling, the seeded synthetic
// texture corpus, aligned crop + dihedral augmentation, and the on-disk
// dataset layout (hr/*.png, optional lr/*.png).

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "tamamba/error.hpp"
#include "tamamba/ops.hpp"
#include "tamamba/tensor.hpp"
#include "tamamba/texture_plan.hpp"

namespace tamamba::data {

namespace fs = std::filesystem;

/// 3-channel image, planar CHW, values in [0,1].
struct ImageBuf {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<real> pixels;  // 3 * height * width

    real& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    real at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

    Tensor tensor() const { return Tensor::from({3, height, width}, pixels); }
    static ImageBuf from_tensor(const Tensor& t) {
        if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("ImageBuf expects [3,H,W], got " + to_string(t.shape()));
        return {t.dim(2), t.dim(1), t.values()};
    }
    bool operator==(const ImageBuf&) const = default;
};

inline std::uint8_t quantize8(real v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
}

/// Round-trips every value through 8 bits, as saving to PNG would.
inline ImageBuf quantized(ImageBuf img) {
    for (auto& v : img.pixels) v = static_cast<real>(quantize8(v) / 255.0);
    return img;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Runs `write(tmp)` and renames tmp over `path`, so a failed write never
/// leaves a truncated file behind.
inline void atomic_write(const fs::path& path, const std::function<void(const fs::path&)>& write) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    try {
        write(tmp);
        fs::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
    atomic_write(path, [&](const fs::path& tmp) {
        std::ofstream os(tmp, std::ios::binary);
        os << text;
        os.close();
        if (!os) throw IoError("cannot write " + tmp.string());
    });
}

/// 8-bit RGB or grayscale PNG -> ImageBuf. Grayscale is replicated to three
/// channels; alpha is composited over black by libpng.
inline ImageBuf png_read(const fs::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("cannot read PNG " + path.string() + ": " + image.message);
    }
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw FormatError("unsupported PNG bit depth (16-bit) in " + path.string());
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    ImageBuf img{image.width, image.height, std::vector<real>(3 * std::size_t(image.width) * image.height)};
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<real>(buf[(y * img.width + x) * 3 + c] / 255.0);
    return img;
}

inline void png_write(const fs::path& path, const ImageBuf& img) {
    if (img.width == 0 || img.height == 0 || img.pixels.size() != 3 * img.width * img.height) {
        throw ShapeError("png_write: malformed image");
    }
    std::vector<png_byte> buf(3 * img.width * img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) buf[(y * img.width + x) * 3 + c] = quantize8(img.at(c, y, x));
    atomic_write(path, [&](const fs::path& tmp) {
        png_image image{};
        image.version = PNG_IMAGE_VERSION;
        image.width = static_cast<png_uint_32>(img.width);
        image.height = static_cast<png_uint_32>(img.height);
        image.format = PNG_FORMAT_RGB;
        if (!png_image_write_to_file(&image, tmp.c_str(), 0, buf.data(), 0, nullptr)) {
            throw IoError("cannot write PNG " + path.string() + ": " + image.message);
        }
    });
}

// ---------------------------------------------------------------------------
// Bicubic resampling
// ---------------------------------------------------------------------------

inline constexpr double kCubicA = -0.5;

inline double cubic_kernel(double x) {
    const double a = kCubicA, t = std::abs(x);
    if (t <= 1) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
    if (t < 2) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
    return 0;
}

/// Source taps (reflect-resolved) and normalized weights for each output
/// sample along one axis. Downsampling widens the kernel by 1/scale.
struct AxisWeights {
    std::vector<std::vector<std::size_t>> taps;
    std::vector<std::vector<double>> weights;
};

inline AxisWeights axis_weights(std::size_t in, std::size_t out) {
    const double scale = double(out) / double(in);
    const double s = std::min(scale, 1.0);
    const double support = 2.0 / s;
    AxisWeights aw;
    for (std::size_t o = 0; o < out; ++o) {
        const double u = (double(o) + 0.5) / scale - 0.5;
        const auto lo = static_cast<std::ptrdiff_t>(std::floor(u - support));
        const auto hi = static_cast<std::ptrdiff_t>(std::ceil(u + support));
        std::vector<std::size_t> taps;
        std::vector<double> w;
        double total = 0;
        for (std::ptrdiff_t j = lo; j <= hi; ++j) {
            const double k = cubic_kernel((u - double(j)) * s) * s;
            if (k == 0) continue;
            taps.push_back(reflect_index(j, in));
            w.push_back(k);
            total += k;
        }
        for (auto& x : w) x /= total;
        aw.taps.push_back(std::move(taps));
        aw.weights.push_back(std::move(w));
    }
    return aw;
}

/// Separable Catmull-Rom resize of a [C,H,W] tensor. Values are not clamped.
inline Tensor bicubic_resize(const Tensor& img, std::size_t out_h, std::size_t out_w) {
    if (img.rank() != 3) throw ShapeError("bicubic_resize expects [C,H,W]");
    if (out_h == 0 || out_w == 0) throw ArgumentError("bicubic_resize: zero output extent");
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const auto ax = axis_weights(w, out_w), ay = axis_weights(h, out_h);
    const auto v = img.data();
    std::vector<double> rows(c * h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < out_w; ++x) {
                double s = 0;
                for (std::size_t k = 0; k < ax.taps[x].size(); ++k) s += ax.weights[x][k] * v[(ch * h + y) * w + ax.taps[x][k]];
                rows[(ch * h + y) * out_w + x] = s;
            }
    std::vector<real> out(c * out_h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t x = 0; x < out_w; ++x) {
                double s = 0;
                for (std::size_t k = 0; k < ay.taps[y].size(); ++k) s += ay.weights[y][k] * rows[(ch * h + ay.taps[y][k]) * out_w + x];
                out[(ch * out_h + y) * out_w + x] = static_cast<real>(s);
            }
    return Tensor::from({c, out_h, out_w}, std::move(out));
}

inline ImageBuf bicubic_resize(const ImageBuf& img, std::size_t out_h, std::size_t out_w) {
    return ImageBuf::from_tensor(bicubic_resize(img.tensor(), out_h, out_w));
}

/// Low-resolution counterpart: bicubic downscale, clamped and 8-bit quantized
/// exactly as if it had been saved to disk.
inline ImageBuf degrade(const ImageBuf& hr, std::size_t scale) {
    if (scale == 0 || hr.height % scale || hr.width % scale) {
        throw ArgumentError("degrade: image extents must be divisible by the scale");
    }
    return quantized(bicubic_resize(hr, hr.height / scale, hr.width / scale));
}

inline ImageBuf upscale_bicubic(const ImageBuf& lr, std::size_t scale) {
    ImageBuf up = bicubic_resize(lr, lr.height * scale, lr.width * scale);
    for (auto& v : up.pixels) v = std::clamp(v, real(0), real(1));
    return up;
}

// ---------------------------------------------------------------------------
// Synthetic texture corpus
// ---------------------------------------------------------------------------

/// Variances of all 8x8 RGB tiles.
inline std::vector<double> tile_variances(const ImageBuf& img, std::size_t tile = 8) {
    std::vector<double> out;
    std::vector<real> buf(3 * tile * tile);
    for (std::size_t y0 = 0; y0 + tile <= img.height; y0 += tile)
        for (std::size_t x0 = 0; x0 + tile <= img.width; x0 += tile) {
            std::size_t k = 0;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < tile; ++y)
                    for (std::size_t x = 0; x < tile; ++x) buf[k++] = img.at(c, y0 + y, x0 + x);
            out.push_back(texture::patch_variance(buf));
        }
    return out;
}

/// max / min over nonzero tile variances (0 when fewer than two are nonzero).
inline double variance_span(const std::vector<ImageBuf>& corpus) {
    double lo = INFINITY, hi = 0;
    for (const auto& img : corpus)
        for (double v : tile_variances(img))
            if (v > 1e-12) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    return hi > 0 && std::isfinite(lo) ? hi / lo : 0;
}

namespace detail {

enum class Fill { flat, gradient, noise, stripes, checker };

inline void paint_region(ImageBuf& img, std::size_t y0, std::size_t x0, std::size_t rh, std::size_t rw, Fill kind,
                         std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0, 1);
    auto log_uniform = [&](double lo, double hi) { return std::exp(std::log(lo) + u(rng) * (std::log(hi) - std::log(lo))); };
    std::array<double, 3> base{}, tint{};
    for (std::size_t c = 0; c < 3; ++c) {
        base[c] = 0.25 + 0.5 * u(rng);
        tint[c] = 0.6 + 0.4 * u(rng);
    }
    const double amp = log_uniform(0.01, 0.45);
    auto put = [&](std::size_t y, std::size_t x, double s) {
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y0 + y, x0 + x) = static_cast<real>(std::clamp(base[c] + amp * tint[c] * s, 0.0, 1.0));
    };
    switch (kind) {
        case Fill::flat:
            for (std::size_t y = 0; y < rh; ++y)
                for (std::size_t x = 0; x < rw; ++x) put(y, x, 0);
            break;
        case Fill::gradient: {
            const double gy = u(rng) - 0.5, gx = u(rng) - 0.5;
            for (std::size_t y = 0; y < rh; ++y)
                for (std::size_t x = 0; x < rw; ++x) put(y, x, 0.3 * (gy * double(y) / double(rh) + gx * double(x) / double(rw)));
            break;
        }
        case Fill::noise: {
            // band-limited: a handful of random plane waves
            struct Wave {
                double fy, fx, ph, a;
            };
            std::vector<Wave> waves(6);
            for (auto& w : waves) w = {u(rng) - 0.5, u(rng) - 0.5, 2 * std::numbers::pi * u(rng), 0.5 + u(rng)};
            double norm = 0;
            for (const auto& w : waves) norm += w.a;
            for (std::size_t y = 0; y < rh; ++y)
                for (std::size_t x = 0; x < rw; ++x) {
                    double s = 0;
                    for (const auto& w : waves) s += w.a * std::sin(2 * std::numbers::pi * (w.fy * double(y) + w.fx * double(x)) + w.ph);
                    put(y, x, s / norm * 2);
                }
            break;
        }
        case Fill::stripes: {
            const double theta = std::numbers::pi * u(rng), period = 2.5 + 8 * u(rng), ph = 2 * std::numbers::pi * u(rng);
            const double cy = std::sin(theta), cx = std::cos(theta);
            for (std::size_t y = 0; y < rh; ++y)
                for (std::size_t x = 0; x < rw; ++x)
                    put(y, x, std::sin(2 * std::numbers::pi * (cy * double(y) + cx * double(x)) / period + ph));
            break;
        }
        case Fill::checker: {
            const std::size_t cell = 1 + rng() % 4;
            for (std::size_t y = 0; y < rh; ++y)
                for (std::size_t x = 0; x < rw; ++x) put(y, x, ((y / cell + x / cell) % 2) ? 1.0 : -1.0);
            break;
        }
    }
}

inline ImageBuf synth_image(std::mt19937_64& rng, std::size_t extent) {
    ImageBuf img{extent, extent, std::vector<real>(3 * extent * extent)};
    // Recursive axis-aligned splits on the 8-pixel lattice; each leaf gets one fill.
    std::function<void(std::size_t, std::size_t, std::size_t, std::size_t, int)> split =
        [&](std::size_t y0, std::size_t x0, std::size_t h, std::size_t w, int depth) {
            const bool can_split = (h >= 16 || w >= 16) && depth < 4;
            if (can_split && (depth < 1 || rng() % 3 != 0)) {
                if ((h >= w && h >= 16) || w < 16) {
                    const std::size_t cut = 8 * (1 + rng() % (h / 8 - 1));
                    split(y0, x0, cut, w, depth + 1);
                    split(y0 + cut, x0, h - cut, w, depth + 1);
                } else {
                    const std::size_t cut = 8 * (1 + rng() % (w / 8 - 1));
                    split(y0, x0, h, cut, depth + 1);
                    split(y0, x0 + cut, h, w - cut, depth + 1);
                }
                return;
            }
            paint_region(img, y0, x0, h, w, static_cast<Fill>(rng() % 5), rng);
        };
    split(0, 0, extent, extent, 0);
    return quantized(std::move(img));
}

}  // namespace detail

inline constexpr double kMinVarianceSpan = 1000.0;

/// Deterministic corpus of `count` extent x extent images mixing flat areas,
/// gradients, band-limited noise, oriented stripes and checkerboards. Images
/// are regenerated from the next sub-seed until the corpus tile-variance
/// spectrum spans at least three orders of magnitude.
inline std::vector<ImageBuf> synth_textures(std::uint64_t seed, std::size_t count, std::size_t extent) {
    if (extent == 0 || extent % 8) throw ArgumentError("synth_textures: extent must be a positive multiple of 8");
    std::vector<ImageBuf> out;
    if (count == 0) return out;
    for (std::uint64_t attempt = 0;; ++attempt) {
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + attempt);
        out.clear();
        for (std::size_t i = 0; i < count; ++i) out.push_back(detail::synth_image(rng, extent));
        if (variance_span(out) >= kMinVarianceSpan || attempt >= 64) return out;
    }
}

// ---------------------------------------------------------------------------
// Pairs, crops, augmentation
// ---------------------------------------------------------------------------

struct SrPair {
    std::string name;
    ImageBuf hr;
    ImageBuf lr;
    std::size_t scale = 1;
};

/// Crops the HR image down to a multiple of the scale and synthesizes its LR.
inline SrPair make_pair(std::string name, const ImageBuf& hr, std::size_t scale) {
    if (scale == 0) throw ArgumentError("make_pair: zero scale");
    const std::size_t h = hr.height / scale * scale, w = hr.width / scale * scale;
    if (h == 0 || w == 0) throw ArgumentError("image " + name + " is smaller than the scale factor");
    ImageBuf cropped = ImageBuf::from_tensor(crop_tl(hr.tensor(), h, w));
    ImageBuf lr = degrade(cropped, scale);
    return {std::move(name), std::move(cropped), std::move(lr), scale};
}

/// Dihedral element t in 0..7 applied to a square [C,P,P] tensor:
/// bits 1-2 give the number of quarter turns, bit 0 a horizontal flip of the
/// source before turning.
inline Tensor dihedral(const Tensor& x, unsigned t) {
    if (x.rank() != 3 || x.dim(1) != x.dim(2)) throw ShapeError("dihedral expects a square [C,P,P] tensor");
    const std::size_t c = x.dim(0), p = x.dim(1);
    std::vector<std::size_t> src(c * p * p);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < p; ++y)
            for (std::size_t xx = 0; xx < p; ++xx) {
                // map output (y, xx) back to its source coordinate
                std::size_t sy = y, sx = xx;
                for (unsigned r = 0; r < ((t >> 1) & 3); ++r) {
                    const std::size_t ny = sx, nx = p - 1 - sy;  // one counter-clockwise quarter turn
                    sy = ny;
                    sx = nx;
                }
                if (t & 1) sx = p - 1 - sx;
                src[(ch * p + y) * p + xx] = (ch * p + sy) * p + sx;
            }
    return gather(x, x.shape(), std::move(src), "dihedral");
}

struct Crop {
    Tensor hr;  // [3, patch, patch]
    Tensor lr;  // [3, patch/scale, patch/scale]
    std::size_t lr_y = 0, lr_x = 0;
    unsigned transform = 0;
};

/// Aligned random crop (HR patch, LR patch = patch / scale) plus one of the
/// eight dihedral transforms, all drawn from `rng`.
inline Crop crop_augment(const SrPair& pair, std::size_t patch, std::mt19937_64& rng, bool augment = true) {
    const std::size_t s = pair.scale;
    if (patch == 0 || patch % s) throw ArgumentError("crop_augment: patch must be a positive multiple of the scale");
    const std::size_t lp = patch / s;
    if (lp > pair.lr.height || lp > pair.lr.width) throw ArgumentError("crop_augment: crop larger than image " + pair.name);
    Crop c;
    c.lr_y = std::uniform_int_distribution<std::size_t>(0, pair.lr.height - lp)(rng);
    c.lr_x = std::uniform_int_distribution<std::size_t>(0, pair.lr.width - lp)(rng);
    c.transform = augment ? static_cast<unsigned>(rng() % 8) : 0;
    auto cut = [](const ImageBuf& img, std::size_t y0, std::size_t x0, std::size_t n) {
        std::vector<real> v(3 * n * n);
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x) v[(ch * n + y) * n + x] = img.at(ch, y0 + y, x0 + x);
        return Tensor::from({3, n, n}, std::move(v));
    };
    c.hr = dihedral(cut(pair.hr, c.lr_y * s, c.lr_x * s, patch), c.transform);
    c.lr = dihedral(cut(pair.lr, c.lr_y, c.lr_x, lp), c.transform);
    return c;
}

inline Crop crop_augment(const SrPair& pair, std::size_t patch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return crop_augment(pair, patch, rng);
}

// ---------------------------------------------------------------------------
// Dataset directories
// ---------------------------------------------------------------------------

inline std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// Loads DIR/hr/*.png (sorted by file name). A same-named DIR/lr/*.png is
/// used when present and correctly sized; otherwise LR is synthesized.
inline std::vector<SrPair> load_dataset(const fs::path& dir, std::size_t scale) {
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
    const auto files = list_pngs(dir / "hr");
    if (files.empty()) throw IoError("no PNG images in " + (dir / "hr").string());
    std::vector<SrPair> out;
    for (const auto& f : files) {
        SrPair p = make_pair(f.filename().string(), png_read(f), scale);
        const fs::path lr_path = dir / "lr" / f.filename();
        if (fs::exists(lr_path)) {
            ImageBuf lr = png_read(lr_path);
            if (lr.width != p.hr.width / scale || lr.height != p.hr.height / scale) {
                throw FormatError("LR image " + lr_path.string() + " is not HR/" + std::to_string(scale));
            }
            p.lr = std::move(lr);
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline double mean_tile_variance(const ImageBuf& img) {
    const auto v = tile_variances(img);
    if (v.empty()) return 0;
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
}

/// Writes DIR/hr/NNN.png for every image plus DIR/manifest.csv.
inline void write_corpus(const fs::path& dir, const std::vector<ImageBuf>& images) {
    std::string manifest = "name,width,height,variance_mean\n";
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%03zu.png", i);
        png_write(dir / "hr" / name, images[i]);
        char line[128];
        std::snprintf(line, sizeof line, "%s,%zu,%zu,%.9g\n", name, images[i].width, images[i].height,
                      mean_tile_variance(images[i]));
        manifest += line;
    }
    write_text_atomic(dir / "manifest.csv", manifest);
}

}  // namespace tamamba::data
