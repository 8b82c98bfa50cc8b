#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "tamamba/data.hpp"
#include "test_support.hpp"

using namespace tamamba;
using namespace tamamba::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tamamba_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ImageBuf random_image8(std::size_t w, std::size_t h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ImageBuf img{w, h, std::vector<real>(3 * w * h)};
    for (auto& v : img.pixels) v = real(rng() % 256) / 255;
    return img;
}

void write_raw_png(const fs::path& p, std::uint32_t format, std::size_t w, std::size_t h, const void* data) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    ASSERT_TRUE(png_image_write_to_file(&image, p.c_str(), 0, data, 0, nullptr)) << image.message;
}

}  // namespace

TEST(Png, RoundTripPreservesEveryByte) {
    TempDir dir;
    const auto img = random_image8(13, 7, 1);
    png_write(dir.path / "a.png", img);
    const auto back = png_read(dir.path / "a.png");
    ASSERT_EQ(back.width, 13u);
    ASSERT_EQ(back.height, 7u);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_EQ(quantize8(back.pixels[i]), quantize8(img.pixels[i]));
    EXPECT_EQ(back, img);
    EXPECT_FALSE(fs::exists(dir.path / "a.png.tmp"));
}

TEST(Png, GrayscaleIsReplicated) {
    TempDir dir;
    const std::vector<std::uint8_t> gray{0, 64, 128, 255, 7, 9};
    write_raw_png(dir.path / "g.png", PNG_FORMAT_GRAY, 3, 2, gray.data());
    const auto img = png_read(dir.path / "g.png");
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(quantize8(img.at(c, i / 3, i % 3)), gray[i]);
}

TEST(Png, SixteenBitAndMissingFilesAreRejected) {
    TempDir dir;
    const std::vector<std::uint16_t> deep(3 * 4, 1000);
    write_raw_png(dir.path / "d.png", PNG_FORMAT_LINEAR_RGB, 2, 2, deep.data());
    EXPECT_THROW(png_read(dir.path / "d.png"), FormatError);
    EXPECT_THROW(png_read(dir.path / "nope.png"), IoError);
    std::ofstream(dir.path / "junk.png") << "not a png";
    EXPECT_THROW(png_read(dir.path / "junk.png"), IoError);
}

TEST(Bicubic, KernelValues) {
    EXPECT_EQ(cubic_kernel(0), 1);
    EXPECT_EQ(cubic_kernel(1), 0);
    EXPECT_EQ(cubic_kernel(2), 0);
    EXPECT_DOUBLE_EQ(cubic_kernel(0.5), 0.5625);    // (1.5)/8 - (2.5)/4 + 1
    EXPECT_DOUBLE_EQ(cubic_kernel(-1.5), -0.0625);  // -0.5*3.375 + 2.5*2.25 - 6 + 2
}

TEST(Bicubic, ConstantStaysConstantAndUnitScaleIsIdentity) {
    const auto c = Tensor::full({3, 9, 7}, 0.37);
    for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{18, 14}, {3, 2}, {4, 11}, {27, 21}}) {
        for (real v : bicubic_resize(c, h, w).values()) EXPECT_NEAR(v, 0.37, 1e-14);
    }
    std::mt19937_64 rng(2);
    const auto img = tamamba::testing::random_tensor({3, 9, 7}, rng, 0, 1);
    const auto same = bicubic_resize(img, 9, 7);
    EXPECT_LT(tamamba::testing::max_abs_diff(same.data(), img.data()), 1e-12);
}

TEST(Bicubic, WeightsPartitionUnity) {
    for (auto [in, out] : std::vector<std::pair<std::size_t, std::size_t>>{{8, 4}, {16, 48}, {5, 3}, {7, 7}, {30, 10}}) {
        const auto aw = axis_weights(in, out);
        for (const auto& w : aw.weights) {
            double s = 0;
            for (double x : w) s += x;
            EXPECT_NEAR(s, 1.0, 1e-14);
        }
    }
}

TEST(Bicubic, RampDownsampleMatchesDirectKernelSum) {
    // 8x8 ramp, halved: every output is a normalized 2-D kernel-weighted sum
    // over all source pixels, reflected at the borders, evaluated directly.
    std::vector<real> v(8 * 8);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) v[y * 8 + x] = real(0.1 * double(y) + 0.03 * double(x));
    const auto out = bicubic_resize(Tensor::from({1, 8, 8}, v), 4, 4);
    auto mirror = [](long i) {
        while (i < 0 || i > 7) i = i < 0 ? -i : 14 - i;
        return i;
    };
    for (std::size_t oy = 0; oy < 4; ++oy)
        for (std::size_t ox = 0; ox < 4; ++ox) {
            const double uy = 2.0 * double(oy) + 0.5, ux = 2.0 * double(ox) + 0.5;
            double num = 0, den = 0;
            for (long j = -8; j < 16; ++j)
                for (long i = -8; i < 16; ++i) {
                    const double k = cubic_kernel((uy - double(j)) / 2) * cubic_kernel((ux - double(i)) / 2);
                    num += k * v[mirror(j) * 8 + mirror(i)];
                    den += k;
                }
            EXPECT_LT(std::abs(out[oy * 4 + ox] - num / den), 1e-10);
        }
}

TEST(Synth, DeterministicAndSpansThreeDecades) {
    const auto a = synth_textures(5, 6, 48), b = synth_textures(5, 6, 48);
    ASSERT_EQ(a.size(), 6u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
    EXPECT_NE(synth_textures(6, 6, 48)[0], a[0]);
    EXPECT_GE(variance_span(a), 1000.0);
    for (const auto& img : a)
        for (real v : img.pixels) {
            EXPECT_GE(v, 0);
            EXPECT_LE(v, 1);
            EXPECT_EQ(v, real(quantize8(v)) / 255);  // 8-bit exact
        }
    EXPECT_TRUE(synth_textures(1, 0, 32).empty());
    EXPECT_THROW(synth_textures(1, 1, 30), ArgumentError);
}

TEST(Dihedral, EightDistinctElements) {
    std::vector<real> v(9);
    for (std::size_t i = 0; i < 9; ++i) v[i] = real(i);
    const auto x = Tensor::from({1, 3, 3}, v);
    std::set<std::vector<real>> seen;
    for (unsigned t = 0; t < 8; ++t) seen.insert(dihedral(x, t).values());
    EXPECT_EQ(seen.size(), 8u);
    EXPECT_EQ(dihedral(x, 0).values(), v);
    // four quarter turns return to the start
    auto r = x;
    for (int i = 0; i < 4; ++i) r = dihedral(r, 2);
    EXPECT_EQ(r.values(), v);
}

TEST(CropAugment, SeededIdentityAndErrors) {
    const auto hr = random_image8(24, 16, 3);
    const auto pair = make_pair("x", hr, 2);
    const auto a = crop_augment(pair, 8, std::uint64_t{77}), b = crop_augment(pair, 8, std::uint64_t{77});
    EXPECT_EQ(a.hr.values(), b.hr.values());
    EXPECT_EQ(a.lr.values(), b.lr.values());
    EXPECT_EQ(a.transform, b.transform);

    std::mt19937_64 rng(4);
    const auto plain = crop_augment(pair, 8, rng, false);
    EXPECT_EQ(plain.transform, 0u);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x)
                EXPECT_EQ(plain.hr[(c * 8 + y) * 8 + x], hr.at(c, plain.lr_y * 2 + y, plain.lr_x * 2 + x));
    EXPECT_THROW(crop_augment(pair, 7, rng), ArgumentError);
    EXPECT_THROW(crop_augment(pair, 20, rng), ArgumentError);
}

TEST(CropAugment, HrAndLrStayAlignedUnderEveryTransform) {
    // Coordinate-encoded pair: LR pixel (Y, X) stores (Y, X); HR pixel
    // (y, x) stores the coordinates of its LR parent (y/s, x/s).
    const std::size_t s = 2, lh = 12, lw = 10;
    SrPair pair{"coords", {lw * s, lh * s, std::vector<real>(3 * lw * lh * s * s)}, {lw, lh, std::vector<real>(3 * lw * lh)}, s};
    for (std::size_t y = 0; y < lh; ++y)
        for (std::size_t x = 0; x < lw; ++x) {
            pair.lr.at(0, y, x) = real(y) / 64;
            pair.lr.at(1, y, x) = real(x) / 64;
        }
    for (std::size_t y = 0; y < lh * s; ++y)
        for (std::size_t x = 0; x < lw * s; ++x) {
            pair.hr.at(0, y, x) = real(y / s) / 64;
            pair.hr.at(1, y, x) = real(x / s) / 64;
        }
    std::mt19937_64 rng(5);
    std::set<unsigned> transforms;
    for (int trial = 0; trial < 64; ++trial) {
        const auto c = crop_augment(pair, 8, rng);
        transforms.insert(c.transform);
        for (std::size_t ch = 0; ch < 2; ++ch)
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x)
                    ASSERT_EQ(c.hr[(ch * 8 + y) * 8 + x], c.lr[(ch * 4 + y / s) * 4 + x / s]) << c.transform;
    }
    EXPECT_EQ(transforms.size(), 8u);
}

TEST(Dataset, DirectoryLayoutAndManifest) {
    TempDir dir;
    const auto corpus = synth_textures(9, 3, 32);
    write_corpus(dir.path, corpus);
    auto pairs = load_dataset(dir.path, 2);
    ASSERT_EQ(pairs.size(), 3u);
    EXPECT_EQ(pairs[0].name, "000.png");
    EXPECT_EQ(pairs[0].hr, corpus[0]);
    EXPECT_EQ(pairs[0].lr, degrade(corpus[0], 2));
    EXPECT_EQ(pairs[0].lr.width, 16u);

    std::ifstream m(dir.path / "manifest.csv");
    std::string header, line;
    std::getline(m, header);
    EXPECT_EQ(header, "name,width,height,variance_mean");
    std::getline(m, line);
    EXPECT_EQ(line.rfind("000.png,32,32,", 0), 0u);

    // a provided LR image wins over synthesis
    const auto custom = random_image8(16, 16, 6);
    png_write(dir.path / "lr" / "001.png", custom);
    pairs = load_dataset(dir.path, 2);
    EXPECT_EQ(pairs[1].lr, custom);
    png_write(dir.path / "lr" / "002.png", random_image8(15, 16, 7));
    EXPECT_THROW(load_dataset(dir.path, 2), FormatError);

    EXPECT_THROW(load_dataset(dir.path / "missing", 2), IoError);
    fs::create_directories(dir.path / "empty" / "hr");
    EXPECT_THROW(load_dataset(dir.path / "empty", 2), IoError);
}

TEST(Dataset, DegradeIsClampedAndQuantized) {
    const auto hr = random_image8(16, 16, 8);
    const auto lr = degrade(hr, 2);
    for (real v : lr.pixels) {
        EXPECT_GE(v, 0);
        EXPECT_LE(v, 1);
        EXPECT_EQ(v, real(quantize8(v)) / 255);
    }
    EXPECT_THROW(degrade(random_image8(15, 16, 1), 2), ArgumentError);
}
