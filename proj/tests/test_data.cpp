#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "dnl/data.hpp"
#include "dnl/errors.hpp"

using namespace dnl;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("dnl_test_data_" + name);
}

bool same_sample(const SegSample& a, const SegSample& b) {
    return a.id == b.id && a.labels == b.labels && a.image.shape() == b.image.shape() &&
           std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin());
}

std::size_t count_label(const SegSample& s, std::uint8_t cls) {
    return static_cast<std::size_t>(std::count(s.labels.begin(), s.labels.end(), cls));
}

}  // namespace

TEST(Shapes, ClassKinds) {
    EXPECT_EQ(class_kind(0), ShapeKind::Background);
    EXPECT_EQ(class_kind(1), ShapeKind::Rectangle);
    EXPECT_EQ(class_kind(2), ShapeKind::Disk);
    EXPECT_EQ(class_kind(3), ShapeKind::Ring);
    EXPECT_EQ(class_kind(4), ShapeKind::Stripe);
    EXPECT_EQ(class_kind(5), ShapeKind::Rectangle);
    EXPECT_STREQ(kind_name(ShapeKind::Disk), "disk");
}

TEST(Shapes, DiskIsRoundAndColoursSeparateForeground) {
    ShapesSpec spec;
    spec.num_classes = 3;
    spec.count_min = {0, 1};
    spec.count_max = {0, 1};
    spec.noise_sigma = 0;
    spec.seed = 3;
    std::size_t checked = 0;
    for (const auto& s : generate(spec, 40)) {
        const std::size_t hw = s.height * s.width;
        for (std::size_t p = 0; p < hw; ++p) {
            const double peak = std::max({s.image.data()[p], s.image.data()[hw + p], s.image.data()[2 * hw + p]});
            EXPECT_EQ(s.labels[p] != 0, peak >= 0.5);
        }
        double cx = 0, cy = 0, n = 0;
        bool touches = false;
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x)
                if (s.labels[y * s.width + x] == 2) {
                    cx += x + 0.5;
                    cy += y + 0.5;
                    n += 1;
                    touches = touches || x == 0 || y == 0 || x + 1 == s.width || y + 1 == s.height;
                }
        if (touches || n < 10) continue;
        cx /= n;
        cy /= n;
        double r = 0;
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x)
                if (s.labels[y * s.width + x] == 2) r = std::max(r, std::hypot(x + 0.5 - cx, y + 0.5 - cy));
        EXPECT_GT(n / (std::numbers::pi * r * r), 0.8) << s.id;
        ++checked;
    }
    EXPECT_GT(checked, 5u);
}

TEST(Shapes, GenerationIsDeterministicAndIndexed) {
    ShapesSpec spec;
    spec.seed = 9;
    const auto a = generate(spec, 6), b = generate(spec, 6), tail = generate(spec, 2, 4);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_sample(a[i], b[i]));
    EXPECT_TRUE(same_sample(a[4], tail[0]));
    EXPECT_TRUE(same_sample(a[5], tail[1]));
    EXPECT_EQ(a[5].id, "shape-9-5");
    spec.seed = 10;
    EXPECT_FALSE(same_sample(a[0], generate(spec, 1)[0]));
    EXPECT_THROW(generate(spec, 0), UsageError);
}

TEST(Shapes, EveryClassAppearsOverManySamples) {
    ShapesSpec spec;
    spec.height = spec.width = 32;
    spec.seed = 1;
    const auto samples = generate(spec, 1000);
    const auto presence = class_presence(samples, 4);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_GT(presence[c], 300u) << c;
    const auto census = class_census(samples, 4);
    std::uint64_t total = 0;
    for (auto v : census) total += v;
    EXPECT_EQ(total, 1000u * 32 * 32);
}

TEST(Shapes, CountRangesAreRespected) {
    ShapesSpec spec;
    spec.count_min = {1, 0, 0};
    spec.count_max = {1, 0, 0};
    spec.seed = 2;
    for (const auto& s : generate(spec, 20)) {
        EXPECT_EQ(count_label(s, 2), 0u);
        EXPECT_EQ(count_label(s, 3), 0u);
    }
}

TEST(Shapes, SpecValidation) {
    ShapesSpec spec;
    spec.num_classes = 6;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec.texture = true;
    EXPECT_NO_THROW(spec.validate());
    spec.num_classes = 1;
    EXPECT_THROW(spec.validate(), ConfigError);
    spec.num_classes = 4;
    spec.count_min = {0, 0};
    EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Transforms, FlipTwiceIsIdentity) {
    ShapesSpec spec;
    spec.seed = 4;
    const auto s = generate(spec, 1)[0];
    const auto f = hflip(s);
    EXPECT_FALSE(same_sample(s, f));
    EXPECT_EQ(f.labels[0], s.labels[s.width - 1]);
    EXPECT_TRUE(same_sample(s, hflip(f)));
}

TEST(Transforms, RescaleIdentityAndArea) {
    ShapesSpec spec;
    spec.seed = 5;
    spec.count_min = {1};
    const auto samples = generate(spec, 8);
    for (const auto& s : samples) {
        EXPECT_TRUE(same_sample(s, rescale(s, 1.0)));
        const auto big = rescale(s, 2.0);
        EXPECT_EQ(big.height, 2 * s.height);
        EXPECT_EQ(big.width, 2 * s.width);
        for (std::uint8_t c = 1; c < 4; ++c) {
            const double before = static_cast<double>(count_label(s, c));
            if (before < 50) continue;
            EXPECT_NEAR(count_label(big, c) / (4 * before), 1.0, 0.05);
        }
        const auto small = rescale(s, 0.5);
        EXPECT_EQ(small.height, s.height / 2);
        for (auto v : small.image.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    EXPECT_THROW(rescale(samples[0], 0.0), ConfigError);
}

TEST(Transforms, CropPadsWithIgnore) {
    ShapesSpec spec;
    spec.height = spec.width = 32;
    const auto s = generate(spec, 1)[0];
    const auto c = crop(s, 16, 16, 32, 32);
    EXPECT_EQ(c.height, 32u);
    EXPECT_EQ(c.labels[0], s.labels[16 * 32 + 16]);
    EXPECT_EQ(c.labels[31 * 32 + 31], kIgnoreLabel);
    EXPECT_EQ(c.image.at({0, 31, 31}), 0.0);
}

TEST(Transforms, AugmentKeepsLabelSetAndCropSize) {
    ShapesSpec spec;
    spec.seed = 6;
    AugmentSpec aug;
    aug.crop_h = aug.crop_w = 48;
    Pcg32 rng(6, 0);
    for (const auto& s : generate(spec, 20)) {
        const auto a = augment(s, aug, rng);
        EXPECT_EQ(a.height, 48u);
        EXPECT_EQ(a.width, 48u);
        EXPECT_EQ(a.image.shape(), (Shape{3, 48, 48}));
        std::set<std::uint8_t> src(s.labels.begin(), s.labels.end());
        src.insert(kIgnoreLabel);
        for (auto l : a.labels) EXPECT_TRUE(src.count(l)) << int(l);
    }
}

TEST(Format, DatasetRoundTrip) {
    Dataset ds;
    ds.spec.seed = 7;
    ds.spec.texture = true;
    ds.spec.count_min = {0, 1, 0};
    ds.spec.count_max = {2, 1, 1};
    ds.samples = generate(ds.spec, 5);
    const auto path = temp_path("roundtrip.dnld");
    save_dataset(path, ds);
    const auto back = load_dataset(path);
    EXPECT_EQ(back.spec.seed, 7u);
    EXPECT_TRUE(back.spec.texture);
    EXPECT_EQ(back.spec.count_min, ds.spec.count_min);
    EXPECT_EQ(back.spec.count_max, ds.spec.count_max);
    ASSERT_EQ(back.samples.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_TRUE(same_sample(back.samples[i], ds.samples[i]));
    EXPECT_NO_THROW(load_dataset(path, 4));
    EXPECT_THROW(load_dataset(path, 5), ConfigError);

    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 100);
    EXPECT_THROW(load_dataset(path), Error);
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << "XXXXjunkjunkjunk";
    }
    EXPECT_THROW(load_dataset(path), Error);
    std::filesystem::remove(path);
    EXPECT_THROW(load_dataset(path), Error);
}

TEST(Format, ImageExports) {
    ShapesSpec spec;
    spec.height = spec.width = 16;
    const auto s = generate(spec, 1)[0];
    const auto ppm = temp_path("img.ppm"), pgm = temp_path("map.pgm"), lab = temp_path("lab.pgm");
    write_ppm(ppm, s.image);
    std::vector<Scalar> ramp(16 * 16);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<Scalar>(i);
    write_pgm(pgm, ramp, 16, 16);
    write_label_pgm(lab, s.labels, 16, 16, 4);
    EXPECT_EQ(std::filesystem::file_size(ppm), std::string("P6\n16 16\n255\n").size() + 3 * 256);
    std::ifstream is(pgm, std::ios::binary);
    std::string magic;
    std::size_t w = 0, h = 0, maxv = 0;
    is >> magic >> w >> h >> maxv;
    is.get();
    std::vector<unsigned char> px(256);
    is.read(reinterpret_cast<char*>(px.data()), 256);
    EXPECT_EQ(magic, "P5");
    EXPECT_EQ(px.front(), 0);
    EXPECT_EQ(px.back(), 255);
    for (const auto& p : {ppm, pgm, lab}) std::filesystem::remove(p);
}
