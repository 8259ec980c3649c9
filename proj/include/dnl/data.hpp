#pragma once

// Synthetic shape-segmentation data: rendering, augmentation, on-disk format
// and PPM/PGM export.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dnl/random.hpp"
#include "dnl/tensor.hpp"

namespace dnl {

inline constexpr std::uint8_t kIgnoreLabel = 255;

enum class ShapeKind { Background, Rectangle, Disk, Ring, Stripe };

// Class 0 is background; class c ≥ 1 is drawn as kind ((c − 1) mod 4) + 1.
ShapeKind class_kind(std::size_t cls);
const char* kind_name(ShapeKind kind);

struct ShapesSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t num_classes = 4;
    // Instances per foreground class, inclusive range. One entry applies to every
    // foreground class; otherwise one entry per foreground class.
    std::vector<std::size_t> count_min{0};
    std::vector<std::size_t> count_max{2};
    double size_min = 0.12;  // shape radius / half-extent as a fraction of min(H, W)
    double size_max = 0.30;
    double noise_sigma = 0.05;
    bool texture = false;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
    std::size_t min_count(std::size_t cls) const;
    std::size_t max_count(std::size_t cls) const;
};

struct SegSample {
    Tensor image;                     // 3×H×W in [0, 1]
    std::vector<std::uint8_t> labels;  // H·W, row-major
    std::size_t height = 0;
    std::size_t width = 0;
    std::string id;
};

// Renders samples first_index … first_index + n − 1. Sample i depends only on
// (spec, i): its generator is Pcg32(spec.seed, i).
std::vector<SegSample> generate(const ShapesSpec& spec, std::size_t n, std::size_t first_index = 0);

// Deterministic transforms. Images use bilinear resampling, labels nearest.
SegSample hflip(const SegSample& s);
SegSample rescale(const SegSample& s, double factor);
// Window of h×w starting at (top, left); cells outside the source become zero
// pixels with the ignore label.
SegSample crop(const SegSample& s, std::size_t top, std::size_t left, std::size_t h, std::size_t w);

struct AugmentSpec {
    bool hflip = true;
    double scale_min = 0.5;
    double scale_max = 2.0;
    std::size_t crop_h = 64;
    std::size_t crop_w = 64;
};

// Random flip (p = 0.5), scale uniform in [scale_min, scale_max], then a random
// crop_h×crop_w window (padded when the scaled sample is smaller).
SegSample augment(const SegSample& s, const AugmentSpec& spec, Pcg32& rng);

// Pixel count per class over the given samples (ignore label excluded).
std::vector<std::uint64_t> class_census(std::span<const SegSample> samples, std::size_t num_classes);
// Number of samples in which each class appears at least once.
std::vector<std::uint64_t> class_presence(std::span<const SegSample> samples, std::size_t num_classes);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

struct Dataset {
    ShapesSpec spec;
    std::vector<SegSample> samples;
};

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);
// As above, but a class count other than expected_classes is a ConfigError.
Dataset load_dataset(const std::filesystem::path& path, std::size_t expected_classes);

// 8-bit exports. write_ppm clamps [0, 1] images; write_pgm min-max normalizes
// (a constant map becomes all zeros).
void write_ppm(const std::filesystem::path& path, const Tensor& image);
void write_pgm(const std::filesystem::path& path, std::span<const Scalar> values, std::size_t h, std::size_t w);
void write_label_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> labels, std::size_t h,
                     std::size_t w, std::size_t num_classes);

}  // namespace dnl
