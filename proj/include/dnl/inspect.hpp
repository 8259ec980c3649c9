#pragma once

// Attention-map extraction for one query pixel, file export, and the
// region-mass statistic used to judge denoising.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dnl/data.hpp"
#include "dnl/network.hpp"

namespace dnl {

struct AttentionDump {
    std::size_t grid_h = 0, grid_w = 0;  // stride-16 grid
    std::size_t query = 0;               // flat grid index of the query
    std::vector<Scalar> map1, map2, map3;  // rows of A, A', A'' reshaped to grid_h×grid_w
};

// Runs the model in inference mode on one sample and extracts the attention
// rows of the query at input pixel (x, y), which is floor-divided by 16.
// Throws UsageError when the pixel lies outside the image.
AttentionDump dump_attention(const ModelParams& params, const NetConfig& cfg, const SegSample& sample,
                             std::size_t x, std::size_t y);

// map1.pgm, map2.pgm, map3.pgm (min-max normalized) and map1.dnlt … map3.dnlt.
void write_attention_dump(const std::filesystem::path& dir, const AttentionDump& dump);

// Label of each stride-sized cell, taken at the cell's centre pixel.
std::vector<std::uint8_t> grid_labels(const SegSample& sample, std::size_t stride);

// Share of the row's attention mass on cells labelled `cls`. Returns 0 for a row
// with no mass.
double region_mass_fraction(std::span<const Scalar> row, std::span<const std::uint8_t> grid, std::uint8_t cls);

}  // namespace dnl
