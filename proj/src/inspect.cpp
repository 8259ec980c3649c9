#include "dnl/inspect.hpp"

#include <string>

#include "dnl/errors.hpp"
#include "dnl/serialize.hpp"

namespace dnl {

namespace {

std::vector<Scalar> row_of(const Tensor& m, std::size_t q) {
    const std::size_t n = m.dim(1);
    auto d = m.data().subspan(q * n, n);
    return {d.begin(), d.end()};
}

}  // namespace

AttentionDump dump_attention(const ModelParams& params, const NetConfig& cfg, const SegSample& sample,
                             std::size_t x, std::size_t y) {
    if (!cfg.use_attention) throw ConfigError("dump_attention: the model has no attention block");
    if (x >= sample.width || y >= sample.height) {
        throw UsageError("pixel (" + std::to_string(x) + "," + std::to_string(y) + ") lies outside the " +
                         std::to_string(sample.width) + "×" + std::to_string(sample.height) + " image");
    }
    NoGradGuard no_grad;
    const auto out = model_forward(sample.image, params, cfg);
    const auto& st = out.states.at(0);
    AttentionDump d;
    d.grid_h = sample.height / 16;
    d.grid_w = sample.width / 16;
    const std::size_t gx = x / 16, gy = y / 16;
    if (gx >= d.grid_w || gy >= d.grid_h) throw UsageError("pixel lies outside the stride-16 grid");
    d.query = gy * d.grid_w + gx;
    d.map1 = row_of(st.A, d.query);
    d.map2 = row_of(st.A_prime, d.query);
    d.map3 = row_of(st.A_dprime, d.query);
    return d;
}

void write_attention_dump(const std::filesystem::path& dir, const AttentionDump& dump) {
    std::filesystem::create_directories(dir);
    const std::vector<Scalar>* maps[] = {&dump.map1, &dump.map2, &dump.map3};
    for (int i = 0; i < 3; ++i) {
        const std::string stem = "map" + std::to_string(i + 1);
        write_pgm(dir / (stem + ".pgm"), *maps[i], dump.grid_h, dump.grid_w);
        save_tensor(dir / (stem + ".dnlt"), Tensor::from({dump.grid_h, dump.grid_w}, *maps[i]));
    }
}

std::vector<std::uint8_t> grid_labels(const SegSample& sample, std::size_t stride) {
    const std::size_t gh = sample.height / stride, gw = sample.width / stride;
    std::vector<std::uint8_t> out(gh * gw);
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
            out[gy * gw + gx] = sample.labels[(gy * stride + stride / 2) * sample.width + gx * stride + stride / 2];
    return out;
}

double region_mass_fraction(std::span<const Scalar> row, std::span<const std::uint8_t> grid, std::uint8_t cls) {
    if (row.size() != grid.size()) throw DimensionError("region_mass_fraction: row and grid sizes differ");
    double inside = 0, total = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        total += row[j];
        if (grid[j] == cls) inside += row[j];
    }
    return total > 0 ? inside / total : 0.0;
}

}  // namespace dnl
