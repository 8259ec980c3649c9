#pragma once

// Flat experiment configuration.
//
// Grammar, one entry per line:
//   line    := blank | comment | entry
//   comment := '#' anything            (also allowed after an entry)
//   entry   := key '=' value
// Keys are fixed (see config_keys()); unknown or repeated keys are errors.
// Values are typed: unsigned integers, reals, booleans (true/false), and
// comma-separated lists of unsigned integers. Omitted keys keep their defaults.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dnl/data.hpp"
#include "dnl/network.hpp"

namespace dnl {

struct TrainConfig {
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double power = 0.9;
    std::size_t batch_size = 4;
    std::size_t epochs = 30;
    std::size_t max_iter = 0;  // 0: epochs · ceil(samples / batch_size)
    std::size_t crop_h = 64;
    std::size_t crop_w = 64;
    bool augment = true;
    bool hflip = true;
    double scale_min = 0.5;
    double scale_max = 2.0;
    std::size_t checkpoint_every = 0;  // 0: final checkpoint only
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
};

struct ExperimentConfig {
    NetConfig net;
    ShapesSpec data;
    TrainConfig train;

    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string type;  // "uint", "real", "bool", "uint-list"
};

const std::vector<ConfigKey>& config_keys();

// Parses text on top of the defaults in `base` and validates the result.
ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Sets one key from its textual value (same typing rules as the file format).
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Every key in schema order, defaults materialized, shortest round-trip numbers.
std::string format_config(const ExperimentConfig& cfg);

// 64-bit FNV-1a of the given bytes, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& bytes);
inline std::string config_hash(const ExperimentConfig& cfg) { return fnv1a_hex(format_config(cfg)); }

}  // namespace dnl
