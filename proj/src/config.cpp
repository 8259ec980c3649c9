#include "dnl/config.hpp"

#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "dnl/errors.hpp"

namespace dnl {

namespace {

struct Field {
    ConfigKey key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (v.empty() || ec != std::errc() || ptr != end) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    double out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (v.empty() || ec != std::errc() || ptr != end || !std::isfinite(out)) {
        throw ConfigError(key + ": expected a finite real number, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of integers");
    return out;
}

std::string real_str(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string list_str(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

template <typename Access>
Field uint_field(std::string name, Access access) {
    return {{name, "uint"},
            [name, access](ExperimentConfig& c, const std::string& v) {
                access(c) = static_cast<std::remove_reference_t<decltype(access(c))>>(parse_uint(name, v));
            },
            [access](const ExperimentConfig& c) {
                return std::to_string(access(c));
            }};
}

template <typename Access>
Field real_field(std::string name, Access access) {
    return {{name, "real"},
            [name, access](ExperimentConfig& c, const std::string& v) { access(c) = parse_real(name, v); },
            [access](const ExperimentConfig& c) { return real_str(access(c)); }};
}

template <typename Access>
Field bool_field(std::string name, Access access) {
    return {{name, "bool"},
            [name, access](ExperimentConfig& c, const std::string& v) { access(c) = parse_bool(name, v); },
            [access](const ExperimentConfig& c) {
                return std::string(access(c) ? "true" : "false");
            }};
}

template <typename Access>
Field list_field(std::string name, Access access) {
    return {{name, "uint-list"},
            [name, access](ExperimentConfig& c, const std::string& v) { access(c) = parse_list(name, v); },
            [access](const ExperimentConfig& c) { return list_str(access(c)); }};
}

#define DNL_ACCESS(member) [](auto& c) -> auto& { return c.member; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {{"num_classes", "uint"},
         [](ExperimentConfig& c, const std::string& v) {
             c.net.num_classes = c.data.num_classes = parse_uint("num_classes", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.net.num_classes); }},

        uint_field("net.image_channels", DNL_ACCESS(net.image_channels)),
        list_field("net.stem_widths", DNL_ACCESS(net.stem_widths)),
        uint_field("net.channels", DNL_ACCESS(net.channels)),
        uint_field("net.reduced_channels", DNL_ACCESS(net.reduced_channels)),
        uint_field("net.window", DNL_ACCESS(net.window)),
        real_field("net.gamma_init", DNL_ACCESS(net.gamma_init)),
        uint_field("net.head_channels", DNL_ACCESS(net.head_channels)),
        uint_field("net.ctx_channels", DNL_ACCESS(net.ctx_channels)),
        real_field("net.norm_eps", DNL_ACCESS(net.norm_eps)),
        real_field("net.norm_momentum", DNL_ACCESS(net.norm_momentum)),
        real_field("net.lambda1", DNL_ACCESS(net.lambda1)),
        real_field("net.lambda2", DNL_ACCESS(net.lambda2)),
        real_field("net.lambda_gr", DNL_ACCESS(net.lambda_gr)),
        bool_field("net.use_attention", DNL_ACCESS(net.use_attention)),
        bool_field("net.use_gr", DNL_ACCESS(net.use_gr)),
        bool_field("net.use_lr", DNL_ACCESS(net.use_lr)),
        bool_field("net.coarse_softmax", DNL_ACCESS(net.coarse_softmax)),

        uint_field("data.height", DNL_ACCESS(data.height)),
        uint_field("data.width", DNL_ACCESS(data.width)),
        list_field("data.count_min", DNL_ACCESS(data.count_min)),
        list_field("data.count_max", DNL_ACCESS(data.count_max)),
        real_field("data.size_min", DNL_ACCESS(data.size_min)),
        real_field("data.size_max", DNL_ACCESS(data.size_max)),
        real_field("data.noise_sigma", DNL_ACCESS(data.noise_sigma)),
        bool_field("data.texture", DNL_ACCESS(data.texture)),
        uint_field("data.seed", DNL_ACCESS(data.seed)),

        real_field("train.base_lr", DNL_ACCESS(train.base_lr)),
        real_field("train.momentum", DNL_ACCESS(train.momentum)),
        real_field("train.weight_decay", DNL_ACCESS(train.weight_decay)),
        real_field("train.power", DNL_ACCESS(train.power)),
        uint_field("train.batch_size", DNL_ACCESS(train.batch_size)),
        uint_field("train.epochs", DNL_ACCESS(train.epochs)),
        uint_field("train.max_iter", DNL_ACCESS(train.max_iter)),
        uint_field("train.crop_h", DNL_ACCESS(train.crop_h)),
        uint_field("train.crop_w", DNL_ACCESS(train.crop_w)),
        bool_field("train.augment", DNL_ACCESS(train.augment)),
        bool_field("train.hflip", DNL_ACCESS(train.hflip)),
        real_field("train.scale_min", DNL_ACCESS(train.scale_min)),
        real_field("train.scale_max", DNL_ACCESS(train.scale_max)),
        uint_field("train.checkpoint_every", DNL_ACCESS(train.checkpoint_every)),
        uint_field("train.seed", DNL_ACCESS(train.seed)),
    };
    return table;
}

#undef DNL_ACCESS

const Field& find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key.name == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void TrainConfig::validate() const {
    if (!(base_lr >= 0)) throw ConfigError("train.base_lr must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(power > 0)) throw ConfigError("train.power must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (crop_h == 0 || crop_w == 0 || crop_h % 16 != 0 || crop_w % 16 != 0) {
        throw ConfigError("train.crop_h and train.crop_w must be positive multiples of 16");
    }
    if (!(scale_min > 0) || !(scale_max >= scale_min)) throw ConfigError("train: need 0 < scale_min <= scale_max");
}

void ExperimentConfig::validate() const {
    net.validate();
    data.validate();
    train.validate();
    if (net.num_classes != data.num_classes) throw ConfigError("net and data disagree on num_classes");
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    find_field(key).set(cfg, value);
}

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base) {
    ExperimentConfig cfg = base;
    std::set<std::string> seen;
    std::stringstream ss(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(ss, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) {
            throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key + "' repeated");
        }
        try {
            set_config_value(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.key.name + " = " + f.get(cfg) + "\n";
    return out;
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace dnl
