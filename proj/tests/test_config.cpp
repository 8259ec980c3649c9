#include <gtest/gtest.h>

#include <set>

#include "dnl/config.hpp"
#include "dnl/errors.hpp"

using namespace dnl;

TEST(Config, DefaultsAndParsing) {
    const auto cfg = parse_config(
        "# toy run\n"
        "num_classes = 5\n"
        "net.stem_widths = 8, 16,32,32   # trailing comment\n"
        "net.use_gr=false\n"
        "\n"
        "data.texture = true\n"
        "train.base_lr = 2.5e-3\n");
    EXPECT_EQ(cfg.net.num_classes, 5u);
    EXPECT_EQ(cfg.data.num_classes, 5u);
    EXPECT_EQ(cfg.net.stem_widths, (std::vector<std::size_t>{8, 16, 32, 32}));
    EXPECT_FALSE(cfg.net.use_gr);
    EXPECT_TRUE(cfg.net.use_lr);
    EXPECT_EQ(cfg.train.base_lr, 2.5e-3);
    EXPECT_EQ(cfg.train.momentum, 0.9);
    EXPECT_EQ(cfg.train.epochs, 30u);
}

TEST(Config, ErrorsNameTheLine) {
    auto message = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message("\nnet.bogus = 1\n").find("line 2"), std::string::npos);
    EXPECT_NE(message("train.epochs = 3\ntrain.epochs = 4\n").find("line 2"), std::string::npos);
    EXPECT_NE(message("train.epochs = -3\n").find("line 1"), std::string::npos);
    EXPECT_NE(message("train.epochs = 3.5\n"), "no error");
    EXPECT_NE(message("net.use_gr = yes\n"), "no error");
    EXPECT_NE(message("net.stem_widths = 8,16,32\n"), "no error");
    EXPECT_NE(message("train.base_lr = fast\n"), "no error");
    EXPECT_NE(message("just words\n"), "no error");
    EXPECT_NE(message("train.crop_h = 40\n"), "no error");
    EXPECT_NE(message("num_classes = 6\n"), "no error");  // more than the untextured shapes allow
}

TEST(Config, FormatRoundTripsExactly) {
    ExperimentConfig cfg;
    cfg.train.base_lr = 0.1 + 0.2;
    cfg.net.lambda_gr = 1.0 / 3.0;
    cfg.data.count_max = {1, 2, 3};
    cfg.data.seed = 12345678901234ull;
    const auto text = format_config(cfg);
    const auto back = parse_config(text);
    EXPECT_EQ(format_config(back), text);
    EXPECT_EQ(back.train.base_lr, cfg.train.base_lr);
    EXPECT_EQ(back.net.lambda_gr, cfg.net.lambda_gr);
    EXPECT_EQ(back.data.count_max, cfg.data.count_max);
    EXPECT_EQ(back.data.seed, cfg.data.seed);
}

TEST(Config, EveryKeyIsFormattedOnce) {
    const auto text = format_config(ExperimentConfig{});
    std::set<std::string> seen;
    for (const auto& key : config_keys()) {
        EXPECT_NE(text.find(key.name + " = "), std::string::npos) << key.name;
        EXPECT_TRUE(seen.insert(key.name).second) << key.name;
    }
}

TEST(Config, SetValueAndHash) {
    ExperimentConfig cfg;
    const auto h0 = config_hash(cfg);
    EXPECT_EQ(h0.size(), 16u);
    EXPECT_EQ(h0, config_hash(ExperimentConfig{}));
    set_config_value(cfg, "train.seed", "3");
    EXPECT_EQ(cfg.train.seed, 3u);
    EXPECT_NE(config_hash(cfg), h0);
    EXPECT_THROW(set_config_value(cfg, "train.nope", "1"), ConfigError);
    EXPECT_THROW(set_config_value(cfg, "net.window", "x"), ConfigError);
}

TEST(Config, Fnv1aKnownValues) {
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
