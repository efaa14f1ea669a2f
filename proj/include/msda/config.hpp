#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "msda/data.hpp"
#include "msda/net.hpp"
#include "msda/train.hpp"

namespace msda::cli {

struct DataConfig {
    // Either a directory of image/mask pairs or a synthetic generator.
    std::optional<std::string> dir;
    int resize_to = 256;
    std::optional<data::SceneConfig> synth;
    int synth_count = 8;
    std::uint64_t synth_seed = 1;
};

struct EvalConfig {
    double match_dist = 3.0;
    double delta = 0.01;
    float threshold = 0.5f;
};

struct CliConfig {
    net::NetConfig net;
    train::TrainConfig train;
    DataConfig data;
    EvalConfig eval;
};

// Parses the JSON config with strict key checking: any unknown key is an
// error naming the key. Absent keys keep their defaults.
CliConfig parse_config_text(const std::string& json_text);
CliConfig load_config(const std::filesystem::path& file);

// The effective configuration (defaults applied) as a JSON document.
std::string dump_config(const CliConfig& cfg);

} // namespace msda::cli
