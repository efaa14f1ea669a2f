#include "msda/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace msda::cli {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            throw std::invalid_argument("config: unknown key '" + where + key + "'");
        }
    }
}

template <typename T>
void maybe(const json& obj, const char* key, T& target) {
    if (obj.contains(key)) obj.at(key).get_to(target);
}

void parse_net(const json& j, net::NetConfig& cfg) {
    check_keys(j, "net.",
               {"stage_channels", "mlrl_dilations", "mdfa_attn_kernel", "se_ratio", "use_norm",
                "binarize_threshold", "ablation"});
    maybe(j, "stage_channels", cfg.stage_channels);
    maybe(j, "mlrl_dilations", cfg.mlrl_dilations);
    maybe(j, "mdfa_attn_kernel", cfg.mdfa_attn_kernel);
    maybe(j, "se_ratio", cfg.se_ratio);
    maybe(j, "use_norm", cfg.use_norm);
    maybe(j, "binarize_threshold", cfg.binarize_threshold);
    if (j.contains("ablation")) {
        const json& ab = j.at("ablation");
        const auto& names = net::AblationSwitches::names();
        std::set<std::string> allowed(names.begin(), names.end());
        check_keys(ab, "net.ablation.", allowed);
        for (const std::string& name : names) {
            if (ab.contains(name)) cfg.ablation.set(name, ab.at(name).get<bool>());
        }
    }
}

void parse_train(const json& j, train::TrainConfig& cfg) {
    check_keys(j, "train.",
               {"batch_size", "learning_rate", "epochs", "seed", "augmentation", "loss_epsilon",
                "adam_betas", "adam_eps"});
    maybe(j, "batch_size", cfg.batch_size);
    maybe(j, "learning_rate", cfg.learning_rate);
    maybe(j, "epochs", cfg.epochs);
    maybe(j, "seed", cfg.seed);
    maybe(j, "loss_epsilon", cfg.loss_epsilon);
    maybe(j, "adam_eps", cfg.adam_eps);
    if (j.contains("adam_betas")) {
        const json& betas = j.at("adam_betas");
        if (!betas.is_array() || betas.size() != 2) {
            throw std::invalid_argument("config: train.adam_betas must be [beta1, beta2]");
        }
        cfg.adam_beta1 = betas[0].get<float>();
        cfg.adam_beta2 = betas[1].get<float>();
    }
    if (j.contains("augmentation")) {
        const json& aug = j.at("augmentation");
        check_keys(aug, "train.augmentation.", {"flip_h", "flip_v", "rotate90", "contrast"});
        maybe(aug, "flip_h", cfg.augmentation.flip_h);
        maybe(aug, "flip_v", cfg.augmentation.flip_v);
        maybe(aug, "rotate90", cfg.augmentation.rotate90);
        maybe(aug, "contrast", cfg.augmentation.contrast);
    }
}

void parse_data(const json& j, DataConfig& cfg) {
    check_keys(j, "data.", {"dir", "resize_to", "synth"});
    if (j.contains("dir")) cfg.dir = j.at("dir").get<std::string>();
    maybe(j, "resize_to", cfg.resize_to);
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        check_keys(s, "data.synth.",
                   {"size", "n_targets", "target_sigma", "target_contrast", "clutter",
                    "noise_sigma", "count", "seed"});
        data::SceneConfig scene;
        maybe(s, "size", scene.size);
        if (s.contains("n_targets")) {
            scene.n_targets_min = s.at("n_targets").at(0).get<int>();
            scene.n_targets_max = s.at("n_targets").at(1).get<int>();
        }
        if (s.contains("target_sigma")) {
            scene.sigma_min = s.at("target_sigma").at(0).get<float>();
            scene.sigma_max = s.at("target_sigma").at(1).get<float>();
        }
        if (s.contains("target_contrast")) {
            scene.contrast_min = s.at("target_contrast").at(0).get<float>();
            scene.contrast_max = s.at("target_contrast").at(1).get<float>();
        }
        maybe(s, "clutter", scene.clutter);
        maybe(s, "noise_sigma", scene.noise_sigma);
        cfg.synth = scene;
        if (s.contains("count")) cfg.synth_count = s.at("count").get<int>();
        if (s.contains("seed")) cfg.synth_seed = s.at("seed").get<std::uint64_t>();
    }
}

void parse_eval(const json& j, EvalConfig& cfg) {
    check_keys(j, "eval.", {"match_dist", "delta", "threshold"});
    maybe(j, "match_dist", cfg.match_dist);
    maybe(j, "delta", cfg.delta);
    maybe(j, "threshold", cfg.threshold);
}

} // namespace

CliConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    check_keys(j, "", {"net", "train", "data", "eval"});
    CliConfig cfg;
    if (j.contains("net")) parse_net(j.at("net"), cfg.net);
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("data")) parse_data(j.at("data"), cfg.data);
    if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);
    cfg.net.validate();
    cfg.train.validate();
    return cfg;
}

CliConfig load_config(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw std::runtime_error("config: cannot open " + file.string());
    std::string text{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    return parse_config_text(text);
}

std::string dump_config(const CliConfig& cfg) {
    json j;
    j["net"]["stage_channels"] = cfg.net.stage_channels;
    j["net"]["mlrl_dilations"] = cfg.net.mlrl_dilations;
    j["net"]["mdfa_attn_kernel"] = cfg.net.mdfa_attn_kernel;
    j["net"]["se_ratio"] = cfg.net.se_ratio;
    j["net"]["use_norm"] = cfg.net.use_norm;
    j["net"]["binarize_threshold"] = cfg.net.binarize_threshold;
    for (const std::string& name : net::AblationSwitches::names()) {
        j["net"]["ablation"][name] = cfg.net.ablation.get(name);
    }
    j["train"]["batch_size"] = cfg.train.batch_size;
    j["train"]["learning_rate"] = cfg.train.learning_rate;
    j["train"]["epochs"] = cfg.train.epochs;
    j["train"]["seed"] = cfg.train.seed;
    j["train"]["augmentation"]["flip_h"] = cfg.train.augmentation.flip_h;
    j["train"]["augmentation"]["flip_v"] = cfg.train.augmentation.flip_v;
    j["train"]["augmentation"]["rotate90"] = cfg.train.augmentation.rotate90;
    j["train"]["augmentation"]["contrast"] = cfg.train.augmentation.contrast;
    j["train"]["loss_epsilon"] = cfg.train.loss_epsilon;
    j["train"]["adam_betas"] = {cfg.train.adam_beta1, cfg.train.adam_beta2};
    j["train"]["adam_eps"] = cfg.train.adam_eps;
    if (cfg.data.dir) j["data"]["dir"] = *cfg.data.dir;
    j["data"]["resize_to"] = cfg.data.resize_to;
    if (cfg.data.synth) {
        const data::SceneConfig& s = *cfg.data.synth;
        j["data"]["synth"]["size"] = s.size;
        j["data"]["synth"]["n_targets"] = {s.n_targets_min, s.n_targets_max};
        j["data"]["synth"]["target_sigma"] = {s.sigma_min, s.sigma_max};
        j["data"]["synth"]["target_contrast"] = {s.contrast_min, s.contrast_max};
        j["data"]["synth"]["clutter"] = s.clutter;
        j["data"]["synth"]["noise_sigma"] = s.noise_sigma;
        j["data"]["synth"]["count"] = cfg.data.synth_count;
        j["data"]["synth"]["seed"] = cfg.data.synth_seed;
    }
    j["eval"]["match_dist"] = cfg.eval.match_dist;
    j["eval"]["delta"] = cfg.eval.delta;
    j["eval"]["threshold"] = cfg.eval.threshold;
    return j.dump(2);
}

} // namespace msda::cli
