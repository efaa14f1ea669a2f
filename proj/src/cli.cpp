#include "msda/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "msda/config.hpp"
#include "msda/data.hpp"
#include "msda/eval.hpp"
#include "msda/filters.hpp"
#include "msda/gradcheck_suite.hpp"
#include "msda/image_io.hpp"
#include "msda/net.hpp"
#include "msda/train.hpp"

namespace msda::cli {

namespace {

namespace fs = std::filesystem;

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
    const char* env = std::getenv("MSDA_LOG");
    if (!env) return LogLevel::Info;
    const std::string v(env);
    if (v == "quiet") return LogLevel::Quiet;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::cerr << "[msda] " << msg << "\n";
}

Tensor tensor_from_image(const img::GrayImage& gi) {
    Tensor t({1, 1, gi.height, gi.width});
    for (std::size_t i = 0; i < gi.pixels.size(); ++i) {
        t.data[i] = static_cast<float>(gi.pixels[i]) / gi.max_value();
    }
    return t;
}

void write_mask_png(const fs::path& file, const Tensor& prob, float threshold) {
    std::vector<std::uint8_t> px(prob.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        px[i] = prob.data[i] > threshold ? 255 : 0;
    }
    img::write_png_gray8(file, prob.shape.w, prob.shape.h, px);
}

void write_prob_png16(const fs::path& file, const Tensor& prob) {
    std::vector<std::uint16_t> px(prob.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        px[i] = static_cast<std::uint16_t>(std::lround(std::clamp(prob.data[i], 0.0f, 1.0f) * 65535.0f));
    }
    img::write_png_gray16(file, prob.shape.w, prob.shape.h, px);
}

std::vector<data::Sample> dataset_from_config(const CliConfig& cfg) {
    if (cfg.data.dir) {
        return data::load_dataset(*cfg.data.dir, cfg.data.resize_to);
    }
    if (cfg.data.synth) {
        std::vector<data::Sample> out;
        for (int i = 0; i < cfg.data.synth_count; ++i) {
            out.push_back(data::synth_scene(*cfg.data.synth, cfg.data.synth_seed + i));
        }
        return out;
    }
    throw std::invalid_argument("config: data section needs either 'dir' or 'synth'");
}

int cmd_synth(const std::string& config_path, const std::string& out_dir, int count) {
    CliConfig cfg = load_config(config_path);
    if (!cfg.data.synth) throw std::invalid_argument("synth: config has no data.synth section");
    if (count > 0) cfg.data.synth_count = count;
    log_info("effective config:\n" + dump_config(cfg));
    fs::create_directories(out_dir);
    for (int i = 0; i < cfg.data.synth_count; ++i) {
        const data::Sample s = data::synth_scene(*cfg.data.synth, cfg.data.synth_seed + i);
        data::save_sample(out_dir, s);
    }
    log_info("wrote " + std::to_string(cfg.data.synth_count) + " image/mask pairs to " + out_dir);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    const CliConfig cfg = load_config(config_path);
    log_info("effective config:\n" + dump_config(cfg));
    const std::vector<data::Sample> dataset = dataset_from_config(cfg);
    log_info("training on " + std::to_string(dataset.size()) + " samples");
    const train::TrainResult result = train::train_loop(cfg.net, cfg.train, dataset, out_dir);
    log_info("done: " + std::to_string(result.total_steps) + " steps, final train IoU " +
             std::to_string(result.final_train_iou));
    return 0;
}

struct EvalOutcome {
    eval::EvalRecord record;
};

EvalOutcome run_eval(const net::MsdaNet& net, const std::vector<data::Sample>& dataset,
                     const EvalConfig& ecfg, const fs::path& out_dir, bool write_probs) {
    fs::create_directories(out_dir / "masks");
    if (write_probs) fs::create_directories(out_dir / "probs");

    std::vector<Tensor> probs, bins, gts;
    for (const data::Sample& s : dataset) {
        Tensor prob = net.infer(s.image);
        write_mask_png(out_dir / "masks" / (s.id + ".png"), prob, ecfg.threshold);
        if (write_probs) write_prob_png16(out_dir / "probs" / (s.id + ".png"), prob);
        Tensor bin(prob.shape);
        for (std::size_t i = 0; i < prob.data.size(); ++i) {
            bin.data[i] = prob.data[i] > ecfg.threshold ? 1.0f : 0.0f;
        }
        probs.push_back(std::move(prob));
        bins.push_back(std::move(bin));
        gts.push_back(s.mask);
    }

    EvalOutcome out;
    out.record = eval::compute_metrics(bins, gts, ecfg.match_dist);
    out.record.roc = eval::roc3d(probs, gts, ecfg.delta, ecfg.match_dist);
    eval::write_metrics_csv(out_dir / "metrics.csv", out.record);
    eval::write_roc_csv(out_dir / "roc.csv", out.record.roc);
    return out;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_dir,
             const std::string& config_path, bool write_probs) {
    CliConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    const train::LoadedCheckpoint loaded = train::load_checkpoint(checkpoint);
    const std::vector<data::Sample> dataset = data::load_dataset(data_dir, cfg.data.resize_to);
    log_info("evaluating " + std::to_string(dataset.size()) + " samples");
    const EvalOutcome out = run_eval(*loaded.net, dataset, cfg.eval, out_dir, write_probs);
    std::cout << "iou " << out.record.iou << "  niou " << out.record.niou << "  pd "
              << out.record.pd << "  fa " << out.record.fa << "\n";
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_path,
              const std::string& out_path, const std::string& probs_path, int resize) {
    const train::LoadedCheckpoint loaded = train::load_checkpoint(checkpoint);
    Tensor image = tensor_from_image(img::read_gray(image_path));
    if (resize > 0) {
        image = ops::bilinear_resize(image, resize, resize);
    }
    const Tensor prob = loaded.net->infer(image);
    write_mask_png(out_path, prob, loaded.net->config().binarize_threshold);
    if (!probs_path.empty()) write_prob_png16(probs_path, prob);
    log_info("wrote mask to " + out_path);
    return 0;
}

int cmd_filter(const std::string& image_path, const std::string& out_dir) {
    const Tensor image = tensor_from_image(img::read_gray(image_path));
    const Tensor components = filters::hfdi(image);
    fs::create_directories(out_dir);
    const char* names[3] = {"horizontal", "vertical", "diagonal"};
    const int h = components.shape.h, w = components.shape.w;
    for (int c = 0; c < 3; ++c) {
        // Min-max normalize each component to 8-bit for inspection.
        float lo = components.at(0, c, 0, 0), hi = lo;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                lo = std::min(lo, components.at(0, c, y, x));
                hi = std::max(hi, components.at(0, c, y, x));
            }
        const float span = hi > lo ? hi - lo : 1.0f;
        std::vector<std::uint8_t> px(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                px[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(
                    std::lround((components.at(0, c, y, x) - lo) / span * 255.0f));
            }
        img::write_png_gray8(fs::path(out_dir) / (std::string(names[c]) + ".png"), w, h, px);
    }
    log_info("wrote 3 directional components to " + out_dir);
    return 0;
}

int cmd_gradcheck() {
    const bool ok = report_gradient_suite(std::cout);
    return ok ? 0 : 1;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::vector<std::string>& switches) {
    CliConfig cfg = load_config(config_path);
    for (const std::string& sw : switches) {
        const auto pos = sw.find('=');
        if (pos == std::string::npos) {
            throw std::invalid_argument("ablate: switch must look like NAME=on|off, got '" + sw + "'");
        }
        const std::string name = sw.substr(0, pos);
        const std::string value = sw.substr(pos + 1);
        if (value != "on" && value != "off") {
            throw std::invalid_argument("ablate: switch value must be on or off, got '" + value + "'");
        }
        cfg.net.ablation.set(name, value == "on");
    }
    log_info("effective config:\n" + dump_config(cfg));

    const net::MsdaNet baseline(net::NetConfig{}, cfg.train.seed);
    const net::MsdaNet ablated(cfg.net, cfg.train.seed);
    std::cout << "parameters: " << ablated.params().scalar_count() << " (full default "
              << baseline.params().scalar_count() << ")\n";

    const std::vector<data::Sample> dataset = dataset_from_config(cfg);
    const train::TrainResult result = train::train_loop(cfg.net, cfg.train, dataset, out_dir);
    const train::LoadedCheckpoint loaded =
        train::load_checkpoint(fs::path(out_dir) / "checkpoint_final.bin");
    const EvalOutcome out = run_eval(*loaded.net, dataset, cfg.eval, out_dir, false);
    std::cout << "train_iou " << result.final_train_iou << "  iou " << out.record.iou << "  niou "
              << out.record.niou << "  pd " << out.record.pd << "  fa " << out.record.fa << "\n";
    return 0;
}

} // namespace

int run(const std::vector<std::string>& argv) {
    CLI::App app{"MSDA-Net infrared small-target segmentation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, data_dir, image_path, out_path, probs_path;
    std::vector<std::string> switches;
    int count = 0;
    int resize = 0;
    bool write_probs = false;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "JSON config with a data.synth section")->required();
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    synth->add_option("--count", count, "number of samples (overrides config)");

    CLI::App* train_cmd = app.add_subcommand("train", "train the network");
    train_cmd->add_option("--config", config_path, "JSON config")->required();
    train_cmd->add_option("--out", out_dir, "output directory for checkpoints and logs")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory (images/ + masks/)")->required();
    eval_cmd->add_option("--out", out_dir, "output directory")->required();
    eval_cmd->add_option("--config", config_path, "JSON config (eval/data sections)");
    eval_cmd->add_flag("--probs", write_probs, "also write 16-bit probability maps");

    CLI::App* infer = app.add_subcommand("infer", "predict a mask for one image");
    infer->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    infer->add_option("--image", image_path, "input grayscale image")->required();
    infer->add_option("--out", out_path, "output mask PNG")->required();
    infer->add_option("--probs", probs_path, "optional 16-bit probability PNG");
    infer->add_option("--resize", resize, "resize input to NxN before inference");

    CLI::App* filter = app.add_subcommand("filter", "write HFDI directional components");
    filter->add_option("--image", image_path, "input grayscale image")->required();
    filter->add_option("--out", out_dir, "output directory")->required();

    app.add_subcommand("gradcheck", "run the finite-difference gradient suite");

    CLI::App* ablate = app.add_subcommand("ablate", "train/eval with ablation switches");
    ablate->add_option("--config", config_path, "JSON config")->required();
    ablate->add_option("--out", out_dir, "output directory")->required();
    ablate->add_option("--switch", switches, "ablation switch NAME=on|off (repeatable)");

    // CLI11 wants mutable char pointers; rebuild an argc/argv view.
    std::vector<std::string> args = argv;
    std::vector<char*> cargs;
    cargs.push_back(const_cast<char*>("msda"));
    for (std::string& a : args) cargs.push_back(a.data());

    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) return cmd_synth(config_path, out_dir, count);
        if (train_cmd->parsed()) return cmd_train(config_path, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, data_dir, out_dir, config_path, write_probs);
        if (infer->parsed()) return cmd_infer(checkpoint, image_path, out_path, probs_path, resize);
        if (filter->parsed()) return cmd_filter(image_path, out_dir);
        if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
        if (ablate->parsed()) return cmd_ablate(config_path, out_dir, switches);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace msda::cli
