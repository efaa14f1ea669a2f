#include "msda/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace msda::train {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0f)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (loss_epsilon < 0.0f) throw std::invalid_argument("train config: loss_epsilon must be >= 0");
}

namespace {

struct IouTerms {
    double inter = 0.0;
    double pred_sum = 0.0;
    double target_sum = 0.0;
};

IouTerms iou_terms(const Tensor& pred, const Tensor& target) {
    if (!(pred.shape == target.shape)) {
        throw std::invalid_argument("soft_iou_loss: shape mismatch " + pred.shape.str() + " vs " +
                                    target.shape.str());
    }
    IouTerms t;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const float y = target.data[i];
        if (y != 0.0f && y != 1.0f) {
            throw std::invalid_argument("soft_iou_loss: target values must be exactly 0 or 1");
        }
        t.inter += static_cast<double>(pred.data[i]) * y;
        t.pred_sum += pred.data[i];
        t.target_sum += y;
    }
    return t;
}

} // namespace

double soft_iou_loss(const Tensor& pred, const Tensor& target, float eps) {
    const IouTerms t = iou_terms(pred, target);
    const double u = t.pred_sum + t.target_sum - t.inter;
    return 1.0 - (t.inter + eps) / (u + eps);
}

VarId soft_iou_loss(Tape& tape, VarId pred, const Tensor& target, float eps) {
    const Tensor& p = tape.value(pred);
    const IouTerms t = iou_terms(p, target);
    const double u = t.pred_sum + t.target_sum - t.inter;
    const double loss = 1.0 - (t.inter + eps) / (u + eps);

    Tensor y = target; // captured by the closure
    return tape.custom(
        Tensor::scalar(static_cast<float>(loss)), loss,
        [pred, y = std::move(y), inter = t.inter, u, eps](Tape& tp, VarId out_id) {
            const float go = tp.grad(out_id).data[0];
            Tensor& gp = tp.grad_mut(pred);
            const double denom = (u + eps) * (u + eps);
            for (std::size_t i = 0; i < gp.data.size(); ++i) {
                const double yi = y.data[i];
                // d/dp_i of -(I+eps)/(U+eps) with dI = y_i, dU = 1 - y_i.
                const double d = -(yi * (u + eps) - (inter + eps) * (1.0 - yi)) / denom;
                gp.data[i] += static_cast<float>(go * d);
            }
        });
}

Tensor apply_geometric(const Tensor& x, bool flip_h, bool flip_v, int rot_quarter_turns) {
    Tensor out = x;
    const auto flip = [](const Tensor& t, bool horizontal) {
        Tensor r(t.shape);
        for (int n = 0; n < t.shape.n; ++n)
            for (int c = 0; c < t.shape.c; ++c)
                for (int y = 0; y < t.shape.h; ++y)
                    for (int xw = 0; xw < t.shape.w; ++xw) {
                        const int sy = horizontal ? y : t.shape.h - 1 - y;
                        const int sx = horizontal ? t.shape.w - 1 - xw : xw;
                        r.at(n, c, y, xw) = t.at(n, c, sy, sx);
                    }
        return r;
    };
    const auto rot90 = [](const Tensor& t) {
        // 90 degrees counterclockwise: (y, x) <- (x, W-1-y) of the source.
        Tensor r({t.shape.n, t.shape.c, t.shape.w, t.shape.h});
        for (int n = 0; n < t.shape.n; ++n)
            for (int c = 0; c < t.shape.c; ++c)
                for (int y = 0; y < r.shape.h; ++y)
                    for (int xw = 0; xw < r.shape.w; ++xw) {
                        r.at(n, c, y, xw) = t.at(n, c, xw, t.shape.w - 1 - y);
                    }
        return r;
    };
    if (flip_h) out = flip(out, true);
    if (flip_v) out = flip(out, false);
    for (int k = 0; k < ((rot_quarter_turns % 4) + 4) % 4; ++k) out = rot90(out);
    return out;
}

Tensor apply_contrast(const Tensor& image, float u) {
    Tensor out(image.shape);
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        out.data[i] = std::clamp(image.data[i] * u, 0.0f, 1.0f);
    }
    return out;
}

void augment(Tensor& image, Tensor& mask, Rng& rng, const AugmentSwitches& cfg) {
    if (!(image.shape.h == mask.shape.h && image.shape.w == mask.shape.w)) {
        throw std::invalid_argument("augment: image/mask spatial shape mismatch");
    }
    const bool fh = cfg.flip_h && rng.unit() < 0.5f;
    const bool fv = cfg.flip_v && rng.unit() < 0.5f;
    const int rot = cfg.rotate90 ? rng.uniform_int(0, 3) : 0;
    if (fh || fv || rot != 0) {
        image = apply_geometric(image, fh, fv, rot);
        mask = apply_geometric(mask, fh, fv, rot);
    }
    if (cfg.contrast) {
        image = apply_contrast(image, rng.uniform(0.8f, 1.2f));
    }
}

AdamState adam_init(const net::NetworkParams& params) {
    AdamState state;
    for (const auto& p : params.ordered()) {
        state.m.emplace_back(p->value.shape);
        state.v.emplace_back(p->value.shape);
    }
    return state;
}

void adam_update(net::NetworkParams& params, AdamState& state, float lr, float beta1, float beta2,
                 float eps) {
    if (state.m.size() != params.tensor_count()) {
        throw std::invalid_argument("adam_update: state/parameter count mismatch");
    }
    state.step += 1;
    const double b1 = beta1, b2 = beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    const auto& ordered = params.ordered();
    for (std::size_t k = 0; k < ordered.size(); ++k) {
        Parameter& p = *ordered[k];
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = p.grad.data[i];
            const double mi = b1 * m.data[i] + (1.0 - b1) * g;
            const double vi = b2 * v.data[i] + (1.0 - b2) * g * g;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p.value.data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

// --- checkpoint persistence --------------------------------------------------

namespace {

nlohmann::json net_config_to_json(const net::NetConfig& cfg) {
    nlohmann::json j;
    j["stage_channels"] = cfg.stage_channels;
    j["mlrl_dilations"] = cfg.mlrl_dilations;
    j["mdfa_attn_kernel"] = cfg.mdfa_attn_kernel;
    j["se_ratio"] = cfg.se_ratio;
    j["use_norm"] = cfg.use_norm;
    j["binarize_threshold"] = cfg.binarize_threshold;
    nlohmann::json ab;
    for (const std::string& name : net::AblationSwitches::names()) {
        ab[name] = cfg.ablation.get(name);
    }
    j["ablation"] = ab;
    return j;
}

net::NetConfig net_config_from_json(const nlohmann::json& j) {
    net::NetConfig cfg;
    j.at("stage_channels").get_to(cfg.stage_channels);
    j.at("mlrl_dilations").get_to(cfg.mlrl_dilations);
    cfg.mdfa_attn_kernel = j.at("mdfa_attn_kernel").get<int>();
    cfg.se_ratio = j.at("se_ratio").get<int>();
    cfg.use_norm = j.at("use_norm").get<bool>();
    cfg.binarize_threshold = j.at("binarize_threshold").get<float>();
    for (const std::string& name : net::AblationSwitches::names()) {
        cfg.ablation.set(name, j.at("ablation").at(name).get<bool>());
    }
    return cfg;
}

} // namespace

void save_checkpoint(const std::filesystem::path& file, const net::MsdaNet& net, std::int64_t step) {
    nlohmann::json manifest;
    manifest["step"] = step;
    manifest["net"] = net_config_to_json(net.config());
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : net.params().ordered()) {
        tensors.push_back({{"path", p->path},
                           {"shape", {p->value.shape.n, p->value.shape.c, p->value.shape.h,
                                      p->value.shape.w}}});
    }
    manifest["tensors"] = tensors;

    std::string text = manifest.dump();
    text.push_back('\n');

    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + file.string());
    const std::uint64_t len = text.size();
    std::uint8_t lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<std::uint8_t>(len >> (8 * i));
    os.write(reinterpret_cast<const char*>(lenbuf), 8);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : net.params().ordered()) {
        os.write(reinterpret_cast<const char*>(p->value.data.data()),
                 static_cast<std::streamsize>(p->value.data.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + file.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + file.string());
    std::uint8_t lenbuf[8];
    is.read(reinterpret_cast<char*>(lenbuf), 8);
    if (!is) throw std::runtime_error("load_checkpoint: truncated header in " + file.string());
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenbuf[i]) << (8 * i);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("load_checkpoint: truncated manifest in " + file.string());

    const nlohmann::json manifest = nlohmann::json::parse(text);
    LoadedCheckpoint out;
    out.step = manifest.at("step").get<std::int64_t>();
    out.net = std::make_unique<net::MsdaNet>(net_config_from_json(manifest.at("net")), 0);

    const auto& tensors = manifest.at("tensors");
    const auto& ordered = out.net->params().ordered();
    if (tensors.size() != ordered.size()) {
        throw std::runtime_error("load_checkpoint: manifest lists " + std::to_string(tensors.size()) +
                                 " tensors, network has " + std::to_string(ordered.size()));
    }
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        const auto& entry = tensors[i];
        if (entry.at("path").get<std::string>() != ordered[i]->path) {
            throw std::runtime_error("load_checkpoint: tensor order mismatch at " + ordered[i]->path);
        }
        const auto sh = entry.at("shape");
        const Shape expect = ordered[i]->value.shape;
        if (sh[0].get<int>() != expect.n || sh[1].get<int>() != expect.c ||
            sh[2].get<int>() != expect.h || sh[3].get<int>() != expect.w) {
            throw std::runtime_error("load_checkpoint: shape mismatch at " + ordered[i]->path);
        }
        is.read(reinterpret_cast<char*>(ordered[i]->value.data.data()),
                static_cast<std::streamsize>(ordered[i]->value.data.size() * sizeof(float)));
        if (!is) throw std::runtime_error("load_checkpoint: truncated blob in " + file.string());
    }
    return out;
}

// --- training loop ------------------------------------------------------------

TrainResult train_loop(const net::NetConfig& net_cfg, const TrainConfig& train_cfg,
                       const std::vector<data::Sample>& dataset,
                       const std::filesystem::path& out_dir, std::int64_t max_steps,
                       double stop_at_train_iou) {
    train_cfg.validate();
    net_cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train_loop: dataset is empty");
    for (const data::Sample& s : dataset) {
        if (s.image.shape.h % 16 != 0 || s.image.shape.w % 16 != 0) {
            throw std::invalid_argument("train_loop: sample '" + s.id +
                                        "' spatial size not divisible by 16");
        }
        if (!(s.image.shape == s.mask.shape)) {
            throw std::invalid_argument("train_loop: sample '" + s.id + "' image/mask shape mismatch");
        }
    }

    std::filesystem::create_directories(out_dir);
    std::ofstream log(out_dir / "train_log.csv", std::ios::binary);
    if (!log) throw std::runtime_error("train_loop: cannot write train log");
    log << "epoch,step,loss,train_iou\n";

    net::MsdaNet net(net_cfg, train_cfg.seed);
    AdamState adam = adam_init(net.params());
    Rng rng(train_cfg.seed + 0x517cc1b727220a95ULL);

    const int n = static_cast<int>(dataset.size());
    const int steps_per_epoch = (n + train_cfg.batch_size - 1) / train_cfg.batch_size;
    const float thr = net_cfg.binarize_threshold;

    TrainResult result;
    result.best_loss = std::numeric_limits<double>::infinity();
    std::int64_t global_step = 0;
    bool stop = false;

    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= train_cfg.epochs && !stop; ++epoch) {
        // Deterministic shuffle (Fisher-Yates on the seeded stream).
        for (int i = n - 1; i > 0; --i) {
            std::swap(order[i], order[rng.uniform_int(0, i)]);
        }

        double epoch_loss = 0.0;
        int epoch_steps = 0;
        double tp = 0.0, fp = 0.0, fn = 0.0;

        for (int step = 0; step < steps_per_epoch && !stop; ++step) {
            const int begin = step * train_cfg.batch_size;
            const int count = std::min(train_cfg.batch_size, n - begin);

            const Shape one = dataset[order[begin]].image.shape;
            Tensor batch_images({count, 1, one.h, one.w});
            Tensor batch_masks({count, 1, one.h, one.w});
            for (int b = 0; b < count; ++b) {
                const data::Sample& s = dataset[order[begin + b]];
                Tensor image = s.image;
                Tensor mask = s.mask;
                augment(image, mask, rng, train_cfg.augmentation);
                std::memcpy(&batch_images.at(b, 0, 0, 0), image.data.data(),
                            image.data.size() * sizeof(float));
                std::memcpy(&batch_masks.at(b, 0, 0, 0), mask.data.data(),
                            mask.data.size() * sizeof(float));
            }

            Tape tape;
            const VarId pred = net.forward(tape, tape.constant(batch_images));
            const VarId loss = soft_iou_loss(tape, pred, batch_masks, train_cfg.loss_epsilon);
            net.params().zero_grads();
            tape.backward(loss);
            adam_update(net.params(), adam, train_cfg.learning_rate, train_cfg.adam_beta1,
                        train_cfg.adam_beta2, train_cfg.adam_eps);

            const Tensor& p = tape.value(pred);
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                const bool pos = p.data[i] > thr;
                const bool gt = batch_masks.data[i] > 0.5f;
                if (pos && gt) tp += 1.0;
                else if (pos) fp += 1.0;
                else if (gt) fn += 1.0;
            }

            epoch_loss += tape.scalar(loss);
            epoch_steps += 1;
            global_step += 1;
            if (max_steps > 0 && global_step >= max_steps) stop = true;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.steps_done = global_step;
        stats.mean_loss = epoch_loss / epoch_steps;
        stats.train_iou = (tp + fp + fn) > 0.0 ? tp / (tp + fp + fn) : 1.0;
        result.log.push_back(stats);

        std::ostringstream row;
        row.precision(9);
        row << stats.epoch << "," << stats.steps_done << "," << stats.mean_loss << ","
            << stats.train_iou << "\n";
        log << row.str();

        if (stats.mean_loss < result.best_loss) {
            result.best_loss = stats.mean_loss;
            save_checkpoint(out_dir / "checkpoint_best.bin", net, global_step);
        }
        result.final_train_iou = stats.train_iou;
        if (stop_at_train_iou > 0.0 && stats.train_iou >= stop_at_train_iou) stop = true;
    }

    result.total_steps = global_step;
    save_checkpoint(out_dir / "checkpoint_final.bin", net, global_step);
    return result;
}

} // namespace msda::train
