#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "msda/data.hpp"
#include "msda/net.hpp"
#include "msda/rng.hpp"
#include "msda/tensor.hpp"

namespace msda::train {

struct AugmentSwitches {
    bool flip_h = true;
    bool flip_v = true;
    bool rotate90 = true;
    bool contrast = true;
};

struct TrainConfig {
    int batch_size = 4;
    float learning_rate = 1e-4f;
    int epochs = 500;
    std::uint64_t seed = 0;
    AugmentSwitches augmentation;
    float loss_epsilon = 1e-6f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;

    void validate() const;
};

// loss = 1 - (sum(p*y) + eps) / (sum(p) + sum(y) - sum(p*y) + eps),
// pooled over the whole batch. Differentiable in pred.
double soft_iou_loss(const Tensor& pred, const Tensor& target, float eps);
VarId soft_iou_loss(Tape& t, VarId pred, const Tensor& target, float eps);

// Geometric transforms shared by image and mask: optional horizontal /
// vertical flips and a rotation by k*90 degrees.
Tensor apply_geometric(const Tensor& x, bool flip_h, bool flip_v, int rot_quarter_turns);
// Contrast scaling (image only): multiply by u and clamp to [0,1].
Tensor apply_contrast(const Tensor& image, float u);

// Random augmentation per the configured switches. Flips fire with
// probability 0.5 each; rotation picks a uniform multiple of 90 degrees;
// contrast draws u ~ U[0.8, 1.2]. The mask stays exactly binary.
void augment(Tensor& image, Tensor& mask, Rng& rng, const AugmentSwitches& cfg);

struct AdamState {
    std::vector<Tensor> m, v;
    std::int64_t step = 0;
};

AdamState adam_init(const net::NetworkParams& params);
// Standard bias-corrected update. Parameters are mutated in place;
// gradients are untouched (caller clears them).
void adam_update(net::NetworkParams& params, AdamState& state, float lr, float beta1, float beta2,
                 float eps);

// Checkpoint file: 8-byte little-endian manifest length, newline-terminated
// JSON manifest (tensor names/shapes in registration order, NetConfig,
// training step), then the raw little-endian float32 blob.
void save_checkpoint(const std::filesystem::path& file, const net::MsdaNet& net, std::int64_t step);

struct LoadedCheckpoint {
    std::unique_ptr<net::MsdaNet> net;
    std::int64_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file);

struct EpochStats {
    int epoch = 0;
    std::int64_t steps_done = 0;
    double mean_loss = 0.0;
    double train_iou = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> log;
    double best_loss = 0.0;
    double final_train_iou = 0.0;
    std::int64_t total_steps = 0;
};

// Deterministic training loop: augment -> forward -> soft_iou_loss ->
// backward -> adam_update. Writes train_log.csv plus final and best-loss
// checkpoints under out_dir. max_steps (0 = unlimited) caps total steps
// below epochs * ceil(N / batch); stop_at_train_iou (0 = off) ends the run
// after the first epoch whose training IoU reaches the target.
TrainResult train_loop(const net::NetConfig& net_cfg, const TrainConfig& train_cfg,
                       const std::vector<data::Sample>& dataset,
                       const std::filesystem::path& out_dir, std::int64_t max_steps = 0,
                       double stop_at_train_iou = 0.0);

} // namespace msda::train
