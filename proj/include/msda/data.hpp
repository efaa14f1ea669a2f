#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "msda/tensor.hpp"

namespace msda::data {

// Synthetic infrared scene parameters. Targets are Gaussian blobs over a
// smooth clutter field plus per-pixel noise; every target is detectable by
// construction (contrast above the noise floor).
struct SceneConfig {
    int size = 64;
    int n_targets_min = 1;
    int n_targets_max = 3;
    float sigma_min = 1.0f;
    float sigma_max = 2.5f;
    float contrast_min = 0.4f;
    float contrast_max = 0.8f;
    float clutter = 0.15f;
    float noise_sigma = 0.02f;

    void validate() const;
};

struct Sample {
    Tensor image; // (1,1,h,w) in [0,1]
    Tensor mask;  // (1,1,h,w) in {0,1}
    std::string id;
};

// Pure function of (cfg, seed). The mask marks pixels where a target's
// noiseless contribution exceeds half its peak.
Sample synth_scene(const SceneConfig& cfg, std::uint64_t seed);

// Internals exposed for construction checks: the noiseless image and the
// drawn target centers.
struct SynthDetail {
    Sample sample;
    Tensor noiseless;
    std::vector<std::pair<double, double>> centers; // (row, col)
};

SynthDetail synth_scene_detail(const SceneConfig& cfg, std::uint64_t seed);

// Loads paired `images/` and `masks/` files (grayscale PNG or PGM, 8- or
// 16-bit) with matching stems, sorted by stem. Images are bilinearly
// resized, masks nearest-neighbor resized then binarized at 0.5.
std::vector<Sample> load_dataset(const std::filesystem::path& dir, int resize_to);

// Writes a sample in the load_dataset layout (16-bit image PNG, 8-bit mask
// PNG).
void save_sample(const std::filesystem::path& dir, const Sample& sample);

} // namespace msda::data
