#include "msda/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "msda/image_io.hpp"
#include "msda/rng.hpp"

namespace msda::data {

void SceneConfig::validate() const {
    if (size < 16 || size % 16 != 0) {
        throw std::invalid_argument("scene config: size must be a positive multiple of 16");
    }
    if (n_targets_min < 1 || n_targets_max < n_targets_min) {
        throw std::invalid_argument("scene config: invalid target count range");
    }
    if (sigma_min <= 0.0f || sigma_max < sigma_min) {
        throw std::invalid_argument("scene config: invalid sigma range");
    }
    // Below ~0.65 px the half-peak disk can miss every pixel center and the
    // mask would come out empty.
    if (sigma_min < 0.65f) {
        throw std::invalid_argument("scene config: sigma_min must be >= 0.65 px");
    }
    if (contrast_min <= 0.0f || contrast_max < contrast_min) {
        throw std::invalid_argument("scene config: invalid contrast range");
    }
    if (contrast_min <= noise_sigma) {
        throw std::invalid_argument("scene config: contrast must exceed noise_sigma");
    }
    if (clutter < 0.0f || noise_sigma < 0.0f) {
        throw std::invalid_argument("scene config: clutter and noise_sigma must be >= 0");
    }
}

namespace {

// Smooth low-frequency field: bilinear interpolation of a coarse random
// grid (one node per 16 px).
Tensor clutter_field(int size, float amplitude, Rng& rng) {
    const int cell = 16;
    const int nodes = size / cell + 1;
    std::vector<float> grid(static_cast<std::size_t>(nodes) * nodes);
    for (float& v : grid) v = rng.uniform(-1.0f, 1.0f);
    Tensor field({1, 1, size, size});
    for (int y = 0; y < size; ++y) {
        const float fy = static_cast<float>(y) / cell;
        const int y0 = static_cast<int>(fy);
        const float ty = fy - y0;
        for (int x = 0; x < size; ++x) {
            const float fx = static_cast<float>(x) / cell;
            const int x0 = static_cast<int>(fx);
            const float tx = fx - x0;
            const float v00 = grid[static_cast<std::size_t>(y0) * nodes + x0];
            const float v01 = grid[static_cast<std::size_t>(y0) * nodes + x0 + 1];
            const float v10 = grid[static_cast<std::size_t>(y0 + 1) * nodes + x0];
            const float v11 = grid[static_cast<std::size_t>(y0 + 1) * nodes + x0 + 1];
            field.at(0, 0, y, x) =
                amplitude * ((1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11));
        }
    }
    return field;
}

struct TargetDraw {
    double cy, cx;
    float sigma;
    float contrast;
};

} // namespace

SynthDetail synth_scene_detail(const SceneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    const int size = cfg.size;

    Tensor noiseless = clutter_field(size, cfg.clutter, rng);
    for (float& v : noiseless.data) v += 0.25f;

    const int count = rng.uniform_int(cfg.n_targets_min, cfg.n_targets_max);
    std::vector<TargetDraw> targets;
    const int max_retries = 200;
    int retries = 0;
    while (static_cast<int>(targets.size()) < count) {
        TargetDraw t;
        t.sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max);
        t.contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
        const float margin = 3.0f * t.sigma + 2.0f;
        if (2.0f * margin >= static_cast<float>(size)) {
            throw std::invalid_argument("synth_scene: targets too large for scene size");
        }
        t.cy = rng.uniform(margin, size - 1 - margin);
        t.cx = rng.uniform(margin, size - 1 - margin);
        // Keep half-peak disks separated so masks stay disjoint components.
        const double r_t = 1.1774 * t.sigma;
        bool ok = true;
        for (const TargetDraw& o : targets) {
            const double r_o = 1.1774 * o.sigma;
            const double dy = t.cy - o.cy, dx = t.cx - o.cx;
            if (std::sqrt(dy * dy + dx * dx) < r_t + r_o + 4.0) {
                ok = false;
                break;
            }
        }
        if (ok) {
            targets.push_back(t);
        } else if (++retries > max_retries) {
            throw std::runtime_error("synth_scene: cannot place non-overlapping targets after " +
                                     std::to_string(max_retries) + " retries");
        }
    }

    Tensor mask({1, 1, size, size});
    for (const TargetDraw& t : targets) {
        const float half_peak = 0.5f * t.contrast;
        const int reach = static_cast<int>(std::ceil(4.0f * t.sigma)) + 1;
        const int y0 = std::max(0, static_cast<int>(t.cy) - reach);
        const int y1 = std::min(size - 1, static_cast<int>(t.cy) + reach);
        const int x0 = std::max(0, static_cast<int>(t.cx) - reach);
        const int x1 = std::min(size - 1, static_cast<int>(t.cx) + reach);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dy = y - t.cy, dx = x - t.cx;
                const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * t.sigma * t.sigma));
                const float contrib = t.contrast * static_cast<float>(g);
                noiseless.at(0, 0, y, x) += contrib;
                if (contrib > half_peak) mask.at(0, 0, y, x) = 1.0f;
            }
        }
    }

    Sample sample;
    sample.mask = mask;
    sample.image = Tensor({1, 1, size, size});
    for (std::size_t i = 0; i < sample.image.data.size(); ++i) {
        const float v = noiseless.data[i] + rng.normal(0.0f, cfg.noise_sigma);
        sample.image.data[i] = std::clamp(v, 0.0f, 1.0f);
    }
    sample.id = "synth_" + std::to_string(seed);

    SynthDetail detail;
    detail.sample = std::move(sample);
    detail.noiseless = std::move(noiseless);
    for (const TargetDraw& t : targets) detail.centers.emplace_back(t.cy, t.cx);
    return detail;
}

Sample synth_scene(const SceneConfig& cfg, std::uint64_t seed) {
    return synth_scene_detail(cfg, seed).sample;
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir, int resize_to) {
    namespace fs = std::filesystem;
    if (resize_to < 16 || resize_to % 16 != 0) {
        throw std::invalid_argument("load_dataset: resize_to must be a positive multiple of 16");
    }
    const fs::path images_dir = dir / "images";
    const fs::path masks_dir = dir / "masks";
    if (!fs::is_directory(images_dir) || !fs::is_directory(masks_dir)) {
        throw std::runtime_error("load_dataset: expected " + images_dir.string() + " and " +
                                 masks_dir.string());
    }

    auto is_image_file = [](const fs::path& p) {
        const std::string ext = p.extension().string();
        return ext == ".png" || ext == ".pgm";
    };

    std::map<std::string, fs::path> images, masks;
    for (const auto& entry : fs::directory_iterator(images_dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
            images[entry.path().stem().string()] = entry.path();
        }
    }
    for (const auto& entry : fs::directory_iterator(masks_dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
            masks[entry.path().stem().string()] = entry.path();
        }
    }

    std::vector<Sample> out;
    for (const auto& [stem, image_path] : images) {
        auto mit = masks.find(stem);
        if (mit == masks.end()) {
            throw std::runtime_error("load_dataset: no mask for image stem '" + stem + "'");
        }
        const img::GrayImage gi = img::read_gray(image_path);
        const img::GrayImage gm = img::read_gray(mit->second);

        Tensor image({1, 1, gi.height, gi.width});
        for (std::size_t i = 0; i < gi.pixels.size(); ++i) {
            image.data[i] = static_cast<float>(gi.pixels[i]) / gi.max_value();
        }
        Tensor mask({1, 1, gm.height, gm.width});
        for (std::size_t i = 0; i < gm.pixels.size(); ++i) {
            mask.data[i] = static_cast<float>(gm.pixels[i]) / gm.max_value();
        }

        Sample s;
        s.image = ops::bilinear_resize(image, resize_to, resize_to);
        s.mask = ops::nearest_resize(mask, resize_to, resize_to);
        for (float& v : s.mask.data) v = v > 0.5f ? 1.0f : 0.0f;
        s.id = stem;
        out.push_back(std::move(s));
    }
    return out;
}

void save_sample(const std::filesystem::path& dir, const Sample& sample) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    const int h = sample.image.shape.h, w = sample.image.shape.w;

    std::vector<std::uint16_t> ipx(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < ipx.size(); ++i) {
        const float v = std::clamp(sample.image.data[i], 0.0f, 1.0f);
        ipx[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
    }
    img::write_png_gray16(dir / "images" / (sample.id + ".png"), w, h, ipx);

    std::vector<std::uint8_t> mpx(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < mpx.size(); ++i) {
        mpx[i] = sample.mask.data[i] > 0.5f ? 255 : 0;
    }
    img::write_png_gray8(dir / "masks" / (sample.id + ".png"), w, h, mpx);
}

} // namespace msda::data
