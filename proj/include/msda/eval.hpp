#pragma once

#include <filesystem>
#include <vector>

#include "msda/tensor.hpp"

namespace msda::eval {

struct Component {
    int pixel_count = 0;
    double centroid_row = 0.0;
    double centroid_col = 0.0;
};

// 8-connectivity labeling with deterministic label order (raster scan of
// each component's first pixel). Label 0 is background.
struct ComponentSet {
    std::vector<int> labels; // h*w label map
    int height = 0;
    int width = 0;
    std::vector<Component> components; // labels 1..K map to [0..K-1]
};

ComponentSet connected_components(const Tensor& mask);

struct RocPoint {
    double tau = 0.0;
    double pd = 0.0;
    double fa = 0.0;
};

struct EvalRecord {
    double iou = 0.0;  // dataset-pooled pixels
    double niou = 0.0; // per-image mean
    double pd = 0.0;   // matched GT components / all GT components
    double fa = 0.0;   // false-positive pixels / all pixels
    std::vector<RocPoint> roc;
};

// Pixel metrics pooled over the dataset plus component-level detection with
// greedy nearest-first one-to-one centroid matching within match_dist.
EvalRecord compute_metrics(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                           double match_dist = 3.0);

// Threshold sweep: tau in {0, delta, 2*delta, ..., 1}; binarization is
// prob > tau.
std::vector<RocPoint> roc3d(const std::vector<Tensor>& pred_probs, const std::vector<Tensor>& gts,
                            double delta, double match_dist = 3.0);

void write_metrics_csv(const std::filesystem::path& file, const EvalRecord& record);
void write_roc_csv(const std::filesystem::path& file, const std::vector<RocPoint>& roc);

} // namespace msda::eval
