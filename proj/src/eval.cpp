#include "msda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace msda::eval {

namespace {

void check_binary(const Tensor& t, const char* what) {
    for (float v : t.data) {
        if (v != 0.0f && v != 1.0f) {
            throw std::invalid_argument(std::string(what) + " must be binary (0/1)");
        }
    }
}

} // namespace

ComponentSet connected_components(const Tensor& mask) {
    if (mask.shape.n != 1 || mask.shape.c != 1) {
        throw std::invalid_argument("connected_components: expected a (1,1,h,w) map");
    }
    check_binary(mask, "connected_components: mask");
    const int h = mask.shape.h, w = mask.shape.w;
    ComponentSet set;
    set.height = h;
    set.width = w;
    set.labels.assign(static_cast<std::size_t>(h) * w, 0);

    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (mask.data[idx] != 1.0f || set.labels[idx] != 0) continue;
            const int label = static_cast<int>(set.components.size()) + 1;
            Component comp;
            double sum_r = 0.0, sum_c = 0.0;
            stack.clear();
            stack.emplace_back(y, x);
            set.labels[idx] = label;
            while (!stack.empty()) {
                const auto [cy, cx] = stack.back();
                stack.pop_back();
                comp.pixel_count += 1;
                sum_r += cy;
                sum_c += cx;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
                        if (mask.data[nidx] == 1.0f && set.labels[nidx] == 0) {
                            set.labels[nidx] = label;
                            stack.emplace_back(ny, nx);
                        }
                    }
                }
            }
            comp.centroid_row = sum_r / comp.pixel_count;
            comp.centroid_col = sum_c / comp.pixel_count;
            set.components.push_back(comp);
        }
    }
    return set;
}

EvalRecord compute_metrics(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                           double match_dist) {
    if (preds.size() != gts.size()) {
        throw std::invalid_argument("compute_metrics: pred/gt list length mismatch");
    }
    EvalRecord record;
    double pooled_tp = 0.0, pooled_fp = 0.0, pooled_fn = 0.0;
    double niou_sum = 0.0;
    std::size_t total_pixels = 0;
    double fp_pixels = 0.0;
    int gt_components = 0;
    int matched_components = 0;

    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Tensor& p = preds[i];
        const Tensor& g = gts[i];
        if (!(p.shape == g.shape)) {
            throw std::invalid_argument("compute_metrics: shape mismatch at pair " + std::to_string(i));
        }
        check_binary(p, "compute_metrics: prediction");
        check_binary(g, "compute_metrics: ground truth");

        double tp = 0.0, fp = 0.0, fn = 0.0;
        for (std::size_t k = 0; k < p.data.size(); ++k) {
            const bool pp = p.data[k] == 1.0f;
            const bool gg = g.data[k] == 1.0f;
            if (pp && gg) tp += 1.0;
            else if (pp) fp += 1.0;
            else if (gg) fn += 1.0;
        }
        pooled_tp += tp;
        pooled_fp += fp;
        pooled_fn += fn;
        fp_pixels += fp;
        total_pixels += p.data.size();

        // Empty GT with empty prediction scores 1; empty GT with any
        // predicted pixel scores 0.
        const double denom = tp + fp + fn;
        niou_sum += denom > 0.0 ? tp / denom : 1.0;

        const ComponentSet gset = connected_components(g);
        const ComponentSet pset = connected_components(p);
        gt_components += static_cast<int>(gset.components.size());

        // Greedy nearest-first one-to-one matching; each predicted
        // component is consumable once.
        struct Pair {
            double dist;
            int gi, pi;
        };
        std::vector<Pair> pairs;
        for (int gi = 0; gi < static_cast<int>(gset.components.size()); ++gi) {
            for (int pi = 0; pi < static_cast<int>(pset.components.size()); ++pi) {
                const double dr = gset.components[gi].centroid_row - pset.components[pi].centroid_row;
                const double dc = gset.components[gi].centroid_col - pset.components[pi].centroid_col;
                const double dist = std::sqrt(dr * dr + dc * dc);
                if (dist <= match_dist) pairs.push_back({dist, gi, pi});
            }
        }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            if (a.gi != b.gi) return a.gi < b.gi;
            return a.pi < b.pi;
        });
        std::vector<bool> gt_used(gset.components.size(), false);
        std::vector<bool> pred_used(pset.components.size(), false);
        for (const Pair& pr : pairs) {
            if (gt_used[pr.gi] || pred_used[pr.pi]) continue;
            gt_used[pr.gi] = true;
            pred_used[pr.pi] = true;
            matched_components += 1;
        }
    }

    const double pooled_denom = pooled_tp + pooled_fp + pooled_fn;
    record.iou = pooled_denom > 0.0 ? pooled_tp / pooled_denom : 1.0;
    record.niou = preds.empty() ? 1.0 : niou_sum / static_cast<double>(preds.size());
    record.pd = gt_components > 0 ? static_cast<double>(matched_components) / gt_components : 1.0;
    record.fa = total_pixels > 0 ? fp_pixels / static_cast<double>(total_pixels) : 0.0;
    return record;
}

std::vector<RocPoint> roc3d(const std::vector<Tensor>& pred_probs, const std::vector<Tensor>& gts,
                            double delta, double match_dist) {
    if (!(delta > 0.0 && delta <= 1.0)) {
        throw std::invalid_argument("roc3d: delta must be in (0, 1]");
    }
    std::vector<double> taus;
    for (int i = 0;; ++i) {
        const double tau = i * delta;
        if (tau >= 1.0 - 1e-12) {
            taus.push_back(1.0);
            break;
        }
        taus.push_back(tau);
    }

    std::vector<RocPoint> roc;
    roc.reserve(taus.size());
    std::vector<Tensor> bin(pred_probs.size());
    for (double tau : taus) {
        for (std::size_t i = 0; i < pred_probs.size(); ++i) {
            Tensor b(pred_probs[i].shape);
            for (std::size_t k = 0; k < b.data.size(); ++k) {
                b.data[k] = pred_probs[i].data[k] > tau ? 1.0f : 0.0f;
            }
            bin[i] = std::move(b);
        }
        const EvalRecord r = compute_metrics(bin, gts, match_dist);
        roc.push_back({tau, r.pd, r.fa});
    }
    return roc;
}

void write_metrics_csv(const std::filesystem::path& file, const EvalRecord& record) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("write_metrics_csv: cannot open " + file.string());
    os.precision(9);
    os << "metric,value\n";
    os << "iou," << record.iou << "\n";
    os << "niou," << record.niou << "\n";
    os << "pd," << record.pd << "\n";
    os << "fa," << record.fa << "\n";
}

void write_roc_csv(const std::filesystem::path& file, const std::vector<RocPoint>& roc) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("write_roc_csv: cannot open " + file.string());
    os.precision(9);
    os << "tau,pd,fa\n";
    for (const RocPoint& p : roc) {
        os << p.tau << "," << p.pd << "," << p.fa << "\n";
    }
}

} // namespace msda::eval
