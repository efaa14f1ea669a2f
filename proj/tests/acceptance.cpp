// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "msda/cli.hpp"
#include "msda/data.hpp"
#include "msda/eval.hpp"
#include "msda/filters.hpp"
#include "msda/gradcheck_suite.hpp"
#include "msda/image_io.hpp"
#include "msda/net.hpp"
#include "msda/rng.hpp"
#include "msda/train.hpp"

using namespace msda;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int number;
    std::string title;
    std::function<bool(std::string&)> body;
};

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("msda_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

bool expect(bool cond, const std::string& what, std::string& detail) {
    if (!cond && detail.empty()) detail = what;
    return cond;
}

// --- criterion 1: fixed-filter oracle ---------------------------------------

Tensor fixed_filter_oracle(const Tensor& x, filters::Direction d, int stride,
                           filters::FilterPadding padding) {
    const auto k = filters::directional_kernel(d);
    const int h = x.shape.h, w = x.shape.w;
    const bool none = padding == filters::FilterPadding::None;
    const int out_h = none ? (h - 2) / stride + 1 : (h - 1) / stride + 1;
    const int out_w = none ? (w - 2) / stride + 1 : (w - 1) / stride + 1;
    Tensor out({x.shape.n, x.shape.c, out_h, out_w});
    for (int n = 0; n < x.shape.n; ++n)
        for (int c = 0; c < x.shape.c; ++c)
            for (int y = 0; y < out_h; ++y)
                for (int xx = 0; xx < out_w; ++xx) {
                    double acc = 0.0;
                    for (int i = 0; i < 2; ++i)
                        for (int j = 0; j < 2; ++j) {
                            const int iy = std::min(y * stride + i, h - 1);
                            const int ix = std::min(xx * stride + j, w - 1);
                            acc += static_cast<double>(k[i][j]) * x.at(n, c, iy, ix);
                        }
                    out.at(n, c, y, xx) = static_cast<float>(acc);
                }
    return out;
}

bool criterion1(std::string& detail) {
    bool ok = true;
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = ops::random_uniform({1, 1, 16, 16}, -1.0f, 1.0f, rng);
        for (filters::Direction d : filters::kAllDirections) {
            for (int stride : {1, 2}) {
                for (auto pad : {filters::FilterPadding::None, filters::FilterPadding::SameReplicate}) {
                    const Tensor got = filters::apply_fixed_filter(x, d, stride, pad);
                    const Tensor want = fixed_filter_oracle(x, d, stride, pad);
                    for (std::size_t i = 0; i < got.data.size(); ++i) {
                        ok &= expect(std::abs(got.data[i] - want.data[i]) <= 1e-6f,
                                     "oracle mismatch", detail);
                    }
                }
            }
        }
    }
    const Tensor constant({1, 1, 16, 16}, 0.42f);
    for (filters::Direction d : filters::kHighPassDirections) {
        for (int stride : {1, 2}) {
            const Tensor out =
                filters::apply_fixed_filter(constant, d, stride, filters::FilterPadding::SameReplicate);
            for (float v : out.data) {
                ok &= expect(v == 0.0f, "high-pass on constant input not exactly zero", detail);
            }
        }
    }
    return ok;
}

// --- criterion 2: kernel constants ------------------------------------------

bool criterion2(std::string& detail) {
    bool ok = true;
    using filters::Direction;
    const auto check_kernel = [&](Direction d, std::array<std::array<float, 2>, 2> want) {
        const auto k = filters::directional_kernel(d);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                ok &= expect(k[i][j] == want[i][j], "kernel constant mismatch", detail);
            }
    };
    check_kernel(Direction::Horizontal, {{{0.5f, -0.5f}, {0.5f, -0.5f}}});
    check_kernel(Direction::Vertical, {{{0.5f, 0.5f}, {-0.5f, -0.5f}}});
    check_kernel(Direction::Diagonal, {{{0.5f, -0.5f}, {-0.5f, 0.5f}}});
    check_kernel(Direction::Low, {{{0.5f, 0.5f}, {0.5f, 0.5f}}});

    for (Direction a : filters::kAllDirections) {
        for (Direction b : filters::kAllDirections) {
            if (a == b) continue;
            const auto ka = filters::directional_kernel(a);
            const auto kb = filters::directional_kernel(b);
            float dot = 0.0f;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) dot += ka[i][j] * kb[i][j];
            ok &= expect(dot == 0.0f, "kernels not orthogonal", detail);
        }
    }

    // HFDI adds no trainable parameters: the injection path in the full
    // network carries no parameter under any hfdi-like path, and the only
    // parameters tied to the hfdi switch belong to the splice projection.
    const net::MsdaNet with(net::NetConfig::tiny(), 1);
    for (const auto& p : with.params().ordered()) {
        ok &= expect(p->path.find("hfdi") == std::string::npos, "parameter under hfdi path", detail);
    }
    Tape t;
    const std::size_t before = t.size();
    filters::hfdi(t, t.constant(Tensor({1, 1, 32, 32}, 0.5f)));
    ok &= expect(t.size() > before, "hfdi did not record", detail);
    return ok;
}

// --- criterion 3: gradient suite ---------------------------------------------

bool criterion3(std::string& detail) {
    std::ostringstream os;
    const bool ok = report_gradient_suite(os);
    if (!ok) detail = "one or more gradient checks out of tolerance:\n" + os.str();
    std::cout << os.str();
    return ok;
}

// --- criterion 4: structural invariants --------------------------------------

bool criterion4(std::string& detail) {
    bool ok = true;
    const net::NetConfig tiny = net::NetConfig::tiny();
    const net::MsdaNet network(tiny, 21);
    Rng rng(102);
    for (int size : {32, 48, 64, 96, 128, 176, 256}) {
        const Tensor image = ops::random_uniform({1, 1, size, size}, 0.0f, 1.0f, rng);
        const Tensor prob = network.infer(image);
        ok &= expect(prob.shape == Shape{1, 1, size, size}, "spatial size not preserved", detail);
        for (float v : prob.data) {
            ok &= expect(v > 0.0f && v < 1.0f, "output outside (0,1)", detail);
        }
    }

    // MSDA residual identity with the fusion conv zeroed, per block width.
    for (int width : {4, 8, 16, 32, 64}) {
        net::NetworkParams reg;
        Rng wrng(103);
        net::NetConfig cfg = tiny;
        const net::Msda block = net::Msda::make(reg, "b", width, cfg, wrng);
        for (const std::string& name : {std::string("b.mlrl.fuse.w"), std::string("b.mlrl.fuse.b")}) {
            Parameter* p = reg.find(name);
            std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
        }
        const Tensor x = ops::random_uniform({1, width, 16, 16}, -1.0f, 1.0f, rng);
        Tape t;
        const VarId out = block(t, t.constant(x));
        ok &= expect(t.value(out).data == x.data, "MSDA residual identity violated", detail);
    }

    // MDFA branch additivity within 1e-5.
    {
        net::NetworkParams reg;
        Rng wrng(104);
        const net::Mdfa mdfa = net::Mdfa::make(reg, "a", tiny, wrng);
        const Tensor x = ops::random_uniform({2, 8, 12, 12}, -1.0f, 1.0f, rng);
        Tape t;
        const VarId xid = t.constant(x);
        const VarId out = mdfa(t, xid);
        Tensor manual(x.shape);
        for (std::size_t b = 0; b < mdfa.branches.size(); ++b) {
            const Tensor att = t.value(mdfa.attention(t, xid, b));
            const Tensor part = ops::mul(x, att);
            for (std::size_t i = 0; i < manual.data.size(); ++i) manual.data[i] += part.data[i];
        }
        for (std::size_t i = 0; i < manual.data.size(); ++i) {
            ok &= expect(std::abs(manual.data[i] - t.value(out).data[i]) <= 1e-5f,
                         "MDFA branch additivity violated", detail);
        }
    }
    return ok;
}

// --- criterion 5: ablation switches ------------------------------------------

std::size_t conv_count(int in_c, int out_c, int k, bool bias = true) {
    return static_cast<std::size_t>(out_c) * in_c * k * k + (bias ? out_c : 0);
}
std::size_t block_count(int in_c, int out_c, int k, bool use_norm) {
    return conv_count(in_c, out_c, k) + (use_norm ? 2 * static_cast<std::size_t>(out_c) : 0);
}
std::size_t mlrl_count(int in_c, int out_c, bool use_norm) {
    return block_count(in_c, out_c, 1, use_norm) + block_count(in_c, out_c, 1, use_norm) +
           block_count(out_c, out_c, 3, use_norm) + block_count(in_c, out_c, 3, use_norm) +
           block_count(out_c, out_c, 3, use_norm) + block_count(in_c, out_c, 5, use_norm) +
           block_count(out_c, out_c, 3, use_norm) + conv_count(4 * out_c, out_c, 1);
}
std::size_t mdfa_count(const net::NetConfig& cfg) {
    const int enabled = (cfg.ablation.mdfa_horizontal ? 1 : 0) + (cfg.ablation.mdfa_vertical ? 1 : 0) +
                        (cfg.ablation.mdfa_diagonal ? 1 : 0) + (cfg.ablation.mdfa_low ? 1 : 0);
    return static_cast<std::size_t>(enabled) * conv_count(2, 1, cfg.mdfa_attn_kernel);
}
std::size_t se_count(int c, int ratio) {
    const int hidden = std::max(1, c / ratio);
    return conv_count(c, hidden, 1) + conv_count(hidden, c, 1);
}
std::size_t msda_count(int c, const net::NetConfig& cfg) {
    if (!cfg.ablation.msda) return block_count(c, c, 3, cfg.use_norm) + conv_count(c, c, 3);
    std::size_t total = 0;
    if (cfg.ablation.msda_mlrl) total += mlrl_count(c, c, cfg.use_norm);
    if (cfg.ablation.msda_mdfa) total += mdfa_count(cfg);
    if (cfg.ablation.msda_se) total += se_count(c, cfg.se_ratio);
    return total;
}
std::size_t faf_count(int low_c, int high_c, const net::NetConfig& cfg) {
    std::size_t total = conv_count(high_c, low_c, 1);
    if (cfg.ablation.faf) {
        total += conv_count(high_c + low_c, high_c, 1) + conv_count(high_c, high_c, 3);
    }
    return total;
}
std::size_t network_count(const net::NetConfig& cfg) {
    const auto& ch = cfg.stage_channels;
    std::size_t total = block_count(1, ch[0], 3, cfg.use_norm) +
                        block_count(ch[0], ch[0], 3, cfg.use_norm) + 2 * msda_count(ch[0], cfg);
    for (int stage = 2; stage <= 5; ++stage) {
        total += block_count(ch[stage - 2], ch[stage - 1], 3, cfg.use_norm);
        if (stage == 2 && cfg.ablation.hfdi) total += block_count(ch[1] + 3, ch[1], 1, cfg.use_norm);
        total += 2 * msda_count(ch[stage - 1], cfg);
    }
    if (cfg.ablation.fa) {
        for (int i = 0; i < 5; ++i) total += conv_count(ch[i], ch[4], 1);
        if (cfg.use_norm) total += 2 * static_cast<std::size_t>(ch[4]);
    }
    if (cfg.ablation.mlrl_transfer) total += mlrl_count(ch[4], ch[4], cfg.use_norm);
    total += faf_count(ch[3], ch[4], cfg) + faf_count(ch[2], ch[3], cfg) +
             faf_count(ch[1], ch[2], cfg) + faf_count(ch[0], ch[1], cfg);
    total += conv_count(ch[0], 1, 1);
    return total;
}

bool criterion5(std::string& detail) {
    bool ok = true;
    const net::NetConfig base = net::NetConfig::tiny();
    const std::size_t full = net::MsdaNet(base, 1).params().scalar_count();
    ok &= expect(full == network_count(base), "full parameter count disagrees with oracle", detail);

    Rng rng(105);
    const Tensor image = ops::random_uniform({1, 1, 32, 32}, 0.0f, 1.0f, rng);
    Tensor target({1, 1, 32, 32});
    for (int y = 10; y < 14; ++y)
        for (int x = 10; x < 14; ++x) target.at(0, 0, y, x) = 1.0f;

    for (const std::string& name : net::AblationSwitches::names()) {
        net::NetConfig cfg = base;
        cfg.ablation.set(name, false);
        net::MsdaNet network(cfg, 1);
        const std::size_t pruned = network.params().scalar_count();
        ok &= expect(pruned == network_count(cfg),
                     "parameter count with '" + name + "' off disagrees with oracle", detail);
        ok &= expect(pruned <= full, "switch '" + name + "' increased parameter count", detail);

        // Forward and backward both run.
        Tape t;
        const VarId pred = network.forward(t, t.constant(image));
        const VarId loss = train::soft_iou_loss(t, pred, target, 1e-6f);
        network.params().zero_grads();
        t.backward(loss);
        bool any_grad = false;
        for (const auto& p : network.params().ordered()) {
            for (float g : p->grad.data) {
                if (g != 0.0f) {
                    any_grad = true;
                    break;
                }
            }
            if (any_grad) break;
        }
        ok &= expect(any_grad, "backward produced no gradients with '" + name + "' off", detail);
    }
    return ok;
}

// --- criterion 6: overfit test -------------------------------------------------

bool criterion6(std::string& detail) {
    data::SceneConfig scene;
    scene.size = 64;
    scene.n_targets_min = 1;
    scene.n_targets_max = 2;
    scene.sigma_min = 1.5f;
    scene.sigma_max = 3.0f;
    scene.contrast_min = 0.5f;
    scene.contrast_max = 0.9f;
    scene.clutter = 0.1f;
    scene.noise_sigma = 0.02f;
    std::vector<data::Sample> dataset;
    for (int i = 0; i < 8; ++i) dataset.push_back(data::synth_scene(scene, 4000 + i));

    net::NetConfig net_cfg = net::NetConfig::tiny();
    train::TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-4f;
    cfg.epochs = 1000; // 2 steps per epoch; capped at 2000 steps below
    cfg.seed = 11;
    cfg.augmentation = {false, false, false, false};

    // Both runs stop deterministically at the first epoch reaching the
    // target IoU (capped at 2000 steps), so the bitwise comparison below
    // covers identical trajectories.
    const fs::path dir_a = temp_dir("overfit_a");
    const train::TrainResult ra = train::train_loop(net_cfg, cfg, dataset, dir_a, 2000, 0.90);

    double best_iou = 0.0;
    for (const train::EpochStats& e : ra.log) best_iou = std::max(best_iou, e.train_iou);
    bool ok = true;
    ok &= expect(ra.total_steps <= 2000, "run exceeded 2000 steps", detail);
    ok &= expect(best_iou >= 0.90,
                 "training IoU " + std::to_string(best_iou) + " below 0.90 within 2000 steps",
                 detail);

    const fs::path dir_b = temp_dir("overfit_b");
    const train::TrainResult rb = train::train_loop(net_cfg, cfg, dataset, dir_b, 2000, 0.90);
    ok &= expect(rb.total_steps == ra.total_steps, "step counts differ between identical runs",
                 detail);
    ok &= expect(read_file(dir_a / "train_log.csv") == read_file(dir_b / "train_log.csv"),
                 "training log differs between identical runs", detail);
    ok &= expect(read_file(dir_a / "checkpoint_final.bin") ==
                     read_file(dir_b / "checkpoint_final.bin"),
                 "final checkpoint differs between identical runs", detail);
    return ok;
}

// --- criterion 7: metric oracle -------------------------------------------------

bool criterion7(std::string& detail) {
    bool ok = true;
    Tensor gt({1, 1, 3, 3});
    gt.at(0, 0, 0, 0) = 1.0f;
    gt.at(0, 0, 2, 2) = 1.0f;
    const eval::ComponentSet gt_comps = eval::connected_components(gt);

    for (int bits = 0; bits < 512; ++bits) {
        Tensor pred({1, 1, 3, 3});
        for (int i = 0; i < 9; ++i) pred.data[i] = (bits >> i) & 1 ? 1.0f : 0.0f;
        const eval::EvalRecord got = eval::compute_metrics({pred}, {gt}, 3.0);

        // Brute force: direct pixel counting plus exhaustive matching.
        double tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < 9; ++i) {
            if (pred.data[i] == 1.0f && gt.data[i] == 1.0f) tp++;
            else if (pred.data[i] == 1.0f) fp++;
            else if (gt.data[i] == 1.0f) fn++;
        }
        const double iou = (tp + fp + fn) > 0 ? tp / (tp + fp + fn) : 1.0;
        ok &= expect(got.iou == iou, "IoU mismatch vs brute force", detail);
        ok &= expect(got.fa == fp / 9.0, "Fa mismatch vs brute force", detail);

        const eval::ComponentSet pred_comps = eval::connected_components(pred);
        struct P {
            double d;
            std::size_t gi, pi;
        };
        std::vector<P> pairs;
        for (std::size_t gi = 0; gi < gt_comps.components.size(); ++gi)
            for (std::size_t pi = 0; pi < pred_comps.components.size(); ++pi) {
                const double d = std::hypot(
                    gt_comps.components[gi].centroid_row - pred_comps.components[pi].centroid_row,
                    gt_comps.components[gi].centroid_col - pred_comps.components[pi].centroid_col);
                if (d <= 3.0) pairs.push_back({d, gi, pi});
            }
        std::sort(pairs.begin(), pairs.end(), [](const P& a, const P& b) {
            if (a.d != b.d) return a.d < b.d;
            if (a.gi != b.gi) return a.gi < b.gi;
            return a.pi < b.pi;
        });
        std::vector<bool> gu(gt_comps.components.size(), false);
        std::vector<bool> pu(pred_comps.components.size(), false);
        int matched = 0;
        for (const P& p : pairs) {
            if (gu[p.gi] || pu[p.pi]) continue;
            gu[p.gi] = pu[p.pi] = true;
            matched++;
        }
        const double pd = static_cast<double>(matched) / gt_comps.components.size();
        ok &= expect(got.pd == pd, "Pd mismatch vs brute force", detail);
    }

    // Hand-derived 8x8 case: iou = 0.2, pd = 1, fa = 1/64 exactly.
    Tensor gt8({1, 1, 8, 8});
    for (int y = 1; y <= 2; ++y)
        for (int x = 1; x <= 2; ++x) gt8.at(0, 0, y, x) = 1.0f;
    Tensor pred8({1, 1, 8, 8});
    pred8.at(0, 0, 1, 1) = 1.0f;
    pred8.at(0, 0, 6, 6) = 1.0f;
    const eval::EvalRecord r8 = eval::compute_metrics({pred8}, {gt8}, 3.0);
    ok &= expect(r8.iou == 0.2, "8x8 case IoU != 0.2", detail);
    ok &= expect(r8.pd == 1.0, "8x8 case Pd != 1", detail);
    ok &= expect(r8.fa == 1.0 / 64.0, "8x8 case Fa != 1/64", detail);
    return ok;
}

// --- criterion 8: ROC sweep -----------------------------------------------------

bool criterion8(std::string& detail) {
    bool ok = true;
    Rng rng(106);
    // Centered targets: the tau = 0 all-positive component then matches
    // every GT under centroid matching, making the threshold-floor
    // endpoint exact.
    std::vector<Tensor> probs, gts;
    for (int i = 0; i < 4; ++i) {
        probs.push_back(ops::random_uniform({1, 1, 16, 16}, 0.02f, 0.98f, rng));
        Tensor g({1, 1, 16, 16});
        g.at(0, 0, 7, 7) = 1.0f;
        g.at(0, 0, 8, 8) = 1.0f;
        gts.push_back(g);
    }
    const std::vector<eval::RocPoint> roc = eval::roc3d(probs, gts, 0.01);
    ok &= expect(roc.size() == 101, "expected exactly 101 points", detail);
    ok &= expect(roc.front().tau == 0.0 && roc.front().pd == 1.0, "tau=0 endpoint wrong", detail);
    ok &= expect(roc.back().tau == 1.0 && roc.back().pd == 0.0 && roc.back().fa == 0.0,
                 "tau=1 endpoint wrong", detail);
    for (std::size_t i = 1; i < roc.size(); ++i) {
        ok &= expect(roc[i].fa <= roc[i - 1].fa, "Fa not non-increasing in tau", detail);
    }
    return ok;
}

// --- criterion 9: persistence ----------------------------------------------------

bool criterion9(std::string& detail) {
    bool ok = true;
    const fs::path dir = temp_dir("persist");
    net::MsdaNet network(net::NetConfig::tiny(), 31);

    data::SceneConfig scene;
    scene.size = 32;
    std::vector<Tensor> before;
    std::vector<data::Sample> samples;
    for (int i = 0; i < 2; ++i) {
        samples.push_back(data::synth_scene(scene, 500 + i));
        before.push_back(network.infer(samples.back().image));
    }

    train::save_checkpoint(dir / "net.bin", network, 5);
    const train::LoadedCheckpoint loaded = train::load_checkpoint(dir / "net.bin");
    ok &= expect(loaded.step == 5, "step not round-tripped", detail);
    for (std::size_t i = 0; i < network.params().ordered().size(); ++i) {
        ok &= expect(network.params().ordered()[i]->value.data ==
                         loaded.net->params().ordered()[i]->value.data,
                     "parameters not bitwise identical after reload", detail);
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ok &= expect(loaded.net->infer(samples[i].image).data == before[i].data,
                     "inference after reload not bitwise identical", detail);
    }
    train::save_checkpoint(dir / "net2.bin", *loaded.net, 5);
    ok &= expect(read_file(dir / "net.bin") == read_file(dir / "net2.bin"),
                 "re-saved checkpoint differs", detail);
    return ok;
}

// --- criterion 10: CLI contract ----------------------------------------------------

bool criterion10(std::string& detail) {
    bool ok = true;
    const fs::path dir = temp_dir("cli");
    const std::string config = R"json({
      "net": {"stage_channels": [4, 4, 8, 8, 8]},
      "train": {"batch_size": 4, "epochs": 2, "seed": 5,
                "augmentation": {"flip_h": false, "flip_v": false, "rotate90": false, "contrast": false}},
      "data": {"resize_to": 32,
               "synth": {"size": 32, "n_targets": [1, 2], "target_sigma": [1.0, 2.0],
                          "target_contrast": [0.5, 0.8], "clutter": 0.1, "noise_sigma": 0.02,
                          "count": 4, "seed": 3}},
      "eval": {"match_dist": 3.0, "delta": 0.1, "threshold": 0.5}
    })json";
    {
        std::ofstream os(dir / "c.json");
        os << config;
    }

    // synth: 8 image/mask pairs on disk, exit 0.
    const fs::path ds = dir / "dataset";
    ok &= expect(cli::run({"synth", "--config", (dir / "c.json").string(), "--out", ds.string(),
                           "--count", "8"}) == 0,
                 "synth exited nonzero", detail);
    int images = 0, masks = 0;
    for (const auto& e : fs::directory_iterator(ds / "images")) (void)e, ++images;
    for (const auto& e : fs::directory_iterator(ds / "masks")) (void)e, ++masks;
    ok &= expect(images == 8 && masks == 8, "synth did not write 8 pairs", detail);

    // Unknown subcommand fails.
    ok &= expect(cli::run({"bogus"}) != 0, "unknown subcommand did not fail", detail);
    ok &= expect(cli::run({"synth", "--wat", "1"}) != 0, "unknown flag did not fail", detail);

    // Unknown config keys fail with nonzero exit.
    {
        std::ofstream os(dir / "bad.json");
        os << R"({"net": {"stage_chanels": [4,4,8,8,8]}})";
    }
    ok &= expect(cli::run({"train", "--config", (dir / "bad.json").string(), "--out",
                           (dir / "x").string()}) != 0,
                 "unknown config key did not fail", detail);

    // filter: three half-resolution PNGs.
    {
        std::vector<std::uint8_t> px(64 * 64);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) px[y * 64 + x] = static_cast<std::uint8_t>(x * 3 + y);
        img::write_png_gray8(dir / "scene.png", 64, 64, px);
    }
    const fs::path comp = dir / "components";
    ok &= expect(cli::run({"filter", "--image", (dir / "scene.png").string(), "--out",
                           comp.string()}) == 0,
                 "filter exited nonzero", detail);
    for (const char* name : {"horizontal", "vertical", "diagonal"}) {
        const fs::path f = comp / (std::string(name) + ".png");
        if (!fs::exists(f)) {
            ok = expect(false, "filter output missing: " + std::string(name), detail);
            continue;
        }
        const img::GrayImage gi = img::read_gray(f);
        ok &= expect(gi.width == 32 && gi.height == 32, "filter output not half resolution", detail);
    }

    // train -> eval -> infer round trip with fixed artifact names.
    const fs::path run_dir = dir / "run";
    ok &= expect(cli::run({"train", "--config", (dir / "c.json").string(), "--out",
                           run_dir.string()}) == 0,
                 "train exited nonzero", detail);
    ok &= expect(fs::exists(run_dir / "checkpoint_final.bin") &&
                     fs::exists(run_dir / "checkpoint_best.bin") &&
                     fs::exists(run_dir / "train_log.csv"),
                 "train artifacts missing", detail);
    const fs::path eval_dir = dir / "eval";
    ok &= expect(cli::run({"eval", "--checkpoint", (run_dir / "checkpoint_final.bin").string(),
                           "--data", ds.string(), "--out", eval_dir.string(), "--config",
                           (dir / "c.json").string()}) == 0,
                 "eval exited nonzero", detail);
    ok &= expect(fs::exists(eval_dir / "metrics.csv") && fs::exists(eval_dir / "roc.csv") &&
                     fs::is_directory(eval_dir / "masks"),
                 "eval artifacts missing", detail);
    ok &= expect(cli::run({"infer", "--checkpoint", (run_dir / "checkpoint_final.bin").string(),
                           "--image", (ds / "images" / "synth_3.png").string(), "--out",
                           (dir / "mask.png").string()}) == 0,
                 "infer exited nonzero", detail);
    ok &= expect(fs::exists(dir / "mask.png"), "infer output missing", detail);
    return ok;
}

} // namespace

int main() {
    std::vector<Criterion> criteria = {
        {1, "fixed-filter oracle (1e-6, 20 random images, 4 directions, strides 1-2)", criterion1},
        {2, "kernel constants, orthogonality, parameter-free HFDI", criterion2},
        {3, "gradient suite (<= 1e-3 per op, 3e-3 end to end)", criterion3},
        {4, "structural invariants (shape, range, residual identity, MDFA additivity)", criterion4},
        {5, "ablation switches prune exactly and stay trainable", criterion5},
        {6, "overfit: 8 scenes, tiny config, IoU >= 0.90 within 2000 steps, deterministic", criterion6},
        {7, "metric oracle (512 masks + hand-derived 8x8 case)", criterion7},
        {8, "ROC sweep (101 points, monotone Fa, exact endpoints)", criterion8},
        {9, "checkpoint persistence round trip", criterion9},
        {10, "CLI contract", criterion10},
    };

    // Stated runtime limits, seconds; 0 = none.
    const double limits[10] = {5.0, 0.0, 120.0, 0.0, 0.0, 600.0, 0.0, 0.0, 0.0, 0.0};

    int failures = 0;
    for (const Criterion& c : criteria) {
        std::string detail;
        const auto start = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = c.body(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const double limit = limits[c.number - 1];
        if (ok && limit > 0.0 && seconds > limit) {
            ok = false;
            detail = "runtime " + std::to_string(seconds) + " s exceeds " + std::to_string(limit) + " s";
        }
        std::printf("%s  criterion %2d: %s  (%.1f s)\n", ok ? "PASS" : "FAIL", c.number,
                    c.title.c_str(), seconds);
        if (!ok) {
            std::printf("      %s\n", detail.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures == 0) {
        std::printf("all %zu acceptance criteria passed\n", criteria.size());
    } else {
        std::printf("%d acceptance criteria FAILED\n", failures);
    }
    return failures == 0 ? 0 : 1;
}
