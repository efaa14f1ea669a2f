#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msda/filters.hpp"
#include "msda/tensor.hpp"

namespace msda::net {

// Runtime ablation switches; everything defaults to on (the full network).
struct AblationSwitches {
    bool hfdi = true;
    bool msda = true;
    bool fa = true;
    bool mlrl_transfer = true;
    bool faf = true;
    bool msda_mlrl = true;
    bool msda_mdfa = true;
    bool msda_se = true;
    bool mdfa_low = true;
    bool mdfa_horizontal = true;
    bool mdfa_vertical = true;
    bool mdfa_diagonal = true;

    // Switch names as used by config files and `ablate --switch`:
    // hfdi, msda, fa, mlrl_transfer, faf, msda.mlrl, msda.mdfa, msda.se,
    // mdfa.low, mdfa.horizontal, mdfa.vertical, mdfa.diagonal.
    void set(const std::string& name, bool value);
    bool get(const std::string& name) const;
    static const std::vector<std::string>& names();
};

struct NetConfig {
    std::array<int, 5> stage_channels = {16, 32, 64, 64, 64};
    std::array<int, 3> mlrl_dilations = {1, 3, 5};
    int mdfa_attn_kernel = 3;
    int se_ratio = 16;
    bool use_norm = true;
    float binarize_threshold = 0.5f;
    AblationSwitches ablation;

    void validate() const;
    static NetConfig tiny(); // [4,4,8,8,8]; used by desk-scale tests
};

// Ordered collection of trainable tensors, addressable by hierarchical
// path. Insertion order is the checkpoint manifest order.
class NetworkParams {
public:
    Parameter& add(const std::string& path, Tensor init);
    Parameter* find(const std::string& path);
    const Parameter* find(const std::string& path) const;

    const std::vector<std::unique_ptr<Parameter>>& ordered() const { return params_; }
    std::size_t tensor_count() const { return params_.size(); }
    std::size_t scalar_count() const;
    std::size_t scalar_count_under(const std::string& prefix) const;
    void zero_grads();

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

int groups_for(int channels); // 8 groups, or c groups when c < 8

// --- building blocks -------------------------------------------------------

struct Conv2dLayer {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
    ConvOpts opts;

    // Kaiming-uniform fan-in with the gain of the following nonlinearity:
    // sqrt(2) ahead of relu, 1 for linear/sigmoid-followed convs (keeps the
    // norm-free decoder chain from amplifying activations at init).
    static Conv2dLayer make(NetworkParams& reg, const std::string& path, int in_c, int out_c,
                            int k, ConvOpts opts, Rng& rng, bool bias = true, float gain = 1.0f);
    VarId operator()(Tape& t, VarId x) const;
};

struct GroupNormLayer {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
    int groups = 1;

    static GroupNormLayer make(NetworkParams& reg, const std::string& path, int channels);
    VarId operator()(Tape& t, VarId x) const;
};

// conv -> [group_norm] -> [relu]
struct ConvBlock {
    Conv2dLayer conv;
    std::optional<GroupNormLayer> norm;
    bool relu = true;

    static ConvBlock make(NetworkParams& reg, const std::string& path, int in_c, int out_c, int k,
                          ConvOpts opts, Rng& rng, bool use_norm, bool relu = true);
    VarId operator()(Tape& t, VarId x) const;
};

// Multi-scale local relation learning: four branches (1x1; 1x1 + dilated
// 3x3; 3x3 + dilated 3x3; 5x5 + dilated 3x3), channel concat, linear 1x1
// fusion back to out_c.
struct Mlrl {
    ConvBlock b0;
    ConvBlock b1a, b1b;
    ConvBlock b2a, b2b;
    ConvBlock b3a, b3b;
    Conv2dLayer fuse;

    static Mlrl make(NetworkParams& reg, const std::string& path, int in_c, int out_c,
                     const NetConfig& cfg, Rng& rng);
    VarId operator()(Tape& t, VarId x) const;
};

// Multi-directional feature awareness: per enabled direction, a fixed
// depthwise filter, channel-wise avg+max pooling, a small conv + sigmoid
// attention map, applied to the input; branch outputs are summed.
// With every branch disabled the module is the identity.
struct Mdfa {
    struct Branch {
        filters::Direction dir;
        Conv2dLayer attn;
    };
    std::vector<Branch> branches;

    static Mdfa make(NetworkParams& reg, const std::string& path, const NetConfig& cfg, Rng& rng);
    VarId operator()(Tape& t, VarId x) const;
    // Attention map of one branch (n,1,h,w); exposed for branch-additivity
    // checks.
    VarId attention(Tape& t, VarId x, std::size_t branch_index) const;
};

// Squeeze-and-excitation channel attention.
struct Se {
    Conv2dLayer fc1, fc2;

    static Se make(NetworkParams& reg, const std::string& path, int channels, int ratio, Rng& rng);
    VarId operator()(Tape& t, VarId x) const;
};

// MSDA block: SE(MDFA(MLRL(x))) + x, with ablated subcomponents replaced
// by identity. When the whole MSDA switch is off, a plain residual block
// (3x3 conv + norm + relu + 3x3 conv) is used instead.
struct Msda {
    bool plain = false;
    std::optional<Mlrl> mlrl;
    std::optional<Mdfa> mdfa;
    std::optional<Se> se;
    std::optional<ConvBlock> plain1;
    std::optional<Conv2dLayer> plain2;

    static Msda make(NetworkParams& reg, const std::string& path, int channels,
                     const NetConfig& cfg, Rng& rng);
    VarId operator()(Tape& t, VarId x) const;
};

// Stride-2 3x3 conv + norm + relu; requires even spatial dims.
struct Downsample {
    ConvBlock block;

    static Downsample make(NetworkParams& reg, const std::string& path, int in_c, int out_c,
                           const NetConfig& cfg, Rng& rng);
    VarId operator()(Tape& t, VarId x) const;
};

// Feature alignment fusion. Full form: upsample f_high, pre-fuse with
// f_low via a 1x1 conv, learn an additive offset with a 3x3 conv, apply it
// to the upsampled map, compress to f_low's channels and add. Reduced form
// (faf switch off): upsample + 1x1 conv + add.
struct Faf {
    bool full = true;
    std::optional<Conv2dLayer> pre;
    std::optional<Conv2dLayer> offset;
    Conv2dLayer align;

    static Faf make(NetworkParams& reg, const std::string& path, int low_c, int high_c,
                    const NetConfig& cfg, Rng& rng);
    VarId operator()(Tape& t, VarId f_low, VarId f_high) const;
};

// Feature aggregation: every stage output pooled down to the deepest
// resolution, projected to c5 by 1x1 convs, summed, then norm + relu.
struct FaAggregate {
    std::array<Conv2dLayer, 5> proj;
    std::optional<GroupNormLayer> norm;
    bool use_norm = true;

    static FaAggregate make(NetworkParams& reg, const std::string& path, const NetConfig& cfg,
                            Rng& rng);
    VarId operator()(Tape& t, const std::array<VarId, 5>& stages) const;
};

// Encoder stage outputs plus the decoder result; exposed for structural
// tests.
struct ForwardTrace {
    std::array<VarId, 5> encoder{};
    VarId aggregate = -1;
    VarId output = -1;
};

// The assembled five-stage network.
class MsdaNet {
public:
    MsdaNet(NetConfig cfg, std::uint64_t seed);

    const NetConfig& config() const { return cfg_; }
    NetworkParams& params() { return params_; }
    const NetworkParams& params() const { return params_; }

    VarId forward(Tape& t, VarId image) const;
    ForwardTrace forward_trace(Tape& t, VarId image) const;
    Tensor infer(const Tensor& image) const;

private:
    NetConfig cfg_;
    NetworkParams params_;

    ConvBlock stem1_, stem2_;
    std::array<std::optional<Msda>, 10> blocks_; // two per stage
    std::array<std::optional<Downsample>, 4> down_; // stages 2..5
    std::optional<ConvBlock> inject_proj_;
    std::optional<FaAggregate> fa_;
    std::optional<Mlrl> transfer_;
    std::array<std::optional<Faf>, 4> faf_; // decoder, deep to shallow
    Conv2dLayer head_;
};

std::size_t count_params(const MsdaNet& net);

} // namespace msda::net
