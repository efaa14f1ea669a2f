#include "msda/net.hpp"

#include <cmath>
#include <stdexcept>

#include "msda/rng.hpp"

namespace msda::net {

void AblationSwitches::set(const std::string& name, bool value) {
    if (name == "hfdi") hfdi = value;
    else if (name == "msda") msda = value;
    else if (name == "fa") fa = value;
    else if (name == "mlrl_transfer") mlrl_transfer = value;
    else if (name == "faf") faf = value;
    else if (name == "msda.mlrl") msda_mlrl = value;
    else if (name == "msda.mdfa") msda_mdfa = value;
    else if (name == "msda.se") msda_se = value;
    else if (name == "mdfa.low") mdfa_low = value;
    else if (name == "mdfa.horizontal") mdfa_horizontal = value;
    else if (name == "mdfa.vertical") mdfa_vertical = value;
    else if (name == "mdfa.diagonal") mdfa_diagonal = value;
    else throw std::invalid_argument("unknown ablation switch: " + name);
}

bool AblationSwitches::get(const std::string& name) const {
    if (name == "hfdi") return hfdi;
    if (name == "msda") return msda;
    if (name == "fa") return fa;
    if (name == "mlrl_transfer") return mlrl_transfer;
    if (name == "faf") return faf;
    if (name == "msda.mlrl") return msda_mlrl;
    if (name == "msda.mdfa") return msda_mdfa;
    if (name == "msda.se") return msda_se;
    if (name == "mdfa.low") return mdfa_low;
    if (name == "mdfa.horizontal") return mdfa_horizontal;
    if (name == "mdfa.vertical") return mdfa_vertical;
    if (name == "mdfa.diagonal") return mdfa_diagonal;
    throw std::invalid_argument("unknown ablation switch: " + name);
}

const std::vector<std::string>& AblationSwitches::names() {
    static const std::vector<std::string> kNames = {
        "hfdi", "msda", "fa", "mlrl_transfer", "faf", "msda.mlrl", "msda.mdfa", "msda.se",
        "mdfa.low", "mdfa.horizontal", "mdfa.vertical", "mdfa.diagonal"};
    return kNames;
}

void NetConfig::validate() const {
    for (int c : stage_channels) {
        if (c < 1) throw std::invalid_argument("net config: stage channels must be >= 1");
    }
    if (stage_channels[2] != stage_channels[3] || stage_channels[3] != stage_channels[4]) {
        throw std::invalid_argument("net config: stages 3-5 must share one channel width");
    }
    for (int d : mlrl_dilations) {
        if (d < 1) throw std::invalid_argument("net config: dilations must be >= 1");
    }
    if (mdfa_attn_kernel < 1) throw std::invalid_argument("net config: mdfa_attn_kernel must be >= 1");
    if (se_ratio < 1) throw std::invalid_argument("net config: se_ratio must be >= 1");
    if (!(binarize_threshold > 0.0f && binarize_threshold < 1.0f)) {
        throw std::invalid_argument("net config: binarize_threshold must be in (0,1)");
    }
}

NetConfig NetConfig::tiny() {
    NetConfig cfg;
    cfg.stage_channels = {4, 4, 8, 8, 8};
    return cfg;
}

Parameter& NetworkParams::add(const std::string& path, Tensor init) {
    if (index_.count(path)) throw std::invalid_argument("duplicate parameter path: " + path);
    params_.push_back(std::make_unique<Parameter>(path, std::move(init)));
    index_.emplace(path, params_.size() - 1);
    return *params_.back();
}

Parameter* NetworkParams::find(const std::string& path) {
    auto it = index_.find(path);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* NetworkParams::find(const std::string& path) const {
    auto it = index_.find(path);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

std::size_t NetworkParams::scalar_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p->value.numel();
    return total;
}

std::size_t NetworkParams::scalar_count_under(const std::string& prefix) const {
    std::size_t total = 0;
    for (const auto& p : params_) {
        if (p->path.rfind(prefix, 0) == 0) total += p->value.numel();
    }
    return total;
}

void NetworkParams::zero_grads() {
    for (auto& p : params_) {
        std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0f);
    }
}

int groups_for(int channels) { return channels < 8 ? channels : 8; }

namespace {

Tensor kaiming_uniform(Shape s, int fan_in, float gain, Rng& rng) {
    const float bound = gain * std::sqrt(3.0f / static_cast<float>(fan_in));
    return ops::random_uniform(s, -bound, bound, rng);
}

constexpr float kReluGain = 1.4142135f; // sqrt(2)

} // namespace

Conv2dLayer Conv2dLayer::make(NetworkParams& reg, const std::string& path, int in_c, int out_c,
                              int k, ConvOpts opts, Rng& rng, bool bias, float gain) {
    Conv2dLayer layer;
    layer.opts = opts;
    layer.w = &reg.add(path + ".w", kaiming_uniform({out_c, in_c, k, k}, in_c * k * k, gain, rng));
    if (bias) layer.b = &reg.add(path + ".b", Tensor({1, out_c, 1, 1}));
    return layer;
}

VarId Conv2dLayer::operator()(Tape& t, VarId x) const {
    std::optional<VarId> bias;
    if (b) bias = t.param(*b);
    return t.conv2d(x, t.param(*w), bias, opts);
}

GroupNormLayer GroupNormLayer::make(NetworkParams& reg, const std::string& path, int channels) {
    GroupNormLayer layer;
    layer.groups = groups_for(channels);
    layer.gamma = &reg.add(path + ".gamma", Tensor({1, channels, 1, 1}, 1.0f));
    layer.beta = &reg.add(path + ".beta", Tensor({1, channels, 1, 1}));
    return layer;
}

VarId GroupNormLayer::operator()(Tape& t, VarId x) const {
    return t.group_norm(x, groups, t.param(*gamma), t.param(*beta));
}

ConvBlock ConvBlock::make(NetworkParams& reg, const std::string& path, int in_c, int out_c, int k,
                          ConvOpts opts, Rng& rng, bool use_norm, bool relu) {
    ConvBlock block;
    block.conv = Conv2dLayer::make(reg, path + ".conv", in_c, out_c, k, opts, rng, true,
                                   relu ? kReluGain : 1.0f);
    if (use_norm) block.norm = GroupNormLayer::make(reg, path + ".norm", out_c);
    block.relu = relu;
    return block;
}

VarId ConvBlock::operator()(Tape& t, VarId x) const {
    VarId y = conv(t, x);
    if (norm) y = (*norm)(t, y);
    if (relu) y = t.relu(y);
    return y;
}

Mlrl Mlrl::make(NetworkParams& reg, const std::string& path, int in_c, int out_c,
                const NetConfig& cfg, Rng& rng) {
    Mlrl m;
    const ConvOpts same{1, 1, Padding::SameZero};
    auto dilated = [&](int rate) { return ConvOpts{1, rate, Padding::SameZero}; };
    const bool gn = cfg.use_norm;
    m.b0 = ConvBlock::make(reg, path + ".b0", in_c, out_c, 1, same, rng, gn);
    m.b1a = ConvBlock::make(reg, path + ".b1.conv1", in_c, out_c, 1, same, rng, gn);
    m.b1b = ConvBlock::make(reg, path + ".b1.conv2", out_c, out_c, 3, dilated(cfg.mlrl_dilations[0]), rng, gn);
    m.b2a = ConvBlock::make(reg, path + ".b2.conv1", in_c, out_c, 3, same, rng, gn);
    m.b2b = ConvBlock::make(reg, path + ".b2.conv2", out_c, out_c, 3, dilated(cfg.mlrl_dilations[1]), rng, gn);
    m.b3a = ConvBlock::make(reg, path + ".b3.conv1", in_c, out_c, 5, same, rng, gn);
    m.b3b = ConvBlock::make(reg, path + ".b3.conv2", out_c, out_c, 3, dilated(cfg.mlrl_dilations[2]), rng, gn);
    m.fuse = Conv2dLayer::make(reg, path + ".fuse", 4 * out_c, out_c, 1, same, rng);
    return m;
}

VarId Mlrl::operator()(Tape& t, VarId x) const {
    const VarId f0 = b0(t, x);
    const VarId f1 = b1b(t, b1a(t, x));
    const VarId f2 = b2b(t, b2a(t, x));
    const VarId f3 = b3b(t, b3a(t, x));
    return fuse(t, t.channel_concat({f0, f1, f2, f3}));
}

Mdfa Mdfa::make(NetworkParams& reg, const std::string& path, const NetConfig& cfg, Rng& rng) {
    Mdfa m;
    const ConvOpts same{1, 1, Padding::SameZero};
    auto enabled = [&](filters::Direction d) {
        switch (d) {
            case filters::Direction::Horizontal: return cfg.ablation.mdfa_horizontal;
            case filters::Direction::Vertical: return cfg.ablation.mdfa_vertical;
            case filters::Direction::Diagonal: return cfg.ablation.mdfa_diagonal;
            case filters::Direction::Low: return cfg.ablation.mdfa_low;
        }
        return false;
    };
    for (filters::Direction d : filters::kAllDirections) {
        if (!enabled(d)) continue;
        Branch br;
        br.dir = d;
        br.attn = Conv2dLayer::make(reg, path + "." + filters::direction_name(d) + ".attn", 2, 1,
                                    cfg.mdfa_attn_kernel, same, rng);
        m.branches.push_back(br);
    }
    return m;
}

VarId Mdfa::attention(Tape& t, VarId x, std::size_t branch_index) const {
    const Branch& br = branches.at(branch_index);
    const VarId filtered =
        filters::apply_fixed_filter(t, x, br.dir, 1, filters::FilterPadding::SameReplicate);
    const VarId avg = t.pool(filtered, PoolAxis::Channel, PoolMode::Avg);
    const VarId mx = t.pool(filtered, PoolAxis::Channel, PoolMode::Max);
    return t.sigmoid(br.attn(t, t.channel_concat({avg, mx})));
}

VarId Mdfa::operator()(Tape& t, VarId x) const {
    if (branches.empty()) return x;
    VarId out = -1;
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const VarId attended = t.mul(x, attention(t, x, i));
        out = (out < 0) ? attended : t.add(out, attended);
    }
    return out;
}

Se Se::make(NetworkParams& reg, const std::string& path, int channels, int ratio, Rng& rng) {
    Se se;
    const int hidden = std::max(1, channels / ratio);
    const ConvOpts none{1, 1, Padding::None};
    se.fc1 = Conv2dLayer::make(reg, path + ".fc1", channels, hidden, 1, none, rng, true, kReluGain);
    se.fc2 = Conv2dLayer::make(reg, path + ".fc2", hidden, channels, 1, none, rng);
    return se;
}

VarId Se::operator()(Tape& t, VarId x) const {
    VarId s = t.pool(x, PoolAxis::Spatial, PoolMode::Avg);
    s = t.relu(fc1(t, s));
    s = t.sigmoid(fc2(t, s));
    return t.mul(x, s);
}

Msda Msda::make(NetworkParams& reg, const std::string& path, int channels, const NetConfig& cfg,
                Rng& rng) {
    Msda m;
    if (!cfg.ablation.msda) {
        m.plain = true;
        const ConvOpts same{1, 1, Padding::SameZero};
        m.plain1 = ConvBlock::make(reg, path + ".conv1", channels, channels, 3, same, rng, cfg.use_norm);
        m.plain2 = Conv2dLayer::make(reg, path + ".conv2", channels, channels, 3, same, rng);
        return m;
    }
    if (cfg.ablation.msda_mlrl) m.mlrl = Mlrl::make(reg, path + ".mlrl", channels, channels, cfg, rng);
    if (cfg.ablation.msda_mdfa) m.mdfa = Mdfa::make(reg, path + ".mdfa", cfg, rng);
    if (cfg.ablation.msda_se) m.se = Se::make(reg, path + ".se", channels, cfg.se_ratio, rng);
    return m;
}

VarId Msda::operator()(Tape& t, VarId x) const {
    VarId y = x;
    if (plain) {
        y = (*plain2)(t, (*plain1)(t, x));
    } else {
        if (mlrl) y = (*mlrl)(t, y);
        if (mdfa) y = (*mdfa)(t, y);
        if (se) y = (*se)(t, y);
        if (y == x) return x; // all subcomponents ablated
    }
    return t.add(y, x);
}

Downsample Downsample::make(NetworkParams& reg, const std::string& path, int in_c, int out_c,
                            const NetConfig& cfg, Rng& rng) {
    Downsample d;
    const ConvOpts stride2{2, 1, Padding::SameZero};
    d.block = ConvBlock::make(reg, path, in_c, out_c, 3, stride2, rng, cfg.use_norm);
    return d;
}

VarId Downsample::operator()(Tape& t, VarId x) const {
    const Shape& s = t.value(x).shape;
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw std::invalid_argument("downsample: spatial dims must be even, got " + s.str());
    }
    return block(t, x);
}

Faf Faf::make(NetworkParams& reg, const std::string& path, int low_c, int high_c,
              const NetConfig& cfg, Rng& rng) {
    Faf f;
    f.full = cfg.ablation.faf;
    const ConvOpts same{1, 1, Padding::SameZero};
    if (f.full) {
        f.pre = Conv2dLayer::make(reg, path + ".pre", high_c + low_c, high_c, 1, same, rng);
        f.offset = Conv2dLayer::make(reg, path + ".offset", high_c, high_c, 3, same, rng);
    }
    f.align = Conv2dLayer::make(reg, path + ".align", high_c, low_c, 1, same, rng);
    return f;
}

VarId Faf::operator()(Tape& t, VarId f_low, VarId f_high) const {
    const Shape lo = t.value(f_low).shape;
    const Shape hi = t.value(f_high).shape;
    if (lo.h != 2 * hi.h || lo.w != 2 * hi.w) {
        throw std::invalid_argument("faf: spatial sizes must be in exact 2:1 ratio, got " + lo.str() +
                                    " vs " + hi.str());
    }
    const VarId up = t.upsample_bilinear2x(f_high);
    if (!full) {
        return t.add(align(t, up), f_low);
    }
    const VarId fused = (*pre)(t, t.channel_concat({up, f_low}));
    const VarId off = (*offset)(t, fused);
    const VarId aligned = align(t, t.add(up, off));
    return t.add(aligned, f_low);
}

FaAggregate FaAggregate::make(NetworkParams& reg, const std::string& path, const NetConfig& cfg,
                              Rng& rng) {
    FaAggregate fa;
    fa.use_norm = cfg.use_norm;
    const ConvOpts same{1, 1, Padding::SameZero};
    const int c5 = cfg.stage_channels[4];
    for (int i = 0; i < 5; ++i) {
        fa.proj[i] = Conv2dLayer::make(reg, path + ".proj" + std::to_string(i + 1),
                                       cfg.stage_channels[i], c5, 1, same, rng);
    }
    if (cfg.use_norm) fa.norm = GroupNormLayer::make(reg, path + ".norm", c5);
    return fa;
}

VarId FaAggregate::operator()(Tape& t, const std::array<VarId, 5>& stages) const {
    // Copied by value: recording ops below reallocates the tape's node
    // storage, so references into it must not be held across pushes.
    const Shape deepest = t.value(stages[4]).shape;
    VarId sum = -1;
    for (int i = 0; i < 5; ++i) {
        VarId s = stages[i];
        int h = t.value(s).shape.h;
        const int expected = deepest.h << (4 - i);
        if (h != expected || t.value(s).shape.w != (deepest.w << (4 - i))) {
            throw std::invalid_argument("fa_aggregate: stage " + std::to_string(i + 1) +
                                        " is not on the power-of-two ladder");
        }
        while (h > deepest.h) {
            s = t.avg_pool2x2(s);
            h /= 2;
        }
        s = proj[i](t, s);
        sum = (sum < 0) ? s : t.add(sum, s);
    }
    if (use_norm) {
        sum = (*norm)(t, sum);
        sum = t.relu(sum);
    }
    return sum;
}

// --- assembled network ------------------------------------------------------

MsdaNet::MsdaNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const auto& ch = cfg_.stage_channels;
    const ConvOpts same{1, 1, Padding::SameZero};

    stem1_ = ConvBlock::make(params_, "stage1.conv1", 1, ch[0], 3, same, rng, cfg_.use_norm);
    stem2_ = ConvBlock::make(params_, "stage1.conv2", ch[0], ch[0], 3, same, rng, cfg_.use_norm);
    blocks_[0] = Msda::make(params_, "stage1.block1", ch[0], cfg_, rng);
    blocks_[1] = Msda::make(params_, "stage1.block2", ch[0], cfg_, rng);

    for (int stage = 2; stage <= 5; ++stage) {
        const std::string prefix = "stage" + std::to_string(stage);
        const int in_c = ch[stage - 2];
        const int out_c = ch[stage - 1];
        down_[stage - 2] = Downsample::make(params_, prefix + ".down", in_c, out_c, cfg_, rng);
        if (stage == 2 && cfg_.ablation.hfdi) {
            // The three injected high-frequency maps widen stage 2's input;
            // a 1x1 conv restores the stage width before the MSDA blocks.
            inject_proj_ = ConvBlock::make(params_, prefix + ".inject_proj", out_c + 3, out_c, 1,
                                           same, rng, cfg_.use_norm);
        }
        blocks_[2 * (stage - 1)] = Msda::make(params_, prefix + ".block1", out_c, cfg_, rng);
        blocks_[2 * (stage - 1) + 1] = Msda::make(params_, prefix + ".block2", out_c, cfg_, rng);
    }

    if (cfg_.ablation.fa) fa_ = FaAggregate::make(params_, "fa", cfg_, rng);
    if (cfg_.ablation.mlrl_transfer) {
        transfer_ = Mlrl::make(params_, "transfer", ch[4], ch[4], cfg_, rng);
    }

    // Decoder: deepest-first fusions against E4..E1.
    const int high_c[4] = {ch[4], ch[3], ch[2], ch[1]};
    const int low_c[4] = {ch[3], ch[2], ch[1], ch[0]};
    for (int i = 0; i < 4; ++i) {
        faf_[i] = Faf::make(params_, "decoder.fuse" + std::to_string(4 - i), low_c[i], high_c[i],
                            cfg_, rng);
    }
    head_ = Conv2dLayer::make(params_, "head", ch[0], 1, 1, same, rng);
}

ForwardTrace MsdaNet::forward_trace(Tape& t, VarId image) const {
    const Shape& s = t.value(image).shape;
    if (s.c != 1) throw std::invalid_argument("network_forward: expected 1 input channel, got " + s.str());
    if (s.h % 16 != 0 || s.w % 16 != 0 || s.h < 32 || s.w < 32) {
        throw std::invalid_argument("network_forward: spatial size must be >= 32 and divisible by 16, got " +
                                    s.str());
    }

    ForwardTrace trace;
    VarId x = stem2_(t, stem1_(t, image));
    x = (*blocks_[1])(t, (*blocks_[0])(t, x));
    trace.encoder[0] = x;

    for (int stage = 2; stage <= 5; ++stage) {
        x = (*down_[stage - 2])(t, x);
        if (stage == 2 && cfg_.ablation.hfdi) {
            const VarId hf = filters::hfdi(t, image);
            x = (*inject_proj_)(t, t.channel_concat({x, hf}));
        }
        x = (*blocks_[2 * (stage - 1)])(t, x);
        x = (*blocks_[2 * (stage - 1) + 1])(t, x);
        trace.encoder[stage - 1] = x;
    }

    VarId deep = fa_ ? (*fa_)(t, trace.encoder) : trace.encoder[4];
    if (transfer_) deep = (*transfer_)(t, deep);
    trace.aggregate = deep;

    VarId up = deep;
    for (int i = 0; i < 4; ++i) {
        up = (*faf_[i])(t, trace.encoder[3 - i], up);
    }
    trace.output = t.sigmoid(head_(t, up));
    return trace;
}

VarId MsdaNet::forward(Tape& t, VarId image) const { return forward_trace(t, image).output; }

Tensor MsdaNet::infer(const Tensor& image) const {
    Tape t;
    const VarId out = forward(t, t.constant(image));
    return t.value(out);
}

std::size_t count_params(const MsdaNet& net) { return net.params().scalar_count(); }

} // namespace msda::net
