#include "msda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "msda/rng.hpp"

namespace msda {

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(s), data(std::move(values)) {
    if (data.size() != s.numel()) {
        throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + s.str());
    }
}

bool Tensor::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace ops {

namespace {

struct PadAmount {
    int top = 0, left = 0, total_h = 0, total_w = 0;
};

PadAmount pad_for(const Shape& w, const ConvOpts& opts) {
    PadAmount p;
    if (opts.padding != Padding::None) {
        p.total_h = opts.dilation * (w.h - 1);
        p.total_w = opts.dilation * (w.w - 1);
        p.top = p.total_h / 2;
        p.left = p.total_w / 2;
    }
    return p;
}

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

} // namespace

Shape conv2d_output_shape(const Shape& x, const Shape& w, const ConvOpts& opts) {
    if (opts.stride < 1 || opts.dilation < 1) {
        throw std::invalid_argument("conv2d: stride and dilation must be >= 1");
    }
    if (x.c != w.c) {
        throw std::invalid_argument("conv2d: input channels (" + std::to_string(x.c) +
                                    ") != kernel input channels (" + std::to_string(w.c) + ")");
    }
    const PadAmount pad = pad_for(w, opts);
    const int eff_h = opts.dilation * (w.h - 1) + 1;
    const int eff_w = opts.dilation * (w.w - 1) + 1;
    if (x.h + pad.total_h < eff_h || x.w + pad.total_w < eff_w) {
        throw std::invalid_argument("conv2d: effective kernel " + std::to_string(eff_h) + "x" +
                                    std::to_string(eff_w) + " exceeds padded input " + x.str());
    }
    const int out_h = (x.h + pad.total_h - eff_h) / opts.stride + 1;
    const int out_w = (x.w + pad.total_w - eff_w) / opts.stride + 1;
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("conv2d: zero-size output for input " + x.str());
    }
    return {x.n, w.n, out_h, out_w};
}

namespace {

// Per-tap column geometry, hoisted out of the row loops.
struct TapRange {
    int off_w = 0;
    int lo = 0;
    int hi = 0;
};

constexpr int kRowBufCap = 2048;

// Dot product with eight explicit lanes: strict-FP float reductions do not
// vectorize on their own, and the fixed lane layout keeps results
// deterministic.
float dot_span(const float* a, const float* b, int n) {
    float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int k = 0;
    for (; k + 8 <= n; k += 8) {
        for (int l = 0; l < 8; ++l) lanes[l] += a[k + l] * b[k + l];
    }
    float tail = 0.0f;
    for (; k < n; ++k) tail += a[k] * b[k];
    return (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
            ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))) +
           tail;
}

} // namespace

namespace {

// Shared direct-convolution core. Works from explicit top/left padding and
// an explicit output shape so the backward pass can reuse it with the
// rotated kernel; accumulates into `out` when `accumulate` is set.
void conv2d_core(const Tensor& x, const Tensor& w, const float* bias, int s, int d,
                 const PadAmount& pad, bool replicate, const Shape& os, Tensor& out,
                 bool accumulate) {
    const int in_c = x.shape.c, h = x.shape.h, wd = x.shape.w;
    const int out_c = os.c, oh = os.h, ow = os.w;
    const int kh = w.shape.h, kw = w.shape.w;

    std::vector<TapRange> taps(kw);
    for (int j = 0; j < kw; ++j) {
        TapRange& tr = taps[j];
        tr.off_w = j * d - pad.left;
        tr.lo = 0;
        tr.hi = ow;
        if (!replicate) {
            if (tr.off_w < 0) tr.lo = (-tr.off_w + s - 1) / s;
            if (wd - 1 - tr.off_w >= 0) tr.hi = std::min(ow, (wd - 1 - tr.off_w) / s + 1);
            else tr.hi = 0;
        }
    }

    // Accumulate rows for a block of output channels in local buffers: one
    // store pass per row, no aliasing between accumulator and sources, and
    // each input row load feeds several output channels.
    if (ow > kRowBufCap) throw std::invalid_argument("conv2d: output width exceeds row buffer");

    const auto run_block = [&]<int B>(int n, int oc0, std::integral_constant<int, B>) {
        alignas(64) float acc[B][kRowBufCap];
        const float* wp[B];
        float* op[B];
        float bias_v[B];
        for (int b = 0; b < B; ++b) {
            op[b] = &out.at(n, oc0 + b, 0, 0);
            bias_v[b] = bias ? bias[oc0 + b] : 0.0f;
        }
        for (int y = 0; y < oh; ++y) {
            for (int b = 0; b < B; ++b) {
                for (int xo = 0; xo < ow; ++xo) acc[b][xo] = bias_v[b];
            }
            for (int ic = 0; ic < in_c; ++ic) {
                const float* xp = &x.at(n, ic, 0, 0);
                for (int b = 0; b < B; ++b) wp[b] = &w.at(oc0 + b, ic, 0, 0);
                for (int i = 0; i < kh; ++i) {
                    int iy = y * s - pad.top + i * d;
                    if (replicate) {
                        iy = clampi(iy, 0, h - 1);
                    } else if (iy < 0 || iy >= h) {
                        continue;
                    }
                    const float* row = xp + static_cast<std::size_t>(iy) * wd;
                    for (int j = 0; j < kw; ++j) {
                        const TapRange& tr = taps[j];
                        float wv[B];
                        for (int b = 0; b < B; ++b) wv[b] = wp[b][i * kw + j];
                        if (replicate) {
                            for (int xo = 0; xo < ow; ++xo) {
                                const float v = row[clampi(xo * s + tr.off_w, 0, wd - 1)];
                                for (int b = 0; b < B; ++b) acc[b][xo] += wv[b] * v;
                            }
                        } else if (s == 1) {
                            const float* rp = row + tr.off_w;
                            for (int xo = tr.lo; xo < tr.hi; ++xo) {
                                const float v = rp[xo];
                                for (int b = 0; b < B; ++b) acc[b][xo] += wv[b] * v;
                            }
                        } else {
                            for (int xo = tr.lo; xo < tr.hi; ++xo) {
                                const float v = row[xo * s + tr.off_w];
                                for (int b = 0; b < B; ++b) acc[b][xo] += wv[b] * v;
                            }
                        }
                    }
                }
            }
            for (int b = 0; b < B; ++b) {
                float* orow = op[b] + static_cast<std::size_t>(y) * ow;
                if (accumulate) {
                    for (int xo = 0; xo < ow; ++xo) orow[xo] += acc[b][xo];
                } else {
                    for (int xo = 0; xo < ow; ++xo) orow[xo] = acc[b][xo];
                }
            }
        }
    };

#ifdef _OPENMP
#endif
    for (int n = 0; n < os.n; ++n) {
        int oc0 = 0;
        for (; oc0 + 4 <= out_c; oc0 += 4) run_block(n, oc0, std::integral_constant<int, 4>{});
        switch (out_c - oc0) {
            case 3: run_block(n, oc0, std::integral_constant<int, 3>{}); break;
            case 2: run_block(n, oc0, std::integral_constant<int, 2>{}); break;
            case 1: run_block(n, oc0, std::integral_constant<int, 1>{}); break;
            default: break;
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvOpts& opts) {
    const Shape os = conv2d_output_shape(x.shape, w.shape, opts);
    if (bias && bias->numel() != static_cast<std::size_t>(w.shape.n)) {
        throw std::invalid_argument("conv2d: bias length != output channels");
    }
    Tensor out(os);
    const PadAmount pad = pad_for(w.shape, opts);
    conv2d_core(x, w, bias ? bias->data.data() : nullptr, opts.stride, opts.dilation, pad,
                opts.padding == Padding::SameReplicate, os, out, false);
    return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvOpts& opts,
                     const Tensor& grad_out, Tensor* gx, Tensor* gw, Tensor* gb) {
    const Shape os = grad_out.shape;
    const int in_c = x.shape.c, h = x.shape.h, wd = x.shape.w;
    const int out_c = os.c, oh = os.h, ow = os.w;
    const int kh = w.shape.h, kw = w.shape.w;
    const int s = opts.stride, d = opts.dilation;
    const PadAmount pad = pad_for(w.shape, opts);
    const bool replicate = opts.padding == Padding::SameReplicate;

    if (gb) {
        for (int oc = 0; oc < out_c; ++oc) {
            double acc = 0.0;
            for (int n = 0; n < os.n; ++n) {
                const float* gp = &grad_out.at(n, oc, 0, 0);
                for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc += gp[i];
            }
            gb->data[oc] += static_cast<float>(acc);
        }
    }

    if (gx && s == 1 && !replicate) {
        // The input gradient of a stride-1 convolution is itself a
        // convolution: grad_out against the 180-degree-rotated kernel with
        // swapped channel roles and complementary padding.
        Tensor w_rot({in_c, out_c, kh, kw});
        for (int oc = 0; oc < out_c; ++oc)
            for (int ic = 0; ic < in_c; ++ic)
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j) {
                        w_rot.at(ic, oc, kh - 1 - i, kw - 1 - j) = w.at(oc, ic, i, j);
                    }
        PadAmount rpad;
        rpad.top = d * (kh - 1) - pad.top;
        rpad.left = d * (kw - 1) - pad.left;
        conv2d_core(grad_out, w_rot, nullptr, 1, d, rpad, false, x.shape, *gx, true);
    } else if (gx) {
        // Strided / replicate-padded path: direct scatter through the
        // forward index map, one local row accumulator per input row.
        if (wd > kRowBufCap) throw std::invalid_argument("conv2d: input width exceeds row buffer");
        std::vector<TapRange> taps(kw);
        for (int j = 0; j < kw; ++j) {
            TapRange& tr = taps[j];
            tr.off_w = j * d - pad.left;
            tr.lo = 0;
            tr.hi = ow;
            if (!replicate) {
                if (tr.off_w < 0) tr.lo = (-tr.off_w + s - 1) / s;
                if (wd - 1 - tr.off_w >= 0) tr.hi = std::min(ow, (wd - 1 - tr.off_w) / s + 1);
                else tr.hi = 0;
            }
        }
#ifdef _OPENMP
#endif
        for (int n = 0; n < os.n; ++n) {
            alignas(64) float acc[kRowBufCap];
            for (int ic = 0; ic < in_c; ++ic) {
                float* gxp = &gx->at(n, ic, 0, 0);
                for (int iy = 0; iy < h; ++iy) {
                    for (int xi = 0; xi < wd; ++xi) acc[xi] = 0.0f;
                    bool touched = false;
                    for (int oc = 0; oc < out_c; ++oc) {
                        const float* gp = &grad_out.at(n, oc, 0, 0);
                        const float* wp = &w.at(oc, ic, 0, 0);
                        for (int i = 0; i < kh; ++i) {
                            for (int y = 0; y < oh; ++y) {
                                int src = y * s - pad.top + i * d;
                                if (replicate) src = clampi(src, 0, h - 1);
                                if (src != iy) continue;
                                const float* grow = gp + static_cast<std::size_t>(y) * ow;
                                for (int j = 0; j < kw; ++j) {
                                    const float wv = wp[i * kw + j];
                                    const TapRange& tr = taps[j];
                                    touched = true;
                                    if (replicate) {
                                        for (int xo = 0; xo < ow; ++xo) {
                                            const int ix = clampi(xo * s + tr.off_w, 0, wd - 1);
                                            acc[ix] += wv * grow[xo];
                                        }
                                    } else {
                                        for (int xo = tr.lo; xo < tr.hi; ++xo) {
                                            acc[xo * s + tr.off_w] += wv * grow[xo];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if (touched) {
                        float* gxrow = gxp + static_cast<std::size_t>(iy) * wd;
                        for (int xi = 0; xi < wd; ++xi) gxrow[xi] += acc[xi];
                    }
                }
            }
        }
    }

    if (gw) {
        std::vector<TapRange> taps(kw);
        for (int j = 0; j < kw; ++j) {
            TapRange& tr = taps[j];
            tr.off_w = j * d - pad.left;
            tr.lo = 0;
            tr.hi = ow;
            if (!replicate) {
                if (tr.off_w < 0) tr.lo = (-tr.off_w + s - 1) / s;
                if (wd - 1 - tr.off_w >= 0) tr.hi = std::min(ow, (wd - 1 - tr.off_w) / s + 1);
                else tr.hi = 0;
            }
        }
        // Float partial sums per row, accumulated across rows in double:
        // keeps the reduction vectorizable without giving up the long-sum
        // precision.
#ifdef _OPENMP
#endif
        for (int oc = 0; oc < out_c; ++oc) {
            for (int ic = 0; ic < in_c; ++ic) {
                for (int i = 0; i < kh; ++i) {
                    for (int j = 0; j < kw; ++j) {
                        const TapRange& tr = taps[j];
                        double wacc = 0.0;
                        for (int n = 0; n < os.n; ++n) {
                            const float* xp = &x.at(n, ic, 0, 0);
                            const float* gp = &grad_out.at(n, oc, 0, 0);
                            for (int y = 0; y < oh; ++y) {
                                int iy = y * s - pad.top + i * d;
                                if (replicate) {
                                    iy = clampi(iy, 0, h - 1);
                                } else if (iy < 0 || iy >= h) {
                                    continue;
                                }
                                const float* row = xp + static_cast<std::size_t>(iy) * wd;
                                const float* grow = gp + static_cast<std::size_t>(y) * ow;
                                float racc = 0.0f;
                                if (replicate) {
                                    for (int xo = 0; xo < ow; ++xo) {
                                        racc += row[clampi(xo * s + tr.off_w, 0, wd - 1)] * grow[xo];
                                    }
                                } else if (s == 1) {
                                    racc = dot_span(row + tr.off_w + tr.lo, grow + tr.lo,
                                                    tr.hi - tr.lo);
                                } else {
                                    for (int xo = tr.lo; xo < tr.hi; ++xo) {
                                        racc += row[xo * s + tr.off_w] * grow[xo];
                                    }
                                }
                                wacc += racc;
                            }
                        }
                        gw->at(oc, ic, i, j) += static_cast<float>(wacc);
                    }
                }
            }
        }
    }
}

Tensor sigmoid(const Tensor& x) {
    // Clamped to the open interval: float32 would round sigmoid to exactly
    // 0 or 1 for |x| beyond ~17, and downstream contracts (probability
    // maps, attention weights) require values strictly inside (0,1).
    constexpr float kLo = std::numeric_limits<float>::min();
    const float kHi = 1.0f - std::numeric_limits<float>::epsilon() / 2.0f;
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x.data[i])));
        out.data[i] = std::min(std::max(static_cast<float>(s), kLo), kHi);
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
    }
    return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    auto merge = [](int u, int v, const char* dim) {
        if (u == v || v == 1) return u;
        if (u == 1) return v;
        throw std::invalid_argument(std::string("elementwise: dimension ") + dim + " not broadcastable (" +
                                    std::to_string(u) + " vs " + std::to_string(v) + ")");
    };
    return {merge(a.n, b.n, "n"), merge(a.c, b.c, "c"), merge(a.h, b.h, "h"), merge(a.w, b.w, "w")};
}

namespace {

struct BStrides {
    std::size_t n, c, h, w;
};

BStrides strides_for(const Shape& s) {
    BStrides st;
    st.w = s.w > 1 ? 1 : 0;
    st.h = s.h > 1 ? static_cast<std::size_t>(s.w) : 0;
    st.c = s.c > 1 ? static_cast<std::size_t>(s.h) * s.w : 0;
    st.n = s.n > 1 ? static_cast<std::size_t>(s.c) * s.h * s.w : 0;
    return st;
}

template <typename F>
void broadcast_apply(const Tensor& x, const Tensor& y, const Shape& os, F&& f) {
    const BStrides sx = strides_for(x.shape), sy = strides_for(y.shape);
    std::size_t io = 0;
    for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < os.c; ++c) {
            for (int h = 0; h < os.h; ++h) {
                std::size_t ix = n * sx.n + c * sx.c + h * sx.h;
                std::size_t iy = n * sy.n + c * sy.c + h * sy.h;
                for (int w = 0; w < os.w; ++w, ++io, ix += sx.w, iy += sy.w) {
                    f(io, ix, iy);
                }
            }
        }
    }
}

// Accumulates grad contributions into an operand, reducing over broadcast
// dims in double precision when the operand is smaller than the output.
template <typename Contribution>
void reduce_into(Tensor* g, const Tensor& operand, const Shape& os, bool operand_is_x,
                 const Tensor& x, const Tensor& y, Contribution&& contrib) {
    if (!g) return;
    if (operand.shape == os) {
        broadcast_apply(x, y, os, [&](std::size_t io, std::size_t ix, std::size_t iy) {
            g->data[operand_is_x ? ix : iy] += contrib(io, ix, iy);
        });
        return;
    }
    std::vector<double> scratch(operand.numel(), 0.0);
    broadcast_apply(x, y, os, [&](std::size_t io, std::size_t ix, std::size_t iy) {
        scratch[operand_is_x ? ix : iy] += contrib(io, ix, iy);
    });
    for (std::size_t i = 0; i < scratch.size(); ++i) g->data[i] += static_cast<float>(scratch[i]);
}

} // namespace

Tensor add(const Tensor& x, const Tensor& y) {
    const Shape os = broadcast_shape(x.shape, y.shape);
    Tensor out(os);
    broadcast_apply(x, y, os, [&](std::size_t io, std::size_t ix, std::size_t iy) {
        out.data[io] = x.data[ix] + y.data[iy];
    });
    return out;
}

Tensor mul(const Tensor& x, const Tensor& y) {
    const Shape os = broadcast_shape(x.shape, y.shape);
    Tensor out(os);
    broadcast_apply(x, y, os, [&](std::size_t io, std::size_t ix, std::size_t iy) {
        out.data[io] = x.data[ix] * y.data[iy];
    });
    return out;
}

void add_backward(const Tensor& x, const Tensor& y, const Tensor& go, Tensor* gx, Tensor* gy) {
    const Shape os = go.shape;
    reduce_into(gx, x, os, true, x, y,
                [&](std::size_t io, std::size_t, std::size_t) { return go.data[io]; });
    reduce_into(gy, y, os, false, x, y,
                [&](std::size_t io, std::size_t, std::size_t) { return go.data[io]; });
}

void mul_backward(const Tensor& x, const Tensor& y, const Tensor& go, Tensor* gx, Tensor* gy) {
    const Shape os = go.shape;
    reduce_into(gx, x, os, true, x, y, [&](std::size_t io, std::size_t, std::size_t iy) {
        return go.data[io] * y.data[iy];
    });
    reduce_into(gy, y, os, false, x, y, [&](std::size_t io, std::size_t ix, std::size_t) {
        return go.data[io] * x.data[ix];
    });
}

Tensor elementwise(const Tensor& x, const Tensor* y, EltKind kind) {
    const bool binary = kind == EltKind::Add || kind == EltKind::Mul;
    if (binary && !y) throw std::invalid_argument("elementwise: binary kind requires y");
    if (!binary && y) throw std::invalid_argument("elementwise: y supplied for unary kind");
    switch (kind) {
        case EltKind::Sigmoid: return sigmoid(x);
        case EltKind::Relu: return relu(x);
        case EltKind::Add: return add(x, *y);
        case EltKind::Mul: return mul(x, *y);
    }
    throw std::invalid_argument("elementwise: unknown kind");
}

Tensor pool(const Tensor& x, PoolAxis axis, PoolMode mode) {
    if (x.numel() == 0) throw std::invalid_argument("pool: empty tensor");
    const Shape& s = x.shape;
    if (axis == PoolAxis::Spatial) {
        Tensor out({s.n, s.c, 1, 1});
        const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const float* p = &x.at(n, c, 0, 0);
                if (mode == PoolMode::Avg) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
                    out.at(n, c, 0, 0) = static_cast<float>(acc / static_cast<double>(plane));
                } else {
                    float m = p[0];
                    for (std::size_t i = 1; i < plane; ++i) m = std::max(m, p[i]);
                    out.at(n, c, 0, 0) = m;
                }
            }
        }
        return out;
    }
    Tensor out({s.n, 1, s.h, s.w});
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n) {
        float* op = &out.at(n, 0, 0, 0);
        const float* base = &x.at(n, 0, 0, 0);
        if (mode == PoolMode::Avg) {
            std::vector<double> acc(plane, 0.0);
            for (int c = 0; c < s.c; ++c) {
                const float* p = base + c * plane;
                for (std::size_t i = 0; i < plane; ++i) acc[i] += p[i];
            }
            for (std::size_t i = 0; i < plane; ++i) {
                op[i] = static_cast<float>(acc[i] / static_cast<double>(s.c));
            }
        } else {
            std::memcpy(op, base, plane * sizeof(float));
            for (int c = 1; c < s.c; ++c) {
                const float* p = base + c * plane;
                for (std::size_t i = 0; i < plane; ++i) op[i] = std::max(op[i], p[i]);
            }
        }
    }
    return out;
}

void pool_backward(const Tensor& x, PoolAxis axis, PoolMode mode, const Tensor& out,
                   const Tensor& go, Tensor* gx) {
    if (!gx) return;
    const Shape& s = x.shape;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    if (axis == PoolAxis::Spatial) {
        for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
                const float g = go.at(n, c, 0, 0);
                float* gp = &gx->at(n, c, 0, 0);
                if (mode == PoolMode::Avg) {
                    const float k = g / static_cast<float>(plane);
                    for (std::size_t i = 0; i < plane; ++i) gp[i] += k;
                } else {
                    // Route to the first scan-order occurrence of the max.
                    const float m = out.at(n, c, 0, 0);
                    const float* p = &x.at(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        if (p[i] == m) {
                            gp[i] += g;
                            break;
                        }
                    }
                }
            }
        }
        return;
    }
    for (int n = 0; n < s.n; ++n) {
        const float* gop = &go.at(n, 0, 0, 0);
        const float* base = &x.at(n, 0, 0, 0);
        float* gbase = &gx->at(n, 0, 0, 0);
        if (mode == PoolMode::Avg) {
            for (int c = 0; c < s.c; ++c) {
                float* gp = gbase + c * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    gp[i] += gop[i] / static_cast<float>(s.c);
                }
            }
        } else {
            const float* op = &out.at(n, 0, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                for (int c = 0; c < s.c; ++c) {
                    if (base[c * plane + i] == op[i]) {
                        gbase[c * plane + i] += gop[i];
                        break;
                    }
                }
            }
        }
    }
}

Tensor avg_pool2x2(const Tensor& x) {
    const Shape& s = x.shape;
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw std::invalid_argument("avg_pool2x2: spatial dims must be even, got " + s.str());
    }
    Tensor out({s.n, s.c, s.h / 2, s.w / 2});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h / 2; ++y) {
                for (int xw = 0; xw < s.w / 2; ++xw) {
                    const float v = 0.25f * (x.at(n, c, 2 * y, 2 * xw) + x.at(n, c, 2 * y, 2 * xw + 1) +
                                             x.at(n, c, 2 * y + 1, 2 * xw) + x.at(n, c, 2 * y + 1, 2 * xw + 1));
                    out.at(n, c, y, xw) = v;
                }
            }
        }
    }
    return out;
}

void avg_pool2x2_backward(const Shape& xs, const Tensor& go, Tensor* gx) {
    if (!gx) return;
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            for (int y = 0; y < xs.h / 2; ++y) {
                for (int xw = 0; xw < xs.w / 2; ++xw) {
                    const float g = 0.25f * go.at(n, c, y, xw);
                    gx->at(n, c, 2 * y, 2 * xw) += g;
                    gx->at(n, c, 2 * y, 2 * xw + 1) += g;
                    gx->at(n, c, 2 * y + 1, 2 * xw) += g;
                    gx->at(n, c, 2 * y + 1, 2 * xw + 1) += g;
                }
            }
        }
    }
}

namespace {

struct LerpTap {
    int i0, i1;
    float t;
};

LerpTap lerp_tap(int out_idx, int in_size) {
    const double pos = (out_idx + 0.5) / 2.0 - 0.5;
    const int i0 = static_cast<int>(std::floor(pos));
    LerpTap tap;
    tap.t = static_cast<float>(pos - i0);
    tap.i0 = clampi(i0, 0, in_size - 1);
    tap.i1 = clampi(i0 + 1, 0, in_size - 1);
    return tap;
}

} // namespace

Tensor upsample_bilinear2x(const Tensor& x) {
    const Shape& s = x.shape;
    Tensor out({s.n, s.c, 2 * s.h, 2 * s.w});
    std::vector<LerpTap> ty(2 * s.h), tx(2 * s.w);
    for (int i = 0; i < 2 * s.h; ++i) ty[i] = lerp_tap(i, s.h);
    for (int i = 0; i < 2 * s.w; ++i) tx[i] = lerp_tap(i, s.w);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float* p = &x.at(n, c, 0, 0);
            float* op = &out.at(n, c, 0, 0);
            for (int y = 0; y < 2 * s.h; ++y) {
                const LerpTap& a = ty[y];
                const float* r0 = p + static_cast<std::size_t>(a.i0) * s.w;
                const float* r1 = p + static_cast<std::size_t>(a.i1) * s.w;
                float* orow = op + static_cast<std::size_t>(y) * 2 * s.w;
                for (int xw = 0; xw < 2 * s.w; ++xw) {
                    const LerpTap& b = tx[xw];
                    const float top = (1.0f - b.t) * r0[b.i0] + b.t * r0[b.i1];
                    const float bot = (1.0f - b.t) * r1[b.i0] + b.t * r1[b.i1];
                    orow[xw] = (1.0f - a.t) * top + a.t * bot;
                }
            }
        }
    }
    return out;
}

void upsample_bilinear2x_backward(const Shape& xs, const Tensor& go, Tensor* gx) {
    if (!gx) return;
    std::vector<LerpTap> ty(2 * xs.h), tx(2 * xs.w);
    for (int i = 0; i < 2 * xs.h; ++i) ty[i] = lerp_tap(i, xs.h);
    for (int i = 0; i < 2 * xs.w; ++i) tx[i] = lerp_tap(i, xs.w);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            float* gp = &gx->at(n, c, 0, 0);
            const float* gop = &go.at(n, c, 0, 0);
            for (int y = 0; y < 2 * xs.h; ++y) {
                const LerpTap& a = ty[y];
                for (int xw = 0; xw < 2 * xs.w; ++xw) {
                    const LerpTap& b = tx[xw];
                    const float g = gop[static_cast<std::size_t>(y) * 2 * xs.w + xw];
                    gp[static_cast<std::size_t>(a.i0) * xs.w + b.i0] += (1.0f - a.t) * (1.0f - b.t) * g;
                    gp[static_cast<std::size_t>(a.i0) * xs.w + b.i1] += (1.0f - a.t) * b.t * g;
                    gp[static_cast<std::size_t>(a.i1) * xs.w + b.i0] += a.t * (1.0f - b.t) * g;
                    gp[static_cast<std::size_t>(a.i1) * xs.w + b.i1] += a.t * b.t * g;
                }
            }
        }
    }
}

Tensor channel_concat(const std::vector<const Tensor*>& xs) {
    if (xs.empty()) throw std::invalid_argument("channel_concat: empty input list");
    const Shape& first = xs[0]->shape;
    int total_c = 0;
    for (const Tensor* t : xs) {
        if (t->shape.n != first.n || t->shape.h != first.h || t->shape.w != first.w) {
            throw std::invalid_argument("channel_concat: batch/spatial mismatch: " + first.str() +
                                        " vs " + t->shape.str());
        }
        total_c += t->shape.c;
    }
    Tensor out({first.n, total_c, first.h, first.w});
    const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
    for (int n = 0; n < first.n; ++n) {
        float* op = &out.at(n, 0, 0, 0);
        for (const Tensor* t : xs) {
            const std::size_t block = static_cast<std::size_t>(t->shape.c) * plane;
            std::memcpy(op, &t->at(n, 0, 0, 0), block * sizeof(float));
            op += block;
        }
    }
    return out;
}

Tensor slice_channels(const Tensor& x, int c_begin, int c_end) {
    if (c_begin < 0 || c_end > x.shape.c || c_begin >= c_end) {
        throw std::invalid_argument("slice_channels: invalid range");
    }
    Tensor out({x.shape.n, c_end - c_begin, x.shape.h, x.shape.w});
    const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
    for (int n = 0; n < x.shape.n; ++n) {
        std::memcpy(&out.at(n, 0, 0, 0), &x.at(n, c_begin, 0, 0),
                    static_cast<std::size_t>(c_end - c_begin) * plane * sizeof(float));
    }
    return out;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
    const Shape& s = x.shape;
    if (groups < 1 || s.c % groups != 0) {
        throw std::invalid_argument("group_norm: channels (" + std::to_string(s.c) +
                                    ") not divisible by groups (" + std::to_string(groups) + ")");
    }
    if (gamma.numel() != static_cast<std::size_t>(s.c) || beta.numel() != static_cast<std::size_t>(s.c)) {
        throw std::invalid_argument("group_norm: gamma/beta must have one value per channel");
    }
    const int cg = s.c / groups;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const std::size_t m = cg * plane;
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        for (int g = 0; g < groups; ++g) {
            const float* p = &x.at(n, g * cg, 0, 0);
            double sum = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                sum += p[i];
                sq += static_cast<double>(p[i]) * p[i];
            }
            const double mean = sum / static_cast<double>(m);
            const double var = std::max(0.0, sq / static_cast<double>(m) - mean * mean);
            const float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps));
            const float mu = static_cast<float>(mean);
            float* op = &out.at(n, g * cg, 0, 0);
            for (int cc = 0; cc < cg; ++cc) {
                const float ga = gamma.data[g * cg + cc];
                const float be = beta.data[g * cg + cc];
                for (std::size_t i = 0; i < plane; ++i) {
                    op[cc * plane + i] = ga * (p[cc * plane + i] - mu) * inv_std + be;
                }
            }
        }
    }
    return out;
}

void group_norm_backward(const Tensor& x, int groups, const Tensor& gamma, float eps,
                         const Tensor& go, Tensor* gx, Tensor* ggamma, Tensor* gbeta) {
    const Shape& s = x.shape;
    const int cg = s.c / groups;
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const std::size_t m = cg * plane;
    for (int n = 0; n < s.n; ++n) {
        for (int g = 0; g < groups; ++g) {
            const float* p = &x.at(n, g * cg, 0, 0);
            const float* gp = &go.at(n, g * cg, 0, 0);
            double sum = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                sum += p[i];
                sq += static_cast<double>(p[i]) * p[i];
            }
            const double mean = sum / static_cast<double>(m);
            const double var = std::max(0.0, sq / static_cast<double>(m) - mean * mean);
            const double inv_std = 1.0 / std::sqrt(var + eps);
            const float mu_f = static_cast<float>(mean);
            const float is_f = static_cast<float>(inv_std);

            // dxhat_i = go_i * gamma_c; dx follows the standard whitening
            // adjoint with population statistics. Row partials stay in
            // float; cross-row accumulation is double.
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int cc = 0; cc < cg; ++cc) {
                const float ga = gamma.data[g * cg + cc];
                const float* pc = p + cc * plane;
                const float* gc = gp + cc * plane;
                float r1 = 0.0f, r2 = 0.0f;
                for (std::size_t i = 0; i < plane; ++i) {
                    const float xhat = (pc[i] - mu_f) * is_f;
                    const float dxhat = ga * gc[i];
                    r1 += dxhat;
                    r2 += dxhat * xhat;
                }
                sum_dxhat += r1;
                sum_dxhat_xhat += r2;
            }
            const float m1 = static_cast<float>(sum_dxhat / static_cast<double>(m));
            const float m2 = static_cast<float>(sum_dxhat_xhat / static_cast<double>(m));

            float* gxp = gx ? &gx->at(n, g * cg, 0, 0) : nullptr;
            for (int cc = 0; cc < cg; ++cc) {
                const float ga = gamma.data[g * cg + cc];
                const float* pc = p + cc * plane;
                const float* gc = gp + cc * plane;
                float dga = 0.0f, dbe = 0.0f;
                if (gxp) {
                    float* gxc = gxp + cc * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const float xhat = (pc[i] - mu_f) * is_f;
                        dga += gc[i] * xhat;
                        dbe += gc[i];
                        gxc[i] += is_f * (ga * gc[i] - m1 - xhat * m2);
                    }
                } else {
                    for (std::size_t i = 0; i < plane; ++i) {
                        const float xhat = (pc[i] - mu_f) * is_f;
                        dga += gc[i] * xhat;
                        dbe += gc[i];
                    }
                }
                if (ggamma) ggamma->data[g * cg + cc] += dga;
                if (gbeta) gbeta->data[g * cg + cc] += dbe;
            }
        }
    }
}

double sum_all(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data) acc += v;
    return acc;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    const Shape& s = x.shape;
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: invalid output size");
    Tensor out({s.n, s.c, out_h, out_w});
    const double sy = static_cast<double>(s.h) / out_h;
    const double sx = static_cast<double>(s.w) / out_w;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float* p = &x.at(n, c, 0, 0);
            for (int y = 0; y < out_h; ++y) {
                const double py = (y + 0.5) * sy - 0.5;
                const int y0 = clampi(static_cast<int>(std::floor(py)), 0, s.h - 1);
                const int y1 = clampi(y0 + 1, 0, s.h - 1);
                const float ty = static_cast<float>(py - std::floor(py));
                for (int xw = 0; xw < out_w; ++xw) {
                    const double px = (xw + 0.5) * sx - 0.5;
                    const int x0 = clampi(static_cast<int>(std::floor(px)), 0, s.w - 1);
                    const int x1 = clampi(x0 + 1, 0, s.w - 1);
                    const float tx = static_cast<float>(px - std::floor(px));
                    const float top = (1.0f - tx) * p[static_cast<std::size_t>(y0) * s.w + x0] +
                                      tx * p[static_cast<std::size_t>(y0) * s.w + x1];
                    const float bot = (1.0f - tx) * p[static_cast<std::size_t>(y1) * s.w + x0] +
                                      tx * p[static_cast<std::size_t>(y1) * s.w + x1];
                    out.at(n, c, y, xw) = (1.0f - ty) * top + ty * bot;
                }
            }
        }
    }
    return out;
}

Tensor nearest_resize(const Tensor& x, int out_h, int out_w) {
    const Shape& s = x.shape;
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("nearest_resize: invalid output size");
    Tensor out({s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < out_h; ++y) {
                const int sy = clampi(static_cast<int>((y + 0.5) * s.h / out_h), 0, s.h - 1);
                for (int xw = 0; xw < out_w; ++xw) {
                    const int sx = clampi(static_cast<int>((xw + 0.5) * s.w / out_w), 0, s.w - 1);
                    out.at(n, c, y, xw) = x.at(n, c, sy, sx);
                }
            }
        }
    }
    return out;
}

Tensor random_uniform(Shape s, float lo, float hi, Rng& rng) {
    Tensor t(s);
    for (float& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

} // namespace ops

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

const Tensor Tape::zero_grad_placeholder_{};

VarId Tape::push(Tensor value, std::function<void(Tape&, VarId)> backward) {
    Node node;
    node.value = std::move(value);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return static_cast<VarId>(nodes_.size() - 1);
}

void Tape::check_id(VarId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw std::invalid_argument("tape: unknown variable id " + std::to_string(id));
    }
}

VarId Tape::constant(Tensor v) { return push(std::move(v), nullptr); }

VarId Tape::param(Parameter& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    const VarId id = push(p.value, nullptr);
    nodes_[id].param = &p;
    param_ids_.emplace(&p, id);
    return id;
}

const Tensor& Tape::value(VarId id) const {
    check_id(id);
    return nodes_[id].value;
}

Tensor& Tape::grad_mut(VarId id) {
    check_id(id);
    Node& n = nodes_[id];
    if (!n.grad_live) {
        n.grad = Tensor(n.value.shape);
        n.grad_live = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(VarId id) const {
    check_id(id);
    return nodes_[id].grad_live ? nodes_[id].grad : zero_grad_placeholder_;
}

double Tape::scalar(VarId id) const {
    check_id(id);
    const Node& n = nodes_[id];
    if (!(n.value.shape == Shape{1, 1, 1, 1})) {
        throw std::invalid_argument("tape: node is not scalar, shape " + n.value.shape.str());
    }
    return n.has_scalar ? n.scalar_value : static_cast<double>(n.value.data[0]);
}

VarId Tape::conv2d(VarId x, VarId w, std::optional<VarId> bias, const ConvOpts& opts) {
    check_id(x);
    check_id(w);
    if (bias) check_id(*bias);
    Tensor out = ops::conv2d(value(x), value(w), bias ? &value(*bias) : nullptr, opts);
    return push(std::move(out), [x, w, bias, opts](Tape& t, VarId out_id) {
        const Tensor& go = t.grad(out_id);
        ops::conv2d_backward(t.value(x), t.value(w), opts, go, &t.grad_mut(x), &t.grad_mut(w),
                             bias ? &t.grad_mut(*bias) : nullptr);
    });
}

VarId Tape::sigmoid(VarId x) {
    check_id(x);
    return push(ops::sigmoid(value(x)), [x](Tape& t, VarId out_id) {
        const Tensor& y = t.value(out_id);
        const Tensor& go = t.grad(out_id);
        Tensor& gx = t.grad_mut(x);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            gx.data[i] += go.data[i] * y.data[i] * (1.0f - y.data[i]);
        }
    });
}

VarId Tape::relu(VarId x) {
    check_id(x);
    return push(ops::relu(value(x)), [x](Tape& t, VarId out_id) {
        const Tensor& y = t.value(out_id);
        const Tensor& go = t.grad(out_id);
        Tensor& gx = t.grad_mut(x);
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            if (y.data[i] > 0.0f) gx.data[i] += go.data[i];
        }
    });
}

VarId Tape::add(VarId x, VarId y) {
    check_id(x);
    check_id(y);
    return push(ops::add(value(x), value(y)), [x, y](Tape& t, VarId out_id) {
        ops::add_backward(t.value(x), t.value(y), t.grad(out_id), &t.grad_mut(x), &t.grad_mut(y));
    });
}

VarId Tape::mul(VarId x, VarId y) {
    check_id(x);
    check_id(y);
    return push(ops::mul(value(x), value(y)), [x, y](Tape& t, VarId out_id) {
        ops::mul_backward(t.value(x), t.value(y), t.grad(out_id), &t.grad_mut(x), &t.grad_mut(y));
    });
}

VarId Tape::pool(VarId x, PoolAxis axis, PoolMode mode) {
    check_id(x);
    return push(ops::pool(value(x), axis, mode), [x, axis, mode](Tape& t, VarId out_id) {
        ops::pool_backward(t.value(x), axis, mode, t.value(out_id), t.grad(out_id), &t.grad_mut(x));
    });
}

VarId Tape::avg_pool2x2(VarId x) {
    check_id(x);
    return push(ops::avg_pool2x2(value(x)), [x](Tape& t, VarId out_id) {
        ops::avg_pool2x2_backward(t.value(x).shape, t.grad(out_id), &t.grad_mut(x));
    });
}

VarId Tape::upsample_bilinear2x(VarId x) {
    check_id(x);
    return push(ops::upsample_bilinear2x(value(x)), [x](Tape& t, VarId out_id) {
        ops::upsample_bilinear2x_backward(t.value(x).shape, t.grad(out_id), &t.grad_mut(x));
    });
}

VarId Tape::channel_concat(const std::vector<VarId>& xs) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(xs.size());
    for (VarId id : xs) {
        check_id(id);
        ptrs.push_back(&value(id));
    }
    Tensor out = ops::channel_concat(ptrs);
    return push(std::move(out), [xs](Tape& t, VarId out_id) {
        const Tensor& go = t.grad(out_id);
        const int hh = go.shape.h, ww = go.shape.w;
        const std::size_t plane = static_cast<std::size_t>(hh) * ww;
        int c0 = 0;
        for (VarId id : xs) {
            Tensor& gx = t.grad_mut(id);
            const int ci = gx.shape.c;
            for (int n = 0; n < go.shape.n; ++n) {
                const float* src = &go.at(n, c0, 0, 0);
                float* dst = &gx.at(n, 0, 0, 0);
                for (std::size_t i = 0; i < ci * plane; ++i) dst[i] += src[i];
            }
            c0 += ci;
        }
    });
}

VarId Tape::group_norm(VarId x, int groups, VarId gamma, VarId beta, float eps) {
    check_id(x);
    check_id(gamma);
    check_id(beta);
    Tensor out = ops::group_norm(value(x), groups, value(gamma), value(beta), eps);
    return push(std::move(out), [x, groups, gamma, beta, eps](Tape& t, VarId out_id) {
        ops::group_norm_backward(t.value(x), groups, t.value(gamma), eps, t.grad(out_id),
                                 &t.grad_mut(x), &t.grad_mut(gamma), &t.grad_mut(beta));
    });
}

VarId Tape::sum_all(VarId x) {
    check_id(x);
    const double total = ops::sum_all(value(x));
    Tensor out = Tensor::scalar(static_cast<float>(total));
    const VarId id = push(std::move(out), [x](Tape& t, VarId out_id) {
        const float g = t.grad(out_id).data[0];
        Tensor& gx = t.grad_mut(x);
        for (float& v : gx.data) v += g;
    });
    nodes_[id].scalar_value = total;
    nodes_[id].has_scalar = true;
    return id;
}

VarId Tape::custom(Tensor value, double scalar_value, std::function<void(Tape&, VarId)> backward) {
    const VarId id = push(std::move(value), std::move(backward));
    if (nodes_[id].value.shape == Shape{1, 1, 1, 1}) {
        nodes_[id].scalar_value = scalar_value;
        nodes_[id].has_scalar = true;
    }
    return id;
}

void Tape::backward(VarId loss) {
    check_id(loss);
    if (!(nodes_[loss].value.shape == Shape{1, 1, 1, 1})) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    nodes_[loss].value.shape.str());
    }
    grad_mut(loss).data[0] = 1.0f;
    for (VarId id = loss; id >= 0; --id) {
        Node& node = nodes_[id];
        if (node.grad_live && node.backward) {
            node.backward(*this, id);
        }
    }
    for (auto& [p, id] : param_ids_) {
        if (nodes_[id].grad_live) {
            Parameter* param = nodes_[id].param;
            const Tensor& g = nodes_[id].grad;
            for (std::size_t i = 0; i < g.data.size(); ++i) param->grad.data[i] += g.data[i];
        }
    }
}

double grad_check(const TensorProgram& fn, const std::vector<Tensor>& inputs, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

    auto evaluate = [&](const std::vector<Tensor>& xs) {
        Tape t;
        std::vector<VarId> ids;
        ids.reserve(xs.size());
        for (const Tensor& x : xs) ids.push_back(t.input(x));
        const VarId out = fn(t, ids);
        return t.scalar(out);
    };

    // Analytic gradients.
    Tape t;
    std::vector<VarId> ids;
    ids.reserve(inputs.size());
    for (const Tensor& x : inputs) ids.push_back(t.input(x));
    const VarId out = fn(t, ids);
    if (!(t.value(out).shape == Shape{1, 1, 1, 1})) {
        throw std::invalid_argument("grad_check: program output is not scalar");
    }
    t.backward(out);
    std::vector<Tensor> analytic;
    analytic.reserve(inputs.size());
    for (VarId id : ids) {
        const Tensor& g = t.grad(id);
        analytic.push_back(g.numel() ? g : Tensor(t.value(id).shape));
    }

    double max_rel = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
            const float orig = inputs[k].data[i];
            const float xp = static_cast<float>(static_cast<double>(orig) + eps);
            const float xm = static_cast<float>(static_cast<double>(orig) - eps);
            probe[k].data[i] = xp;
            const double fp = evaluate(probe);
            probe[k].data[i] = xm;
            const double fm = evaluate(probe);
            probe[k].data[i] = orig;
            const double numeric = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
            const double a = analytic[k].data[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

double grad_check_params(const std::function<VarId(Tape&)>& program,
                         const std::vector<Parameter*>& params, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check_params: eps must be positive");

    auto evaluate = [&]() {
        Tape t;
        return t.scalar(program(t));
    };

    // Analytic gradients.
    std::vector<Tensor> analytic;
    {
        Tape t;
        const VarId out = program(t);
        if (!(t.value(out).shape == Shape{1, 1, 1, 1})) {
            throw std::invalid_argument("grad_check_params: program output is not scalar");
        }
        for (Parameter* p : params) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0f);
        t.backward(out);
        for (Parameter* p : params) analytic.push_back(p->grad);
    }

    double max_rel = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& value = params[k]->value;
        for (std::size_t i = 0; i < value.data.size(); ++i) {
            const float orig = value.data[i];
            const float xp = static_cast<float>(static_cast<double>(orig) + eps);
            const float xm = static_cast<float>(static_cast<double>(orig) - eps);
            value.data[i] = xp;
            const double fp = evaluate();
            value.data[i] = xm;
            const double fm = evaluate();
            value.data[i] = orig;
            const double numeric = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
            const double a = analytic[k].data[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace msda
