#include "msda/filters.hpp"

#include <stdexcept>

namespace msda::filters {

FixedKernel directional_kernel(Direction d) {
    switch (d) {
        case Direction::Horizontal: return {{{0.5f, -0.5f}, {0.5f, -0.5f}}};
        case Direction::Vertical: return {{{0.5f, 0.5f}, {-0.5f, -0.5f}}};
        case Direction::Diagonal: return {{{0.5f, -0.5f}, {-0.5f, 0.5f}}};
        case Direction::Low: return {{{0.5f, 0.5f}, {0.5f, 0.5f}}};
    }
    throw std::invalid_argument("directional_kernel: unknown direction");
}

const char* direction_name(Direction d) {
    switch (d) {
        case Direction::Horizontal: return "horizontal";
        case Direction::Vertical: return "vertical";
        case Direction::Diagonal: return "diagonal";
        case Direction::Low: return "low";
    }
    return "?";
}

namespace {

struct FilterGeometry {
    int out_h, out_w;
};

FilterGeometry geometry(const Shape& s, int stride, FilterPadding padding) {
    if (stride < 1) throw std::invalid_argument("apply_fixed_filter: stride must be >= 1");
    if (s.h < 2 || s.w < 2) throw std::invalid_argument("apply_fixed_filter: input smaller than kernel");
    if (padding == FilterPadding::None) {
        if (stride == 2 && (s.h % 2 != 0 || s.w % 2 != 0)) {
            throw std::invalid_argument("apply_fixed_filter: stride 2 requires even spatial dims, got " +
                                        s.str());
        }
        return {(s.h - 2) / stride + 1, (s.w - 2) / stride + 1};
    }
    return {(s.h - 1) / stride + 1, (s.w - 1) / stride + 1};
}

} // namespace

Tensor apply_fixed_filter(const Tensor& x, Direction d, int stride, FilterPadding padding) {
    const Shape& s = x.shape;
    const FilterGeometry g = geometry(s, stride, padding);
    const FixedKernel k = directional_kernel(d);
    Tensor out({s.n, s.c, g.out_h, g.out_w});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float* p = &x.at(n, c, 0, 0);
            float* op = &out.at(n, c, 0, 0);
            for (int y = 0; y < g.out_h; ++y) {
                const int iy0 = y * stride;
                const int iy1 = iy0 + 1 < s.h ? iy0 + 1 : s.h - 1; // replicate bottom row
                const float* r0 = p + static_cast<std::size_t>(iy0) * s.w;
                const float* r1 = p + static_cast<std::size_t>(iy1) * s.w;
                float* orow = op + static_cast<std::size_t>(y) * g.out_w;
                for (int xw = 0; xw < g.out_w; ++xw) {
                    const int ix0 = xw * stride;
                    const int ix1 = ix0 + 1 < s.w ? ix0 + 1 : s.w - 1;
                    orow[xw] = k[0][0] * r0[ix0] + k[0][1] * r0[ix1] + k[1][0] * r1[ix0] +
                               k[1][1] * r1[ix1];
                }
            }
        }
    }
    return out;
}

void fixed_filter_backward(const Shape& s, Direction d, int stride, FilterPadding padding,
                           const Tensor& go, Tensor* gx) {
    if (!gx) return;
    const FilterGeometry g = geometry(s, stride, padding);
    const FixedKernel k = directional_kernel(d);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            float* gp = &gx->at(n, c, 0, 0);
            const float* gop = &go.at(n, c, 0, 0);
            for (int y = 0; y < g.out_h; ++y) {
                const int iy0 = y * stride;
                const int iy1 = iy0 + 1 < s.h ? iy0 + 1 : s.h - 1;
                for (int xw = 0; xw < g.out_w; ++xw) {
                    const int ix0 = xw * stride;
                    const int ix1 = ix0 + 1 < s.w ? ix0 + 1 : s.w - 1;
                    const float gv = gop[static_cast<std::size_t>(y) * g.out_w + xw];
                    gp[static_cast<std::size_t>(iy0) * s.w + ix0] += k[0][0] * gv;
                    gp[static_cast<std::size_t>(iy0) * s.w + ix1] += k[0][1] * gv;
                    gp[static_cast<std::size_t>(iy1) * s.w + ix0] += k[1][0] * gv;
                    gp[static_cast<std::size_t>(iy1) * s.w + ix1] += k[1][1] * gv;
                }
            }
        }
    }
}

VarId apply_fixed_filter(Tape& tape, VarId x, Direction d, int stride, FilterPadding padding) {
    Tensor out = apply_fixed_filter(tape.value(x), d, stride, padding);
    const Shape xs = tape.value(x).shape;
    return tape.custom(std::move(out), 0.0, [x, xs, d, stride, padding](Tape& t, VarId out_id) {
        fixed_filter_backward(xs, d, stride, padding, t.grad(out_id), &t.grad_mut(x));
    });
}

Tensor hfdi(const Tensor& image) {
    const Shape& s = image.shape;
    if (s.c != 1) throw std::invalid_argument("hfdi: expected single-channel input, got " + s.str());
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw std::invalid_argument("hfdi: spatial dims must be even, got " + s.str());
    }
    const Tensor h = apply_fixed_filter(image, Direction::Horizontal, 2, FilterPadding::None);
    const Tensor v = apply_fixed_filter(image, Direction::Vertical, 2, FilterPadding::None);
    const Tensor d = apply_fixed_filter(image, Direction::Diagonal, 2, FilterPadding::None);
    return ops::channel_concat({&h, &v, &d});
}

VarId hfdi(Tape& tape, VarId image) {
    const Shape& s = tape.value(image).shape;
    if (s.c != 1) throw std::invalid_argument("hfdi: expected single-channel input, got " + s.str());
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw std::invalid_argument("hfdi: spatial dims must be even, got " + s.str());
    }
    const VarId h = apply_fixed_filter(tape, image, Direction::Horizontal, 2, FilterPadding::None);
    const VarId v = apply_fixed_filter(tape, image, Direction::Vertical, 2, FilterPadding::None);
    const VarId d = apply_fixed_filter(tape, image, Direction::Diagonal, 2, FilterPadding::None);
    return tape.channel_concat({h, v, d});
}

} // namespace msda::filters
