#pragma once

#include <array>

#include "msda/tensor.hpp"

namespace msda::filters {

// The four fixed 2x2 analysis directions. The three high-pass kernels sum
// to zero; the low ("zero direction") kernel sums to 2. None of them is
// ever registered as a Parameter.
enum class Direction { Horizontal, Vertical, Diagonal, Low };

constexpr std::array<Direction, 4> kAllDirections = {Direction::Horizontal, Direction::Vertical,
                                                     Direction::Diagonal, Direction::Low};
constexpr std::array<Direction, 3> kHighPassDirections = {Direction::Horizontal, Direction::Vertical,
                                                          Direction::Diagonal};

using FixedKernel = std::array<std::array<float, 2>, 2>;

FixedKernel directional_kernel(Direction d);
const char* direction_name(Direction d);

enum class FilterPadding { None, SameReplicate };

// Depthwise 2x2 convolution with the fixed kernel; channel count is
// preserved. Same-replicate pads one row/column at bottom/right so the
// stride-1 output matches the input spatial size.
Tensor apply_fixed_filter(const Tensor& x, Direction d, int stride, FilterPadding padding);
void fixed_filter_backward(const Shape& x_shape, Direction d, int stride, FilterPadding padding,
                           const Tensor& grad_out, Tensor* gx);
VarId apply_fixed_filter(Tape& tape, VarId x, Direction d, int stride, FilterPadding padding);

// High-frequency direction injection: the three stride-2 high-pass
// components of a single-channel image, channel order [horizontal,
// vertical, diagonal]. Contributes zero trainable parameters.
Tensor hfdi(const Tensor& image);
VarId hfdi(Tape& tape, VarId image);

} // namespace msda::filters
