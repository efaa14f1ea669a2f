#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace msda {

// Dense 4-D shape (batch, channel, height, width).
struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense row-major (n, c, h, w) float tensor. Plain value type: ops never
// mutate their inputs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), data(s.numel(), 0.0f) {}
    Tensor(Shape s, float fill) : shape(s), data(s.numel(), fill) {}
    Tensor(Shape s, std::vector<float> values);

    static Tensor scalar(float v) { return Tensor({1, 1, 1, 1}, {v}); }

    float& at(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }
    const float& at(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
    }

    std::size_t numel() const { return data.size(); }
    bool all_finite() const;

    Shape shape;
    std::vector<float> data;
};

class Rng;

enum class Padding { None, SameZero, SameReplicate };

struct ConvOpts {
    int stride = 1;
    int dilation = 1;
    Padding padding = Padding::None;
};

enum class PoolAxis { Spatial, Channel };
enum class PoolMode { Avg, Max };

enum class EltKind { Sigmoid, Relu, Add, Mul };

// Forward numeric kernels. Pure functions: identical inputs give bitwise
// identical outputs. Backward kernels accumulate (+=) into the provided
// gradient tensors so fan-out adds naturally.
namespace ops {

Shape conv2d_output_shape(const Shape& x, const Shape& w, const ConvOpts& opts);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvOpts& opts);
void conv2d_backward(const Tensor& x, const Tensor& w, const ConvOpts& opts,
                     const Tensor& grad_out, Tensor* gx, Tensor* gw, Tensor* gb);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

// Two-sided broadcasting: each dim must match or be 1.
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor add(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
void add_backward(const Tensor& x, const Tensor& y, const Tensor& grad_out, Tensor* gx, Tensor* gy);
void mul_backward(const Tensor& x, const Tensor& y, const Tensor& grad_out, Tensor* gx, Tensor* gy);

// Spec-shaped dispatcher: unary kinds reject y, binary kinds require it.
Tensor elementwise(const Tensor& x, const Tensor* y, EltKind kind);

Tensor pool(const Tensor& x, PoolAxis axis, PoolMode mode);
void pool_backward(const Tensor& x, PoolAxis axis, PoolMode mode,
                   const Tensor& out, const Tensor& grad_out, Tensor* gx);

// 2x2 window, stride 2 mean; requires even spatial dims.
Tensor avg_pool2x2(const Tensor& x);
void avg_pool2x2_backward(const Shape& x_shape, const Tensor& grad_out, Tensor* gx);

// Half-pixel centers with edge clamping: x_in = (x_out + 0.5) / 2 - 0.5.
Tensor upsample_bilinear2x(const Tensor& x);
void upsample_bilinear2x_backward(const Shape& x_shape, const Tensor& grad_out, Tensor* gx);

Tensor channel_concat(const std::vector<const Tensor*>& xs);
Tensor slice_channels(const Tensor& x, int c_begin, int c_end);

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
void group_norm_backward(const Tensor& x, int groups, const Tensor& gamma, float eps,
                         const Tensor& grad_out, Tensor* gx, Tensor* ggamma, Tensor* gbeta);

// Reduction to a scalar; double accumulation.
double sum_all(const Tensor& x);

// Arbitrary bilinear resize (same half-pixel convention); loader plumbing,
// not differentiated.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor nearest_resize(const Tensor& x, int out_h, int out_w);

Tensor random_uniform(Shape s, float lo, float hi, Rng& rng);

} // namespace ops

// A trainable tensor with its gradient accumulator and hierarchical name.
struct Parameter {
    Parameter(std::string p, Tensor v) : path(std::move(p)), value(std::move(v)), grad(value.shape) {}

    std::string path;
    Tensor value;
    Tensor grad;
};

using VarId = int;

// Reverse-mode differentiation record. Nodes are appended in evaluation
// order, so ids are already topologically sorted; backward() walks them
// once in reverse. Gradients accumulate additively across fan-out.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. input() marks a leaf whose gradient the caller wants to read;
    // constant() is equivalent but documents intent. param() memoizes per
    // Parameter so repeated uses share one leaf.
    VarId constant(Tensor v);
    VarId input(Tensor v) { return constant(std::move(v)); }
    VarId param(Parameter& p);

    VarId conv2d(VarId x, VarId w, std::optional<VarId> bias, const ConvOpts& opts);
    VarId sigmoid(VarId x);
    VarId relu(VarId x);
    VarId add(VarId x, VarId y);
    VarId mul(VarId x, VarId y);
    VarId pool(VarId x, PoolAxis axis, PoolMode mode);
    VarId avg_pool2x2(VarId x);
    VarId upsample_bilinear2x(VarId x);
    VarId channel_concat(const std::vector<VarId>& xs);
    VarId group_norm(VarId x, int groups, VarId gamma, VarId beta, float eps = 1e-5f);
    VarId sum_all(VarId x);

    // Escape hatch for composite ops with hand-derived gradients (losses).
    // `backward` receives the tape and the node id of the output; it must
    // accumulate into the gradients of whatever ids it captured.
    VarId custom(Tensor value, double scalar_value,
                 std::function<void(Tape&, VarId)> backward);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
    // Parameter leaves receive their gradients via Parameter::grad +=.
    void backward(VarId loss);

    const Tensor& value(VarId id) const;
    const Tensor& grad(VarId id) const;
    Tensor& grad_mut(VarId id);
    // Scalar value of a (1,1,1,1) node; uses the double-precision side value
    // when the producing op recorded one.
    double scalar(VarId id) const;
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_live = false;
        std::function<void(Tape&, VarId)> backward;
        Parameter* param = nullptr;
        double scalar_value = 0.0;
        bool has_scalar = false;
    };

    VarId push(Tensor value, std::function<void(Tape&, VarId)> backward);
    void check_id(VarId id) const;

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, VarId> param_ids_;
    static const Tensor zero_grad_placeholder_;
};

// A tensor program for gradient checking: builds a scalar node from the
// given input leaves.
using TensorProgram = std::function<VarId(Tape&, const std::vector<VarId>&)>;

// Max over all input elements of |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-8), numeric via central differences with step eps.
double grad_check(const TensorProgram& fn, const std::vector<Tensor>& inputs, double eps);

// Same check for programs that reach Parameters through Tape::param (a full
// network forward): gradients of the scalar with respect to the listed
// parameter tensors.
double grad_check_params(const std::function<VarId(Tape&)>& program,
                         const std::vector<Parameter*>& params, double eps);

} // namespace msda
