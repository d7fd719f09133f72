#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "wmlab/image.hpp"

namespace wmlab {

/// Dense row-major tensor of doubles. Images use [N, C, H, W].
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_, double fill = 0.0);
  Tensor(std::vector<int> shape_, std::vector<double> data_);

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static std::size_t count(const std::vector<int>& shape);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::string shape_string(const std::vector<int>& shape);

/// [1, C, H, W] view of an image and back.
Tensor to_tensor(const ImageBuffer& img);
ImageBuffer to_image(const Tensor& t, int batch_index = 0);
/// Stacks same-shaped images into [N, C, H, W].
Tensor stack_images(const std::vector<ImageBuffer>& imgs);

struct Var {
  std::size_t id = 0;
};

/// Records primitive operations and their inputs for reverse accumulation.
///
/// Each node keeps its forward function, so `replay` can recompute every value
/// from the leaves. Backward functions read input values from the tape and
/// accumulate into input gradients.
class Tape {
 public:
  using ForwardFn = std::function<Tensor(const std::vector<const Tensor*>&)>;
  using BackwardFn = std::function<void(Tape&, std::size_t node)>;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Evaluates `forward` on the input values and records the node.
  Var push(std::vector<Var> inputs, ForwardFn forward, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Mutable value of a leaf; call `replay` afterwards to propagate.
  Tensor& leaf_value(Var v);
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor& grad(std::size_t id);
  Tensor& grad(Var v) { return grad(v.id); }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.data.empty(); }

  /// Reverse pass from `out` seeded with `seed` (same shape as out's value).
  void backward(Var out, const Tensor& seed);
  void backward_scalar(Var out) { backward(out, Tensor::scalar(1.0)); }

  void zero_grad();

  /// Recomputes every non-leaf value from the leaves, in recording order.
  void replay();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable primitives. Shapes follow the [N, C, H, W] convention.
namespace ops {

Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var div(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double s);
Var add_scalar(Tape& tape, Var a, double s);
/// a * x + b * y.
Var lincomb(Tape& tape, Var x, double a, Var y, double b);
Var abs(Tape& tape, Var a);
Var square(Tape& tape, Var a);
Var silu(Tape& tape, Var a);
Var mean(Tape& tape, Var a);

/// Cross-correlation with zero padding; weight [Co, Ci, k, k], bias [Co].
Var conv2d(Tape& tape, Var x, Var weight, Var bias, int stride, int pad);
Var group_norm(Tape& tape, Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
/// x[N, C, H, W] + v[N, C] broadcast over H, W.
Var add_channel_bias(Tape& tape, Var x, Var v);
/// x[N, D] -> x W^T + b with W [O, D], b [O].
Var linear(Tape& tape, Var x, Var weight, Var bias);
Var concat_channels(Tape& tape, Var a, Var b);
Var upsample_nearest2(Tape& tape, Var x);
Var avg_pool2(Tape& tape, Var x);
/// Per-channel "valid" correlation with a fixed separable kernel (taps sum to 1).
Var separable_filter_valid(Tape& tape, Var x, const std::vector<double>& taps);

}  // namespace ops

std::vector<double> gaussian_taps(int size, double sigma);

}  // namespace wmlab
