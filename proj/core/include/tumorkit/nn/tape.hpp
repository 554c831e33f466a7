#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tumorkit/nn/parameters.hpp"
#include "tumorkit/nn/tensor.hpp"

namespace tumorkit::nn {

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
};

// Reverse-mode autodiff tape. Ops append nodes during the forward pass;
// backward() walks them in reverse and accumulates parameter gradients into
// Parameter::grad. With gradients disabled no backward closures are kept.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var input(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  // Gradient buffer of v, zero-initialized on first access.
  Tensor& grad(Var v);
  Tensor& grad(int id) { return grad(Var{id}); }

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Records an op result. `back` is dropped when no input needs a gradient.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward back);

  // Seeds d(loss)/d(loss) = 1 for a single-element loss and propagates.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward back;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
};

// All image ops take N x C x H x W tensors.

// w: [O, C, k, k], b: [O].
Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
// w: [C, 1, k, k], b: [C].
Var depthwise_conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
// Kernel 2, stride 2 transposed convolution. w: [C, O, 2, 2], b: [O].
Var conv_transpose2x2(Tape& t, Var x, Var w, Var b);
// 2 x 2 max pooling, stride 2 (odd trailing rows/cols dropped).
Var max_pool2(Tape& t, Var x);
Var global_avg_pool(Tape& t, Var x);  // -> [N, C]
// x: [N, C, H, W], s: [N, C]; out = x * s broadcast over H, W.
Var scale_channels(Tape& t, Var x, Var s);
Var concat_channels(Tape& t, Var a, Var b);
Var flatten(Tape& t, Var x);  // -> [N, rest]
// x: [N, F], w: [O, F], b: [O].
Var linear(Tape& t, Var x, Var w, Var b);
Var add(Tape& t, Var a, Var b);
Var relu(Tape& t, Var x);
Var silu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);

// Mean cross-entropy of softmax(logits) against integer labels; logits [N, K].
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels);
// Mean over the batch of 1 - soft Dice between probs and a constant target.
Var soft_dice_loss(Tape& t, Var probs, const Tensor& target, float smooth);

}  // namespace tumorkit::nn
