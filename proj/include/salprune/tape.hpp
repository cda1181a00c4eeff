#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "salprune/tensor.hpp"

namespace salprune {

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode recorder for the fixed operator set. Operations are appended
// in evaluation order; backward() walks them in exact reverse order once.
//
// Leaves registered with `leaf_ref` borrow the caller's tensor, which must
// outlive the tape. Nodes that cannot reach a leaf with requires_grad=true
// are skipped entirely during backward.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad);
  Var leaf_ref(const Tensor& value, bool requires_grad);

  // x [B,C,H,W], weight [F,C,3,3], bias [F] -> [B,F,H,W]
  Var conv2d(Var x, Var weight, Var bias);
  Var relu(Var x);
  // [B,C,H,W] -> [B,C,H/2,W/2]; H and W must be even.
  Var max_pool2(Var x);
  // [B,...] -> [B, prod(...)]
  Var flatten(Var x);
  // x [B,I], weight [O,I], bias [O] -> [B,O]
  Var dense(Var x, Var weight, Var bias);
  // Elementwise product of equal-shaped values.
  Var mul(Var a, Var b);
  // a*x + b*y for equal-shaped values.
  Var combine(double a, Var x, double b, Var y);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }

  // Propagates `seed` (shaped like output) back to every node. May be called
  // once per tape.
  void backward(Var output, const Tensor& seed);

  // Gradient accumulated at `v`; zeros when v does not require a gradient.
  const Tensor& grad(Var v) const;

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t { leaf, conv2d, relu, max_pool2, flatten, dense, mul, combine };

  struct Node {
    Op op = Op::leaf;
    int in[3] = {-1, -1, -1};
    Tensor owned;
    const Tensor* borrowed = nullptr;
    std::vector<std::int32_t> argmax;
    double coef[2] = {0.0, 0.0};
    bool requires_grad = false;
    Tensor grad;

    const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };

  const Node& node(Var v, const char* op) const;
  Var push(Node n);
  void accumulate(int id, const Tensor& g);
  Tensor& grad_slot(int id);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace salprune
