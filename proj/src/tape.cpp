#include "salprune/tape.hpp"

#include <string>

#include "salprune/kernels.hpp"

namespace salprune {
namespace {

void expect_rank(const Tensor& t, int rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_string(t.shape()));
  }
}

void expect_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

const Tape::Node& Tape::node(Var v, const char* op) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw TapeError(std::string(op) + ": variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Node n) {
  if (consumed_) throw TapeError("tape already consumed by backward; record a new forward pass");
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::leaf_ref(const Tensor& value, bool requires_grad) {
  Node n;
  n.borrowed = &value;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::conv2d(Var x, Var weight, Var bias) {
  const Tensor& xv = node(x, "conv2d").value();
  const Tensor& wv = node(weight, "conv2d").value();
  const Tensor& bv = node(bias, "conv2d").value();
  expect_rank(xv, 4, "conv2d", "input");
  expect_rank(wv, 4, "conv2d", "weight");
  expect_rank(bv, 1, "conv2d", "bias");
  if (wv.dim(1) != xv.dim(1) || wv.dim(2) != 3 || wv.dim(3) != 3 || bv.dim(0) != wv.dim(0)) {
    throw ShapeError("conv2d: weight " + shape_string(wv.shape()) + " / bias " +
                     shape_string(bv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  }
  const kernels::ConvDims d{xv.dim(0), xv.dim(1), wv.dim(0), xv.dim(2), xv.dim(3)};
  Node n;
  n.op = Op::conv2d;
  n.in[0] = x.id;
  n.in[1] = weight.id;
  n.in[2] = bias.id;
  n.owned = Tensor({d.batch, d.out_channels, d.height, d.width});
  kernels::conv3x3_forward(d, xv.data(), wv.data(), bv.data(), n.owned.data());
  n.requires_grad = nodes_[x.id].requires_grad || nodes_[weight.id].requires_grad ||
                    nodes_[bias.id].requires_grad;
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  const Tensor& xv = node(x, "relu").value();
  Node n;
  n.op = Op::relu;
  n.in[0] = x.id;
  n.owned = Tensor(xv.shape());
  auto out = n.owned.data();
  auto in = xv.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  n.requires_grad = nodes_[x.id].requires_grad;
  return push(std::move(n));
}

Var Tape::max_pool2(Var x) {
  const Tensor& xv = node(x, "max_pool2").value();
  expect_rank(xv, 4, "max_pool2", "input");
  if (xv.dim(2) % 2 != 0 || xv.dim(3) % 2 != 0) {
    throw ShapeError("max_pool2: spatial dims must be even, got " + shape_string(xv.shape()));
  }
  const kernels::PoolDims d{xv.dim(0) * xv.dim(1), xv.dim(2), xv.dim(3)};
  Node n;
  n.op = Op::max_pool2;
  n.in[0] = x.id;
  n.owned = Tensor({xv.dim(0), xv.dim(1), xv.dim(2) / 2, xv.dim(3) / 2});
  n.argmax.resize(n.owned.size());
  kernels::max_pool2_forward(d, xv.data(), n.owned.data(), n.argmax);
  n.requires_grad = nodes_[x.id].requires_grad;
  return push(std::move(n));
}

Var Tape::flatten(Var x) {
  const Tensor& xv = node(x, "flatten").value();
  if (xv.rank() < 2) throw ShapeError("flatten: input needs a batch axis, got " + shape_string(xv.shape()));
  const int batch = xv.dim(0);
  Node n;
  n.op = Op::flatten;
  n.in[0] = x.id;
  n.owned = xv.reshaped({batch, static_cast<int>(xv.size() / static_cast<std::size_t>(batch))});
  n.requires_grad = nodes_[x.id].requires_grad;
  return push(std::move(n));
}

Var Tape::dense(Var x, Var weight, Var bias) {
  const Tensor& xv = node(x, "dense").value();
  const Tensor& wv = node(weight, "dense").value();
  const Tensor& bv = node(bias, "dense").value();
  expect_rank(xv, 2, "dense", "input");
  expect_rank(wv, 2, "dense", "weight");
  expect_rank(bv, 1, "dense", "bias");
  if (wv.dim(1) != xv.dim(1) || bv.dim(0) != wv.dim(0)) {
    throw ShapeError("dense: weight " + shape_string(wv.shape()) + " / bias " +
                     shape_string(bv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  }
  const kernels::DenseDims d{xv.dim(0), xv.dim(1), wv.dim(0)};
  Node n;
  n.op = Op::dense;
  n.in[0] = x.id;
  n.in[1] = weight.id;
  n.in[2] = bias.id;
  n.owned = Tensor({d.batch, d.out_features});
  kernels::dense_forward(d, xv.data(), wv.data(), bv.data(), n.owned.data());
  n.requires_grad = nodes_[x.id].requires_grad || nodes_[weight.id].requires_grad ||
                    nodes_[bias.id].requires_grad;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = node(a, "mul").value();
  const Tensor& bv = node(b, "mul").value();
  expect_same(av, bv, "mul");
  Node n;
  n.op = Op::mul;
  n.in[0] = a.id;
  n.in[1] = b.id;
  n.owned = Tensor(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) n.owned[i] = av[i] * bv[i];
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Tape::combine(double a, Var x, double b, Var y) {
  const Tensor& xv = node(x, "combine").value();
  const Tensor& yv = node(y, "combine").value();
  expect_same(xv, yv, "combine");
  Node n;
  n.op = Op::combine;
  n.in[0] = x.id;
  n.in[1] = y.id;
  n.coef[0] = a;
  n.coef[1] = b;
  n.owned = Tensor(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) n.owned[i] = a * xv[i] + b * yv[i];
  n.requires_grad = nodes_[x.id].requires_grad || nodes_[y.id].requires_grad;
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node(v, "value").value(); }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v, "grad");
  if (n.grad.empty()) {
    auto& slot = const_cast<Node&>(n).grad;
    slot = Tensor(n.value().shape());
  }
  return n.grad;
}

Tensor& Tape::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value().shape());
  return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(Var output, const Tensor& seed) {
  if (consumed_) throw TapeError("tape already consumed: backward may run once per forward pass");
  const Node& out = node(output, "backward");
  if (seed.shape() != out.value().shape()) {
    throw ShapeError("backward: seed " + shape_string(seed.shape()) + " does not match output " +
                     shape_string(out.value().shape()));
  }
  consumed_ = true;
  if (!out.requires_grad) return;
  grad_slot(output.id) = seed;

  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::leaf || !n.requires_grad || n.grad.empty()) continue;
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::conv2d: {
        const Tensor& xv = nodes_[n.in[0]].value();
        const Tensor& wv = nodes_[n.in[1]].value();
        const kernels::ConvDims d{xv.dim(0), xv.dim(1), wv.dim(0), xv.dim(2), xv.dim(3)};
        if (nodes_[n.in[0]].requires_grad) {
          Tensor dx(xv.shape());
          kernels::conv3x3_backward_input(d, g.data(), wv.data(), dx.data());
          accumulate(n.in[0], dx);
        }
        if (nodes_[n.in[1]].requires_grad || nodes_[n.in[2]].requires_grad) {
          Tensor dw(wv.shape());
          Tensor db({wv.dim(0)});
          kernels::conv3x3_backward_params(d, xv.data(), g.data(), dw.data(), db.data());
          accumulate(n.in[1], dw);
          accumulate(n.in[2], db);
        }
        break;
      }
      case Op::relu: {
        const Tensor& xv = nodes_[n.in[0]].value();
        Tensor dx(xv.shape());
        // Subgradient at exactly zero is zero.
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xv[i] > 0.0 ? g[i] : 0.0;
        accumulate(n.in[0], dx);
        break;
      }
      case Op::max_pool2: {
        Tensor dx(nodes_[n.in[0]].value().shape());
        kernels::max_pool2_backward(g.data(), n.argmax, dx.data());
        accumulate(n.in[0], dx);
        break;
      }
      case Op::flatten:
        accumulate(n.in[0], g.reshaped(nodes_[n.in[0]].value().shape()));
        break;
      case Op::dense: {
        const Tensor& xv = nodes_[n.in[0]].value();
        const Tensor& wv = nodes_[n.in[1]].value();
        const kernels::DenseDims d{xv.dim(0), xv.dim(1), wv.dim(0)};
        if (nodes_[n.in[0]].requires_grad) {
          Tensor dx(xv.shape());
          kernels::dense_backward_input(d, g.data(), wv.data(), dx.data());
          accumulate(n.in[0], dx);
        }
        if (nodes_[n.in[1]].requires_grad || nodes_[n.in[2]].requires_grad) {
          Tensor dw(wv.shape());
          Tensor db({wv.dim(0)});
          kernels::dense_backward_params(d, xv.data(), g.data(), dw.data(), db.data());
          accumulate(n.in[1], dw);
          accumulate(n.in[2], db);
        }
        break;
      }
      case Op::mul: {
        const Tensor& av = nodes_[n.in[0]].value();
        const Tensor& bv = nodes_[n.in[1]].value();
        Tensor da(av.shape()), dbt(bv.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
          da[i] = g[i] * bv[i];
          dbt[i] = g[i] * av[i];
        }
        accumulate(n.in[0], da);
        accumulate(n.in[1], dbt);
        break;
      }
      case Op::combine: {
        Tensor dx(g.shape()), dyv(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
          dx[i] = n.coef[0] * g[i];
          dyv[i] = n.coef[1] * g[i];
        }
        accumulate(n.in[0], dx);
        accumulate(n.in[1], dyv);
        break;
      }
    }
    // Intermediate gradients are no longer needed once propagated.
    n.grad = Tensor();
  }
}

}  // namespace salprune
