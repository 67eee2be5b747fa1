#pragma once

// Reverse-mode differentiation over dense Tensors.
//
// A Tape records every operation in execution order; a Var is a handle to a
// node on a tape. Trainable parameters enter the tape as leaves carrying a
// caller-chosen id, and Tape::backward returns one gradient per registered
// leaf. Operations whose derivative is computed elsewhere (the manifold
// projection) enter through custom_jacobian_node / block_jacobian_node.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvrom/tensor.hpp"

namespace mvrom::ad {

class Tape;

// Structured shape error: carries the op name and offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::vector<Shape>& shapes);
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Adds contributions of grad_out into the input gradients (same order as the
// node's inputs). Entries of `input_grads` are pre-sized zero tensors.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor> input_grads)>;

using Gradients = std::map<std::size_t, Tensor>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Registers a trainable leaf. Re-using a leaf id on one tape is an error.
  Var leaf(std::size_t leaf_id, Tensor value);

  Var push(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  // Gradients of a rank-0 output with respect to every registered leaf.
  // Leaves that do not influence the output receive zero tensors.
  Gradients backward(Var output) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // deque keeps value() references valid across pushes
  std::map<std::size_t, std::size_t> leaves_;  // leaf id -> node index
};

enum class Op {
  MatMul,     // (n,k)x(k,m)
  Add,        // same shape
  Sub,        // same shape
  AddBias,    // (n,m) + (m) or (1,m), broadcast over rows
  Mul,        // elementwise, same shape
  Relu,
  LeakyRelu,  // param = slope in [0,1)
  Exp,
  Log,
  Neg,
  Sum,        // -> rank 0
  Mean,       // -> rank 0
  Square,
  PairNorm,   // (n,2p) -> (n,p): norm of column pairs (2j,2j+1)
  Scale,      // multiply by constant param
  ScaleBy,    // multiply by a rank-0 Var
};

const char* op_name(Op op);
std::size_t op_arity(Op op);
bool op_has_kink(Op op);

// Generic dispatch; `param` is used by LeakyRelu (slope) and Scale (factor).
Var forward_op(Op op, std::span<const Var> inputs, double param = 0.0);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var relu(Var x);
Var leaky_relu(Var x, double slope);
Var exp(Var x);
Var log(Var x);
Var neg(Var x);
Var sum(Var x);
Var mean(Var x);
Var square(Var x);
Var pair_norm(Var x);
Var scale(Var x, double factor);
Var scale_by(Var x, Var factor);

// Node whose value was computed outside the tape; backward applies
// grad_input = jacobian^T * grad_output with jacobian of shape
// (output.size(), input.size()).
Var custom_jacobian_node(Var input, Tensor output_value, const Tensor& jacobian);

// Row-wise variant for batches: input (B,n), output (B,n'), one (n',n)
// Jacobian per row. Equivalent to custom_jacobian_node with a block-diagonal
// Jacobian, without materialising it.
Var block_jacobian_node(Var input, Tensor output_value, std::vector<Tensor> jacobians);

}  // namespace mvrom::ad
