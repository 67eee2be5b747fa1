#include "mvrom/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <optional>

namespace mvrom::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat as_matrix(const Tensor& t) { return CMapMat(t.data().data(), t.rows(), t.cols()); }
MapMat as_matrix(Tensor& t) { return MapMat(t.data().data(), t.rows(), t.cols()); }

std::string join_shapes(const std::vector<Shape>& shapes) {
  std::string s;
  for (std::size_t i = 0; i < shapes.size(); ++i) s += (i ? ", " : "") + shape_string(shapes[i]);
  return s;
}

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) throw ShapeError(op, {a.shape(), b.shape()});
}

template <typename F, typename D>
Var unary(Var x, F&& f, D&& dfdx) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tape* tape = x.tape;
  return tape->push(std::move(out), {x}, [tape, x, dfdx](const Tensor& g, std::span<Tensor> gi) {
    const Tensor& xv = tape->value(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gi[0][i] += g[i] * dfdx(xv[i]);
  });
}

}  // namespace

ShapeError::ShapeError(const std::string& op, const std::vector<Shape>& shapes)
    : std::invalid_argument(op + ": incompatible shapes " + join_shapes(shapes)), op_(op) {}

const Tensor& Var::value() const {
  if (tape == nullptr) throw std::logic_error("ad: Var without tape");
  return tape->value(*this);
}

Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Var Tape::leaf(std::size_t leaf_id, Tensor value) {
  if (leaves_.count(leaf_id)) throw std::invalid_argument("ad: leaf id " + std::to_string(leaf_id) + " registered twice");
  Var v = push(std::move(value), {}, nullptr);
  leaves_[leaf_id] = v.id;
  return v;
}

Var Tape::push(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
#ifndef NDEBUG
  value.check_finite("ad: node " + std::to_string(nodes_.size()));
#endif
  Node node{std::move(value), {}, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this || in.id >= nodes_.size()) throw std::invalid_argument("ad: input not recorded on this tape");
    node.inputs.push_back(in.id);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var output) const {
  if (nodes_.empty()) throw std::invalid_argument("ad: backward on empty tape");
  if (output.tape != this || output.id >= nodes_.size()) throw std::invalid_argument("ad: output not on this tape");
  const Tensor& out = nodes_[output.id].value;
  if (out.rank() != 0) throw ShapeError("backward (output must be scalar)", {out.shape()});

  std::vector<std::optional<Tensor>> grads(output.id + 1);
  grads[output.id] = Tensor::scalar(1.0);
  std::vector<Tensor> scratch;
  for (std::size_t k = output.id + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!grads[k] || !node.backward) continue;
    scratch.clear();
    for (std::size_t in : node.inputs) scratch.emplace_back(nodes_[in].value.shape());
    node.backward(*grads[k], scratch);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto& slot = grads[node.inputs[i]];
      if (slot) {
        *slot += scratch[i];
      } else {
        slot = std::move(scratch[i]);
      }
    }
  }

  Gradients result;
  for (const auto& [leaf_id, idx] : leaves_) {
    if (idx < grads.size() && grads[idx]) {
      result.emplace(leaf_id, std::move(*grads[idx]));
    } else {
      result.emplace(leaf_id, Tensor(nodes_[idx].value.shape()));
    }
  }
  return result;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::AddBias: return "add_bias";
    case Op::Mul: return "mul";
    case Op::Relu: return "relu";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Neg: return "neg";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::PairNorm: return "pair_norm";
    case Op::Scale: return "scale";
    case Op::ScaleBy: return "scale_by";
  }
  return "?";
}

std::size_t op_arity(Op op) {
  switch (op) {
    case Op::MatMul:
    case Op::Add:
    case Op::Sub:
    case Op::AddBias:
    case Op::Mul:
    case Op::ScaleBy:
      return 2;
    default:
      return 1;
  }
}

bool op_has_kink(Op op) { return op == Op::Relu || op == Op::LeakyRelu; }

Var forward_op(Op op, std::span<const Var> in, double param) {
  if (in.size() != op_arity(op)) {
    throw std::invalid_argument(std::string(op_name(op)) + ": expected " + std::to_string(op_arity(op)) + " inputs");
  }
  switch (op) {
    case Op::MatMul: return matmul(in[0], in[1]);
    case Op::Add: return add(in[0], in[1]);
    case Op::Sub: return sub(in[0], in[1]);
    case Op::AddBias: return add_bias(in[0], in[1]);
    case Op::Mul: return mul(in[0], in[1]);
    case Op::Relu: return relu(in[0]);
    case Op::LeakyRelu: return leaky_relu(in[0], param);
    case Op::Exp: return exp(in[0]);
    case Op::Log: return log(in[0]);
    case Op::Neg: return neg(in[0]);
    case Op::Sum: return sum(in[0]);
    case Op::Mean: return mean(in[0]);
    case Op::Square: return square(in[0]);
    case Op::PairNorm: return pair_norm(in[0]);
    case Op::Scale: return scale(in[0], param);
    case Op::ScaleBy: return scale_by(in[0], in[1]);
  }
  throw std::invalid_argument("forward_op: unknown op");
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) throw ShapeError("matmul", {av.shape(), bv.shape()});
  Tensor out(Shape{av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  Tape* tape = a.tape;
  return tape->push(std::move(out), {a, b}, [tape, a, b](const Tensor& g, std::span<Tensor> gi) {
    auto gm = as_matrix(g);
    as_matrix(gi[0]).noalias() += gm * as_matrix(tape->value(b)).transpose();
    as_matrix(gi[1]).noalias() += as_matrix(tape->value(a)).transpose() * gm;
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape->push(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor> gi) {
    gi[0] += g;
    gi[1] += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->push(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      gi[0][i] += g[i];
      gi[1][i] -= g[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  require_same_tape(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const bool ok = xv.rank() == 2 && ((bv.rank() == 1 && bv.shape()[0] == xv.cols()) ||
                                     (bv.rank() == 2 && bv.rows() == 1 && bv.cols() == xv.cols()));
  if (!ok) throw ShapeError("add_bias", {xv.shape(), bv.shape()});
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return x.tape->push(std::move(out), {x, bias}, [rows, cols](const Tensor& g, std::span<Tensor> gi) {
    gi[0] += g;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gi[1][c] += g[r * cols + c];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape* tape = a.tape;
  return tape->push(std::move(out), {a, b}, [tape, a, b](const Tensor& g, std::span<Tensor> gi) {
    const Tensor& av = tape->value(a);
    const Tensor& bv = tape->value(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gi[0][i] += g[i] * bv[i];
      gi[1][i] += g[i] * av[i];
    }
  });
}

Var relu(Var x) {
  return unary(x, [](double v) { return v < 0.0 ? 0.0 : v; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var x, double slope) {
  if (!(slope >= 0.0 && slope < 1.0)) {
    throw std::invalid_argument("leaky_relu: slope " + std::to_string(slope) + " outside [0,1)");
  }
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; }, [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Var exp(Var x) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::exp(xv[i]);
  Tape* tape = x.tape;
  return tape->push(std::move(out), {x}, [tape, id = tape->size()](const Tensor& g, std::span<Tensor> gi) {
    const Tensor& yv = tape->value(Var{tape, id});
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * yv[i];
  });
}

Var log(Var x) {
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) throw std::domain_error("log: non-positive argument " + std::to_string(xv[i]));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var neg(Var x) { return scale(x, -1.0); }

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->push(Tensor::scalar(s), {x}, [](const Tensor& g, std::span<Tensor> gi) {
    const double gv = g.item();
    for (double& v : gi[0].data()) v += gv;
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->push(Tensor::scalar(s / n), {x}, [n](const Tensor& g, std::span<Tensor> gi) {
    const double gv = g.item() / n;
    for (double& v : gi[0].data()) v += gv;
  });
}

Var square(Var x) {
  return unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var pair_norm(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.cols() % 2 != 0) throw ShapeError("pair_norm", {xv.shape()});
  const std::size_t rows = xv.rows(), cols = xv.cols(), pairs = cols / 2;
  Tensor out(Shape{rows, pairs});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < pairs; ++p) out[r * pairs + p] = std::hypot(xv[r * cols + 2 * p], xv[r * cols + 2 * p + 1]);
  Tape* tape = x.tape;
  const std::size_t out_id = tape->size();
  return tape->push(std::move(out), {x}, [tape, x, out_id, rows, cols, pairs](const Tensor& g, std::span<Tensor> gi) {
    const Tensor& xv = tape->value(x);
    const Tensor& nv = tape->value(Var{tape, out_id});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t p = 0; p < pairs; ++p) {
        const double n = nv[r * pairs + p];
        if (n == 0.0) continue;
        const double gn = g[r * pairs + p] / n;
        gi[0][r * cols + 2 * p] += gn * xv[r * cols + 2 * p];
        gi[0][r * cols + 2 * p + 1] += gn * xv[r * cols + 2 * p + 1];
      }
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  out *= factor;
  return x.tape->push(std::move(out), {x}, [factor](const Tensor& g, std::span<Tensor> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += factor * g[i];
  });
}

Var scale_by(Var x, Var factor) {
  require_same_tape(x, factor, "scale_by");
  if (factor.value().rank() != 0) throw ShapeError("scale_by", {x.shape(), factor.shape()});
  Tensor out = x.value();
  out *= factor.value().item();
  Tape* tape = x.tape;
  return tape->push(std::move(out), {x, factor}, [tape, x, factor](const Tensor& g, std::span<Tensor> gi) {
    const Tensor& xv = tape->value(x);
    const double f = tape->value(factor).item();
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gi[0][i] += f * g[i];
      acc += g[i] * xv[i];
    }
    gi[1][0] += acc;
  });
}

Var custom_jacobian_node(Var input, Tensor output_value, const Tensor& jacobian) {
  const std::size_t n_in = input.value().size();
  const std::size_t n_out = output_value.size();
  if (jacobian.rank() != 2 || jacobian.rows() != n_out || jacobian.cols() != n_in) {
    throw ShapeError("custom_jacobian_node", {input.shape(), output_value.shape(), jacobian.shape()});
  }
  return input.tape->push(std::move(output_value), {input}, [jacobian](const Tensor& g, std::span<Tensor> gi) {
    Eigen::Map<const Eigen::VectorXd> gv(g.data().data(), static_cast<Eigen::Index>(g.size()));
    Eigen::Map<Eigen::VectorXd> out(gi[0].data().data(), static_cast<Eigen::Index>(gi[0].size()));
    out.noalias() += as_matrix(jacobian).transpose() * gv;
  });
}

Var block_jacobian_node(Var input, Tensor output_value, std::vector<Tensor> jacobians) {
  const Tensor& xv = input.value();
  if (xv.rank() != 2 || output_value.rank() != 2 || output_value.rows() != xv.rows() ||
      jacobians.size() != xv.rows()) {
    throw ShapeError("block_jacobian_node", {xv.shape(), output_value.shape()});
  }
  const std::size_t n_in = xv.cols(), n_out = output_value.cols();
  for (const Tensor& j : jacobians) {
    if (j.rank() != 2 || j.rows() != n_out || j.cols() != n_in) {
      throw ShapeError("block_jacobian_node", {xv.shape(), output_value.shape(), j.shape()});
    }
  }
  return input.tape->push(std::move(output_value), {input},
                          [jac = std::move(jacobians), n_in, n_out](const Tensor& g, std::span<Tensor> gi) {
                            for (std::size_t r = 0; r < jac.size(); ++r) {
                              const Tensor& j = jac[r];
                              for (std::size_t o = 0; o < n_out; ++o) {
                                const double go = g[r * n_out + o];
                                if (go == 0.0) continue;
                                for (std::size_t i = 0; i < n_in; ++i) gi[0][r * n_in + i] += j[o * n_in + i] * go;
                              }
                            }
                          });
}

}  // namespace mvrom::ad
