#pragma once

// Reverse-mode automatic differentiation over NdArray values.
//
// A Graph is a define-by-run tape: every op call computes its value
// immediately and appends a node; creation order is therefore a valid
// topological order and backward() simply walks the tape in reverse.
// A Graph is single-threaded; independent graphs may live on different
// threads.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "npgrid/ndarray.hpp"

namespace npgrid {

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Log,
  Tanh,
  Relu,
  Softplus,
  Sum,
  Mean,
  MeanAxis,
  MatMul,
  Conv1d,
  Concat,
  Broadcast,
  Reshape,
  Transpose,
  Slice,
};

const char* op_name(OpKind op) noexcept;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  const NdArray& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  std::size_t id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  /// With record_gradients == false the graph only evaluates; backward()
  /// is unavailable and no gradient bookkeeping is kept.
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Differentiable input. Named leaves are reported by leaf_gradients().
  Var leaf(NdArray value, std::string name = {});
  /// Non-differentiable input.
  Var constant(NdArray value);
  Var scalar(double value) { return constant(NdArray::scalar(value)); }

  void backward(Var root);
  /// Gradient of the last backward() root w.r.t. `v`; zeros if unreached.
  NdArray grad(Var v) const;
  std::map<std::string, NdArray> leaf_gradients() const;

  bool recording() const noexcept { return record_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  OpKind op_of(Var v) const;
  std::vector<Var> inputs_of(Var v) const;

  // Node construction used by the op functions in namespace ad.
  Var push(OpKind op, NdArray value, std::initializer_list<Var> inputs, std::size_t aux0 = 0,
           std::size_t aux1 = 0);
  const NdArray& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    OpKind op = OpKind::Constant;
    std::array<std::size_t, 3> in{};
    std::uint8_t n_in = 0;
    bool needs_grad = false;
    std::size_t aux0 = 0;
    std::size_t aux1 = 0;
    NdArray value;
    NdArray grad;
  };

  void propagate(std::size_t id);
  NdArray& grad_slot(std::size_t id);

  bool record_;
  bool has_backward_ = false;
  std::deque<Node> nodes_;
  std::map<std::size_t, std::string> leaf_names_;
};

namespace ad {

// Elementwise binary ops accept equal shapes, or one operand of size 1
// which is broadcast against the other.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add(Var a, double b);
Var mul(Var a, double b);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);

/// Sum of all entries, shape {1}.
Var sum(Var a);
/// Mean of all entries, shape {1}.
Var mean(Var a);
/// Mean of a rank-2 array over `axis`; the result has rank 1.
Var mean(Var a, std::size_t axis);

/// [m,k] x [k,n] -> [m,n].
Var matmul(Var a, Var b);

/// Same-padded, stride-1 cross-correlation.
/// signal [c_in, L], kernels [c_out, c_in, k] (k odd), bias [c_out] -> [c_out, L].
Var conv1d(Var signal, Var kernels, Var bias);

/// Concatenation along axis 0 (rows for rank 2, entries for rank 1).
Var concat(Var a, Var b);
/// Vector [c] repeated over a length axis -> [c, length].
Var broadcast(Var v, std::size_t length);
Var reshape(Var a, Shape shape);
Var transpose(Var a);
/// Entries [begin, end) of a rank-1 array, or rows [begin, end) of a rank-2 array.
Var slice(Var a, std::size_t begin, std::size_t end);

}  // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(Var a, Var b) { return ad::mul(a, b); }
inline Var operator/(Var a, Var b) { return ad::div(a, b); }
inline Var operator-(Var a) { return ad::neg(a); }

/// Declared input of a Program: name and required shape.
struct LeafDecl {
  std::string name;
  Shape shape;
};

/// A graph recipe over named leaves, for evaluate() and gradient checks.
struct Program {
  std::vector<LeafDecl> leaves;
  std::function<Var(Graph&, const std::map<std::string, Var>&)> body;
};

using Bindings = std::map<std::string, NdArray>;

/// Runs `program` on `bindings`. Throws ContractError naming the first leaf
/// whose binding is missing or mis-shaped, NumericError on non-finite values.
NdArray evaluate(const Program& program, const Bindings& bindings);

/// Gradients of a scalar program w.r.t. every declared leaf.
Bindings gradients(const Program& program, const Bindings& bindings);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  std::map<std::string, double> per_leaf;
};

/// Compares backward() against central differences (f(p+h e_i) - f(p-h e_i)) / 2h
/// on every coordinate of every leaf. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8). `step` must lie in [1e-7, 1e-3].
GradCheckReport finite_difference_check(const Program& program, const Bindings& point,
                                        double step);

/// Single-array form: f maps a parameter vector leaf to a scalar.
double finite_difference_check(const std::function<Var(Graph&, Var)>& f, const NdArray& point,
                               double step);

}  // namespace npgrid
