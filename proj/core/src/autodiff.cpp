#include "npgrid/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "npgrid/errors.hpp"

namespace npgrid {

const char* op_name(OpKind op) noexcept {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::MeanAxis: return "mean_axis";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::Concat: return "concat";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Reshape: return "reshape";
    case OpKind::Transpose: return "transpose";
    case OpKind::Slice: return "slice";
  }
  return "unknown";
}

const NdArray& Var::value() const {
  if (graph_ == nullptr) throw ContractError("Var: use of an unbound variable");
  return graph_->value_of(id_);
}

Var Graph::leaf(NdArray value, std::string name) {
  if (!value.all_finite()) {
    throw NumericError("leaf '" + name + "' holds non-finite values");
  }
  Node node;
  node.op = OpKind::Leaf;
  node.needs_grad = record_;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  if (!name.empty()) leaf_names_.emplace(id, std::move(name));
  return Var(this, id);
}

Var Graph::constant(NdArray value) {
  Node node;
  node.op = OpKind::Constant;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::push(OpKind op, NdArray value, std::initializer_list<Var> inputs, std::size_t aux0,
                std::size_t aux1) {
  if (!value.all_finite()) {
    throw NumericError(std::string("numeric overflow: ") + op_name(op) +
                       " produced a non-finite value");
  }
  Node node;
  node.op = op;
  node.aux0 = aux0;
  node.aux1 = aux1;
  for (const Var& v : inputs) {
    if (v.graph() != this) throw ContractError("op input belongs to a different graph");
    node.in[node.n_in++] = v.id();
    if (record_ && nodes_[v.id()].needs_grad) node.needs_grad = true;
  }
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

OpKind Graph::op_of(Var v) const { return nodes_.at(v.id()).op; }

std::vector<Var> Graph::inputs_of(Var v) const {
  const Node& node = nodes_.at(v.id());
  std::vector<Var> out;
  for (std::size_t i = 0; i < node.n_in; ++i) out.push_back(Var(const_cast<Graph*>(this), node.in[i]));
  return out;
}

NdArray& Graph::grad_slot(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.shape() != node.value.shape()) node.grad = NdArray(node.value.shape(), 0.0);
  return node.grad;
}

NdArray Graph::grad(Var v) const {
  if (v.graph() != this) throw ContractError("grad: variable belongs to a different graph");
  const Node& node = nodes_.at(v.id());
  if (node.grad.shape() != node.value.shape()) return NdArray(node.value.shape(), 0.0);
  return node.grad;
}

std::map<std::string, NdArray> Graph::leaf_gradients() const {
  std::map<std::string, NdArray> out;
  for (const auto& [id, name] : leaf_names_) out[name] = grad(Var(const_cast<Graph*>(this), id));
  return out;
}

void Graph::backward(Var root) {
  if (!record_) throw ContractError("backward: graph was built without gradient recording");
  if (root.graph() != this) throw ContractError("backward: root belongs to a different graph");
  if (root.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + shape_string(root.shape()));
  }
  if (has_backward_) {
    for (Node& node : nodes_) node.grad = NdArray();
  }
  has_backward_ = true;
  grad_slot(root.id())[0] = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.needs_grad || node.n_in == 0) continue;
    if (node.grad.shape() != node.value.shape()) continue;  // unreached
    propagate(id);
  }
}

namespace {

// Reduces an upstream gradient onto an operand that was broadcast from size 1.
void accumulate(NdArray& target, const std::vector<double>& contribution) {
  if (target.size() == contribution.size()) {
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += contribution[i];
  } else {
    double total = 0.0;
    for (double c : contribution) total += c;
    target[0] += total;
  }
}

inline double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

void Graph::propagate(std::size_t id) {
  const Node& node = nodes_[id];
  const NdArray& g = node.grad;
  const NdArray& out = node.value;
  auto wants = [&](std::size_t k) { return nodes_[node.in[k]].needs_grad; };
  auto in_value = [&](std::size_t k) -> const NdArray& { return nodes_[node.in[k]].value; };

  switch (node.op) {
    case OpKind::Leaf:
    case OpKind::Constant:
      break;
    case OpKind::Add:
    case OpKind::Sub: {
      if (wants(0)) accumulate(grad_slot(node.in[0]), g.values());
      if (wants(1)) {
        std::vector<double> c(g.values());
        if (node.op == OpKind::Sub) {
          for (double& v : c) v = -v;
        }
        accumulate(grad_slot(node.in[1]), c);
      }
      break;
    }
    case OpKind::Mul:
    case OpKind::Div: {
      const NdArray& a = in_value(0);
      const NdArray& b = in_value(1);
      const std::size_t n = g.size();
      auto av = [&](std::size_t i) { return a.size() == 1 ? a[0] : a[i]; };
      auto bv = [&](std::size_t i) { return b.size() == 1 ? b[0] : b[i]; };
      if (wants(0)) {
        std::vector<double> c(n);
        if (node.op == OpKind::Mul) {
          for (std::size_t i = 0; i < n; ++i) c[i] = g[i] * bv(i);
        } else {
          for (std::size_t i = 0; i < n; ++i) c[i] = g[i] / bv(i);
        }
        accumulate(grad_slot(node.in[0]), c);
      }
      if (wants(1)) {
        std::vector<double> c(n);
        if (node.op == OpKind::Mul) {
          for (std::size_t i = 0; i < n; ++i) c[i] = g[i] * av(i);
        } else {
          for (std::size_t i = 0; i < n; ++i) c[i] = -g[i] * out[i] / bv(i);
        }
        accumulate(grad_slot(node.in[1]), c);
      }
      break;
    }
    case OpKind::Neg: {
      NdArray& ga = grad_slot(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
      break;
    }
    case OpKind::Exp: {
      NdArray& ga = grad_slot(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out[i];
      break;
    }
    case OpKind::Log: {
      const NdArray& a = in_value(0);
      NdArray& ga = grad_slot(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
      break;
    }
    case OpKind::Tanh: {
      NdArray& ga = grad_slot(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - out[i] * out[i]);
      break;
    }
    case OpKind::Relu: {
      const NdArray& a = in_value(0);
      NdArray& ga = grad_slot(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] > 0.0) ga[i] += g[i];
      }
      break;
    }
    case OpKind::Softplus: {
      const NdArray& a = in_value(0);
      NdArray& ga = grad_slot(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid(a[i]);
      break;
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      NdArray& ga = grad_slot(node.in[0]);
      const double scale = node.op == OpKind::Sum ? g[0] : g[0] / static_cast<double>(ga.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += scale;
      break;
    }
    case OpKind::MeanAxis: {
      NdArray& ga = grad_slot(node.in[0]);
      const std::size_t rows = ga.dim(0);
      const std::size_t cols = ga.dim(1);
      if (node.aux0 == 0) {
        const double inv = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c] * inv;
      } else {
        const double inv = 1.0 / static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r] * inv;
      }
      break;
    }
    case OpKind::MatMul: {
      const NdArray& a = in_value(0);
      const NdArray& b = in_value(1);
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (wants(0)) gemm_nt(g.data().data(), b.data().data(), grad_slot(node.in[0]).data().data(), m, n, k);
      if (wants(1)) gemm_tn(a.data().data(), g.data().data(), grad_slot(node.in[1]).data().data(), m, k, n);
      break;
    }
    case OpKind::Conv1d: {
      const NdArray& x = in_value(0);
      const NdArray& w = in_value(1);
      const std::size_t c_out = w.dim(0), c_in = w.dim(1), k = w.dim(2), len = x.dim(1);
      const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
      const bool gx_on = wants(0), gw_on = wants(1), gb_on = wants(2);
      double* gx = gx_on ? grad_slot(node.in[0]).data().data() : nullptr;
      double* gw = gw_on ? grad_slot(node.in[1]).data().data() : nullptr;
      double* gb = gb_on ? grad_slot(node.in[2]).data().data() : nullptr;
      for (std::size_t co = 0; co < c_out; ++co) {
        const double* grow = g.data().data() + co * len;
        if (gb_on) {
          double acc = 0.0;
          for (std::size_t t = 0; t < len; ++t) acc += grow[t];
          gb[co] += acc;
        }
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          const double* xrow = x.data().data() + ci * len;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
            const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
            const std::size_t t1 = shift > 0 ? len - static_cast<std::size_t>(shift) : len;
            const std::size_t widx = (co * c_in + ci) * k + j;
            if (gw_on) {
              double acc = 0.0;
              for (std::size_t t = t0; t < t1; ++t) acc += grow[t] * xrow[t + shift];
              gw[widx] += acc;
            }
            if (gx_on) {
              const double wv = w[widx];
              double* gxrow = gx + ci * len;
              for (std::size_t t = t0; t < t1; ++t) gxrow[t + shift] += wv * grow[t];
            }
          }
        }
      }
      break;
    }
    case OpKind::Concat: {
      const std::size_t split = node.aux0;  // number of values from the first input
      if (wants(0)) {
        NdArray& ga = grad_slot(node.in[0]);
        for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        NdArray& gb = grad_slot(node.in[1]);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
      }
      break;
    }
    case OpKind::Broadcast: {
      NdArray& gv = grad_slot(node.in[0]);
      const std::size_t len = node.aux0;
      for (std::size_t c = 0; c < gv.size(); ++c) {
        double acc = 0.0;
        for (std::size_t t = 0; t < len; ++t) acc += g[c * len + t];
        gv[c] += acc;
      }
      break;
    }
    case OpKind::Reshape: {
      NdArray& ga = grad_slot(node.in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case OpKind::Transpose: {
      NdArray& ga = grad_slot(node.in[0]);
      const std::size_t rows = ga.dim(0), cols = ga.dim(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c * rows + r];
      break;
    }
    case OpKind::Slice: {
      NdArray& ga = grad_slot(node.in[0]);
      const std::size_t offset = node.aux0;
      for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
      break;
    }
  }
}

namespace ad {
namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) throw ContractError("op applied to an unbound variable");
  return *a.graph();
}

Graph& graph_of(Var a, Var b) {
  Graph& g = graph_of(a);
  if (b.graph() != &g) throw ContractError("op inputs belong to different graphs");
  return g;
}

template <typename F>
Var binary(OpKind op, Var a, Var b, F f) {
  Graph& g = graph_of(a, b);
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  if (av.shape() == bv.shape()) {
    NdArray out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return g.push(op, std::move(out), {a, b});
  }
  if (bv.size() == 1) {
    NdArray out(av.shape());
    const double s = bv[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], s);
    return g.push(op, std::move(out), {a, b});
  }
  if (av.size() == 1) {
    NdArray out(bv.shape());
    const double s = av[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(s, bv[i]);
    return g.push(op, std::move(out), {a, b});
  }
  throw ContractError(std::string(op_name(op)) + ": incompatible shapes " +
                      shape_string(av.shape()) + " and " + shape_string(bv.shape()));
}

template <typename F>
Var unary(OpKind op, Var a, F f) {
  Graph& g = graph_of(a);
  const NdArray& av = a.value();
  NdArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return g.push(op, std::move(out), {a});
}

void require_rank(Var a, std::size_t rank, const char* what) {
  if (a.value().rank() != rank) {
    throw ContractError(std::string(what) + ": expected rank " + std::to_string(rank) +
                        ", got shape " + shape_string(a.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::Add, a, b, [](double x, double y) { return x + y; }); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b, [](double x, double y) { return x - y; }); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b, [](double x, double y) { return x * y; }); }
Var div(Var a, Var b) { return binary(OpKind::Div, a, b, [](double x, double y) { return x / y; }); }
Var add(Var a, double b) { return add(a, graph_of(a).scalar(b)); }
Var mul(Var a, double b) { return mul(a, graph_of(a).scalar(b)); }

Var neg(Var a) { return unary(OpKind::Neg, a, [](double x) { return -x; }); }
Var exp(Var a) { return unary(OpKind::Exp, a, [](double x) { return std::exp(x); }); }
Var log(Var a) { return unary(OpKind::Log, a, [](double x) { return std::log(x); }); }
Var tanh(Var a) { return unary(OpKind::Tanh, a, [](double x) { return std::tanh(x); }); }
Var relu(Var a) { return unary(OpKind::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }
Var softplus(Var a) { return unary(OpKind::Softplus, a, softplus_value); }

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return graph_of(a).push(OpKind::Sum, NdArray::scalar(total), {a});
}

Var mean(Var a) {
  if (a.size() == 0) throw ContractError("mean: empty array");
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return graph_of(a).push(OpKind::Mean, NdArray::scalar(total / static_cast<double>(a.size())), {a});
}

Var mean(Var a, std::size_t axis) {
  require_rank(a, 2, "mean(axis)");
  if (axis > 1) throw ContractError("mean(axis): axis must be 0 or 1");
  const NdArray& av = a.value();
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  if (rows == 0 || cols == 0) throw ContractError("mean(axis): empty array");
  if (axis == 0) {
    NdArray out({cols}, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[c] += av[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) out[c] /= static_cast<double>(rows);
    return graph_of(a).push(OpKind::MeanAxis, std::move(out), {a}, 0);
  }
  NdArray out({rows}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += av[r * cols + c];
    out[r] = acc / static_cast<double>(cols);
  }
  return graph_of(a).push(OpKind::MeanAxis, std::move(out), {a}, 1);
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  if (av.dim(1) != bv.dim(0)) {
    throw ContractError("matmul: inner dimensions differ: " + shape_string(av.shape()) + " x " +
                        shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  NdArray out({m, n}, 0.0);
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.push(OpKind::MatMul, std::move(out), {a, b});
}

Var conv1d(Var signal, Var kernels, Var bias) {
  Graph& g = graph_of(signal, kernels);
  if (bias.graph() != &g) throw ContractError("conv1d: bias belongs to a different graph");
  require_rank(signal, 2, "conv1d signal");
  require_rank(kernels, 3, "conv1d kernels");
  const NdArray& x = signal.value();
  const NdArray& w = kernels.value();
  const NdArray& b = bias.value();
  const std::size_t c_out = w.dim(0), c_in = w.dim(1), k = w.dim(2), len = x.dim(1);
  if (k % 2 == 0) throw ContractError("conv1d: kernel size must be odd, got " + std::to_string(k));
  if (x.dim(0) != c_in) {
    throw ContractError("conv1d: signal has " + std::to_string(x.dim(0)) +
                        " channels, kernels expect " + std::to_string(c_in));
  }
  if (b.size() != c_out) throw ContractError("conv1d: bias length must equal output channels");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  NdArray out({c_out, len}, 0.0);
  for (std::size_t co = 0; co < c_out; ++co) {
    double* orow = out.data().data() + co * len;
    for (std::size_t t = 0; t < len; ++t) orow[t] = b[co];
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double* xrow = x.data().data() + ci * len;
      for (std::size_t j = 0; j < k; ++j) {
        const double wv = w[(co * c_in + ci) * k + j];
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
        const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const std::size_t t1 = shift > 0 ? len - static_cast<std::size_t>(shift) : len;
        for (std::size_t t = t0; t < t1; ++t) orow[t] += wv * xrow[t + shift];
      }
    }
  }
  return g.push(OpKind::Conv1d, std::move(out), {signal, kernels, bias});
}

Var concat(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const NdArray& av = a.value();
  const NdArray& bv = b.value();
  if (av.rank() != bv.rank() || av.rank() == 0 || av.rank() > 2) {
    throw ContractError("concat: ranks must match and be 1 or 2");
  }
  Shape shape = av.shape();
  if (av.rank() == 2) {
    if (av.dim(1) != bv.dim(1)) {
      throw ContractError("concat: column counts differ: " + shape_string(av.shape()) + " and " +
                          shape_string(bv.shape()));
    }
    shape[0] += bv.dim(0);
  } else {
    shape[0] += bv.dim(0);
  }
  std::vector<double> data;
  data.reserve(av.size() + bv.size());
  data.insert(data.end(), av.values().begin(), av.values().end());
  data.insert(data.end(), bv.values().begin(), bv.values().end());
  return g.push(OpKind::Concat, NdArray(std::move(shape), std::move(data)), {a, b}, av.size());
}

Var broadcast(Var v, std::size_t length) {
  require_rank(v, 1, "broadcast");
  const NdArray& vv = v.value();
  NdArray out({vv.size(), length});
  for (std::size_t c = 0; c < vv.size(); ++c)
    for (std::size_t t = 0; t < length; ++t) out[c * length + t] = vv[c];
  return graph_of(v).push(OpKind::Broadcast, std::move(out), {v}, length);
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ContractError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                        shape_string(shape));
  }
  return graph_of(a).push(OpKind::Reshape, a.value().reshaped(std::move(shape)), {a});
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const NdArray& av = a.value();
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  NdArray out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = av[r * cols + c];
  return graph_of(a).push(OpKind::Transpose, std::move(out), {a});
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const NdArray& av = a.value();
  if (av.rank() != 1 && av.rank() != 2) throw ContractError("slice: rank must be 1 or 2");
  if (begin >= end || end > av.dim(0)) {
    throw ContractError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") invalid for shape " + shape_string(av.shape()));
  }
  const std::size_t row = av.rank() == 2 ? av.dim(1) : 1;
  Shape shape = av.shape();
  shape[0] = end - begin;
  std::vector<double> data(av.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                           av.values().begin() + static_cast<std::ptrdiff_t>(end * row));
  return graph_of(a).push(OpKind::Slice, NdArray(std::move(shape), std::move(data)), {a},
                          begin * row);
}

}  // namespace ad

namespace {

std::map<std::string, Var> bind_leaves(Graph& graph, const Program& program,
                                       const Bindings& bindings) {
  std::map<std::string, Var> leaves;
  for (const LeafDecl& decl : program.leaves) {
    auto it = bindings.find(decl.name);
    if (it == bindings.end()) throw ContractError("evaluate: leaf '" + decl.name + "' is unbound");
    if (it->second.shape() != decl.shape) {
      throw ContractError("evaluate: leaf '" + decl.name + "' expects shape " +
                          shape_string(decl.shape) + ", bound to " +
                          shape_string(it->second.shape()));
    }
    leaves.emplace(decl.name, graph.leaf(it->second, decl.name));
  }
  return leaves;
}

}  // namespace

NdArray evaluate(const Program& program, const Bindings& bindings) {
  Graph graph(false);
  const auto leaves = bind_leaves(graph, program, bindings);
  return program.body(graph, leaves).value();
}

Bindings gradients(const Program& program, const Bindings& bindings) {
  Graph graph(true);
  const auto leaves = bind_leaves(graph, program, bindings);
  Var root = program.body(graph, leaves);
  graph.backward(root);
  Bindings out;
  for (const auto& [name, var] : leaves) out[name] = graph.grad(var);
  return out;
}

GradCheckReport finite_difference_check(const Program& program, const Bindings& point,
                                        double step) {
  if (!(step >= 1e-7 && step <= 1e-3)) {
    throw ContractError("finite_difference_check: step must lie in [1e-7, 1e-3]");
  }
  const Bindings analytic = gradients(program, point);
  Bindings probe = point;
  auto value_at = [&]() {
    const NdArray v = evaluate(program, probe);
    if (v.size() != 1 || !std::isfinite(v[0])) {
      throw NumericError("finite_difference_check: f is not a finite scalar");
    }
    return v[0];
  };
  GradCheckReport report;
  for (const LeafDecl& decl : program.leaves) {
    NdArray& coords = probe.at(decl.name);
    const NdArray& grad = analytic.at(decl.name);
    double worst = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const double saved = coords[i];
      coords[i] = saved + step;
      const double up = value_at();
      coords[i] = saved - step;
      const double down = value_at();
      coords[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-8});
      const double err = std::abs(grad[i] - numeric) / denom;
      if (err > worst) worst = err;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_leaf = decl.name;
        report.worst_index = i;
      }
    }
    report.per_leaf[decl.name] = worst;
  }
  return report;
}

double finite_difference_check(const std::function<Var(Graph&, Var)>& f, const NdArray& point,
                               double step) {
  Program program{{{"p", point.shape()}},
                  [&f](Graph& g, const std::map<std::string, Var>& leaves) {
                    return f(g, leaves.at("p"));
                  }};
  return finite_difference_check(program, {{"p", point}}, step).max_relative_error;
}

}  // namespace npgrid
