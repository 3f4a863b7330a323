#include "xmh/ndcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include <Eigen/Core>

#include "xmh/errors.hpp"

namespace xmh {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
MutMap view(Matrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

double apply(Activation kind, double x) {
  switch (kind) {
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

// Derivative expressed through the input x and the output y.
double derivative(Activation kind, double x, double y) {
  switch (kind) {
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kSigmoid: return y * (1.0 - y);
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

template <typename Fn>
Matrix map_unary(const Matrix& x, Fn fn) {
  Matrix out(x.rows(), x.cols());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " does not match " +
                     shape_string());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols_), cols_,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
  }
  return out;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  Matrix out(a.rows(), b.cols());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: " + a.shape_string() + " x (" + b.shape_string() + ")^T");
  }
  Matrix out(a.rows(), b.rows());
  if (a.cols() == 0) return out;
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix activation(const Matrix& x, Activation kind) {
  return map_unary(x, [kind](double v) { return apply(kind, v); });
}

// ---------------------------------------------------------------------------
// Tape

Tape::Node& Tape::at(NodeId id) {
  if (id.index >= nodes_.size()) throw ContractError("Tape: unknown node id");
  return nodes_[id.index];
}

const Tape::Node& Tape::at(NodeId id) const {
  if (id.index >= nodes_.size()) throw ContractError("Tape: unknown node id");
  return nodes_[id.index];
}

NodeId Tape::record(Node node) {
  if (node.op != Op::kLeaf) {
    node.needs_grad = at(node.a).needs_grad;
    if (node.op == Op::kMatMul || node.op == Op::kMatMulT || node.op == Op::kAdd ||
        node.op == Op::kSub || node.op == Op::kAddRow || node.op == Op::kHadamard ||
        node.op == Op::kScaleByEntry) {
      node.needs_grad = node.needs_grad || at(node.b).needs_grad;
    }
    node.value = evaluate(node);
  }
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return record(std::move(n));
}

NodeId Tape::parameter(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.param = true;
  n.needs_grad = true;
  return record(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) { return record({.op = Op::kMatMul, .a = a, .b = b}); }
NodeId Tape::matmul_transposed(NodeId a, NodeId b) {
  return record({.op = Op::kMatMulT, .a = a, .b = b});
}
NodeId Tape::add(NodeId a, NodeId b) { return record({.op = Op::kAdd, .a = a, .b = b}); }
NodeId Tape::sub(NodeId a, NodeId b) { return record({.op = Op::kSub, .a = a, .b = b}); }
NodeId Tape::add_row_vector(NodeId a, NodeId row) {
  return record({.op = Op::kAddRow, .a = a, .b = row});
}
NodeId Tape::hadamard(NodeId a, NodeId b) { return record({.op = Op::kHadamard, .a = a, .b = b}); }
NodeId Tape::scale(NodeId a, double s) { return record({.op = Op::kScale, .a = a, .scalar = s}); }
NodeId Tape::add_scalar(NodeId a, double s) {
  return record({.op = Op::kAddScalar, .a = a, .scalar = s});
}
NodeId Tape::activation(NodeId a, Activation kind) {
  return record({.op = Op::kActivation, .a = a, .act = kind});
}
NodeId Tape::softplus(NodeId a) { return record({.op = Op::kSoftplus, .a = a}); }
NodeId Tape::log(NodeId a) { return record({.op = Op::kLog, .a = a}); }
NodeId Tape::exp(NodeId a) { return record({.op = Op::kExp, .a = a}); }
NodeId Tape::sum(NodeId a) { return record({.op = Op::kSum, .a = a}); }
NodeId Tape::squared_norm(NodeId a) { return record({.op = Op::kSquaredNorm, .a = a}); }
NodeId Tape::slice_cols(NodeId a, std::size_t begin, std::size_t count) {
  return record({.op = Op::kSliceCols, .a = a, .begin = begin, .count = count});
}
NodeId Tape::scale_by_entry(NodeId a, NodeId w, std::size_t entry) {
  return record({.op = Op::kScaleByEntry, .a = a, .b = w, .begin = entry});
}

const Matrix& Tape::value(NodeId id) const { return at(id).value; }

double Tape::scalar(NodeId id) const {
  const Matrix& v = at(id).value;
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("Tape::scalar: node has shape " + v.shape_string());
  }
  return v(0, 0);
}

bool Tape::requires_grad(NodeId id) const { return at(id).needs_grad; }

void Tape::set_leaf(NodeId id, Matrix value) {
  Node& n = at(id);
  if (n.op != Op::kLeaf) throw ContractError("Tape::set_leaf: node is not a leaf");
  require_same_shape(n.value, value, "Tape::set_leaf");
  n.value = std::move(value);
}

void Tape::replay() {
  for (Node& n : nodes_) {
    if (n.op != Op::kLeaf) n.value = evaluate(n);
  }
}

Matrix Tape::evaluate(const Node& n) const {
  const Matrix& a = at(n.a).value;
  switch (n.op) {
    case Op::kLeaf:
      return n.value;
    case Op::kMatMul:
      return xmh::matmul(a, at(n.b).value);
    case Op::kMatMulT:
      return xmh::matmul_transposed(a, at(n.b).value);
    case Op::kAdd:
    case Op::kSub:
    case Op::kHadamard: {
      const Matrix& b = at(n.b).value;
      require_same_shape(a, b, "elementwise op");
      Matrix out(a.rows(), a.cols());
      auto x = a.data();
      auto y = b.data();
      auto z = out.data();
      for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = n.op == Op::kAdd ? x[i] + y[i] : n.op == Op::kSub ? x[i] - y[i] : x[i] * y[i];
      }
      return out;
    }
    case Op::kAddRow: {
      const Matrix& row = at(n.b).value;
      if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row_vector: " + a.shape_string() + " + " + row.shape_string());
      }
      Matrix out = a;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto dst = out.row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += row(0, c);
      }
      return out;
    }
    case Op::kScale:
      return map_unary(a, [s = n.scalar](double v) { return s * v; });
    case Op::kAddScalar:
      return map_unary(a, [s = n.scalar](double v) { return v + s; });
    case Op::kActivation:
      return xmh::activation(a, n.act);
    case Op::kSoftplus:
      return map_unary(a, [](double v) { return xmh::softplus(v); });
    case Op::kLog:
      return map_unary(a, [](double v) { return std::log(v); });
    case Op::kExp:
      return map_unary(a, [](double v) { return std::exp(v); });
    case Op::kSum: {
      double s = 0.0;
      for (double v : a.data()) s += v;
      return Matrix(1, 1, s);
    }
    case Op::kSquaredNorm: {
      double s = 0.0;
      for (double v : a.data()) s += v * v;
      return Matrix(1, 1, s);
    }
    case Op::kSliceCols: {
      if (n.begin + n.count > a.cols()) {
        throw ShapeError("slice_cols: [" + std::to_string(n.begin) + ", " +
                         std::to_string(n.begin + n.count) + ") out of " + a.shape_string());
      }
      Matrix out(a.rows(), n.count);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        std::copy_n(a.row(r).begin() + static_cast<std::ptrdiff_t>(n.begin), n.count,
                    out.row(r).begin());
      }
      return out;
    }
    case Op::kScaleByEntry: {
      const Matrix& w = at(n.b).value;
      if (n.begin >= w.size()) throw ShapeError("scale_by_entry: entry out of range");
      return map_unary(a, [s = w.data()[n.begin]](double v) { return s * v; });
    }
  }
  throw ContractError("Tape: unknown op");
}

void Tape::propagate(const Node& n) {
  const Matrix& g = n.adjoint;
  Node& na = at(n.a);
  auto accumulate = [](Node& dst, const Matrix& delta) {
    if (!dst.needs_grad) return;
    view(dst.adjoint) += view(delta);
  };
  auto accumulate_map = [&](Node& dst, auto fn) {
    if (!dst.needs_grad) return;
    auto adj = dst.adjoint.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += fn(i, gd[i]);
  };

  switch (n.op) {
    case Op::kLeaf:
      return;
    case Op::kMatMul: {
      Node& nb = at(n.b);
      if (na.needs_grad) accumulate(na, xmh::matmul_transposed(g, nb.value));
      if (nb.needs_grad) view(nb.adjoint).noalias() += view(na.value).transpose() * view(g);
      return;
    }
    case Op::kMatMulT: {
      Node& nb = at(n.b);
      if (na.needs_grad) accumulate(na, xmh::matmul(g, nb.value));
      if (nb.needs_grad) view(nb.adjoint).noalias() += view(g).transpose() * view(na.value);
      return;
    }
    case Op::kAdd:
      accumulate(na, g);
      accumulate(at(n.b), g);
      return;
    case Op::kSub: {
      accumulate(na, g);
      Node& nb = at(n.b);
      if (nb.needs_grad) view(nb.adjoint) -= view(g);
      return;
    }
    case Op::kAddRow: {
      accumulate(na, g);
      Node& nb = at(n.b);
      if (nb.needs_grad) view(nb.adjoint) += view(g).colwise().sum();
      return;
    }
    case Op::kHadamard: {
      Node& nb = at(n.b);
      const auto av = na.value.data();
      const auto bv = nb.value.data();
      accumulate_map(na, [&](std::size_t i, double gi) { return gi * bv[i]; });
      accumulate_map(nb, [&](std::size_t i, double gi) { return gi * av[i]; });
      return;
    }
    case Op::kScale:
      accumulate_map(na, [s = n.scalar](std::size_t, double gi) { return s * gi; });
      return;
    case Op::kAddScalar:
      accumulate(na, g);
      return;
    case Op::kActivation: {
      const auto x = na.value.data();
      const auto y = n.value.data();
      accumulate_map(na, [&](std::size_t i, double gi) { return gi * derivative(n.act, x[i], y[i]); });
      return;
    }
    case Op::kSoftplus: {
      const auto x = na.value.data();
      accumulate_map(na, [&](std::size_t i, double gi) { return gi * xmh::sigmoid(x[i]); });
      return;
    }
    case Op::kLog: {
      const auto x = na.value.data();
      accumulate_map(na, [&](std::size_t i, double gi) { return gi / x[i]; });
      return;
    }
    case Op::kExp: {
      const auto y = n.value.data();
      accumulate_map(na, [&](std::size_t i, double gi) { return gi * y[i]; });
      return;
    }
    case Op::kSum: {
      if (!na.needs_grad) return;
      const double s = g(0, 0);
      for (double& v : na.adjoint.data()) v += s;
      return;
    }
    case Op::kSquaredNorm: {
      if (!na.needs_grad) return;
      const double s = 2.0 * g(0, 0);
      auto adj = na.adjoint.data();
      const auto x = na.value.data();
      for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += s * x[i];
      return;
    }
    case Op::kSliceCols: {
      if (!na.needs_grad) return;
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto dst = na.adjoint.row(r).subspan(n.begin, n.count);
        auto src = g.row(r);
        for (std::size_t c = 0; c < n.count; ++c) dst[c] += src[c];
      }
      return;
    }
    case Op::kScaleByEntry: {
      Node& nw = at(n.b);
      const double w = nw.value.data()[n.begin];
      accumulate_map(na, [w](std::size_t, double gi) { return w * gi; });
      if (nw.needs_grad) {
        double dw = 0.0;
        const auto x = na.value.data();
        const auto gd = g.data();
        for (std::size_t i = 0; i < gd.size(); ++i) dw += gd[i] * x[i];
        nw.adjoint.data()[n.begin] += dw;
      }
      return;
    }
  }
}

GradientMap Tape::backward(NodeId loss) {
  const Node& root = at(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ContractError("backward: loss node must be 1x1, got " + root.value.shape_string());
  }
  for (Node& n : nodes_) {
    if (n.needs_grad) {
      n.adjoint = Matrix(n.value.rows(), n.value.cols());
    } else {
      n.adjoint = Matrix();
    }
  }
  if (root.needs_grad) at(loss).adjoint(0, 0) = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.op != Op::kLeaf) propagate(n);
  }

  GradientMap grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.param) continue;
    // Parameters recorded after the loss node cannot influence it.
    grads.emplace(NodeId{static_cast<std::uint32_t>(i)},
                  i <= loss.index ? n.adjoint : Matrix(n.value.rows(), n.value.cols()));
  }
  return grads;
}

void sgd_step(std::span<const ParamBinding> params, const GradientMap& grads, double lr,
              Direction direction) {
  if (!(lr >= 0.0)) throw ContractError("sgd_step: learning rate must be non-negative");
  std::vector<const Matrix*> found;
  found.reserve(params.size());
  for (const ParamBinding& p : params) {
    auto it = grads.find(p.node);
    if (it == grads.end()) {
      throw ContractError("sgd_step: no gradient for parameter node " +
                          std::to_string(p.node.index));
    }
    require_same_shape(*p.target, it->second, "sgd_step");
    found.push_back(&it->second);
  }
  const double signed_lr = direction == Direction::kDescent ? -lr : lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].target->data();
    auto g = found[i]->data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += signed_lr * g[k];
  }
}

}  // namespace xmh
