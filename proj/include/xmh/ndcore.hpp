#pragma once

// Dense row-major matrices and a small tape-based reverse-mode autodiff
// engine, enough for fully connected networks and pairwise hashing losses.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace xmh {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  // Copies the listed rows, in order, into a new matrix.
  Matrix gather_rows(std::span<const std::size_t> indices) const;

  std::string shape_string() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Plain (untaped) products used by both the tape and evaluation code.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_transposed(const Matrix& a, const Matrix& b);  // a * b^T

// log(1 + e^x) without overflow.
double softplus(double x);
double sigmoid(double x);

enum class Activation : std::uint8_t { kRelu, kTanh, kSigmoid, kIdentity };

Matrix activation(const Matrix& x, Activation kind);

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
  friend auto operator<=>(NodeId, NodeId) = default;
};

using GradientMap = std::map<NodeId, Matrix>;

// Records primitive operations and their values; backward() walks the
// record in reverse. Not thread-safe: one tape per training step.
class Tape {
 public:
  NodeId constant(Matrix value);
  NodeId parameter(Matrix value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId matmul_transposed(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId add_row_vector(NodeId a, NodeId row);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId add_scalar(NodeId a, double s);
  NodeId activation(NodeId a, Activation kind);
  NodeId relu(NodeId a) { return activation(a, Activation::kRelu); }
  NodeId tanh(NodeId a) { return activation(a, Activation::kTanh); }
  NodeId sigmoid(NodeId a) { return activation(a, Activation::kSigmoid); }
  NodeId softplus(NodeId a);
  NodeId log(NodeId a);
  NodeId exp(NodeId a);
  NodeId sum(NodeId a);
  NodeId squared_norm(NodeId a);
  NodeId slice_cols(NodeId a, std::size_t begin, std::size_t count);
  // a * w[entry], where w is any node and entry indexes its flat storage.
  NodeId scale_by_entry(NodeId a, NodeId w, std::size_t entry);

  const Matrix& value(NodeId id) const;
  double scalar(NodeId id) const;
  bool requires_grad(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  // Overwrites a leaf value; call replay() to propagate.
  void set_leaf(NodeId id, Matrix value);
  // Recomputes every non-leaf node from its inputs in recording order.
  void replay();

  // Gradient of a 1x1 node with respect to every parameter leaf.
  GradientMap backward(NodeId loss);

 private:
  enum class Op : std::uint8_t {
    kLeaf, kMatMul, kMatMulT, kAdd, kSub, kAddRow, kHadamard, kScale, kAddScalar,
    kActivation, kSoftplus, kLog, kExp, kSum, kSquaredNorm, kSliceCols, kScaleByEntry,
  };

  struct Node {
    Op op = Op::kLeaf;
    NodeId a{}, b{};
    double scalar = 0.0;
    std::size_t begin = 0, count = 0;
    Activation act = Activation::kIdentity;
    bool param = false;
    bool needs_grad = false;
    Matrix value{};
    Matrix adjoint{};
  };

  NodeId record(Node node);
  Matrix evaluate(const Node& node) const;
  void propagate(const Node& node);
  Node& at(NodeId id);
  const Node& at(NodeId id) const;

  std::vector<Node> nodes_;
};

enum class Direction : std::uint8_t { kDescent, kAscent };

struct ParamBinding {
  Matrix* target;
  NodeId node;
};

// p <- p -/+ lr * g for every binding. All gradients are validated before any
// parameter is touched, so a failed call leaves every parameter unchanged.
void sgd_step(std::span<const ParamBinding> params, const GradientMap& grads, double lr,
              Direction direction);

}  // namespace xmh
