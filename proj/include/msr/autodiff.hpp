// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Forward values are computed eagerly. Every operation whose inputs live on a
// Tape appends a node holding a backward rule; the backward rules are written
// in terms of the same recorded operations, so a gradient computed with
// create_graph=true is itself differentiable (gradients of gradients).
//
// Usage:
//   ad::Tape tape;
//   auto x = tape.leaf(ad::Tensor::scalar(3.0));
//   auto y = ad::mul(x, x);
//   auto dy = tape.grad(y, {x}, /*create_graph=*/true)[0];   // 6
//   auto d2y = tape.grad(dy, {x})[0];                          // 2
//
// A Tape and the tensors recorded on it belong to one thread.

#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msr::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tape;

enum class OpKind {
  Leaf,
  MatMul,
  Transpose,
  Add,
  AddRowBroadcast,
  Sub,
  Mul,
  Div,
  Scale,
  Tanh,
  Log,
  Exp,
  Softmax,
  Sum,
  Mean,
  Fill,
  RowSum,
  ColSum,
  BroadcastCols,
  BroadcastRows,
  SelectRows,
  ScatterRows,
  MaxConst,
};

const char* op_name(OpKind kind);

// A rows x cols matrix of doubles. Scalars are 1x1. Copies share storage;
// values are immutable once constructed.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor full(std::size_t rows, std::size_t cols, double value);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool empty() const { return data_ == nullptr; }

  std::span<const double> values() const;
  std::span<const double> row(std::size_t r) const;
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  // Same values, no tape membership.
  Tensor detached() const;

 private:
  friend class Tape;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = std::numeric_limits<std::size_t>::max();
};

// Given the upstream gradient of a node's output and a mask of which inputs
// need a gradient, returns one gradient per input (empty where not needed).
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& upstream, const std::vector<bool>& needed)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a copy of `value` as a differentiable input.
  Tensor leaf(const Tensor& value);

  // d output / d wrt[i] for every i. `output` must be a 1x1 tensor on this
  // tape. A wrt tensor that does not influence the output gets zeros.
  std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt,
                           bool create_graph = false);
  std::vector<Tensor> grad(const Tensor& output, std::initializer_list<Tensor> wrt,
                           bool create_graph = false) {
    return grad(output, std::span<const Tensor>(wrt.begin(), wrt.size()), create_graph);
  }

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t node) const { return nodes_.at(node).kind; }
  const std::vector<std::size_t>& inputs(std::size_t node) const { return nodes_.at(node).inputs; }

  bool recording() const { return recording_; }

  // Appends a node for `value` computed from `inputs`. Returns an untracked
  // tensor when no input is tracked or recording is paused.
  static Tensor record(OpKind kind, std::initializer_list<const Tensor*> inputs, std::size_t rows,
                       std::size_t cols, std::vector<double> value, BackwardFn backward);

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;  // node ids of tracked inputs
    std::vector<std::size_t> slots;   // position of each tracked input in the op's argument list
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool recording_ = true;
};

// ---------------------------------------------------------------------------
// Operations. All throw ShapeError on incompatible shapes and NumericError if
// the forward result contains NaN or infinity.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
// x (n x m) plus bias (1 x m) added to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor tanh(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Broadcasts a 1x1 tensor to rows x cols.
Tensor fill(const Tensor& s, std::size_t rows, std::size_t cols);
// n x m -> n x 1
Tensor row_sum(const Tensor& a);
// n x m -> 1 x m
Tensor col_sum(const Tensor& a);
// n x 1 -> n x cols
Tensor broadcast_cols(const Tensor& a, std::size_t cols);
// 1 x m -> rows x m
Tensor broadcast_rows(const Tensor& a, std::size_t rows);
Tensor select_rows(const Tensor& a, std::span<const std::size_t> indices);
// Adds row i of `a` into row indices[i] of a zero rows x a.cols() result.
Tensor scatter_rows(const Tensor& a, std::span<const std::size_t> indices, std::size_t rows);
// Elementwise max(a, floor); gradient passes only where a > floor.
Tensor max_const(const Tensor& a, double floor);

}  // namespace msr::ad
