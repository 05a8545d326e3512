#include "msr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

namespace msr::ad {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << "[" << t.rows() << "x" << t.cols() << "]";
  return os.str();
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_nonempty(const Tensor& a, const char* op) {
  require(!a.empty(), op, "empty tensor");
}

void check_finite(const std::vector<double>& v, OpKind kind) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op_name(kind)) + ": non-finite result");
    }
  }
}

// RAII pause of recording while a first-order backward pass runs.
class RecordingPause {
 public:
  RecordingPause(bool& flag, bool pause) : flag_(flag), saved_(flag) {
    if (pause) flag_ = false;
  }
  ~RecordingPause() { flag_ = saved_; }
  RecordingPause(const RecordingPause&) = delete;
  RecordingPause& operator=(const RecordingPause&) = delete;

 private:
  bool& flag_;
  bool saved_;
};

template <typename F>
std::vector<double> map(const Tensor& a, F f) {
  auto in = a.values();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), f);
  return out;
}

template <typename F>
std::vector<double> zip(const Tensor& a, const Tensor& b, F f) {
  auto x = a.values();
  auto y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::AddRowBroadcast: return "add_bias";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::Tanh: return "tanh";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::Softmax: return "softmax";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Fill: return "fill";
    case OpKind::RowSum: return "row_sum";
    case OpKind::ColSum: return "col_sum";
    case OpKind::BroadcastCols: return "broadcast_cols";
    case OpKind::BroadcastRows: return "broadcast_rows";
    case OpKind::SelectRows: return "select_rows";
    case OpKind::ScatterRows: return "scatter_rows";
    case OpKind::MaxConst: return "max_const";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols) {
  if (rows * cols != values.size()) {
    throw ShapeError("tensor: " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not hold " + std::to_string(values.size()) + " values");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, {value}); }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value) {
  return Tensor(rows, cols, std::vector<double>(rows * cols, value));
}

std::span<const double> Tensor::values() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

std::span<const double> Tensor::row(std::size_t r) const {
  if (r >= rows_) throw ShapeError("row index out of range");
  return values().subspan(r * cols_, cols_);
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows_ || c >= cols_) throw ShapeError("index out of range");
  return (*data_)[r * cols_ + c];
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) throw ShapeError("item: tensor is " + shape_str(*this));
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor out = *this;
  out.tape_ = nullptr;
  out.node_ = std::numeric_limits<std::size_t>::max();
  return out;
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::leaf(const Tensor& value) {
  require_nonempty(value, "leaf");
  Tensor out = value.detached();
  out.tape_ = this;
  out.node_ = nodes_.size();
  nodes_.push_back(Node{OpKind::Leaf, {}, {}, nullptr});
  return out;
}

Tensor Tape::record(OpKind kind, std::initializer_list<const Tensor*> inputs, std::size_t rows,
                    std::size_t cols, std::vector<double> value, BackwardFn backward) {
  check_finite(value, kind);
  Tensor out(rows, cols, std::move(value));

  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->tracked()) continue;
    if (tape != nullptr && tape != in->tape()) {
      throw ShapeError(std::string(op_name(kind)) + ": inputs belong to different tapes");
    }
    tape = in->tape();
  }
  if (tape == nullptr || !tape->recording_) return out;

  Node node{kind, {}, {}, std::move(backward)};
  std::size_t slot = 0;
  for (const Tensor* in : inputs) {
    if (in->tracked()) {
      node.inputs.push_back(in->node());
      node.slots.push_back(slot);
    }
    ++slot;
  }
  out.tape_ = tape;
  out.node_ = tape->nodes_.size();
  tape->nodes_.push_back(std::move(node));
  return out;
}

std::vector<Tensor> Tape::grad(const Tensor& output, std::span<const Tensor> wrt,
                               bool create_graph) {
  if (output.rows() != 1 || output.cols() != 1) {
    throw ShapeError("grad: output must be scalar, got " + shape_str(output));
  }
  if (output.tape() != this) throw ShapeError("grad: output is not on this tape");
  for (const Tensor& w : wrt) {
    if (w.tape() != this) throw ShapeError("grad: wrt tensor is not on this tape");
  }

  const std::size_t last = output.node();

  // Nodes on some path from a wrt tensor to the output.
  std::vector<bool> relevant(last + 1, false);
  std::vector<bool> wanted(last + 1, false);
  for (const Tensor& w : wrt) {
    if (w.node() <= last) relevant[w.node()] = wanted[w.node()] = true;
  }
  for (std::size_t i = 0; i <= last; ++i) {
    if (relevant[i]) continue;
    for (std::size_t in : nodes_[i].inputs) {
      if (relevant[in]) {
        relevant[i] = true;
        break;
      }
    }
  }

  std::vector<std::optional<Tensor>> adjoint(last + 1);
  RecordingPause pause(recording_, !create_graph);

  if (relevant[last]) adjoint[last] = Tensor::scalar(1.0);
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!adjoint[i] || nodes_[i].kind == OpKind::Leaf) continue;

    // Copies: the backward rule may append to nodes_.
    const std::vector<std::size_t> inputs = nodes_[i].inputs;
    const std::vector<std::size_t> slots = nodes_[i].slots;
    const BackwardFn backward = nodes_[i].backward;

    std::size_t arity = slots.empty() ? 0 : slots.back() + 1;
    std::vector<bool> needed(arity, false);
    bool any = false;
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      if (relevant[inputs[j]]) {
        needed[slots[j]] = true;
        any = true;
      }
    }
    if (!any) continue;

    std::vector<Tensor> grads = backward(*adjoint[i], needed);
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      std::size_t in = inputs[j];
      if (!relevant[in]) continue;
      const Tensor& g = grads.at(slots[j]);
      if (g.empty()) continue;
      adjoint[in] = adjoint[in] ? add(*adjoint[in], g) : g;
    }
    if (i != last && !wanted[i]) adjoint[i].reset();
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    std::size_t id = w.node();
    if (id <= last && adjoint[id]) {
      result.push_back(create_graph ? *adjoint[id] : adjoint[id]->detached());
    } else {
      result.push_back(Tensor::zeros(w.rows(), w.cols()));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_nonempty(a, "matmul");
  require_nonempty(b, "matmul");
  require(a.cols() == b.rows(), "matmul", "inner dims " + shape_str(a) + " x " + shape_str(b));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    double* dst = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = x[i * k + p];
      if (s == 0.0) continue;
      const double* src = y.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) dst[j] += s * src[j];
    }
  }
  return Tape::record(OpKind::MatMul, {&a, &b}, n, m, std::move(out),
                      [a, b](const Tensor& g, const std::vector<bool>& need) {
                        std::vector<Tensor> r(2);
                        if (need[0]) r[0] = matmul(g, transpose(b));
                        if (need[1]) r[1] = matmul(transpose(a), g);
                        return r;
                      });
}

Tensor transpose(const Tensor& a) {
  require_nonempty(a, "transpose");
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n * m);
  auto x = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x[i * m + j];
  return Tape::record(OpKind::Transpose, {&a}, m, n, std::move(out),
                      [](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{transpose(g)};
                      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return Tape::record(OpKind::Add, {&a, &b}, a.rows(), a.cols(),
                      zip(a, b, [](double x, double y) { return x + y; }),
                      [](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{g, g};
                      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_nonempty(x, "add_bias");
  require(bias.rows() == 1 && bias.cols() == x.cols(), "add_bias",
          "bias " + shape_str(bias) + " for input " + shape_str(x));
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(x.values().begin(), x.values().end());
  auto b = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b[j];
  return Tape::record(OpKind::AddRowBroadcast, {&x, &bias}, n, m, std::move(out),
                      [](const Tensor& g, const std::vector<bool>& need) {
                        std::vector<Tensor> r(2);
                        if (need[0]) r[0] = g;
                        if (need[1]) r[1] = col_sum(g);
                        return r;
                      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return Tape::record(OpKind::Sub, {&a, &b}, a.rows(), a.cols(),
                      zip(a, b, [](double x, double y) { return x - y; }),
                      [](const Tensor& g, const std::vector<bool>& need) {
                        std::vector<Tensor> r(2);
                        if (need[0]) r[0] = g;
                        if (need[1]) r[1] = scale(g, -1.0);
                        return r;
                      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return Tape::record(OpKind::Mul, {&a, &b}, a.rows(), a.cols(),
                      zip(a, b, [](double x, double y) { return x * y; }),
                      [a, b](const Tensor& g, const std::vector<bool>& need) {
                        std::vector<Tensor> r(2);
                        if (need[0]) r[0] = mul(g, b);
                        if (need[1]) r[1] = mul(g, a);
                        return r;
                      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  auto self = std::make_shared<Tensor>();
  *self = Tape::record(OpKind::Div, {&a, &b}, a.rows(), a.cols(),
                       zip(a, b, [](double x, double y) { return x / y; }),
                       [b, self](const Tensor& g, const std::vector<bool>& need) {
                         std::vector<Tensor> r(2);
                         if (need[0]) r[0] = div(g, b);
                         if (need[1]) r[1] = scale(div(mul(g, *self), b), -1.0);
                         return r;
                       });
  return *self;
}

Tensor scale(const Tensor& a, double factor) {
  require_nonempty(a, "scale");
  return Tape::record(OpKind::Scale, {&a}, a.rows(), a.cols(),
                      map(a, [factor](double x) { return x * factor; }),
                      [factor](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{scale(g, factor)};
                      });
}

Tensor tanh(const Tensor& a) {
  require_nonempty(a, "tanh");
  auto self = std::make_shared<Tensor>();
  *self = Tape::record(OpKind::Tanh, {&a}, a.rows(), a.cols(),
                       map(a, [](double x) { return std::tanh(x); }),
                       [self](const Tensor& g, const std::vector<bool>&) {
                         const Tensor& y = *self;
                         return std::vector<Tensor>{sub(g, mul(g, mul(y, y)))};
                       });
  return *self;
}

Tensor log(const Tensor& a) {
  require_nonempty(a, "log");
  return Tape::record(OpKind::Log, {&a}, a.rows(), a.cols(),
                      map(a, [](double x) { return std::log(x); }),
                      [a](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{div(g, a)};
                      });
}

Tensor exp(const Tensor& a) {
  require_nonempty(a, "exp");
  auto self = std::make_shared<Tensor>();
  *self = Tape::record(OpKind::Exp, {&a}, a.rows(), a.cols(),
                       map(a, [](double x) { return std::exp(x); }),
                       [self](const Tensor& g, const std::vector<bool>&) {
                         return std::vector<Tensor>{mul(g, *self)};
                       });
  return *self;
}

namespace {

std::vector<double> softmax_values(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  auto x = a.values();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = x.data() + i * m;
    double* dst = out.data() + i * m;
    const double top = *std::max_element(src, src + m);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      dst[j] = std::exp(src[j] - top);
      total += dst[j];
    }
    for (std::size_t j = 0; j < m; ++j) dst[j] /= total;
  }
  return out;
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  require_nonempty(a, "softmax");
  const std::size_t m = a.cols();
  auto self = std::make_shared<Tensor>();
  *self = Tape::record(OpKind::Softmax, {&a}, a.rows(), m, softmax_values(a),
                       [self, m](const Tensor& g, const std::vector<bool>&) {
                         // dx = y * (g - rowsum(g * y))
                         const Tensor& y = *self;
                         Tensor inner = broadcast_cols(row_sum(mul(g, y)), m);
                         return std::vector<Tensor>{mul(y, sub(g, inner))};
                       });
  return *self;
}

Tensor sum(const Tensor& a) {
  require_nonempty(a, "sum");
  double total = 0.0;
  for (double x : a.values()) total += x;
  const std::size_t n = a.rows(), m = a.cols();
  return Tape::record(OpKind::Sum, {&a}, 1, 1, {total},
                      [n, m](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{fill(g, n, m)};
                      });
}

Tensor mean(const Tensor& a) {
  require_nonempty(a, "mean");
  double total = 0.0;
  for (double x : a.values()) total += x;
  const std::size_t n = a.rows(), m = a.cols();
  const double inv = 1.0 / static_cast<double>(n * m);
  return Tape::record(OpKind::Mean, {&a}, 1, 1, {total * inv},
                      [n, m, inv](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{scale(fill(g, n, m), inv)};
                      });
}

Tensor fill(const Tensor& s, std::size_t rows, std::size_t cols) {
  require(s.rows() == 1 && s.cols() == 1, "fill", "expects a scalar, got " + shape_str(s));
  return Tape::record(OpKind::Fill, {&s}, rows, cols, std::vector<double>(rows * cols, s.item()),
                      [](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{sum(g)};
                      });
}

Tensor row_sum(const Tensor& a) {
  require_nonempty(a, "row_sum");
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n, 0.0);
  auto x = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += x[i * m + j];
  return Tape::record(OpKind::RowSum, {&a}, n, 1, std::move(out),
                      [m](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{broadcast_cols(g, m)};
                      });
}

Tensor col_sum(const Tensor& a) {
  require_nonempty(a, "col_sum");
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(m, 0.0);
  auto x = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
  return Tape::record(OpKind::ColSum, {&a}, 1, m, std::move(out),
                      [n](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{broadcast_rows(g, n)};
                      });
}

Tensor broadcast_cols(const Tensor& a, std::size_t cols) {
  require(a.cols() == 1, "broadcast_cols", "expects a column, got " + shape_str(a));
  const std::size_t n = a.rows();
  std::vector<double> out(n * cols);
  auto x = a.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = x[i];
  return Tape::record(OpKind::BroadcastCols, {&a}, n, cols, std::move(out),
                      [](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{row_sum(g)};
                      });
}

Tensor broadcast_rows(const Tensor& a, std::size_t rows) {
  require(a.rows() == 1, "broadcast_rows", "expects a row, got " + shape_str(a));
  const std::size_t m = a.cols();
  std::vector<double> out(rows * m);
  auto x = a.values();
  for (std::size_t i = 0; i < rows; ++i) std::copy(x.begin(), x.end(), out.begin() + i * m);
  return Tape::record(OpKind::BroadcastRows, {&a}, rows, m, std::move(out),
                      [](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{col_sum(g)};
                      });
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> indices) {
  require_nonempty(a, "select_rows");
  const std::size_t m = a.cols();
  std::vector<double> out(indices.size() * m);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < a.rows(), "select_rows", "row index out of range");
    auto src = a.row(indices[i]);
    std::copy(src.begin(), src.end(), out.begin() + i * m);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const std::size_t n = a.rows();
  return Tape::record(OpKind::SelectRows, {&a}, indices.size(), m, std::move(out),
                      [idx, n](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{scatter_rows(g, idx, n)};
                      });
}

Tensor scatter_rows(const Tensor& a, std::span<const std::size_t> indices, std::size_t rows) {
  require(a.rows() == indices.size(), "scatter_rows", "one index per input row required");
  const std::size_t m = a.cols();
  std::vector<double> out(rows * m, 0.0);
  auto x = a.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < rows, "scatter_rows", "row index out of range");
    for (std::size_t j = 0; j < m; ++j) out[indices[i] * m + j] += x[i * m + j];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return Tape::record(OpKind::ScatterRows, {&a}, rows, m, std::move(out),
                      [idx](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{select_rows(g, idx)};
                      });
}

Tensor max_const(const Tensor& a, double floor) {
  require_nonempty(a, "max_const");
  Tensor mask(a.rows(), a.cols(), map(a, [floor](double x) { return x > floor ? 1.0 : 0.0; }));
  return Tape::record(OpKind::MaxConst, {&a}, a.rows(), a.cols(),
                      map(a, [floor](double x) { return std::max(x, floor); }),
                      [mask](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{mul(g, mask)};
                      });
}

}  // namespace msr::ad
