#include "diffgraph/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "diffgraph/errors.hpp"

namespace diffgraph {

namespace {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

void require_rank2(const Tensor& t, const char* op, const char* arg) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": " + arg +
                         " must be rank 2, got " + shape_str(t.shape()));
  }
}

bool any_requires(std::initializer_list<const Tensor*> xs) {
  for (const Tensor* x : xs) {
    if (x->requires_grad()) return true;
  }
  return false;
}

// Records the rule onto the current tape when the output participates in
// differentiation. Without an active tape the op runs forward-only.
void record_op(const Tensor& out, std::function<void()> rule) {
  if (!out.requires_grad()) return;
  if (Tape* t = Tape::current()) t->record(out, std::move(rule));
}

std::vector<double>& grad_buf(const std::shared_ptr<detail::TensorData>& d) {
  if (d->grad.empty()) d->grad.assign(d->values.size(), 0.0);
  return d->grad;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Tensor ------------------------------------------------------------

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " implies " +
                         std::to_string(shape_numel(shape)) +
                         " elements, got " + std::to_string(values.size()));
  }
  auto d = std::make_shared<detail::TensorData>();
  d->shape = shape;
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return from_values(shape, std::vector<double>(shape_numel(shape), 0.0),
                     requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from_values(shape, std::vector<double>(shape_numel(shape), value),
                     requires_grad);
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from_values({n, n}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (rank() == 1 || rank() == 2) return d_->shape[0];
  throw ContractError("rows: tensor must be rank 1 or 2, got " +
                      shape_str(d_->shape));
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return d_->shape[1];
  if (rank() == 1) return 1;
  throw ContractError("cols: tensor must be rank 1 or 2, got " +
                      shape_str(d_->shape));
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) {
    throw ContractError("at: tensor must be rank 2, got " +
                        shape_str(d_->shape));
  }
  if (i >= d_->shape[0] || j >= d_->shape[1]) {
    throw ContractError("at: index (" + std::to_string(i) + ", " +
                        std::to_string(j) + ") out of range for " +
                        shape_str(d_->shape));
  }
  return d_->values[i * d_->shape[1] + j];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor must hold exactly one element, got " +
                        shape_str(d_->shape));
  }
  return d_->values[0];
}

Tensor Tensor::detached_copy() const {
  return from_values(d_->shape, d_->values, false);
}

// ---- Tape ----------------------------------------------------------------

namespace {
thread_local Tape* g_current_tape = nullptr;
std::atomic<std::uint64_t> g_tape_counter{0};
}  // namespace

Tape::Tape() : id_(++g_tape_counter) {
  prev_ = g_current_tape;
  g_current_tape = this;
}

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(const Tensor& output, std::function<void()> rule) {
  output.data()->tape_id = id_;
  nodes_.push_back({output.data(), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a single-element tensor");
  }
  if (loss.data()->tape_id != id_) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  // Intermediate grads are scratch per call; leaf grads persist so that
  // repeated backward calls accumulate.
  for (auto& nd : nodes_) nd.out->grad.assign(nd.out->values.size(), 0.0);
  loss.data()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->rule();
}

void backward(const Tensor& loss) {
  Tape* t = Tape::current();
  if (!t) throw ContractError("backward: no active tape");
  t->backward(loss);
}

// ---- operations ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul", "lhs");
  require_rank2(b, "matmul", "rhs");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree, lhs " +
                         shape_str(a.shape()) + " vs rhs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      double* po = out.data() + i * n;
      const double* pr = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) po[j] += av * pr[j];
    }
  }
  Tensor c = Tensor::from_values({m, n}, std::move(out),
                                 any_requires({&a, &b}));
  record_op(c, [a, b, c] {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    const auto& dc = c.data()->grad;
    if (a.requires_grad()) {
      auto& da = grad_buf(a.data());
      const double* pb = b.values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = dc[i * n + j];
          for (std::size_t p = 0; p < k; ++p) {
            da[i * k + p] += g * pb[p * n + j];
          }
        }
      }
    }
    if (b.requires_grad()) {
      auto& db = grad_buf(b.data());
      const double* pa = a.values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          for (std::size_t j = 0; j < n; ++j) {
            db[p * n + j] += av * dc[i * n + j];
          }
        }
      }
    }
  });
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose", "input");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(n * m);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = pa[i * n + j];
  }
  Tensor c = Tensor::from_values({n, m}, std::move(out), a.requires_grad());
  record_op(c, [a, c] {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += dc[j * m + i];
    }
  });
  return c;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows", "input");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (n == 0) {
    throw DimensionError("softmax_rows: rows must have at least one column");
  }
  for (double v : x.values()) {
    if (!std::isfinite(v)) {
      throw NumericError("softmax_rows: non-finite input value");
    }
  }
  std::vector<double> out(m * n);
  const double* px = x.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = px + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      out[i * n + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= denom;
  }
  Tensor y = Tensor::from_values({m, n}, std::move(out), x.requires_grad());
  record_op(y, [x, y] {
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    auto& dx = grad_buf(x.data());
    const auto& py = y.data()->values;
    const auto& dy = y.data()->grad;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += py[i * n + j] * dy[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        dx[i * n + j] += py[i * n + j] * (dy[i * n + j] - dot);
      }
    }
  });
  return y;
}

namespace {

// add/sub share shape handling: exact match, or rank-1 [n] broadcast over
// the rows of a rank-2 [m x n] left operand.
enum class AddMode { Exact, RowBroadcast };

AddMode add_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return AddMode::Exact;
  if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1]) {
    return AddMode::RowBroadcast;
  }
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()) +
                       " are not compatible (exact match or [m x n] with [n])");
}

Tensor add_like(const Tensor& a, const Tensor& b, double bsign,
                const char* op) {
  const AddMode mode = add_mode(a, b, op);
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  if (mode == AddMode::Exact) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = pa[i] + bsign * pb[i];
    }
  } else {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] = pa[i * n + j] + bsign * pb[j];
      }
    }
  }
  Tensor c = Tensor::from_values(a.shape(), std::move(out),
                                 any_requires({&a, &b}));
  record_op(c, [a, b, c, bsign, mode] {
    const auto& dc = c.data()->grad;
    if (a.requires_grad()) {
      auto& da = grad_buf(a.data());
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
    }
    if (b.requires_grad()) {
      auto& db = grad_buf(b.data());
      if (mode == AddMode::Exact) {
        for (std::size_t i = 0; i < dc.size(); ++i) db[i] += bsign * dc[i];
      } else {
        const std::size_t m = a.shape()[0], n = a.shape()[1];
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) db[j] += bsign * dc[i * n + j];
        }
      }
    }
  });
  return c;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " must match");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_like(a, b, 1.0, "add"); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_like(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  Tensor c = Tensor::from_values(a.shape(), std::move(out),
                                 any_requires({&a, &b}));
  record_op(c, [a, b, c] {
    const auto& dc = c.data()->grad;
    if (a.requires_grad()) {
      auto& da = grad_buf(a.data());
      const double* pb = b.values().data();
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * pb[i];
    }
    if (b.requires_grad()) {
      auto& db = grad_buf(b.data());
      const double* pa = a.values().data();
      for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i] * pa[i];
    }
  });
  return c;
}

Tensor divide(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "divide");
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] / pb[i];
  Tensor c = Tensor::from_values(a.shape(), std::move(out),
                                 any_requires({&a, &b}));
  record_op(c, [a, b, c] {
    const auto& dc = c.data()->grad;
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    if (a.requires_grad()) {
      auto& da = grad_buf(a.data());
      for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] / pb[i];
    }
    if (b.requires_grad()) {
      auto& db = grad_buf(b.data());
      for (std::size_t i = 0; i < dc.size(); ++i) {
        db[i] -= dc[i] * pa[i] / (pb[i] * pb[i]);
      }
    }
  });
  return c;
}

Tensor scale(const Tensor& a, double cfac) {
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cfac * pa[i];
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c, cfac] {
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += cfac * dc[i];
  });
  return c;
}

Tensor add_scalar(const Tensor& a, double cval) {
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + cval;
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c] {
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
  });
  return c;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  }
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c] {
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    const double* pa = a.values().data();
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < dc.size(); ++i) {
      if (pa[i] > 0.0) da[i] += dc[i];
    }
  });
  return c;
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = pa[i] > 0.0 ? pa[i] : negative_slope * pa[i];
  }
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c, negative_slope] {
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    const double* pa = a.values().data();
    for (std::size_t i = 0; i < dc.size(); ++i) {
      da[i] += (pa[i] > 0.0 ? 1.0 : negative_slope) * dc[i];
    }
  });
  return c;
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(pa[i]);
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c] {
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    const auto& pc = c.data()->values;
    for (std::size_t i = 0; i < dc.size(); ++i) {
      da[i] += dc[i] * pc[i] * (1.0 - pc[i]);
    }
  });
  return c;
}

Tensor exp_elem(const Tensor& a) {
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(pa[i]);
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c] {
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    const auto& pc = c.data()->values;
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * pc[i];
  });
  return c;
}

Tensor log_elem(const Tensor& a) {
  std::vector<double> out(a.numel());
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(pa[i] > 0.0)) {
      throw NumericError("log: input must be positive, got " +
                         std::to_string(pa[i]));
    }
    out[i] = std::log(pa[i]);
  }
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c] {
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    const double* pa = a.values().data();
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] / pa[i];
  });
  return c;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor c = Tensor::from_values({1}, {total}, a.requires_grad());
  record_op(c, [a, c] {
    auto& da = grad_buf(a.data());
    const double g = c.data()->grad[0];
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
  });
  return c;
}

Tensor scale_rows(const Tensor& a, const std::vector<double>& coeff) {
  require_rank2(a, "scale_rows", "input");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (coeff.size() != m) {
    throw DimensionError("scale_rows: " + std::to_string(coeff.size()) +
                         " coefficients for " + std::to_string(m) + " rows");
  }
  std::vector<double> out(m * n);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = coeff[i] * pa[i * n + j];
  }
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c, coeff] {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += coeff[i] * dc[i * n + j];
    }
  });
  return c;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  require_rank2(a, "gather_rows", "input");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  for (std::size_t r : idx) {
    if (r >= m) {
      throw ContractError("gather_rows: index " + std::to_string(r) +
                          " out of range for " + std::to_string(m) + " rows");
    }
  }
  std::vector<double> out(idx.size() * n);
  const double* pa = a.values().data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy(pa + idx[r] * n, pa + (idx[r] + 1) * n, out.begin() + r * n);
  }
  Tensor c = Tensor::from_values({idx.size(), n}, std::move(out),
                                 a.requires_grad());
  record_op(c, [a, c, idx] {
    const std::size_t n = a.shape()[1];
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < n; ++j) da[idx[r] * n + j] += dc[r * n + j];
    }
  });
  return c;
}

Tensor scatter_add_rows(const Tensor& a, const std::vector<std::size_t>& idx,
                        std::size_t num_rows) {
  require_rank2(a, "scatter_add_rows", "input");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (idx.size() != m) {
    throw ContractError("scatter_add_rows: " + std::to_string(idx.size()) +
                        " indices for " + std::to_string(m) + " rows");
  }
  for (std::size_t r : idx) {
    if (r >= num_rows) {
      throw ContractError("scatter_add_rows: target index " +
                          std::to_string(r) + " out of range for " +
                          std::to_string(num_rows) + " rows");
    }
  }
  std::vector<double> out(num_rows * n, 0.0);
  const double* pa = a.values().data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[idx[r] * n + j] += pa[r * n + j];
  }
  Tensor c = Tensor::from_values({num_rows, n}, std::move(out),
                                 a.requires_grad());
  record_op(c, [a, c, idx] {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < n; ++j) da[r * n + j] += dc[idx[r] * n + j];
    }
  });
  return c;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols", "input");
    if (p.shape()[0] != m) {
      throw DimensionError("concat_cols: row counts disagree, " +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    total += p.shape()[1];
    rg = rg || p.requires_grad();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t n = p.shape()[1];
    const double* pp = p.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy(pp + i * n, pp + (i + 1) * n, out.begin() + i * total + off);
    }
    off += n;
  }
  Tensor c = Tensor::from_values({m, total}, std::move(out), rg);
  record_op(c, [parts, c, m, total] {
    const auto& dc = c.data()->grad;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
      const std::size_t n = p.shape()[1];
      if (p.requires_grad()) {
        auto& dp = grad_buf(p.data());
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            dp[i * n + j] += dc[i * total + off + j];
          }
        }
      }
      off += n;
    }
  });
  return c;
}

Tensor diag_part(const Tensor& a) {
  require_rank2(a, "diag_part", "input");
  const std::size_t n = a.shape()[0];
  if (a.shape()[1] != n) {
    throw DimensionError("diag_part: input must be square, got " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(n);
  const double* pa = a.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i * n + i];
  Tensor c = Tensor::from_values({n, 1}, std::move(out), a.requires_grad());
  record_op(c, [a, c] {
    const std::size_t n = a.shape()[0];
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    for (std::size_t i = 0; i < n; ++i) da[i * n + i] += dc[i];
  });
  return c;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, BatchNormMode mode) {
  require_rank2(x, "batchnorm", "input");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (m == 0) throw DimensionError("batchnorm: empty batch");
  if (gamma.rank() != 1 || gamma.shape()[0] != n) {
    throw DimensionError("batchnorm: gamma must be [" + std::to_string(n) +
                         "], got " + shape_str(gamma.shape()));
  }
  if (beta.rank() != 1 || beta.shape()[0] != n) {
    throw DimensionError("batchnorm: beta must be [" + std::to_string(n) +
                         "], got " + shape_str(beta.shape()));
  }
  if (state.running_mean.size() != n || state.running_var.size() != n) {
    throw DimensionError("batchnorm: state tracks " +
                         std::to_string(state.running_mean.size()) +
                         " features, input has " + std::to_string(n));
  }

  const double* px = x.values().data();
  std::vector<double> mean(n, 0.0), var(n, 0.0);
  if (mode == BatchNormMode::Train) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) mean[j] += px[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) mean[j] /= static_cast<double>(m);
    // Biased variance, both for normalization and for the running update.
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d = px[i * n + j] - mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < n; ++j) var[j] /= static_cast<double>(m);
    for (std::size_t j = 0; j < n; ++j) {
      state.running_mean[j] =
          (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
      state.running_var[j] =
          (1.0 - state.momentum) * state.running_var[j] + state.momentum * var[j];
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_std(n);
  for (std::size_t j = 0; j < n; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);

  std::vector<double> xhat(m * n), out(m * n);
  const double* pg = gamma.values().data();
  const double* pbt = beta.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (px[i * n + j] - mean[j]) * inv_std[j];
      xhat[i * n + j] = h;
      out[i * n + j] = pg[j] * h + pbt[j];
    }
  }

  Tensor y = Tensor::from_values({m, n}, std::move(out),
                                 any_requires({&x, &gamma, &beta}));
  record_op(y, [x, gamma, beta, y, xhat = std::move(xhat),
                inv_std = std::move(inv_std), mode] {
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    const auto& dy = y.data()->grad;
    const double* pg = gamma.values().data();
    if (x.requires_grad()) {
      auto& dx = grad_buf(x.data());
      for (std::size_t j = 0; j < n; ++j) {
        const double gs = pg[j] * inv_std[j];
        if (mode == BatchNormMode::Train) {
          double sum_dy = 0.0, sum_dyx = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            sum_dy += dy[i * n + j];
            sum_dyx += dy[i * n + j] * xhat[i * n + j];
          }
          const double mdy = sum_dy / static_cast<double>(m);
          const double mdyx = sum_dyx / static_cast<double>(m);
          for (std::size_t i = 0; i < m; ++i) {
            dx[i * n + j] += gs * (dy[i * n + j] - mdy - xhat[i * n + j] * mdyx);
          }
        } else {
          for (std::size_t i = 0; i < m; ++i) dx[i * n + j] += gs * dy[i * n + j];
        }
      }
    }
    if (gamma.requires_grad()) {
      auto& dg = grad_buf(gamma.data());
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += dy[i * n + j] * xhat[i * n + j];
        dg[j] += s;
      }
    }
    if (beta.requires_grad()) {
      auto& db = grad_buf(beta.data());
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += dy[i * n + j];
        db[j] += s;
      }
    }
  });
  return y;
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  require_rank2(logits, "cross_entropy", "logits");
  const std::size_t m = logits.shape()[0], nclass = logits.shape()[1];
  if (m == 0) throw DimensionError("cross_entropy: empty batch");
  if (labels.size() != m) {
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(m) + " rows");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= nclass) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) +
                            " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(nclass) + ")");
    }
  }
  const double* pz = logits.values().data();
  std::vector<double> probs(m * nclass);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = pz + i * nclass;
    double mx = row[0];
    for (std::size_t j = 1; j < nclass; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < nclass; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[i * nclass + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < nclass; ++j) probs[i * nclass + j] /= denom;
    total += mx + std::log(denom) - row[labels[i]];
  }
  Tensor loss = Tensor::from_values({1}, {total / static_cast<double>(m)},
                                    logits.requires_grad());
  record_op(loss, [logits, loss, labels, probs = std::move(probs)] {
    const std::size_t m = logits.shape()[0], nclass = logits.shape()[1];
    auto& dz = grad_buf(logits.data());
    const double g = loss.data()->grad[0] / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < nclass; ++j) {
        const double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
        dz[i * nclass + j] += g * (probs[i * nclass + j] - onehot);
      }
    }
  });
  return loss;
}

Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  const std::size_t n = logits.numel();
  if (n == 0) throw DimensionError("bce_with_logits: empty input");
  const double* pz = logits.values().data();
  const double* pt = targets.values().data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = pz[i];
    total += std::max(z, 0.0) - z * pt[i] + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor loss = Tensor::from_values({1}, {total / static_cast<double>(n)},
                                    any_requires({&logits, &targets}));
  record_op(loss, [logits, targets, loss] {
    const std::size_t n = logits.numel();
    const double g = loss.data()->grad[0] / static_cast<double>(n);
    const double* pz = logits.values().data();
    const double* pt = targets.values().data();
    if (logits.requires_grad()) {
      auto& dz = grad_buf(logits.data());
      for (std::size_t i = 0; i < n; ++i) {
        dz[i] += g * (stable_sigmoid(pz[i]) - pt[i]);
      }
    }
    if (targets.requires_grad()) {
      auto& dt = grad_buf(targets.data());
      for (std::size_t i = 0; i < n; ++i) dt[i] += g * (-pz[i]);
    }
  });
  return loss;
}

// ---- gradient checking ------------------------------------------------

namespace testing {
bool corrupt_backward = false;
}  // namespace testing

Tensor grad_sign_flip(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor c = Tensor::from_values(a.shape(), std::move(out), a.requires_grad());
  record_op(c, [a, c] {
    auto& da = grad_buf(a.data());
    const auto& dc = c.data()->grad;
    const double s = testing::corrupt_backward ? -1.0 : 1.0;
    for (std::size_t i = 0; i < dc.size(); ++i) da[i] += s * dc[i];
  });
  return c;
}

GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& inputs, double h) {
  std::vector<std::vector<double>> analytic(inputs.size());
  {
    for (Tensor in : inputs) in.zero_grad();
    Tape tape;
    Tensor y = f(inputs);
    if (y.numel() != 1) {
      throw ContractError("grad_check: f must return a scalar");
    }
    tape.backward(y);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto g = inputs[k].grad();
      analytic[k].assign(g.begin(), g.end());
      if (analytic[k].empty()) analytic[k].assign(inputs[k].numel(), 0.0);
    }
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor in = inputs[k];
    for (std::size_t i = 0; i < in.numel(); ++i) {
      const double orig = in.mutable_values()[i];
      double fp, fm;
      {
        Tape scratch;
        in.mutable_values()[i] = orig + h;
        fp = f(inputs).item();
      }
      {
        Tape scratch;
        in.mutable_values()[i] = orig - h;
        fm = f(inputs).item();
      }
      in.mutable_values()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      // The floor absorbs central-difference noise (~eps*|f|/h) on
      // coordinates whose true gradient is zero.
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        std::ostringstream os;
        os << "input " << k << ", coord " << i << ": analytic=" << a
           << ", numeric=" << numeric;
        report.max_rel_error = rel;
        report.worst = os.str();
      }
    }
  }
  return report;
}

}  // namespace diffgraph
