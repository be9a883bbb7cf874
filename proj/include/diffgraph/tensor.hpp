#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace diffgraph {

using Shape = std::vector<std::size_t>;

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // 0 = leaf / never produced by a taped op

  std::size_t numel() const { return values.size(); }

  void accumulate(const double* g, std::size_t n) {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
  }
};

}  // namespace detail

// Dense row-major 64-bit tensor. Copying a Tensor copies the handle, not
// the storage; detached_copy() makes fresh storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value,
                     bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  std::span<const double> values() const { return d_->values; }
  std::span<double> mutable_values() const { return d_->values; }
  // Empty span if no gradient has been accumulated yet.
  std::span<const double> grad() const { return d_->grad; }
  std::span<double> mutable_grad() const { return d_->grad; }
  void zero_grad() const { d_->grad.assign(d_->values.size(), 0.0); }

  double at(std::size_t i, std::size_t j) const;
  double item() const;

  Tensor detached_copy() const;

  std::shared_ptr<detail::TensorData> data() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
};

// Gradient tape for one forward pass (define-by-run). Constructing a Tape
// makes it the current tape for the constructing thread; destruction
// restores the previous one. Operations record themselves onto the current
// tape whenever any input requires gradients.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  // Records one operation. The rule reads the output's grad buffer and
  // accumulates into the inputs'. Nodes are appended in execution order,
  // so inputs of every node precede it.
  void record(const Tensor& output, std::function<void()> rule);

  // Seeds d(loss)/d(loss) = 1 and replays rules in reverse. Gradients of
  // intermediate (op-produced) tensors are reset per call; leaf gradients
  // accumulate across calls.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

 private:
  struct Node {
    std::shared_ptr<detail::TensorData> out;
    std::function<void()> rule;
  };
  std::vector<Node> nodes_;
  std::uint64_t id_;
  Tape* prev_ = nullptr;
};

// Convenience wrapper: backward on the current tape.
void backward(const Tensor& loss);

// ---- operations ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& x);

// add/sub accept equal shapes, or a rank-1 [n] second operand broadcast
// over the rows of a rank-2 [m x n] first operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);     // exact shapes
Tensor divide(const Tensor& a, const Tensor& b);  // exact shapes
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope);
Tensor sigmoid(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor sum(const Tensor& a);  // -> [1]

// Per-row scaling by a constant coefficient vector (not differentiated
// with respect to the coefficients).
Tensor scale_rows(const Tensor& a, const std::vector<double>& coeff);

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor scatter_add_rows(const Tensor& a, const std::vector<std::size_t>& idx,
                        std::size_t num_rows);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor diag_part(const Tensor& a);  // [n x n] -> [n x 1]

enum class BatchNormMode { Train, Eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t width = 0)
      : running_mean(width, 0.0), running_var(width, 1.0) {}
};

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, BatchNormMode mode);

// Mean-reduced task losses, numerically stable in logit space.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);
Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& targets);

// ---- gradient checking ------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "input k, coord i: analytic=..., numeric=..."

  bool passed(double tol) const { return max_rel_error < tol; }
};

// Central finite differences with step h against the tape's gradients.
// f must be a deterministic scalar-valued function of the inputs.
GradCheckReport grad_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& inputs, double h = 1e-5);

namespace testing {
// When set, gradients flowing through grad_sign_flip() are negated.
// Used to prove that the gradient harness catches planted defects.
extern bool corrupt_backward;
}  // namespace testing

// Identity in the forward direction; negates the gradient when
// testing::corrupt_backward is set.
Tensor grad_sign_flip(const Tensor& a);

}  // namespace diffgraph
