#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "symgpt/rng.hpp"

namespace symgpt::nn {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_size(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily allocated, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Dense float64 tensor participating in a reverse-mode tape. Copying a Tensor
// aliases the underlying node; ops build the graph while grad mode is on.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor randn(Shape shape, Rng& rng, double stddev);
  static Tensor scalar(double v) { return from_data({1}, {v}); }

  Tensor& set_requires_grad(bool b = true) {
    node_->requires_grad = b;
    return *this;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  // 2D view helpers: 1D tensors count as a single row.
  int rows() const { return ndim() == 2 ? dim(0) : 1; }
  int cols() const { return ndim() == 2 ? dim(1) : dim(0); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  std::span<double> grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  double item() const;

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Thread-local grad mode; inference paths disable tape recording.
bool& grad_enabled();

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev_; }

 private:
  bool prev_;
};

// Reverse-mode sweep from a scalar, finite loss. Gradients accumulate into
// every reachable node with requires_grad; unreached parameters keep (or get)
// zero grad.
void backward(const Tensor& loss);

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// b may match a's shape, be a 1D vector of a.cols() (broadcast over rows), or
// be a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);   // equal shapes
Tensor mul(const Tensor& a, const Tensor& b);   // elementwise, equal shapes
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
// s(v) = sign(v) * log(1 + |v|); smooth squashing for the input normalizer.
Tensor signed_log1p(const Tensor& a);

// Small enough that normalized rows keep unit variance to ~1e-10, large
// enough to keep the backward pass finite on constant rows.
inline constexpr double kLayerNormEps = 1e-10;

Tensor softmax_rows(const Tensor& a);  // 2D, stabilized by row-max subtraction
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// mask has one byte per element; nonzero entries are replaced by `value` and
// receive zero gradient.
Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, double value);

// Max over one axis of a 2D tensor; gradient routes to the first argmax.
Tensor max_axis(const Tensor& a, int axis);

// Row-segment max: rows are grouped consecutively by `sizes`; output is
// [segments, cols]. Gradient routes to the first argmax row per segment.
Tensor segment_max(const Tensor& a, const std::vector<int>& sizes);

Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Mean next-token cross entropy over targets != ignore_index, stabilized via
// log-sum-exp. logits is [N, V]; targets has N entries.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor slice_rows(const Tensor& a, int r0, int len);
Tensor slice_cols(const Tensor& a, int c0, int len);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

// Each row repeated `times` consecutively: [R,C] -> [R*times, C].
Tensor repeat_rows(const Tensor& a, int times);
// Whole block repeated `times`: [R,C] -> [times*R, C].
Tensor tile_rows(const Tensor& a, int times);

// Inverted dropout; identity when rate <= 0.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

// ---- optimizer ----

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void zero_grad();
  void step();                 // uses cfg.lr
  void step_with_lr(double lr);

  std::int64_t step_count() const { return t_; }
  int num_params() const { return static_cast<int>(params_.size()); }

  // Raw moment access for checkpointing.
  std::vector<double>& moment1(int i) { return m_[static_cast<std::size_t>(i)]; }
  std::vector<double>& moment2(int i) { return v_[static_cast<std::size_t>(i)]; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  AdamConfig cfg_;
};

// Linear warmup to base_lr, then cosine decay to min_frac * base_lr.
double lr_schedule(std::int64_t step, std::int64_t warmup, std::int64_t total,
                   double base_lr, double min_frac = 0.1);

// Global L2-norm gradient clip; returns the pre-clip norm.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace symgpt::nn
