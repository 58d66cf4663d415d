#include "symgpt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Dense>

namespace symgpt::nn {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

std::shared_ptr<Node> make_node(Shape shape) {
  auto n = std::make_shared<Node>();
  const std::int64_t sz = shape_size(shape);
  if (sz < 0) throw std::invalid_argument("negative tensor shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value.resize(static_cast<std::size_t>(sz));
  return n;
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->node() && t->node()->requires_grad) return true;
  return false;
}

void record(Tensor& out, std::vector<std::shared_ptr<Node>> parents,
            std::function<void(Node&)> fn) {
  out.node()->requires_grad = true;
  out.node()->parents = std::move(parents);
  out.node()->backward = std::move(fn);
}

CMap cmap(const Node& n, int rows, int cols) { return CMap(n.value.data(), rows, cols); }
MMap gmap(Node& n, int rows, int cols) {
  n.ensure_grad();
  return MMap(n.grad.data(), rows, cols);
}

}  // namespace

Tensor Tensor::zeros(Shape shape) { return wrap(make_node(std::move(shape))); }

Tensor Tensor::full(Shape shape, double v) {
  auto n = make_node(std::move(shape));
  std::fill(n->value.begin(), n->value.end(), v);
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  auto n = make_node(std::move(shape));
  if (n->value.size() != data.size())
    throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                " values for shape " + shape_str(n->shape));
  n->value = std::move(data);
  return wrap(std::move(n));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  auto n = make_node(std::move(shape));
  for (double& v : n->value) v = rng.normal(0.0, stddev);
  return wrap(std::move(n));
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

void backward(const Tensor& loss) {
  const auto& root = loss.node();
  if (!root) throw std::invalid_argument("backward: undefined tensor");
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(root->shape));
  if (!std::isfinite(root->value[0]))
    throw std::invalid_argument("backward: loss is not finite");

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back().first;
    std::size_t& idx = stack.back().second;
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  const int ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  const int m = trans_a ? ac : ar;
  const int k = trans_a ? ar : ac;
  const int k2 = trans_b ? bc : br;
  const int n = trans_b ? br : bc;
  if (k != k2) shape_error("matmul", a.shape(), b.shape());

  Tensor out = Tensor::zeros({m, n});
  {
    CMap A = cmap(*a.node(), ar, ac);
    CMap B = cmap(*b.node(), br, bc);
    MMap C(out.data().data(), m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }

  if (want_grad({&a, &b})) {
    auto pa = a.node(), pb = b.node();
    record(out, {pa, pb}, [pa, pb, ar, ac, br, bc, m, n, trans_a, trans_b](Node& self) {
      CMap G(self.grad.data(), m, n);
      CMap A = cmap(*pa, ar, ac);
      CMap B = cmap(*pb, br, bc);
      MMap dA = gmap(*pa, ar, ac);
      MMap dB = gmap(*pb, br, bc);
      if (!trans_a) {
        if (!trans_b) dA.noalias() += G * B.transpose();
        else dA.noalias() += G * B;
      } else {
        if (!trans_b) dA.noalias() += B * G.transpose();
        else dA.noalias() += B.transpose() * G.transpose();
      }
      if (!trans_b) {
        if (!trans_a) dB.noalias() += A.transpose() * G;
        else dB.noalias() += A * G;
      } else {
        if (!trans_a) dB.noalias() += G.transpose() * A;
        else dB.noalias() += G.transpose() * A.transpose();
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  enum class Mode { Same, RowVec, Scalar } mode;
  if (a.shape() == b.shape()) mode = Mode::Same;
  else if (b.size() == 1) mode = Mode::Scalar;
  else if (b.ndim() == 1 && a.ndim() == 2 && b.dim(0) == a.dim(1)) mode = Mode::RowVec;
  else shape_error("add", a.shape(), b.shape());

  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  const int rows = a.rows(), cols = a.cols();
  switch (mode) {
    case Mode::Same:
      for (std::int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] + bv[i];
      break;
    case Mode::Scalar:
      for (std::int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] + bv[0];
      break;
    case Mode::RowVec:
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) ov[static_cast<std::size_t>(i) * cols + j] =
            av[static_cast<std::size_t>(i) * cols + j] + bv[j];
      break;
  }

  if (want_grad({&a, &b})) {
    auto pa = a.node(), pb = b.node();
    record(out, {pa, pb}, [pa, pb, mode, rows, cols](Node& self) {
      pa->ensure_grad();
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
      switch (mode) {
        case Mode::Same:
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
          break;
        case Mode::Scalar:
          for (double g : self.grad) pb->grad[0] += g;
          break;
        case Mode::RowVec:
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
              pb->grad[static_cast<std::size_t>(j)] +=
                  self.grad[static_cast<std::size_t>(i) * cols + j];
          break;
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (want_grad({&a, &b})) {
    auto pa = a.node(), pb = b.node();
    record(out, {pa, pb}, [pa, pb](Node& self) {
      pa->ensure_grad();
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pa->grad[i] += self.grad[i];
        pb->grad[i] -= self.grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (want_grad({&a, &b})) {
    auto pa = a.node(), pb = b.node();
    record(out, {pa, pb}, [pa, pb](Node& self) {
      pa->ensure_grad();
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pa->grad[i] += self.grad[i] * pb->value[i];
        pb->grad[i] += self.grad[i] * pa->value[i];
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Bwd dfn) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out.data()[i] = fwd(a.data()[i]);
  if (want_grad({&a})) {
    auto pa = a.node();
    auto po = out.node();
    record(out, {pa}, [pa, dfn](Node& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * dfn(pa->value[i], self.value[i]);
    });
  }
  return out;
}

}  // namespace

Tensor scale(const Tensor& a, double s) {
  return unary_elementwise(a, [s](double x) { return x * s; },
                           [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_elementwise(a, [s](double x) { return x + s; },
                           [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return -x; },
                           [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh_op(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return std::tanh(x); },
                           [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary_elementwise(
      a,
      [](double x) {
        const double u = kC * (x + kA * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
      },
      [](double x, double) {
        const double u = kC * (x + kA * x * x * x);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      });
}

Tensor exp_op(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return std::exp(x); },
                           [](double, double y) { return y; });
}

Tensor log_op(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return std::log(x); },
                           [](double x, double) { return 1.0 / x; });
}

Tensor signed_log1p(const Tensor& a) {
  return unary_elementwise(
      a,
      [](double x) { return x >= 0.0 ? std::log1p(x) : -std::log1p(-x); },
      [](double x, double) { return 1.0 / (1.0 + std::abs(x)); });
}

Tensor softmax_rows(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("softmax_rows: need 2D, got " + shape_str(a.shape()));
  const int rows = a.rows(), cols = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < rows; ++i) {
    const double* x = a.data().data() + static_cast<std::size_t>(i) * cols;
    double* y = out.data().data() + static_cast<std::size_t>(i) * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= sum;
  }
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, rows, cols](Node& self) {
      pa->ensure_grad();
      for (int i = 0; i < rows; ++i) {
        const double* y = self.value.data() + static_cast<std::size_t>(i) * cols;
        const double* g = self.grad.data() + static_cast<std::size_t>(i) * cols;
        double* dx = pa->grad.data() + static_cast<std::size_t>(i) * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
        for (int j = 0; j < cols; ++j) dx[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() != 2) throw std::invalid_argument("layer_norm: need 2D, got " + shape_str(x.shape()));
  const int rows = x.rows(), cols = x.cols();
  if (gamma.size() != cols || beta.size() != cols)
    shape_error("layer_norm(params)", x.shape(), gamma.shape());

  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * cols);
  auto inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const double* xr = x.data().data() + static_cast<std::size_t>(i) * cols;
    double* yr = out.data().data() + static_cast<std::size_t>(i) * cols;
    double* hr = xhat->data() + static_cast<std::size_t>(i) * cols;
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= cols;
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[static_cast<std::size_t>(i)] = iv;
    for (int j = 0; j < cols; ++j) {
      hr[j] = (xr[j] - mu) * iv;
      yr[j] = gamma.data()[j] * hr[j] + beta.data()[j];
    }
  }

  if (want_grad({&x, &gamma, &beta})) {
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    record(out, {px, pg, pb}, [px, pg, pb, xhat, inv, rows, cols](Node& self) {
      px->ensure_grad();
      pg->ensure_grad();
      pb->ensure_grad();
      for (int i = 0; i < rows; ++i) {
        const double* g = self.grad.data() + static_cast<std::size_t>(i) * cols;
        const double* h = xhat->data() + static_cast<std::size_t>(i) * cols;
        const double iv = (*inv)[static_cast<std::size_t>(i)];
        double* dx = px->grad.data() + static_cast<std::size_t>(i) * cols;
        // dL/dxhat_j = g_j * gamma_j; collapse the mu/var chain into the
        // standard two-moment form.
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (int j = 0; j < cols; ++j) {
          const double dh = g[j] * pg->value[static_cast<std::size_t>(j)];
          sum_dh += dh;
          sum_dh_h += dh * h[j];
        }
        for (int j = 0; j < cols; ++j) {
          const double dh = g[j] * pg->value[static_cast<std::size_t>(j)];
          dx[j] += iv * (dh - sum_dh / cols - h[j] * sum_dh_h / cols);
        }
        for (int j = 0; j < cols; ++j) {
          pg->grad[static_cast<std::size_t>(j)] += g[j] * h[j];
          pb->grad[static_cast<std::size_t>(j)] += g[j];
        }
      }
    });
  }
  return out;
}

Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, double value) {
  if (static_cast<std::int64_t>(mask.size()) != a.size())
    throw std::invalid_argument("masked_fill: mask size " + std::to_string(mask.size()) +
                                " vs tensor " + shape_str(a.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = mask[static_cast<std::size_t>(i)] ? value : a.data()[i];
  if (want_grad({&a})) {
    auto pa = a.node();
    auto m = std::make_shared<std::vector<std::uint8_t>>(mask);
    record(out, {pa}, [pa, m](Node& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (!(*m)[i]) pa->grad[i] += self.grad[i];
    });
  }
  return out;
}

Tensor max_axis(const Tensor& a, int axis) {
  if (a.ndim() != 2 || (axis != 0 && axis != 1))
    throw std::invalid_argument("max_axis: need 2D and axis 0/1, got " + shape_str(a.shape()));
  const int rows = a.rows(), cols = a.cols();
  const int out_len = axis == 0 ? cols : rows;
  Tensor out = Tensor::zeros({out_len});
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(out_len));
  if (axis == 0) {
    for (int j = 0; j < cols; ++j) {
      int best = 0;
      double bv = a.data()[static_cast<std::size_t>(j)];
      for (int i = 1; i < rows; ++i) {
        const double v = a.data()[static_cast<std::size_t>(i) * cols + j];
        if (v > bv) { bv = v; best = i; }
      }
      out.data()[static_cast<std::size_t>(j)] = bv;
      (*arg)[static_cast<std::size_t>(j)] = best;
    }
  } else {
    for (int i = 0; i < rows; ++i) {
      int best = 0;
      double bv = a.data()[static_cast<std::size_t>(i) * cols];
      for (int j = 1; j < cols; ++j) {
        const double v = a.data()[static_cast<std::size_t>(i) * cols + j];
        if (v > bv) { bv = v; best = j; }
      }
      out.data()[static_cast<std::size_t>(i)] = bv;
      (*arg)[static_cast<std::size_t>(i)] = best;
    }
  }
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, arg, cols, axis](Node& self) {
      pa->ensure_grad();
      for (std::size_t k = 0; k < self.grad.size(); ++k) {
        if (axis == 0)
          pa->grad[static_cast<std::size_t>((*arg)[k]) * cols + k] += self.grad[k];
        else
          pa->grad[k * cols + static_cast<std::size_t>((*arg)[k])] += self.grad[k];
      }
    });
  }
  return out;
}

Tensor segment_max(const Tensor& a, const std::vector<int>& sizes) {
  if (a.ndim() != 2) throw std::invalid_argument("segment_max: need 2D, got " + shape_str(a.shape()));
  const int rows = a.rows(), cols = a.cols();
  int total = 0;
  for (int s : sizes) {
    if (s < 1) throw std::invalid_argument("segment_max: each segment needs >= 1 row");
    total += s;
  }
  if (total != rows)
    throw std::invalid_argument("segment_max: segment sizes sum to " + std::to_string(total) +
                                " but tensor has " + std::to_string(rows) + " rows");
  const int segs = static_cast<int>(sizes.size());
  Tensor out = Tensor::zeros({segs, cols});
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(segs) * cols);
  int row0 = 0;
  for (int s = 0; s < segs; ++s) {
    for (int j = 0; j < cols; ++j) {
      int best = row0;
      double bv = a.data()[static_cast<std::size_t>(row0) * cols + j];
      for (int i = row0 + 1; i < row0 + sizes[static_cast<std::size_t>(s)]; ++i) {
        const double v = a.data()[static_cast<std::size_t>(i) * cols + j];
        if (v > bv) { bv = v; best = i; }
      }
      out.data()[static_cast<std::size_t>(s) * cols + j] = bv;
      (*arg)[static_cast<std::size_t>(s) * cols + j] = best;
    }
    row0 += sizes[static_cast<std::size_t>(s)];
  }
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, arg, cols](Node& self) {
      pa->ensure_grad();
      for (std::size_t k = 0; k < self.grad.size(); ++k)
        pa->grad[static_cast<std::size_t>((*arg)[k]) * cols + (k % cols)] += self.grad[k];
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw std::invalid_argument("embedding: table must be 2D");
  const int v = table.rows(), c = table.cols();
  const int n = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                  " out of range for table " + shape_str(table.shape()));
  Tensor out = Tensor::zeros({n, c});
  for (int i = 0; i < n; ++i)
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * c,
                c, out.data().data() + static_cast<std::size_t>(i) * c);
  if (want_grad({&table})) {
    auto pt = table.node();
    auto idv = std::make_shared<std::vector<int>>(ids);
    record(out, {pt}, [pt, idv, c](Node& self) {
      pt->ensure_grad();
      for (std::size_t i = 0; i < idv->size(); ++i) {
        double* dst = pt->grad.data() + static_cast<std::size_t>((*idv)[i]) * c;
        const double* src = self.grad.data() + i * c;
        for (int j = 0; j < c; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
  if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy: logits must be 2D");
  const int n = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(n) + " rows");
  double loss = 0.0;
  int count = 0;
  for (int i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= v) throw std::invalid_argument("cross_entropy: target id out of range");
    const double* x = logits.data().data() + static_cast<std::size_t>(i) * v;
    double mx = x[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(x[j] - mx);
    loss += mx + std::log(sum) - x[t];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every target is ignored");
  Tensor out = Tensor::scalar(loss / count);
  if (want_grad({&logits})) {
    auto pl = logits.node();
    auto tv = std::make_shared<std::vector<int>>(targets);
    record(out, {pl}, [pl, tv, n, v, ignore_index, count](Node& self) {
      pl->ensure_grad();
      const double g = self.grad[0] / count;
      for (int i = 0; i < n; ++i) {
        const int t = (*tv)[static_cast<std::size_t>(i)];
        if (t == ignore_index) continue;
        const double* x = pl->value.data() + static_cast<std::size_t>(i) * v;
        double* dx = pl->grad.data() + static_cast<std::size_t>(i) * v;
        double mx = x[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) sum += std::exp(x[j] - mx);
        for (int j = 0; j < v; ++j) {
          const double p = std::exp(x[j] - mx) / sum;
          dx[j] += g * (p - (j == t ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa](Node& self) {
      pa->ensure_grad();
      for (double& g : pa->grad) g += self.grad[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s / n);
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, n](Node& self) {
      pa->ensure_grad();
      for (double& g : pa->grad) g += self.grad[0] / n;
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int r0, int len) {
  if (a.ndim() != 2 || r0 < 0 || len < 0 || r0 + len > a.rows())
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + ", +" +
                                std::to_string(len) + ") for " + shape_str(a.shape()));
  const int cols = a.cols();
  Tensor out = Tensor::zeros({len, cols});
  std::copy_n(a.data().data() + static_cast<std::size_t>(r0) * cols,
              static_cast<std::size_t>(len) * cols, out.data().data());
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, r0, cols](Node& self) {
      pa->ensure_grad();
      double* dst = pa->grad.data() + static_cast<std::size_t>(r0) * cols;
      for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int len) {
  if (a.ndim() != 2 || c0 < 0 || len < 0 || c0 + len > a.cols())
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + ", +" +
                                std::to_string(len) + ") for " + shape_str(a.shape()));
  const int rows = a.rows(), cols = a.cols();
  Tensor out = Tensor::zeros({rows, len});
  for (int i = 0; i < rows; ++i)
    std::copy_n(a.data().data() + static_cast<std::size_t>(i) * cols + c0, len,
                out.data().data() + static_cast<std::size_t>(i) * len);
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, c0, rows, cols, len](Node& self) {
      pa->ensure_grad();
      for (int i = 0; i < rows; ++i) {
        double* dst = pa->grad.data() + static_cast<std::size_t>(i) * cols + c0;
        const double* src = self.grad.data() + static_cast<std::size_t>(i) * len;
        for (int j = 0; j < len; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int cols = parts[0].cols();
  int rows = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.cols() != cols) shape_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.rows();
  }
  Tensor out = Tensor::zeros({rows, cols});
  std::size_t off = 0;
  bool need = false;
  std::vector<std::shared_ptr<Node>> parents;
  for (const Tensor& p : parts) {
    std::copy_n(p.data().data(), p.data().size(), out.data().data() + off);
    off += p.data().size();
    parents.push_back(p.node());
    if (p.node()->requires_grad) need = true;
  }
  if (grad_enabled() && need) {
    record(out, std::move(parents), [](Node& self) {
      std::size_t off2 = 0;
      for (auto& p : self.parents) {
        p->ensure_grad();
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[off2 + i];
        off2 += p->grad.size();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.rows() != rows) shape_error("concat_cols", parts[0].shape(), p.shape());
    cols += p.cols();
  }
  Tensor out = Tensor::zeros({rows, cols});
  int c0 = 0;
  bool need = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<int> widths;
  for (const Tensor& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < rows; ++i)
      std::copy_n(p.data().data() + static_cast<std::size_t>(i) * w, w,
                  out.data().data() + static_cast<std::size_t>(i) * cols + c0);
    c0 += w;
    parents.push_back(p.node());
    widths.push_back(w);
    if (p.node()->requires_grad) need = true;
  }
  if (grad_enabled() && need) {
    auto wv = std::make_shared<std::vector<int>>(std::move(widths));
    record(out, std::move(parents), [wv, rows, cols](Node& self) {
      int off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = self.parents[k];
        p->ensure_grad();
        const int w = (*wv)[k];
        for (int i = 0; i < rows; ++i) {
          const double* src = self.grad.data() + static_cast<std::size_t>(i) * cols + off;
          double* dst = p->grad.data() + static_cast<std::size_t>(i) * w;
          for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor repeat_rows(const Tensor& a, int times) {
  if (a.ndim() != 2 || times < 1)
    throw std::invalid_argument("repeat_rows: need 2D and times >= 1");
  const int rows = a.rows(), cols = a.cols();
  Tensor out = Tensor::zeros({rows * times, cols});
  for (int i = 0; i < rows; ++i)
    for (int t = 0; t < times; ++t)
      std::copy_n(a.data().data() + static_cast<std::size_t>(i) * cols, cols,
                  out.data().data() + (static_cast<std::size_t>(i) * times + t) * cols);
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, rows, cols, times](Node& self) {
      pa->ensure_grad();
      for (int i = 0; i < rows; ++i)
        for (int t = 0; t < times; ++t) {
          const double* src = self.grad.data() + (static_cast<std::size_t>(i) * times + t) * cols;
          double* dst = pa->grad.data() + static_cast<std::size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) dst[j] += src[j];
        }
    });
  }
  return out;
}

Tensor tile_rows(const Tensor& a, int times) {
  if (a.ndim() != 2 || times < 1)
    throw std::invalid_argument("tile_rows: need 2D and times >= 1");
  const int rows = a.rows(), cols = a.cols();
  Tensor out = Tensor::zeros({rows * times, cols});
  for (int t = 0; t < times; ++t)
    std::copy_n(a.data().data(), a.data().size(),
                out.data().data() + static_cast<std::size_t>(t) * rows * cols);
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, rows, cols, times](Node& self) {
      pa->ensure_grad();
      for (int t = 0; t < times; ++t) {
        const double* src = self.grad.data() + static_cast<std::size_t>(t) * rows * cols;
        for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += src[i];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(a.size()));
  for (double& m : *mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * (*mask)[static_cast<std::size_t>(i)];
  if (want_grad({&a})) {
    auto pa = a.node();
    record(out, {pa}, [pa, mask](Node& self) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * (*mask)[i];
    });
  }
  return out;
}

// ---- optimizer ----

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.data().size(), 0.0);
    v_.emplace_back(p.data().size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) {
    auto g = p.grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
}

void Adam::step() { step_with_lr(cfg_.lr); }

void Adam::step_with_lr(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto val = params_[k].data();
    auto g = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      val[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

double lr_schedule(std::int64_t step, std::int64_t warmup, std::int64_t total,
                   double base_lr, double min_frac) {
  if (warmup > 0 && step <= warmup) return base_lr * static_cast<double>(step) / warmup;
  const double lo = base_lr * min_frac;
  if (total <= warmup) return base_lr;
  double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  progress = std::clamp(progress, 0.0, 1.0);
  return lo + 0.5 * (base_lr - lo) * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (Tensor& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& p : params)
      for (double& g : p.grad()) g *= s;
  }
  return norm;
}

}  // namespace symgpt::nn
