#include "symgpt/tnet.hpp"

#include <cmath>
#include <stdexcept>

namespace symgpt {

using nn::Tensor;

TNet::TNet(TNetConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.d_max < 1 || cfg.e < 1) throw std::invalid_argument("TNetConfig: d_max and e must be >= 1");
  const int in = cfg.point_width();
  const int e = cfg.e;
  const int h = cfg.hidden();

  auto he = [&rng](int out_w, int in_w) {
    return Tensor::randn({out_w, in_w}, rng, std::sqrt(2.0 / in_w)).set_requires_grad();
  };
  norm_scale_ = Tensor::full({1, in}, 1.0).set_requires_grad();
  norm_shift_ = Tensor::zeros({in}).set_requires_grad();
  w1_ = he(e, in);
  b1_ = Tensor::zeros({e}).set_requires_grad();
  w2_ = he(2 * e, e);
  b2_ = Tensor::zeros({2 * e}).set_requires_grad();
  w3_ = he(4 * e, 2 * e);
  b3_ = Tensor::zeros({4 * e}).set_requires_grad();
  fc1_w_ = he(h, 4 * e);
  fc1_b_ = Tensor::zeros({h}).set_requires_grad();
  fc2_w_ = Tensor::randn({e, h}, rng, std::sqrt(1.0 / h)).set_requires_grad();
  fc2_b_ = Tensor::zeros({e}).set_requires_grad();
}

Tensor TNet::normalize(const nn::Tensor& points) const {
  if (points.ndim() != 2 || points.cols() != cfg_.point_width())
    throw std::invalid_argument("normalize: expected [n, " +
                                std::to_string(cfg_.point_width()) + "] points, got " +
                                nn::shape_str(points.shape()));
  for (double v : points.data())
    if (!std::isfinite(v)) throw std::invalid_argument("normalize: non-finite input value");
  Tensor squashed = nn::signed_log1p(points);
  Tensor scaled = nn::mul(squashed, nn::tile_rows(norm_scale_, points.rows()));
  return nn::add(scaled, norm_shift_);
}

Tensor TNet::encode(const nn::Tensor& points, const std::vector<int>& sizes) const {
  if (sizes.empty()) throw std::invalid_argument("encode: empty batch");
  for (int s : sizes)
    if (s < 1) throw std::invalid_argument("encode: every instance needs n >= 1");

  Tensor x = normalize(points);
  Tensor h1 = nn::relu(nn::add(nn::matmul(x, w1_, false, true), b1_));
  Tensor h2 = nn::relu(nn::add(nn::matmul(h1, w2_, false, true), b2_));
  Tensor h3 = nn::add(nn::matmul(h2, w3_, false, true), b3_);
  Tensor pooled = nn::segment_max(h3, sizes);
  Tensor f1 = nn::relu(nn::add(nn::matmul(pooled, fc1_w_, false, true), fc1_b_));
  return nn::add(nn::matmul(f1, fc2_w_, false, true), fc2_b_);
}

std::vector<std::pair<std::string, Tensor>> TNet::named_parameters() const {
  return {
      {"tnet.norm_scale", norm_scale_}, {"tnet.norm_shift", norm_shift_},
      {"tnet.w1", w1_}, {"tnet.b1", b1_},
      {"tnet.w2", w2_}, {"tnet.b2", b2_},
      {"tnet.w3", w3_}, {"tnet.b3", b3_},
      {"tnet.fc1_w", fc1_w_}, {"tnet.fc1_b", fc1_b_},
      {"tnet.fc2_w", fc2_w_}, {"tnet.fc2_b", fc2_b_},
  };
}

std::vector<Tensor> TNet::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

nn::Tensor build_point_batch(std::span<const Instance> batch, int d_max,
                             std::vector<int>& sizes) {
  int total = 0;
  for (const Instance& inst : batch) {
    if (inst.d > d_max)
      throw std::invalid_argument("instance has d=" + std::to_string(inst.d) +
                                  " > d_max=" + std::to_string(d_max));
    if (inst.n < 1) throw std::invalid_argument("instance has no points");
    total += inst.n;
  }
  const int width = d_max + 1;
  Tensor out = Tensor::zeros({total, width});
  auto data = out.data();
  std::size_t row = 0;
  for (const Instance& inst : batch) {
    sizes.push_back(inst.n);
    for (int i = 0; i < inst.n; ++i, ++row) {
      double* dst = data.data() + row * width;
      const double* src = inst.X.data() + static_cast<std::size_t>(i) * inst.d;
      for (int j = 0; j < inst.d; ++j) dst[j] = src[j];
      dst[width - 1] = inst.y[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

}  // namespace symgpt
