#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "symgpt/eqgen.hpp"
#include "symgpt/nn.hpp"
#include "symgpt/rng.hpp"

namespace symgpt {

struct TNetConfig {
  int d_max = 5;      // instances are zero-padded up to this many variables
  int e = 64;         // embedding size
  int fc_hidden = 0;  // width of the first post-pool layer; 0 -> 2e

  int point_width() const { return d_max + 1; }  // x columns plus y
  int hidden() const { return fc_hidden > 0 ? fc_hidden : 2 * e; }
};

// Order-invariant point-cloud encoder: squash+affine input normalizer, three
// shared per-point layers (e, 2e, 4e), a global max pool over the points of
// each instance, then two fully connected layers down to e.
class TNet {
 public:
  TNet(TNetConfig cfg, Rng& rng);

  const TNetConfig& config() const { return cfg_; }

  // sign(v)*log(1+|v|) followed by the learnable per-feature affine map.
  // Rejects non-finite input.
  nn::Tensor normalize(const nn::Tensor& points) const;

  // points: [sum(sizes), d_max+1], rows grouped by instance. Returns [B, e].
  nn::Tensor encode(const nn::Tensor& points, const std::vector<int>& sizes) const;

  std::vector<std::pair<std::string, nn::Tensor>> named_parameters() const;
  std::vector<nn::Tensor> parameters() const;

  // Raw weight handles for the tape-free inference path.
  const nn::Tensor& norm_scale() const { return norm_scale_; }
  const nn::Tensor& norm_shift() const { return norm_shift_; }
  const nn::Tensor& w1() const { return w1_; }
  const nn::Tensor& b1() const { return b1_; }
  const nn::Tensor& w2() const { return w2_; }
  const nn::Tensor& b2() const { return b2_; }
  const nn::Tensor& w3() const { return w3_; }
  const nn::Tensor& b3() const { return b3_; }
  const nn::Tensor& fc1_w() const { return fc1_w_; }
  const nn::Tensor& fc1_b() const { return fc1_b_; }
  const nn::Tensor& fc2_w() const { return fc2_w_; }
  const nn::Tensor& fc2_b() const { return fc2_b_; }

 private:
  TNetConfig cfg_;
  nn::Tensor norm_scale_;  // [1, d_max+1]
  nn::Tensor norm_shift_;  // [d_max+1]
  nn::Tensor w1_, b1_;     // [e, d_max+1], [e]
  nn::Tensor w2_, b2_;     // [2e, e], [2e]
  nn::Tensor w3_, b3_;     // [4e, 2e], [4e]
  nn::Tensor fc1_w_, fc1_b_;  // [hidden, 4e], [hidden]
  nn::Tensor fc2_w_, fc2_b_;  // [e, hidden], [e]
};

// Rows are [x1..xd, 0.., y] with x columns zero-padded to d_max. Appends each
// instance's point count to sizes.
nn::Tensor build_point_batch(std::span<const Instance> batch, int d_max,
                             std::vector<int>& sizes);

}  // namespace symgpt
