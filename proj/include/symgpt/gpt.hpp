#pragma once

#include <string>
#include <utility>
#include <vector>

#include "symgpt/nn.hpp"
#include "symgpt/rng.hpp"

namespace symgpt {

struct GPTConfig {
  int n_layers = 2;
  int n_heads = 4;
  int width = 64;     // model width; equals the T-net embedding size
  int context = 256;  // must cover 200 output tokens plus <SOS>
  int vocab = 35;
  double dropout = 0.0;

  int head_size() const { return width / n_heads; }
};

// Character-level causal transformer conditioned on a per-instance dataset
// embedding. Pre-norm GPT-2 blocks; the output head is the transposed token
// embedding (weight tying), no separate projection.
class GPT {
 public:
  GPT(GPTConfig cfg, Rng& rng);

  const GPTConfig& config() const { return cfg_; }

  // w_d: [B, width] dataset embeddings, added at every position. ids: B*T
  // row-major token ids. Returns logits [B*T, vocab]. Sequences longer than
  // the context are rejected.
  nn::Tensor forward(const nn::Tensor& w_d, const std::vector<int>& ids, int B, int T,
                     double dropout_rate = 0.0, Rng* drop_rng = nullptr) const;

  std::vector<std::pair<std::string, nn::Tensor>> named_parameters() const;
  std::vector<nn::Tensor> parameters() const;

  struct Block {
    nn::Tensor ln1_g, ln1_b;
    nn::Tensor wq, bq, wk, bk, wv, bv;  // [C, C], [C]
    nn::Tensor wo, bo;                  // [C, C], [C]
    nn::Tensor ln2_g, ln2_b;
    nn::Tensor fc_w, fc_b;              // [4C, C], [4C]
    nn::Tensor proj_w, proj_b;          // [C, 4C], [C]
  };

  const nn::Tensor& token_embedding() const { return wt_; }
  const nn::Tensor& position_embedding() const { return wp_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const nn::Tensor& lnf_g() const { return lnf_g_; }
  const nn::Tensor& lnf_b() const { return lnf_b_; }

 private:
  GPTConfig cfg_;
  nn::Tensor wt_;  // [vocab, C]; also the output head (tied)
  nn::Tensor wp_;  // [context, C]
  std::vector<Block> blocks_;
  nn::Tensor lnf_g_, lnf_b_;
};

}  // namespace symgpt
