#include "symgpt/gpt.hpp"

#include <cmath>
#include <stdexcept>

namespace symgpt {

using nn::Tensor;

GPT::GPT(GPTConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.width % cfg.n_heads != 0)
    throw std::invalid_argument("GPTConfig: width must be divisible by n_heads");
  if (cfg.context < 2 || cfg.vocab < 4 || cfg.n_layers < 1)
    throw std::invalid_argument("GPTConfig: bad dimensions");
  const int c = cfg.width;

  wt_ = Tensor::randn({cfg.vocab, c}, rng, 0.02).set_requires_grad();
  wp_ = Tensor::randn({cfg.context, c}, rng, 0.02).set_requires_grad();
  blocks_.reserve(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    Block b;
    b.ln1_g = Tensor::full({c}, 1.0).set_requires_grad();
    b.ln1_b = Tensor::zeros({c}).set_requires_grad();
    b.wq = Tensor::randn({c, c}, rng, 0.02).set_requires_grad();
    b.bq = Tensor::zeros({c}).set_requires_grad();
    b.wk = Tensor::randn({c, c}, rng, 0.02).set_requires_grad();
    b.bk = Tensor::zeros({c}).set_requires_grad();
    b.wv = Tensor::randn({c, c}, rng, 0.02).set_requires_grad();
    b.bv = Tensor::zeros({c}).set_requires_grad();
    // Residual-side projections start at zero so every block is the identity
    // at init and initial logits stay near uniform.
    b.wo = Tensor::zeros({c, c}).set_requires_grad();
    b.bo = Tensor::zeros({c}).set_requires_grad();
    b.ln2_g = Tensor::full({c}, 1.0).set_requires_grad();
    b.ln2_b = Tensor::zeros({c}).set_requires_grad();
    b.fc_w = Tensor::randn({4 * c, c}, rng, 0.02).set_requires_grad();
    b.fc_b = Tensor::zeros({4 * c}).set_requires_grad();
    b.proj_w = Tensor::zeros({c, 4 * c}).set_requires_grad();
    b.proj_b = Tensor::zeros({c}).set_requires_grad();
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = Tensor::full({c}, 1.0).set_requires_grad();
  lnf_b_ = Tensor::zeros({c}).set_requires_grad();
}

Tensor GPT::forward(const nn::Tensor& w_d, const std::vector<int>& ids, int B, int T,
                    double dropout_rate, Rng* drop_rng) const {
  const int c = cfg_.width;
  if (T < 1 || B < 1) throw std::invalid_argument("forward: empty batch");
  if (T > cfg_.context)
    throw std::invalid_argument("forward: sequence length " + std::to_string(T) +
                                " exceeds context " + std::to_string(cfg_.context));
  if (static_cast<int>(ids.size()) != B * T)
    throw std::invalid_argument("forward: ids size does not match B*T");
  if (w_d.ndim() != 2 || w_d.rows() != B || w_d.cols() != c)
    throw std::invalid_argument("forward: w_d must be [B, width], got " +
                                nn::shape_str(w_d.shape()));
  if (dropout_rate > 0.0 && drop_rng == nullptr)
    throw std::invalid_argument("forward: dropout needs an RNG");

  auto drop = [&](Tensor t) {
    return dropout_rate > 0.0 ? nn::dropout(t, dropout_rate, *drop_rng) : t;
  };

  // W_p + W_D + X_eq W_t, with w_D broadcast to every position.
  Tensor tok = nn::embedding(wt_, ids);                           // [B*T, C]
  Tensor pos = nn::tile_rows(nn::slice_rows(wp_, 0, T), B);       // [B*T, C]
  Tensor wd = nn::repeat_rows(w_d, T);                            // [B*T, C]
  Tensor x = drop(nn::add(nn::add(tok, pos), wd));

  const int hs = cfg_.head_size();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hs));
  std::vector<std::uint8_t> causal(static_cast<std::size_t>(T) * T, 0);
  for (int i = 0; i < T; ++i)
    for (int j = i + 1; j < T; ++j) causal[static_cast<std::size_t>(i) * T + j] = 1;

  for (const Block& blk : blocks_) {
    Tensor h = nn::layer_norm(x, blk.ln1_g, blk.ln1_b);
    Tensor q = nn::add(nn::matmul(h, blk.wq, false, true), blk.bq);
    Tensor k = nn::add(nn::matmul(h, blk.wk, false, true), blk.bk);
    Tensor v = nn::add(nn::matmul(h, blk.wv, false, true), blk.bv);

    std::vector<Tensor> batch_rows;
    batch_rows.reserve(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      Tensor qb = nn::slice_rows(q, b * T, T);
      Tensor kb = nn::slice_rows(k, b * T, T);
      Tensor vb = nn::slice_rows(v, b * T, T);
      std::vector<Tensor> heads;
      heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
      for (int hh = 0; hh < cfg_.n_heads; ++hh) {
        Tensor qh = nn::slice_cols(qb, hh * hs, hs);
        Tensor kh = nn::slice_cols(kb, hh * hs, hs);
        Tensor vh = nn::slice_cols(vb, hh * hs, hs);
        Tensor scores = nn::scale(nn::matmul(qh, kh, false, true), att_scale);
        scores = nn::masked_fill(scores, causal, -1e30);
        Tensor att = nn::softmax_rows(scores);
        att = drop(att);
        heads.push_back(nn::matmul(att, vh));
      }
      batch_rows.push_back(nn::concat_cols(heads));
    }
    Tensor att_out = nn::concat_rows(batch_rows);
    att_out = drop(nn::add(nn::matmul(att_out, blk.wo, false, true), blk.bo));
    x = nn::add(x, att_out);

    Tensor h2 = nn::layer_norm(x, blk.ln2_g, blk.ln2_b);
    Tensor f = nn::gelu(nn::add(nn::matmul(h2, blk.fc_w, false, true), blk.fc_b));
    Tensor proj = drop(nn::add(nn::matmul(f, blk.proj_w, false, true), blk.proj_b));
    x = nn::add(x, proj);
  }

  Tensor hf = nn::layer_norm(x, lnf_g_, lnf_b_);
  return nn::matmul(hf, wt_, false, true);  // tied head: logits = h W_t^T
}

std::vector<std::pair<std::string, Tensor>> GPT::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("gpt.wt", wt_);
  out.emplace_back("gpt.wp", wp_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    const std::string p = "gpt.h" + std::to_string(l) + ".";
    out.emplace_back(p + "ln1_g", b.ln1_g);
    out.emplace_back(p + "ln1_b", b.ln1_b);
    out.emplace_back(p + "wq", b.wq);
    out.emplace_back(p + "bq", b.bq);
    out.emplace_back(p + "wk", b.wk);
    out.emplace_back(p + "bk", b.bk);
    out.emplace_back(p + "wv", b.wv);
    out.emplace_back(p + "bv", b.bv);
    out.emplace_back(p + "wo", b.wo);
    out.emplace_back(p + "bo", b.bo);
    out.emplace_back(p + "ln2_g", b.ln2_g);
    out.emplace_back(p + "ln2_b", b.ln2_b);
    out.emplace_back(p + "fc_w", b.fc_w);
    out.emplace_back(p + "fc_b", b.fc_b);
    out.emplace_back(p + "proj_w", b.proj_w);
    out.emplace_back(p + "proj_b", b.proj_b);
  }
  out.emplace_back("gpt.lnf_g", lnf_g_);
  out.emplace_back("gpt.lnf_b", lnf_b_);
  return out;
}

std::vector<Tensor> GPT::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

}  // namespace symgpt
