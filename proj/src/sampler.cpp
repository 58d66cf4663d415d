#include "symgpt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace symgpt {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EVec = Eigen::VectorXd;
using CMap = Eigen::Map<const EMat>;

CMap wmap(const nn::Tensor& t) { return CMap(t.data().data(), t.rows(), t.cols()); }

EVec vvec(const nn::Tensor& t) {
  return Eigen::Map<const EVec>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

void layer_norm_inplace(EVec& x, const nn::Tensor& gamma, const nn::Tensor& beta) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  const double inv = 1.0 / std::sqrt(var + nn::kLayerNormEps);
  for (Eigen::Index j = 0; j < x.size(); ++j)
    x[j] = gamma.data()[static_cast<std::size_t>(j)] * (x[j] - mu) * inv +
           beta.data()[static_cast<std::size_t>(j)];
}

double gelu_scalar(double x) {
  constexpr double kC = 0.7978845608028654;
  constexpr double kA = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
}

// Incremental decoder state: per-layer KV caches grown one row per token.
struct Decoder {
  const GPT& gpt;
  std::vector<EMat> kcache, vcache;
  int len = 0;

  explicit Decoder(const GPT& g, int capacity) : gpt(g) {
    const int c = g.config().width;
    kcache.assign(static_cast<std::size_t>(g.config().n_layers), EMat(capacity, c));
    vcache.assign(static_cast<std::size_t>(g.config().n_layers), EMat(capacity, c));
  }

  // Consumes one token at position `len`, returns next-token logits.
  EVec step(int token, const EVec& wd) {
    const auto& cfg = gpt.config();
    const int c = cfg.width;
    const int hs = cfg.head_size();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hs));
    const int pos = len;
    if (pos >= cfg.context) throw std::invalid_argument("decoder ran past the model context");

    EVec x = wmap(gpt.token_embedding()).row(token).transpose() +
             wmap(gpt.position_embedding()).row(pos).transpose() + wd;

    for (std::size_t l = 0; l < gpt.blocks().size(); ++l) {
      const auto& blk = gpt.blocks()[l];
      EVec h = x;
      layer_norm_inplace(h, blk.ln1_g, blk.ln1_b);
      EVec q = wmap(blk.wq) * h + vvec(blk.bq);
      EVec k = wmap(blk.wk) * h + vvec(blk.bk);
      EVec v = wmap(blk.wv) * h + vvec(blk.bv);
      kcache[l].row(pos) = k.transpose();
      vcache[l].row(pos) = v.transpose();

      EVec att_out(c);
      for (int head = 0; head < cfg.n_heads; ++head) {
        const int c0 = head * hs;
        EVec scores(pos + 1);
        for (int t = 0; t <= pos; ++t)
          scores[t] = att_scale * q.segment(c0, hs).dot(kcache[l].row(t).segment(c0, hs));
        const double mx = scores.maxCoeff();
        double denom = 0.0;
        for (int t = 0; t <= pos; ++t) {
          scores[t] = std::exp(scores[t] - mx);
          denom += scores[t];
        }
        EVec acc = EVec::Zero(hs);
        for (int t = 0; t <= pos; ++t)
          acc += (scores[t] / denom) * vcache[l].row(t).segment(c0, hs).transpose();
        att_out.segment(c0, hs) = acc;
      }
      x += wmap(blk.wo) * att_out + vvec(blk.bo);

      EVec h2 = x;
      layer_norm_inplace(h2, blk.ln2_g, blk.ln2_b);
      EVec f = wmap(blk.fc_w) * h2 + vvec(blk.fc_b);
      for (Eigen::Index j = 0; j < f.size(); ++j) f[j] = gelu_scalar(f[j]);
      x += wmap(blk.proj_w) * f + vvec(blk.proj_b);
    }

    layer_norm_inplace(x, gpt.lnf_g(), gpt.lnf_b());
    ++len;
    return wmap(gpt.token_embedding()) * x;  // tied head
  }
};

}  // namespace

std::vector<double> Sampler::encode_instance(const Instance& inst) const {
  const auto& cfg = tnet_->config();
  if (inst.d > cfg.d_max)
    throw std::invalid_argument("instance d exceeds the encoder's d_max");
  const int width = cfg.point_width();
  EMat x(inst.n, width);
  x.setZero();
  for (int i = 0; i < inst.n; ++i) {
    for (int j = 0; j < inst.d; ++j) x(i, j) = inst.X[static_cast<std::size_t>(i) * inst.d + j];
    x(i, width - 1) = inst.y[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < width; ++j) {
      if (!std::isfinite(x(i, j)))
        throw std::invalid_argument("encode_instance: non-finite input value");
      const double v = x(i, j);
      const double s = v >= 0.0 ? std::log1p(v) : -std::log1p(-v);
      x(i, j) = s * tnet_->norm_scale().data()[static_cast<std::size_t>(j)] +
                tnet_->norm_shift().data()[static_cast<std::size_t>(j)];
    }

  EMat h1 = (x * wmap(tnet_->w1()).transpose()).rowwise() + vvec(tnet_->b1()).transpose();
  h1 = h1.cwiseMax(0.0);
  EMat h2 = (h1 * wmap(tnet_->w2()).transpose()).rowwise() + vvec(tnet_->b2()).transpose();
  h2 = h2.cwiseMax(0.0);
  EMat h3 = (h2 * wmap(tnet_->w3()).transpose()).rowwise() + vvec(tnet_->b3()).transpose();
  EVec pooled = h3.colwise().maxCoeff().transpose();
  EVec f1 = (wmap(tnet_->fc1_w()) * pooled + vvec(tnet_->fc1_b())).cwiseMax(0.0);
  EVec out = wmap(tnet_->fc2_w()) * f1 + vvec(tnet_->fc2_b());
  return std::vector<double>(out.data(), out.data() + out.size());
}

int sample_top_k(std::span<const double> logits, int top_k, Rng& rng) {
  const int v = static_cast<int>(logits.size());
  const int k = std::clamp(top_k, 1, v);
  std::vector<int> idx(static_cast<std::size_t>(v));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (logits[static_cast<std::size_t>(a)] != logits[static_cast<std::size_t>(b)])
      return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
    return a < b;
  });
  if (k == 1) return idx[0];

  double mx = logits[static_cast<std::size_t>(idx[0])];
  std::vector<double> p(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    p[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] - mx);
    sum += p[static_cast<std::size_t>(i)];
  }
  double u = rng.uniform() * sum;
  for (int i = 0; i < k; ++i) {
    if (u < p[static_cast<std::size_t>(i)]) return idx[static_cast<std::size_t>(i)];
    u -= p[static_cast<std::size_t>(i)];
  }
  return idx[static_cast<std::size_t>(k - 1)];
}

Sampler::Sample Sampler::sample_skeleton(std::span<const double> w_d, int top_k, int max_len,
                                         Rng& rng, std::span<const int> prefix) const {
  const auto& cfg = gpt_->config();
  if (static_cast<int>(w_d.size()) != cfg.width)
    throw std::invalid_argument("sample_skeleton: embedding width mismatch");

  Sample out;
  if (prefix.empty())
    out.ids.push_back(vocab_->sos_id());
  else
    out.ids.assign(prefix.begin(), prefix.end());
  const std::size_t prefix_len = out.ids.size();

  Decoder dec(*gpt_, cfg.context);
  const EVec wd = Eigen::Map<const EVec>(w_d.data(), static_cast<Eigen::Index>(w_d.size()));

  EVec logits;
  for (int id : out.ids) logits = dec.step(id, wd);

  for (int emitted = 0; emitted < max_len; ++emitted) {
    const int next =
        sample_top_k(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())),
                     top_k, rng);
    out.ids.push_back(next);
    if (next == vocab_->eos_id()) {
      out.hit_eos = true;
      break;
    }
    if (static_cast<int>(out.ids.size()) >= cfg.context) break;  // no room to continue
    logits = dec.step(next, wd);
  }
  out.text = vocab_->decode(std::span<const int>(out.ids).subspan(prefix_len));
  return out;
}

std::vector<double> Sampler::next_logits(std::span<const double> w_d,
                                         std::span<const int> ids) const {
  Decoder dec(*gpt_, gpt_->config().context);
  const EVec wd = Eigen::Map<const EVec>(w_d.data(), static_cast<Eigen::Index>(w_d.size()));
  EVec logits;
  for (int id : ids) logits = dec.step(id, wd);
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

}  // namespace symgpt
