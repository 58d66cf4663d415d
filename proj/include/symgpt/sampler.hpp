#pragma once

#include <span>
#include <string>
#include <vector>

#include "symgpt/eqgen.hpp"
#include "symgpt/gpt.hpp"
#include "symgpt/rng.hpp"
#include "symgpt/tnet.hpp"
#include "symgpt/vocab.hpp"

namespace symgpt {

// Tape-free inference over frozen weights: a plain Eigen forward for the
// T-net and an incrementally decoded GPT with per-layer KV caches. Safe for
// concurrent callers; decoding state is per call.
class Sampler {
 public:
  Sampler(const TNet& tnet, const GPT& gpt, const Vocabulary& vocab)
      : tnet_(&tnet), gpt_(&gpt), vocab_(&vocab) {}

  // Dataset embedding w_D for one instance.
  std::vector<double> encode_instance(const Instance& inst) const;

  struct Sample {
    std::vector<int> ids;  // prefix plus sampled ids (including <EOS> if hit)
    std::string text;      // decoded characters after the prefix
    bool hit_eos = false;
  };

  // Top-k autoregressive decode until <EOS> or max_len sampled tokens.
  // top_k is clamped to the vocabulary size; top_k == 1 is a greedy decode.
  // An empty prefix means the singleton <SOS>.
  Sample sample_skeleton(std::span<const double> w_d, int top_k, int max_len, Rng& rng,
                         std::span<const int> prefix = {}) const;

  // Next-token logits after consuming `ids`; pins the incremental path to the
  // training-time forward in tests.
  std::vector<double> next_logits(std::span<const double> w_d, std::span<const int> ids) const;

  const Vocabulary& vocab() const { return *vocab_; }

 private:
  const TNet* tnet_;
  const GPT* gpt_;
  const Vocabulary* vocab_;
};

// Renormalized draw over the k highest logits (ties broken by lower id).
int sample_top_k(std::span<const double> logits, int top_k, Rng& rng);

}  // namespace symgpt
