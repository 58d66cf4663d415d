#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "symgpt/checkpoint.hpp"
#include "symgpt/eqgen.hpp"
#include "symgpt/gpt.hpp"
#include "symgpt/tnet.hpp"
#include "symgpt/vocab.hpp"

namespace symgpt {

struct TrainConfig {
  int epochs = 4;
  int batch = 64;
  double lr = 3e-4;
  int warmup_steps = 20;
  double lr_min_frac = 0.1;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  bool resume = false;
  // When > 0, stop after this many optimizer steps (epochs then only bounds
  // the validation cadence).
  std::int64_t max_steps = 0;
  bool quiet = false;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::filesystem::path best_path, last_path, metrics_path;
  double best_val = 0.0;
  bool val_nan = false;
  std::int64_t steps = 0;
};

// Padded next-token batch: inputs are seq[:-1], targets seq[1:], both padded
// to the longest sequence with pad_id (ignored by the loss).
struct TokenBatch {
  std::vector<int> inputs;
  std::vector<int> targets;
  int B = 0, T = 0;
  int target_count = 0;  // non-pad targets
};

TokenBatch make_token_batch(std::span<const std::vector<int>> seqs,
                            std::span<const std::size_t> take, int pad_id);

// Mean per-token validation cross-entropy over the whole set.
double validation_loss(const TNet& tnet, const GPT& gpt, const Vocabulary& vocab,
                       std::span<const Instance> val, int batch);

// Joint end-to-end training of the T-net and GPT on skeleton strings.
// Checkpoints: <out>/checkpoint_best.bin (weights at best validation loss)
// and <out>/checkpoint_last.bin (weights + optimizer state, resume point);
// metrics stream to <out>/metrics.jsonl.
TrainResult train_model(const std::vector<Instance>& train_set,
                        const std::vector<Instance>& val_set, TNetConfig tnet_cfg,
                        GPTConfig gpt_cfg, const TrainConfig& tc);

}  // namespace symgpt
