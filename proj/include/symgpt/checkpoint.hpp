#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "symgpt/gpt.hpp"
#include "symgpt/nn.hpp"
#include "symgpt/tnet.hpp"
#include "symgpt/vocab.hpp"

namespace symgpt {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A loaded model plus whatever training state the file carried. Optimizer
// moments are raw blobs in parameter order (t-net parameters first, then GPT),
// so a trainer can rebuild its Adam state exactly.
struct ModelBundle {
  TNetConfig tnet_cfg;
  GPTConfig gpt_cfg;
  Vocabulary vocab = Vocabulary::standard();
  std::shared_ptr<TNet> tnet;
  std::shared_ptr<GPT> gpt;

  int epoch = 0;
  std::int64_t global_step = 0;
  double best_val = 0.0;

  bool has_adam = false;
  std::int64_t adam_t = 0;
  std::vector<std::vector<double>> adam_m, adam_v;
};

struct TrainProgress {
  int epoch = 0;
  std::int64_t global_step = 0;
  double best_val = 0.0;
};

// Versioned container: magic, format version, JSON header (configs, vocab
// charset, parameter names/sizes, progress), then float64 blobs in header
// order. Optimizer moments are appended when adam != nullptr.
void save_checkpoint(const std::filesystem::path& path, const TNet& tnet, const GPT& gpt,
                     const Vocabulary& vocab, const TrainProgress& progress,
                     nn::Adam* adam = nullptr);

ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace symgpt
