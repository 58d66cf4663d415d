#include "symgpt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace symgpt {

using nn::Tensor;

namespace {

// Stream tags for derived RNGs; training stays resumable because nothing
// carries RNG state across epochs.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

void validate_corpus(const std::vector<Instance>& set, const char* which,
                     const Vocabulary& vocab, const TNetConfig& tnet_cfg,
                     const GPTConfig& gpt_cfg) {
  if (set.empty()) throw std::invalid_argument(std::string(which) + " corpus is empty");
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Instance& inst = set[i];
    const std::string at = std::string(which) + " instance " + std::to_string(i);
    if (inst.n < 1 || inst.d < 1) throw std::invalid_argument(at + ": empty dataset");
    if (inst.d > tnet_cfg.d_max)
      throw std::invalid_argument(at + ": d=" + std::to_string(inst.d) + " exceeds d_max");
    // encode() throws UnknownTokenError on stray characters.
    const std::size_t len = vocab.encode(inst.skeleton).size();
    if (static_cast<int>(len) - 1 > gpt_cfg.context)
      throw std::invalid_argument(at + ": skeleton does not fit the model context");
    for (double v : inst.y)
      if (!std::isfinite(v)) throw std::invalid_argument(at + ": non-finite y value");
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_int(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace

TokenBatch make_token_batch(std::span<const std::vector<int>> seqs,
                            std::span<const std::size_t> take, int pad_id) {
  TokenBatch out;
  out.B = static_cast<int>(take.size());
  std::size_t max_len = 0;
  for (std::size_t i : take) max_len = std::max(max_len, seqs[i].size());
  out.T = static_cast<int>(max_len) - 1;
  out.inputs.assign(static_cast<std::size_t>(out.B) * out.T, pad_id);
  out.targets.assign(static_cast<std::size_t>(out.B) * out.T, pad_id);
  for (int b = 0; b < out.B; ++b) {
    const auto& seq = seqs[take[static_cast<std::size_t>(b)]];
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      out.inputs[static_cast<std::size_t>(b) * out.T + t] = seq[t];
      out.targets[static_cast<std::size_t>(b) * out.T + t] = seq[t + 1];
      ++out.target_count;
    }
  }
  return out;
}

double validation_loss(const TNet& tnet, const GPT& gpt, const Vocabulary& vocab,
                       std::span<const Instance> val, int batch) {
  nn::NoGradGuard ng;
  double total = 0.0;
  std::int64_t count = 0;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(val.size());
  for (const Instance& inst : val) seqs.push_back(vocab.encode(inst.skeleton));

  for (std::size_t at = 0; at < val.size(); at += static_cast<std::size_t>(batch)) {
    const std::size_t bsz = std::min<std::size_t>(batch, val.size() - at);
    std::vector<std::size_t> take(bsz);
    for (std::size_t i = 0; i < bsz; ++i) take[i] = at + i;

    std::vector<int> sizes;
    Tensor points = build_point_batch(val.subspan(at, bsz), tnet.config().d_max, sizes);
    Tensor wd = tnet.encode(points, sizes);
    TokenBatch tb = make_token_batch(seqs, take, vocab.pad_id());
    Tensor logits = gpt.forward(wd, tb.inputs, tb.B, tb.T);
    Tensor loss = nn::cross_entropy(logits, tb.targets, vocab.pad_id());
    total += loss.item() * tb.target_count;
    count += tb.target_count;
  }
  return total / static_cast<double>(count);
}

TrainResult train_model(const std::vector<Instance>& train_set,
                        const std::vector<Instance>& val_set, TNetConfig tnet_cfg,
                        GPTConfig gpt_cfg, const TrainConfig& tc) {
  const Vocabulary vocab = Vocabulary::standard();
  gpt_cfg.vocab = vocab.size();
  gpt_cfg.width = tnet_cfg.e;  // the GPT width is the embedding size

  validate_corpus(train_set, "train", vocab, tnet_cfg, gpt_cfg);
  validate_corpus(val_set, "val", vocab, tnet_cfg, gpt_cfg);

  std::filesystem::create_directories(tc.out_dir);
  TrainResult result;
  result.best_path = tc.out_dir / "checkpoint_best.bin";
  result.last_path = tc.out_dir / "checkpoint_last.bin";
  result.metrics_path = tc.out_dir / "metrics.jsonl";

  Rng init_rng = Rng::derive(tc.seed, {kInitStream});
  TNet tnet(tnet_cfg, init_rng);
  GPT gpt(gpt_cfg, init_rng);

  std::vector<Tensor> params = tnet.parameters();
  {
    auto gp = gpt.parameters();
    params.insert(params.end(), gp.begin(), gp.end());
  }
  nn::AdamConfig acfg;
  acfg.lr = tc.lr;
  nn::Adam adam(params, acfg);

  int start_epoch = 0;
  std::int64_t global_step = 0;
  double best_val = std::numeric_limits<double>::infinity();

  if (tc.resume && std::filesystem::exists(result.last_path)) {
    ModelBundle bundle = load_checkpoint(result.last_path);
    auto src = bundle.tnet->named_parameters();
    auto sg = bundle.gpt->named_parameters();
    src.insert(src.end(), sg.begin(), sg.end());
    auto dst = tnet.named_parameters();
    auto dg = gpt.named_parameters();
    dst.insert(dst.end(), dg.begin(), dg.end());
    if (src.size() != dst.size()) throw CheckpointError("resume: model layout mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i].second.size() != dst[i].second.size())
        throw CheckpointError("resume: parameter size mismatch at " + dst[i].first);
      std::copy(src[i].second.data().begin(), src[i].second.data().end(),
                dst[i].second.data().begin());
    }
    if (bundle.has_adam) {
      for (int i = 0; i < adam.num_params(); ++i) {
        adam.moment1(i) = bundle.adam_m[static_cast<std::size_t>(i)];
        adam.moment2(i) = bundle.adam_v[static_cast<std::size_t>(i)];
      }
      adam.set_step_count(bundle.adam_t);
    }
    start_epoch = bundle.epoch;
    global_step = bundle.global_step;
    best_val = bundle.best_val;
  }

  std::vector<std::vector<int>> seqs;
  seqs.reserve(train_set.size());
  for (const Instance& inst : train_set) seqs.push_back(vocab.encode(inst.skeleton));

  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(train_set.size()) + tc.batch - 1) / tc.batch;
  int epochs = tc.epochs;
  if (tc.max_steps > 0)
    epochs = static_cast<int>((tc.max_steps + steps_per_epoch - 1) / steps_per_epoch);
  const std::int64_t total_steps =
      tc.max_steps > 0 ? tc.max_steps : steps_per_epoch * epochs;

  std::ofstream metrics(result.metrics_path,
                        start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open metrics log: " + result.metrics_path.string());

  bool done = false;
  for (int epoch = start_epoch + 1; epoch <= epochs && !done; ++epoch) {
    const auto order = shuffled_indices(train_set.size(),
                                        Rng::derive(tc.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
    double epoch_loss = 0.0;
    std::int64_t epoch_steps = 0;

    for (std::size_t at = 0; at < order.size() && !done; at += static_cast<std::size_t>(tc.batch)) {
      const std::size_t bsz = std::min<std::size_t>(tc.batch, order.size() - at);
      std::vector<std::size_t> take(order.begin() + static_cast<std::ptrdiff_t>(at),
                                    order.begin() + static_cast<std::ptrdiff_t>(at + bsz));
      std::vector<Instance> batch_insts;
      batch_insts.reserve(bsz);
      for (std::size_t i : take) batch_insts.push_back(train_set[i]);

      std::vector<int> sizes;
      Tensor points = build_point_batch(batch_insts, tnet_cfg.d_max, sizes);
      Tensor wd = tnet.encode(points, sizes);
      TokenBatch tb = make_token_batch(seqs, take, vocab.pad_id());

      Rng drop_rng = Rng::derive(tc.seed, {kDropoutStream, static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(epoch_steps)});
      Tensor logits = gpt.forward(wd, tb.inputs, tb.B, tb.T, gpt_cfg.dropout,
                                  gpt_cfg.dropout > 0.0 ? &drop_rng : nullptr);
      Tensor loss = nn::cross_entropy(logits, tb.targets, vocab.pad_id());

      adam.zero_grad();
      nn::backward(loss);
      nn::clip_grad_norm(params, tc.grad_clip);
      ++global_step;
      const double lr = nn::lr_schedule(global_step, tc.warmup_steps, total_steps, tc.lr,
                                        tc.lr_min_frac);
      adam.step_with_lr(lr);

      epoch_loss += loss.item();
      ++epoch_steps;
      metrics << nlohmann::json({{"type", "step"},
                                 {"step", global_step},
                                 {"epoch", epoch},
                                 {"lr", lr},
                                 {"train_loss", loss.item()}})
                     .dump()
              << '\n';
      if (tc.max_steps > 0 && global_step >= tc.max_steps) done = true;
    }

    const double val = validation_loss(tnet, gpt, vocab, val_set, tc.batch);
    const double train_mean = epoch_loss / static_cast<double>(std::max<std::int64_t>(1, epoch_steps));
    metrics << nlohmann::json({{"type", "epoch"},
                               {"epoch", epoch},
                               {"train_loss", train_mean},
                               {"val_loss", val}})
                   .dump()
            << '\n';
    metrics.flush();
    if (!tc.quiet)
      std::fprintf(stderr, "epoch %d/%d  train %.4f  val %.4f\n", epoch, epochs, train_mean, val);

    result.epochs.push_back({epoch, train_mean, val});
    if (std::isnan(val)) {
      result.val_nan = true;
      break;
    }

    TrainProgress progress{epoch, global_step, best_val};
    if (val < best_val) {
      best_val = val;
      progress.best_val = best_val;
      save_checkpoint(result.best_path, tnet, gpt, vocab, progress, nullptr);
    }
    save_checkpoint(result.last_path, tnet, gpt, vocab, progress, &adam);
  }

  result.best_val = best_val;
  result.steps = global_step;
  return result;
}

}  // namespace symgpt
