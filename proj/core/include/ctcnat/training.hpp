#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ctcnat/data.hpp"
#include "ctcnat/transformer.hpp"

namespace ctcnat {

struct TrainConfig {
  // Peak learning rate, reached after `warmup` steps and decayed as
  // 1/sqrt(step) afterwards.
  double learning_rate = 1e-3;
  std::size_t warmup = 200;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  std::size_t batch_size = 32;
  std::size_t max_steps = 3000;
  std::size_t validation_interval = 250;
  // Retained checkpoints are written here when non-empty.
  std::filesystem::path checkpoint_dir;
  std::uint64_t seed = 1;
  std::size_t keep_top = 5;
  // Sentences of one batch processed concurrently; gradients are summed in
  // sentence order so results do not depend on this value.
  std::size_t threads = 1;

  void validate() const;
};

double learning_rate_at(const TrainConfig& config, std::size_t step);

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::size_t step = 0;
  double valid_score = 0.0;
  std::optional<Vocabulary> vocab;
};

// Binary layout, little-endian:
//   "CTCNAT01"
//   u32 byte length + UTF-8 "key=value\n" lines (model config, step,
//   valid_score, vocabulary)
//   per parameter: u32 name length, name, u32 rank, rank × u32 dims,
//   values as IEEE-754 doubles
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// Throws FormatError (with byte offset) for malformed or truncated files and
// ConfigError when the stored parameters do not match the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Same as load_checkpoint but also requires the stored variant.
Checkpoint load_checkpoint(const std::filesystem::path& path, Variant expected);

// Element-wise running mean over the list order. Throws CheckpointError when
// the configurations differ.
ModelParams average_checkpoints(std::span<const Checkpoint> checkpoints);

// Per-sentence negative log-likelihood: CTC for the non-autoregressive
// variants, token cross-entropy (eos-terminated target) for the baseline.
Tensor sentence_loss(const ModelConfig& config, const ModelParams& params, const SentencePair& pair,
                     const ForwardOptions& options = {});
// Mean of the per-sentence losses of a padded batch, padding stripped.
double batch_loss(const ModelConfig& config, const ModelParams& params, const Batch& batch);

// True when the CTC labeler has enough frames for the target.
bool ctc_feasible(const ModelConfig& config, const SentencePair& pair);

// Corpus BLEU of greedy decodes against the references.
double validation_bleu(const ModelConfig& config, const ModelParams& params, const Vocabulary& vocab,
                       std::span<const SentencePair> corpus);

struct TrainLogEntry {
  std::size_t step = 0;
  // Mean batch loss over the steps since the previous entry.
  double train_loss = 0.0;
  double valid_bleu = 0.0;
};

struct RetainedCheckpoint {
  std::size_t step = 0;
  double valid_score = 0.0;
  std::filesystem::path path;  // empty when no checkpoint_dir is set
  ModelParams params;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  std::vector<TrainLogEntry> log;
  std::vector<double> step_losses;
  // Best keep_top validation checkpoints, best first.
  std::vector<RetainedCheckpoint> retained;
  std::size_t skipped_infeasible = 0;
};

using TrainObserver = std::function<void(const TrainLogEntry&)>;

// Adam on the batch-mean loss. Validates every validation_interval steps and
// at the last step, keeping the keep_top best checkpoints.
TrainResult train(const ModelConfig& model_config, std::span<const SentencePair> train_corpus,
                  std::span<const SentencePair> valid_corpus, const Vocabulary& vocab,
                  const TrainConfig& train_config, const ModelParams* initial_params = nullptr,
                  const TrainObserver& observer = {});

// "step,train_loss,valid_bleu" CSV.
void write_train_log(std::span<const TrainLogEntry> log, std::ostream& out);

}  // namespace ctcnat
