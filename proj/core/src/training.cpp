#include "ctcnat/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "ctcnat/ctc.hpp"
#include "ctcnat/decoding.hpp"
#include "ctcnat/errors.hpp"
#include "ctcnat/evaluation.hpp"
#include "ctcnat/ops.hpp"
#include "ctcnat/symbols.hpp"

namespace ctcnat {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("lr must be positive");
  if (warmup < 1) throw ConfigError("warmup must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
  if (validation_interval < 1) throw ConfigError("valid_interval must be at least 1");
  if (keep_top < 1) throw ConfigError("keep_top must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

double learning_rate_at(const TrainConfig& config, std::size_t step) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(config.warmup);
  return config.learning_rate * std::min(s / w, std::sqrt(w / s));
}

bool ctc_feasible(const ModelConfig& config, const SentencePair& pair) {
  return min_frames(pair.target_ids) <= config.k * pair.source_ids.size();
}

Tensor sentence_loss(const ModelConfig& config, const ModelParams& params, const SentencePair& pair,
                     const ForwardOptions& options) {
  if (pair.target_ids.empty()) throw InputError("empty target sentence");
  if (is_non_autoregressive(config.variant)) {
    return ctc_loss_op(nar_log_probs(config, params, pair.source_ids, options), pair.target_ids);
  }
  const EncoderStates enc = encode(config, params, pair.source_ids, options);
  std::vector<int> inputs{kEosId};
  inputs.insert(inputs.end(), pair.target_ids.begin(), pair.target_ids.end());
  std::vector<int> outputs(pair.target_ids.begin(), pair.target_ids.end());
  outputs.push_back(kEosId);
  return nll_loss(decode_teacher_forced(config, params, enc, inputs, options), outputs);
}

double batch_loss(const ModelConfig& config, const ModelParams& params, const Batch& batch) {
  NoGradGuard no_grad;
  const auto pairs = unbatch(batch);
  if (pairs.empty()) throw InputError("empty batch");
  double total = 0.0;
  for (const auto& p : pairs) total += sentence_loss(config, params, p).item();
  return total / static_cast<double>(pairs.size());
}

double validation_bleu(const ModelConfig& config, const ModelParams& params, const Vocabulary& vocab,
                       std::span<const SentencePair> corpus) {
  if (corpus.empty()) throw InputError("empty validation corpus");
  std::vector<TokenSequence> hyps, refs;
  const DecodeOptions greedy;
  for (const auto& p : corpus) {
    hyps.push_back(bleu_tokens(vocab, decode_sentence(config, params, p.source_ids, SearchMode::kGreedy, greedy).tokens));
    refs.push_back(bleu_tokens(vocab, p.target_ids));
  }
  return corpus_bleu(hyps, refs);
}

void write_train_log(std::span<const TrainLogEntry> log, std::ostream& out) {
  out << "step,train_loss,valid_bleu\n";
  for (const auto& e : log) {
    out << e.step << ',' << std::setprecision(10) << e.train_loss << ',' << e.valid_bleu << '\n';
  }
}

namespace {

struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
};

std::uint64_t sentence_seed(std::uint64_t seed, std::size_t step, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

// Sentence loss and parameter gradients, in parameter-map order.
struct SentenceGrad {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;
};

SentenceGrad sentence_gradient(const ModelConfig& config, const ModelParams& params, const SentencePair& pair,
                               std::uint64_t dropout_seed) {
  std::mt19937_64 rng(dropout_seed);
  ForwardOptions opt;
  opt.training = true;
  opt.rng = &rng;
  GradTape tape;
  SentenceGrad out;
  {
    TapeScope scope(tape);
    const Tensor loss = sentence_loss(config, params, pair, opt);
    out.loss = loss.item();
    tape.backward(loss);
  }
  out.grads.reserve(params.size());
  for (const auto& [name, t] : params) {
    const auto g = tape.gradient(t);
    if (g.empty()) {
      out.grads.emplace_back(t.size(), 0.0);
    } else {
      out.grads.emplace_back(g.begin(), g.end());
    }
  }
  return out;
}

void copy_params(const ModelParams& from, ModelParams& to) {
  to.clear();
  for (const auto& [name, t] : from) to.emplace(name, t.clone());
}

}  // namespace

TrainResult train(const ModelConfig& model_config, std::span<const SentencePair> train_corpus,
                  std::span<const SentencePair> valid_corpus, const Vocabulary& vocab,
                  const TrainConfig& tc, const ModelParams* initial_params, const TrainObserver& observer) {
  model_config.validate();
  tc.validate();
  if (vocab.size() != model_config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " ids, model expects " +
                      std::to_string(model_config.vocab_size));
  }
  if (train_corpus.empty()) throw CorpusError("training corpus is empty");

  TrainResult result;
  std::vector<const SentencePair*> usable;
  for (const auto& p : train_corpus) {
    if (is_non_autoregressive(model_config.variant) && !ctc_feasible(model_config, p)) {
      ++result.skipped_infeasible;
      continue;
    }
    usable.push_back(&p);
  }
  if (usable.empty()) {
    throw ConfigError("all " + std::to_string(train_corpus.size()) +
                      " training pairs have targets longer than k x source length allows; increase k (currently " +
                      std::to_string(model_config.k) + ")");
  }
  if (result.skipped_infeasible > 0) {
    spdlog::warn("skipping {} of {} training pairs whose targets cannot be emitted with k={}",
                 result.skipped_infeasible, train_corpus.size(), model_config.k);
  }
  std::vector<const SentencePair*> valid_usable;
  for (const auto& p : valid_corpus) valid_usable.push_back(&p);

  ModelParams params;
  if (initial_params != nullptr) {
    check_params(model_config, *initial_params);
    copy_params(*initial_params, params);
  } else {
    params = init_params(model_config, tc.seed);
  }
  for (auto& [name, t] : params) t.set_requires_grad(true);

  std::vector<AdamSlot> adam;
  for (const auto& [name, t] : params) adam.push_back({std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)});

  if (!tc.checkpoint_dir.empty()) std::filesystem::create_directories(tc.checkpoint_dir);

  std::mt19937_64 order_rng(tc.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(usable.size());
  std::size_t cursor = order.size();
  const std::size_t batch_size = std::min(tc.batch_size, usable.size());

  double loss_since_log = 0.0;
  std::size_t steps_since_log = 0;
  double last_score = 0.0;
  std::vector<std::vector<double>> grad_sum;
  std::vector<SentenceGrad> per_sentence(batch_size);

  for (std::size_t step = 1; step <= tc.max_steps; ++step) {
    // Epoch-wise shuffled sampling without replacement.
    std::vector<std::size_t> batch;
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    auto run = [&](std::size_t i) {
      per_sentence[i] = sentence_gradient(model_config, params, *usable[batch[i]], sentence_seed(tc.seed, step, i));
    };
    if (tc.threads <= 1 || batch_size == 1) {
      for (std::size_t i = 0; i < batch_size; ++i) run(i);
    } else {
      const std::size_t workers = std::min(tc.threads, batch_size);
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i = w; i < batch_size; i += workers) run(i);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }

    // Reduce in sentence order so the sum does not depend on the thread count.
    double loss = 0.0;
    grad_sum.assign(params.size(), {});
    for (std::size_t i = 0; i < batch_size; ++i) {
      loss += per_sentence[i].loss;
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& dst = grad_sum[p];
        const auto& src = per_sentence[i].grads[p];
        if (dst.empty()) {
          dst = src;
        } else {
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      }
    }
    const double inv_b = 1.0 / static_cast<double>(batch_size);
    loss *= inv_b;
    result.step_losses.push_back(loss);
    loss_since_log += loss;
    ++steps_since_log;

    const double lr = learning_rate_at(tc, step);
    const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
    std::size_t p = 0;
    for (auto& [name, t] : params) {
      auto w = t.mutable_data();
      auto& slot = adam[p];
      const auto& g = grad_sum[p];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j] * inv_b;
        slot.m[j] = tc.beta1 * slot.m[j] + (1.0 - tc.beta1) * gj;
        slot.v[j] = tc.beta2 * slot.v[j] + (1.0 - tc.beta2) * gj * gj;
        w[j] -= lr * (slot.m[j] / bc1) / (std::sqrt(slot.v[j] / bc2) + tc.epsilon);
      }
      if (!std::all_of(w.begin(), w.end(), [](double x) { return std::isfinite(x); })) {
        throw NumericError("parameter '" + name + "' became non-finite at step " + std::to_string(step));
      }
      ++p;
    }

    const bool validate_now = !valid_usable.empty() && (step % tc.validation_interval == 0 || step == tc.max_steps);
    if (!validate_now) continue;

    std::vector<SentencePair> valid;
    valid.reserve(valid_usable.size());
    for (const auto* v : valid_usable) valid.push_back(*v);
    last_score = validation_bleu(model_config, params, vocab, valid);
    TrainLogEntry entry{step, loss_since_log / static_cast<double>(steps_since_log), last_score};
    loss_since_log = 0.0;
    steps_since_log = 0;
    result.log.push_back(entry);
    spdlog::info("step {} train_loss {:.4f} valid_bleu {:.2f}", entry.step, entry.train_loss, entry.valid_bleu);
    if (observer) observer(entry);

    // Top-k retention; on equal scores the earlier checkpoint stays.
    auto worse = [](const RetainedCheckpoint& a, const RetainedCheckpoint& b) {
      if (a.valid_score != b.valid_score) return a.valid_score > b.valid_score;
      return a.step < b.step;
    };
    const bool qualifies = result.retained.size() < tc.keep_top || last_score > result.retained.back().valid_score;
    if (qualifies) {
      RetainedCheckpoint kept;
      kept.step = step;
      kept.valid_score = last_score;
      copy_params(params, kept.params);
      if (!tc.checkpoint_dir.empty()) {
        kept.path = tc.checkpoint_dir / ("top-step" + std::to_string(step) + ".ckpt");
        save_checkpoint(Checkpoint{model_config, kept.params, step, last_score, vocab}, kept.path);
      }
      result.retained.push_back(std::move(kept));
      std::stable_sort(result.retained.begin(), result.retained.end(), worse);
      while (result.retained.size() > tc.keep_top) {
        if (!result.retained.back().path.empty()) std::filesystem::remove(result.retained.back().path);
        result.retained.pop_back();
      }
    }
  }

  result.final_checkpoint.config = model_config;
  copy_params(params, result.final_checkpoint.params);
  result.final_checkpoint.step = tc.max_steps;
  result.final_checkpoint.valid_score = last_score;
  result.final_checkpoint.vocab = vocab;
  if (!tc.checkpoint_dir.empty()) {
    save_checkpoint(result.final_checkpoint, tc.checkpoint_dir / "final.ckpt");
    std::ofstream log(tc.checkpoint_dir / "train_log.csv");
    write_train_log(result.log, log);
  }
  return result;
}

}  // namespace ctcnat
