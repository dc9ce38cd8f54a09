#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ctcnat/ctc.hpp"
#include "ctcnat/transformer.hpp"

namespace ctcnat {

// One CTC beam entry: a collapsed prefix and the log mass of the frame paths
// that produce it, split by whether the last frame was blank.
struct Hypothesis {
  LabelSequence prefix;
  double logp_blank = 0.0;
  double logp_nonblank = 0.0;
  // log_sum_exp(logp_blank, logp_nonblank).
  double score = 0.0;
  // score + external_scorer_weight × scorer(prefix); equals score without a scorer.
  double ranking_score = 0.0;
};

// Beam width 4 mirrors the autoregressive b=4 setting; no published value
// exists for the CTC beam.
struct DecodeOptions {
  std::size_t beam_width = 4;
  // Tokens tried per frame, best first; 0 tries every column.
  std::size_t max_candidates = 0;
  // Weight of the external prefix scorer; 0 disables it.
  double external_scorer_weight = 0.0;

  void validate() const;
};

// Pure prefix → log-score function, e.g. an external language model.
using PrefixScorer = std::function<double(std::span<const int>)>;

// Per-frame argmax (lowest id wins ties).
std::vector<int> best_path_frames(const Tensor& log_probs);

// collapse(best_path_frames(log_probs)). Every frame is independent, so
// this is the parallel decoding mode.
LabelSequence greedy_ctc_decode(const Tensor& log_probs, int blank = kBlankId);

// Left-to-right prefix beam search with recombination of identical
// prefixes. Returns the final beam ranked best first; ties go to the
// lexicographically smaller prefix.
std::vector<Hypothesis> ctc_beam_search(const Tensor& log_probs, const DecodeOptions& options,
                                        const PrefixScorer& scorer = {}, int blank = kBlankId);

// Autoregressive baseline decoders. Output excludes the end-of-sequence token.
// With stop_at_eos = false the decoder never picks eos and always emits
// exactly max_steps tokens (fixed-length timing runs).
LabelSequence ar_greedy_decode(const ModelConfig& config, const ModelParams& params,
                               std::span<const int> source_ids, std::size_t max_steps, bool stop_at_eos = true);

// Beam search over token sequences. A hypothesis is complete when it emits
// eos or reaches max_steps; completed hypotheses compete on
// log-probability divided by the number of emitted tokens (eos included).
LabelSequence ar_beam_decode(const ModelConfig& config, const ModelParams& params,
                             std::span<const int> source_ids, const DecodeOptions& options,
                             std::size_t max_steps);

// Default AR step budget for a source sentence.
std::size_t default_max_steps(const ModelConfig& config, std::size_t source_length);

enum class SearchMode { kGreedy, kBeam };

std::string_view search_mode_name(SearchMode mode);
SearchMode parse_search_mode(std::string_view name);

struct SentenceDecode {
  LabelSequence tokens;
  // Blank frames in the greedy frame labelling (non-autoregressive only).
  std::size_t null_count = 0;
};

// Dispatches on the model variant: CTC greedy/beam for the
// non-autoregressive variants, AR greedy/beam for the baseline.
SentenceDecode decode_sentence(const ModelConfig& config, const ModelParams& params,
                               std::span<const int> source_ids, SearchMode mode, const DecodeOptions& options);

// decode_sentence over a corpus with up to `threads` sentences in flight.
// Results are in input order and independent of the thread count.
std::vector<SentenceDecode> decode_batch(const ModelConfig& config, const ModelParams& params,
                                         std::span<const std::vector<int>> sources, SearchMode mode,
                                         const DecodeOptions& options, std::size_t threads = 1);

}  // namespace ctcnat
