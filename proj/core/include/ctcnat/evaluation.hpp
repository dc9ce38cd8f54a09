#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctcnat/data.hpp"
#include "ctcnat/decoding.hpp"
#include "ctcnat/transformer.hpp"

namespace ctcnat {

using TokenSequence = std::vector<std::string>;

// Corpus BLEU-4: clipped n-gram counts summed over the corpus, geometric
// mean of the four precisions, brevity penalty exp(1 - r/c) when c < r.
// Returns a score in [0, 100].
double corpus_bleu(std::span<const TokenSequence> hypotheses, std::span<const TokenSequence> references);

// Clipped matches and total hypothesis n-grams of one order (1..4).
std::pair<std::size_t, std::size_t> clipped_ngram_counts(const TokenSequence& hypothesis,
                                                         const TokenSequence& reference, std::size_t order);

// Sentence BLEU-4 with add-one smoothing of the 2..4-gram precisions
// (unigram precision unsmoothed), same brevity penalty.
double sentence_bleu(const TokenSequence& hypothesis, const TokenSequence& reference);

// Sample Pearson correlation. Throws InputError for fewer than two points or
// zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct SentenceRecord {
  std::size_t sentence_id = 0;
  std::size_t source_length = 0;
  std::size_t output_length = 0;
  std::size_t null_count = 0;
  double sentence_bleu = 0.0;
};

struct EvalReport {
  double corpus_bleu = 0.0;
  std::vector<SentenceRecord> sentences;
  // Empty when the correlation is undefined (constant series) or, for the
  // null-count correlation, not applicable to autoregressive models.
  std::optional<double> r_bleu_vs_source_length;
  std::optional<double> r_bleu_vs_null_count;
  std::vector<std::string> outputs;
};

// Whitespace tokens of the detokenized ids.
TokenSequence bleu_tokens(const Vocabulary& vocab, std::span<const int> ids);

EvalReport analyze(const ModelConfig& config, const ModelParams& params, const Vocabulary& vocab,
                   std::span<const SentencePair> corpus, SearchMode mode, const DecodeOptions& options);

// CSV rows "sentence_id,src_len,out_len,null_count,sent_bleu" followed by
// a "# key=value" summary block.
void write_report_csv(const EvalReport& report, std::ostream& out);

}  // namespace ctcnat
