#include "ctcnat/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>

#include "ctcnat/errors.hpp"

namespace ctcnat {

namespace {

constexpr std::size_t kMaxOrder = 4;

struct NgramStats {
  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  NgramStats& operator+=(const NgramStats& o) {
    for (std::size_t n = 0; n < kMaxOrder; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hyp_length += o.hyp_length;
    ref_length += o.ref_length;
    return *this;
  }
};

std::map<TokenSequence, std::size_t> count_ngrams(const TokenSequence& tokens, std::size_t order) {
  std::map<TokenSequence, std::size_t> counts;
  if (tokens.size() < order) return counts;
  for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
    ++counts[TokenSequence(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                           tokens.begin() + static_cast<std::ptrdiff_t>(i + order))];
  }
  return counts;
}

NgramStats ngram_stats(const TokenSequence& hyp, const TokenSequence& ref) {
  NgramStats s;
  s.hyp_length = hyp.size();
  s.ref_length = ref.size();
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const auto hyp_counts = count_ngrams(hyp, n);
    const auto ref_counts = count_ngrams(ref, n);
    for (const auto& [gram, count] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) s.matches[n - 1] += std::min(count, it->second);
    }
    s.totals[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  return s;
}

double brevity_penalty(std::size_t hyp_length, std::size_t ref_length) {
  if (hyp_length >= ref_length) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_length) / static_cast<double>(hyp_length));
}

}  // namespace

std::pair<std::size_t, std::size_t> clipped_ngram_counts(const TokenSequence& hypothesis,
                                                         const TokenSequence& reference, std::size_t order) {
  if (order < 1 || order > kMaxOrder) throw InputError("n-gram order must lie in 1..4");
  const NgramStats s = ngram_stats(hypothesis, reference);
  return {s.matches[order - 1], s.totals[order - 1]};
}

double corpus_bleu(std::span<const TokenSequence> hypotheses, std::span<const TokenSequence> references) {
  if (hypotheses.size() != references.size()) {
    throw InputError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                     std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw InputError("corpus_bleu: empty corpus");
  NgramStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += ngram_stats(hypotheses[i], references[i]);
  if (total.hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    if (total.matches[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(total.matches[n]) / static_cast<double>(total.totals[n]));
  }
  return 100.0 * brevity_penalty(total.hyp_length, total.ref_length) * std::exp(log_sum / kMaxOrder);
}

double sentence_bleu(const TokenSequence& hypothesis, const TokenSequence& reference) {
  if (reference.empty()) throw InputError("sentence_bleu: empty reference");
  const NgramStats s = ngram_stats(hypothesis, reference);
  if (s.hyp_length == 0 || s.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(s.matches[0]) / static_cast<double>(s.totals[0]));
  for (std::size_t n = 1; n < kMaxOrder; ++n) {
    log_sum += std::log((static_cast<double>(s.matches[n]) + 1.0) / (static_cast<double>(s.totals[n]) + 1.0));
  }
  return 100.0 * brevity_penalty(s.hyp_length, s.ref_length) * std::exp(log_sum / kMaxOrder);
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InputError("pearson: series lengths differ");
  if (xs.size() < 2) throw InputError("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw InputError("pearson: correlation undefined for a constant series");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

TokenSequence bleu_tokens(const Vocabulary& vocab, std::span<const int> ids) {
  return split_tokens(vocab.decode(ids), TokenMode::kWord);
}

EvalReport analyze(const ModelConfig& config, const ModelParams& params, const Vocabulary& vocab,
                   std::span<const SentencePair> corpus, SearchMode mode, const DecodeOptions& options) {
  EvalReport report;
  std::vector<TokenSequence> hyps, refs;
  std::vector<double> bleus, lengths, nulls;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const SentencePair& pair = corpus[i];
    const SentenceDecode decoded = decode_sentence(config, params, pair.source_ids, mode, options);
    TokenSequence hyp = bleu_tokens(vocab, decoded.tokens);
    TokenSequence ref = pair.target_text.empty() ? bleu_tokens(vocab, pair.target_ids)
                                                 : split_tokens(pair.target_text, TokenMode::kWord);
    SentenceRecord rec;
    rec.sentence_id = i;
    rec.source_length = pair.source_ids.size();
    rec.output_length = decoded.tokens.size();
    rec.null_count = decoded.null_count;
    rec.sentence_bleu = sentence_bleu(hyp, ref);
    report.sentences.push_back(rec);
    report.outputs.push_back(vocab.decode(decoded.tokens));
    bleus.push_back(rec.sentence_bleu);
    lengths.push_back(static_cast<double>(rec.source_length));
    nulls.push_back(static_cast<double>(rec.null_count));
    hyps.push_back(std::move(hyp));
    refs.push_back(std::move(ref));
  }
  if (corpus.empty()) return report;
  report.corpus_bleu = corpus_bleu(hyps, refs);
  auto safe_pearson = [](std::span<const double> a, std::span<const double> b) -> std::optional<double> {
    try {
      return pearson(a, b);
    } catch (const InputError&) {
      return std::nullopt;
    }
  };
  report.r_bleu_vs_source_length = safe_pearson(bleus, lengths);
  if (is_non_autoregressive(config.variant)) report.r_bleu_vs_null_count = safe_pearson(bleus, nulls);
  return report;
}

void write_report_csv(const EvalReport& report, std::ostream& out) {
  auto old_precision = out.precision();
  out << "sentence_id,src_len,out_len,null_count,sent_bleu\n";
  out << std::setprecision(6) << std::fixed;
  for (const auto& r : report.sentences) {
    out << r.sentence_id << ',' << r.source_length << ',' << r.output_length << ',' << r.null_count << ','
        << r.sentence_bleu << '\n';
  }
  auto opt = [&out](const char* key, const std::optional<double>& v) {
    out << "# " << key << '=';
    if (v) {
      out << *v;
    } else {
      out << "n/a";
    }
    out << '\n';
  };
  out << "# corpus_bleu=" << report.corpus_bleu << '\n';
  opt("r_bleu_src_len", report.r_bleu_vs_source_length);
  opt("r_bleu_null_count", report.r_bleu_vs_null_count);
  out.unsetf(std::ios::floatfield);
  out.precision(old_precision);
}

}  // namespace ctcnat
