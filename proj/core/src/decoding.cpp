#include "ctcnat/decoding.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <thread>

#include "ctcnat/errors.hpp"
#include "ctcnat/ops.hpp"
#include "ctcnat/symbols.hpp"

namespace ctcnat {

void DecodeOptions::validate() const {
  if (beam_width == 0) throw OptionError("beam_width must be at least 1");
  if (!(external_scorer_weight >= 0.0)) throw OptionError("external_scorer_weight must be non-negative");
}

std::vector<int> best_path_frames(const Tensor& log_probs) {
  const std::size_t T = log_probs.rows(), C = log_probs.cols();
  auto lp = log_probs.data();
  std::vector<int> frames(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (lp[t * C + c] > lp[t * C + best]) best = c;
    }
    frames[t] = static_cast<int>(best);
  }
  return frames;
}

LabelSequence greedy_ctc_decode(const Tensor& log_probs, int blank) {
  return collapse(best_path_frames(log_probs), blank);
}

std::vector<Hypothesis> ctc_beam_search(const Tensor& log_probs, const DecodeOptions& options,
                                        const PrefixScorer& scorer, int blank) {
  options.validate();
  if (log_probs.rank() != 2) throw DimensionError("ctc_beam_search expects a T×C matrix");
  const std::size_t T = log_probs.rows(), C = log_probs.cols();
  auto lp = log_probs.data();
  const bool use_scorer = static_cast<bool>(scorer) && options.external_scorer_weight != 0.0;

  std::vector<Hypothesis> beam(1);
  beam[0].logp_blank = 0.0;
  beam[0].logp_nonblank = kLogZero;

  std::vector<std::size_t> columns(C);
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = lp.data() + t * C;
    std::iota(columns.begin(), columns.end(), std::size_t{0});
    std::size_t tried = C;
    if (options.max_candidates > 0 && options.max_candidates < C) {
      tried = options.max_candidates;
      std::partial_sort(columns.begin(), columns.begin() + static_cast<std::ptrdiff_t>(tried), columns.end(),
                        [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    }

    // Ordered map: merging order, and therefore rounding, is deterministic.
    std::map<LabelSequence, std::pair<double, double>> next;
    auto slot = [&next](const LabelSequence& prefix) -> std::pair<double, double>& {
      return next.try_emplace(prefix, kLogZero, kLogZero).first->second;
    };
    for (const Hypothesis& hyp : beam) {
      for (std::size_t i = 0; i < tried; ++i) {
        const auto c = static_cast<int>(columns[i]);
        const double p = row[columns[i]];
        if (c == blank) {
          auto& s = slot(hyp.prefix);
          s.first = log_add(s.first, hyp.score + p);
          continue;
        }
        LabelSequence extended = hyp.prefix;
        extended.push_back(c);
        if (!hyp.prefix.empty() && hyp.prefix.back() == c) {
          // Repeating the last symbol only extends the prefix after a blank.
          auto& ext = slot(extended);
          ext.second = log_add(ext.second, hyp.logp_blank + p);
          auto& same = slot(hyp.prefix);
          same.second = log_add(same.second, hyp.logp_nonblank + p);
        } else {
          auto& ext = slot(extended);
          ext.second = log_add(ext.second, hyp.score + p);
        }
      }
    }

    beam.clear();
    beam.reserve(next.size());
    for (auto& [prefix, masses] : next) {
      Hypothesis h;
      h.prefix = prefix;
      h.logp_blank = masses.first;
      h.logp_nonblank = masses.second;
      h.score = log_add(h.logp_blank, h.logp_nonblank);
      if (h.score == kLogZero) continue;
      h.ranking_score = h.score;
      if (use_scorer) h.ranking_score += options.external_scorer_weight * scorer(h.prefix);
      beam.push_back(std::move(h));
    }
    // std::map already iterates prefixes in lexicographic order, so a stable
    // sort on the score alone resolves ties toward the smaller prefix.
    std::stable_sort(beam.begin(), beam.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.ranking_score > b.ranking_score; });
    if (beam.size() > options.beam_width) beam.resize(options.beam_width);
    if (beam.empty()) break;
  }
  return beam;
}

std::size_t default_max_steps(const ModelConfig& config, std::size_t source_length) {
  return std::min<std::size_t>(2 * source_length + 10, 2 * config.max_len + 10);
}

namespace {

int argmax_id(const std::vector<double>& row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace

LabelSequence ar_greedy_decode(const ModelConfig& config, const ModelParams& params,
                               std::span<const int> source_ids, std::size_t max_steps, bool stop_at_eos) {
  NoGradGuard no_grad;
  const EncoderStates enc = encode(config, params, source_ids);
  IncrementalDecoder decoder(config, params, enc);
  LabelSequence out;
  std::vector<double> next = decoder.step(kEosId);
  while (out.size() < max_steps) {
    if (!stop_at_eos) next[kEosId] = kLogZero;
    const int token = argmax_id(next);
    if (token == kEosId) break;
    out.push_back(token);
    if (out.size() == max_steps) break;
    next = decoder.step(token);
  }
  return out;
}

LabelSequence ar_beam_decode(const ModelConfig& config, const ModelParams& params,
                             std::span<const int> source_ids, const DecodeOptions& options,
                             std::size_t max_steps) {
  options.validate();
  NoGradGuard no_grad;
  if (max_steps == 0) return {};
  const EncoderStates enc = encode(config, params, source_ids);

  struct Live {
    LabelSequence tokens;
    double logp = 0.0;
    IncrementalDecoder decoder;
    std::vector<double> next;
  };
  struct Done {
    LabelSequence tokens;
    double normalized = 0.0;
  };
  struct Candidate {
    std::size_t parent;
    int token;
    double logp;
    LabelSequence sequence;  // including token
  };

  std::vector<Live> live;
  {
    IncrementalDecoder decoder(config, params, enc);
    std::vector<double> next = decoder.step(kEosId);
    live.push_back(Live{{}, 0.0, std::move(decoder), std::move(next)});
  }
  std::vector<Done> done;

  for (std::size_t step = 0; step < max_steps && !live.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      for (std::size_t v = 0; v < live[h].next.size(); ++v) {
        LabelSequence seq = live[h].tokens;
        seq.push_back(static_cast<int>(v));
        candidates.push_back(Candidate{h, static_cast<int>(v), live[h].logp + live[h].next[v], std::move(seq)});
      }
    }
    const std::size_t keep = std::min(options.beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        return a.sequence < b.sequence;
                      });
    candidates.resize(keep);

    std::vector<Live> survivors;
    for (auto& cand : candidates) {
      const double length = static_cast<double>(cand.sequence.size());
      if (cand.token == kEosId) {
        cand.sequence.pop_back();
        done.push_back(Done{std::move(cand.sequence), cand.logp / length});
      } else if (cand.sequence.size() == max_steps) {
        done.push_back(Done{std::move(cand.sequence), cand.logp / length});
      } else {
        IncrementalDecoder decoder = live[cand.parent].decoder;
        std::vector<double> next = decoder.step(cand.token);
        survivors.push_back(Live{std::move(cand.sequence), cand.logp, std::move(decoder), std::move(next)});
      }
    }
    live = std::move(survivors);
  }

  const auto best = std::min_element(done.begin(), done.end(), [](const Done& a, const Done& b) {
    if (a.normalized != b.normalized) return a.normalized > b.normalized;
    return a.tokens < b.tokens;
  });
  return best == done.end() ? LabelSequence{} : best->tokens;
}

std::string_view search_mode_name(SearchMode mode) { return mode == SearchMode::kGreedy ? "greedy" : "beam"; }

SearchMode parse_search_mode(std::string_view name) {
  if (name == "greedy") return SearchMode::kGreedy;
  if (name == "beam") return SearchMode::kBeam;
  throw OptionError("unknown search mode '" + std::string(name) + "' (expected greedy or beam)");
}

SentenceDecode decode_sentence(const ModelConfig& config, const ModelParams& params,
                               std::span<const int> source_ids, SearchMode mode, const DecodeOptions& options) {
  SentenceDecode out;
  if (config.variant == Variant::kAutoregressive) {
    const std::size_t steps = default_max_steps(config, source_ids.size());
    out.tokens = mode == SearchMode::kGreedy ? ar_greedy_decode(config, params, source_ids, steps)
                                             : ar_beam_decode(config, params, source_ids, options, steps);
    return out;
  }
  NoGradGuard no_grad;
  const Tensor log_probs = nar_log_probs(config, params, source_ids);
  const std::vector<int> frames = best_path_frames(log_probs);
  out.null_count = static_cast<std::size_t>(std::count(frames.begin(), frames.end(), kBlankId));
  if (mode == SearchMode::kGreedy) {
    out.tokens = collapse(frames);
  } else {
    out.tokens = ctc_beam_search(log_probs, options).front().prefix;
  }
  return out;
}

std::vector<SentenceDecode> decode_batch(const ModelConfig& config, const ModelParams& params,
                                         std::span<const std::vector<int>> sources, SearchMode mode,
                                         const DecodeOptions& options, std::size_t threads) {
  options.validate();
  std::vector<SentenceDecode> out(sources.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, sources.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < sources.size(); ++i) out[i] = decode_sentence(config, params, sources[i], mode, options);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < sources.size(); i += workers) {
          out[i] = decode_sentence(config, params, sources[i], mode, options);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace ctcnat
