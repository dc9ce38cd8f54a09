#include "ctcnat/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <map>
#include <string>

#include "ctcnat/errors.hpp"
#include "ctcnat/ops.hpp"

namespace ctcnat {

std::string_view bench_mode_name(BenchMode mode) {
  switch (mode) {
    case BenchMode::kArGreedy: return "AR-greedy";
    case BenchMode::kArBeam: return "AR-beam";
    case BenchMode::kNarGreedy: return "NAR-greedy";
    case BenchMode::kNarBeam: return "NAR-beam";
  }
  return "?";
}

BenchMode parse_bench_mode(std::string_view name) {
  for (BenchMode m : {BenchMode::kArGreedy, BenchMode::kArBeam, BenchMode::kNarGreedy, BenchMode::kNarBeam}) {
    if (name == bench_mode_name(m)) return m;
  }
  throw OptionError("unknown bench mode '" + std::string(name) +
                    "' (expected AR-greedy, AR-beam, NAR-greedy or NAR-beam)");
}

bool is_ar_mode(BenchMode mode) { return mode == BenchMode::kArGreedy || mode == BenchMode::kArBeam; }

namespace {

std::size_t decode_once(const BenchModel& model, const SentencePair& pair, BenchMode mode, const BenchOptions& opt) {
  const ModelConfig& c = *model.config;
  const ModelParams& p = *model.params;
  switch (mode) {
    case BenchMode::kArGreedy:
    case BenchMode::kArBeam: {
      const std::size_t steps =
          opt.force_ar_length ? pair.target_ids.size() : default_max_steps(c, pair.source_ids.size());
      if (mode == BenchMode::kArGreedy) {
        return ar_greedy_decode(c, p, pair.source_ids, steps, !opt.force_ar_length).size();
      }
      // Beam hypotheses may still end on eos before the forced length.
      return ar_beam_decode(c, p, pair.source_ids, opt.decode, steps).size();
    }
    case BenchMode::kNarGreedy: {
      NoGradGuard no_grad;
      return greedy_ctc_decode(nar_log_probs(c, p, pair.source_ids)).size();
    }
    case BenchMode::kNarBeam: {
      NoGradGuard no_grad;
      return ctc_beam_search(nar_log_probs(c, p, pair.source_ids), opt.decode).front().prefix.size();
    }
  }
  return 0;
}

}  // namespace

std::vector<TimingRecord> bench_decode(std::optional<BenchModel> ar_model, std::optional<BenchModel> nar_model,
                                       std::span<const SentencePair> corpus, std::span<const BenchMode> modes,
                                       const BenchOptions& options) {
  if (options.repetitions < 3) throw OptionError("bench needs at least 3 repetitions");
  options.decode.validate();
  auto check_model = [](const std::optional<BenchModel>& m, bool ar) {
    if (!m || m->config == nullptr || m->params == nullptr) {
      throw ConfigError(std::string(ar ? "AR" : "NAR") + " mode requested without a model");
    }
    if ((m->config->variant == Variant::kAutoregressive) != ar) {
      throw ConfigError(std::string(ar ? "AR" : "NAR") + " modes need a" +
                        (ar ? "n autoregressive-baseline" : " non-autoregressive") + " model, got " +
                        std::string(variant_name(m->config->variant)));
    }
    check_params(*m->config, *m->params);
  };
  for (BenchMode mode : modes) check_model(is_ar_mode(mode) ? ar_model : nar_model, is_ar_mode(mode));
  if (ar_model && nar_model && ar_model->config && nar_model->config) {
    const ModelConfig& a = *ar_model->config;
    const ModelConfig& n = *nar_model->config;
    if (a.vocab_size != n.vocab_size) throw ConfigError("AR and NAR models use different vocabularies");
    if (a.d_model != n.d_model || a.ff_dim != n.ff_dim || a.heads != n.heads) {
      throw ConfigError("AR and NAR models differ in width; timings would not be comparable");
    }
  }

  using Clock = std::chrono::steady_clock;
  std::vector<TimingRecord> records;
  for (BenchMode mode : modes) {
    const BenchModel& model = is_ar_mode(mode) ? *ar_model : *nar_model;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const SentencePair& pair = corpus[i];
      TimingRecord rec;
      rec.sentence_id = i;
      rec.source_length = pair.source_ids.size();
      rec.reference_length = pair.target_ids.size();
      rec.mode = mode;
      rec.repetitions = options.repetitions;
      rec.output_length = decode_once(model, pair, mode, options);  // warm-up
      std::vector<double> times;
      times.reserve(options.repetitions);
      for (std::size_t r = 0; r < options.repetitions; ++r) {
        const auto start = Clock::now();
        decode_once(model, pair, mode, options);
        const auto stop = Clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
      }
      std::sort(times.begin(), times.end());
      const std::size_t n = times.size();
      rec.ms = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
      // A clock tick can round a very fast decode to zero.
      rec.ms = std::max(rec.ms, 1e-6);
      records.push_back(rec);
    }
  }
  return records;
}

std::vector<LengthBucket> default_length_buckets() { return {{1, 8}, {9, 16}, {17, 32}}; }

BenchSummary summarize(std::span<const TimingRecord> records, std::span<const LengthBucket> buckets) {
  const std::vector<LengthBucket> defaults = default_length_buckets();
  if (buckets.empty()) buckets = defaults;

  BenchSummary s;
  std::map<BenchMode, std::pair<double, std::size_t>> totals;
  for (const auto& r : records) {
    auto& t = totals[r.mode];
    t.first += r.ms;
    ++t.second;
  }
  for (const auto& [mode, t] : totals) s.mean_ms.emplace_back(mode, t.first / static_cast<double>(t.second));
  auto mean_of = [&](BenchMode m) -> std::optional<double> {
    auto it = totals.find(m);
    if (it == totals.end()) return std::nullopt;
    return it->second.first / static_cast<double>(it->second.second);
  };
  auto ratio = [](std::optional<double> a, std::optional<double> b) -> std::optional<double> {
    if (!a || !b || *b <= 0.0) return std::nullopt;
    return *a / *b;
  };
  s.ar_nar_greedy_ratio = ratio(mean_of(BenchMode::kArGreedy), mean_of(BenchMode::kNarGreedy));
  s.ar_nar_beam_ratio = ratio(mean_of(BenchMode::kArBeam), mean_of(BenchMode::kNarBeam));

  for (const auto& b : buckets) {
    BucketSummary bs;
    bs.bucket = b;
    double ar = 0.0, nar = 0.0;
    std::size_t n_ar = 0, n_nar = 0;
    for (const auto& r : records) {
      if (r.reference_length < b.min_length || r.reference_length > b.max_length) continue;
      if (r.mode == BenchMode::kArGreedy) {
        ar += r.ms;
        ++n_ar;
      } else if (r.mode == BenchMode::kNarGreedy) {
        nar += r.ms;
        ++n_nar;
      }
    }
    bs.count = std::max(n_ar, n_nar);
    if (n_ar) bs.ar_greedy_ms = ar / static_cast<double>(n_ar);
    if (n_nar) bs.nar_greedy_ms = nar / static_cast<double>(n_nar);
    bs.ratio = ratio(bs.ar_greedy_ms, bs.nar_greedy_ms);
    s.buckets.push_back(bs);
  }
  return s;
}

void write_timing_csv(std::span<const TimingRecord> records, std::ostream& out) {
  out << "sentence_id,src_len,out_len,mode,ms\n";
  for (const auto& r : records) {
    out << r.sentence_id << ',' << r.source_length << ',' << r.output_length << ',' << bench_mode_name(r.mode)
        << ',' << std::setprecision(6) << std::fixed << r.ms << '\n';
    out.unsetf(std::ios::floatfield);
  }
}

void write_summary(const BenchSummary& s, std::ostream& out) {
  auto opt = [&out](const std::optional<double>& v) {
    if (v) {
      out << std::setprecision(3) << std::fixed << *v;
      out.unsetf(std::ios::floatfield);
    } else {
      out << "n/a";
    }
  };
  out << "mean ms per sentence\n";
  for (const auto& [mode, ms] : s.mean_ms) {
    out << "  " << std::left << std::setw(11) << bench_mode_name(mode) << std::right << ' ';
    opt(ms);
    out << '\n';
  }
  out << "AR/NAR ratio greedy: ";
  opt(s.ar_nar_greedy_ratio);
  out << "\nAR/NAR ratio beam: ";
  opt(s.ar_nar_beam_ratio);
  out << "\nby reference length (greedy)\n";
  for (const auto& b : s.buckets) {
    out << "  " << b.bucket.min_length << '-' << b.bucket.max_length << ": n=" << b.count << " AR=";
    opt(b.ar_greedy_ms);
    out << " NAR=";
    opt(b.nar_greedy_ms);
    out << " ratio=";
    opt(b.ratio);
    out << '\n';
  }
}

}  // namespace ctcnat
