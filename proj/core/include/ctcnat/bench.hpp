#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "ctcnat/data.hpp"
#include "ctcnat/decoding.hpp"
#include "ctcnat/transformer.hpp"

namespace ctcnat {

enum class BenchMode { kArGreedy, kArBeam, kNarGreedy, kNarBeam };

std::string_view bench_mode_name(BenchMode mode);
BenchMode parse_bench_mode(std::string_view name);
bool is_ar_mode(BenchMode mode);

struct TimingRecord {
  std::size_t sentence_id = 0;
  std::size_t source_length = 0;
  std::size_t output_length = 0;
  // Target length of the corpus pair; used for bucketing.
  std::size_t reference_length = 0;
  BenchMode mode = BenchMode::kNarGreedy;
  // Median wall time over the repetitions, steady clock.
  double ms = 0.0;
  std::size_t repetitions = 0;
};

struct BenchOptions {
  std::size_t repetitions = 5;
  DecodeOptions decode;
  // AR modes decode exactly reference_length tokens (eos suppressed), so an
  // untrained baseline can be timed at realistic output lengths.
  bool force_ar_length = false;
};

struct BenchModel {
  const ModelConfig* config = nullptr;
  const ModelParams* params = nullptr;
};

// Times every sentence in every mode after one untimed warm-up decode per
// sentence and mode. AR modes need an autoregressive model, NAR modes a
// non-autoregressive one; when both are given they must agree on
// vocabulary and width. Throws ConfigError otherwise.
std::vector<TimingRecord> bench_decode(std::optional<BenchModel> ar_model, std::optional<BenchModel> nar_model,
                                       std::span<const SentencePair> corpus, std::span<const BenchMode> modes,
                                       const BenchOptions& options);

struct LengthBucket {
  std::size_t min_length = 0;
  std::size_t max_length = 0;
};

// {1-8, 9-16, 17-32}.
std::vector<LengthBucket> default_length_buckets();

struct BucketSummary {
  LengthBucket bucket;
  std::size_t count = 0;  // sentences per mode in the bucket
  std::optional<double> ar_greedy_ms;
  std::optional<double> nar_greedy_ms;
  // AR-greedy / NAR-greedy mean time.
  std::optional<double> ratio;
};

struct BenchSummary {
  std::vector<std::pair<BenchMode, double>> mean_ms;  // per mode present
  std::optional<double> ar_nar_greedy_ratio;
  std::optional<double> ar_nar_beam_ratio;
  std::vector<BucketSummary> buckets;
};

BenchSummary summarize(std::span<const TimingRecord> records,
                       std::span<const LengthBucket> buckets = {});

// "sentence_id,src_len,out_len,mode,ms".
void write_timing_csv(std::span<const TimingRecord> records, std::ostream& out);
void write_summary(const BenchSummary& summary, std::ostream& out);

}  // namespace ctcnat
