#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctcnat/symbols.hpp"

namespace ctcnat {

enum class TokenMode { kChar, kWord };

std::string_view token_mode_name(TokenMode mode);
TokenMode parse_token_mode(std::string_view name);

// Splits a line into tokens: UTF-8 code points in char mode, maximal
// non-whitespace runs in word mode.
std::vector<std::string> split_tokens(std::string_view line, TokenMode mode);

// Token <-> id map. Ids 0..3 are reserved (blank, pad, eos, unk) and are
// never produced by encoding text; unknown tokens map to kUnkId.
class Vocabulary {
 public:
  explicit Vocabulary(TokenMode mode = TokenMode::kWord);

  // Keeps tokens seen at least min_freq times, ordered by frequency
  // (descending) then token text (ascending).
  static Vocabulary build(std::span<const std::string> lines, TokenMode mode, std::size_t min_freq);
  // tokens[i] receives id kNumReserved + i.
  static Vocabulary from_tokens(std::vector<std::string> tokens, TokenMode mode);

  // One token per line; line i holds id kNumReserved + i.
  static Vocabulary load(const std::filesystem::path& path, TokenMode mode);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return kNumReserved + tokens_.size(); }
  TokenMode mode() const { return mode_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(std::string_view token) const;
  // Reserved ids render as <blank>, <pad>, </s>, <unk>.
  const std::string& token(int id) const;

  std::vector<int> encode(std::string_view line) const;
  // Drops blank, pad and eos; joins with single spaces in word mode.
  std::string decode(std::span<const int> ids) const;

  bool operator==(const Vocabulary& other) const {
    return mode_ == other.mode_ && tokens_ == other.tokens_;
  }

 private:
  TokenMode mode_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct SentencePair {
  std::vector<int> source_ids;
  std::vector<int> target_ids;
  std::string source_text;
  std::string target_text;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::size_t dropped_empty = 0;
  std::size_t dropped_too_long = 0;
};

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Line i of both files forms pair i. Pairs with an empty side are dropped,
// as are pairs with a side longer than max_len tokens (0 = no limit).
ParallelCorpus load_parallel(const std::filesystem::path& source_path, const std::filesystem::path& target_path,
                             const Vocabulary& vocab, std::size_t max_len = 0);
ParallelCorpus make_parallel(std::span<const std::string> source_lines, std::span<const std::string> target_lines,
                             const Vocabulary& vocab, std::size_t max_len = 0);

enum class SyntheticTask { kCopy, kReverse, kDuplicate };

std::string_view synthetic_task_name(SyntheticTask task);
SyntheticTask parse_synthetic_task(std::string_view name);

// Vocabulary of the words t0 .. t{symbols-1} used by gen_synthetic.
Vocabulary synthetic_vocabulary(std::size_t symbols);

// n pairs with source lengths uniform in [min_len, max_len] over the given
// number of symbols. Deterministic in seed.
std::vector<SentencePair> gen_synthetic(SyntheticTask task, std::size_t symbols, std::size_t n,
                                        std::size_t min_len, std::size_t max_len, std::uint64_t seed);

// Padded id matrices with the true lengths needed to strip padding again.
struct Batch {
  std::size_t size = 0;
  std::size_t source_width = 0;
  std::size_t target_width = 0;
  std::vector<int> source;  // size × source_width, kPadId filled
  std::vector<int> target;  // size × target_width, kPadId filled
  std::vector<std::size_t> source_lengths;
  std::vector<std::size_t> target_lengths;

  std::span<const int> source_row(std::size_t i) const;
  std::span<const int> target_row(std::size_t i) const;
};

Batch make_batch(std::span<const SentencePair> pairs);
std::vector<SentencePair> unbatch(const Batch& batch);

}  // namespace ctcnat
