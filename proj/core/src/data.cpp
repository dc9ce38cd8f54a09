#include "ctcnat/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>

#include "ctcnat/errors.hpp"

namespace ctcnat {

namespace {

const std::string kReservedNames[kNumReserved] = {"<blank>", "<pad>", "</s>", "<unk>"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f'; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: keep it as its own token
}

}  // namespace

std::string_view token_mode_name(TokenMode mode) { return mode == TokenMode::kChar ? "char" : "word"; }

TokenMode parse_token_mode(std::string_view name) {
  if (name == "char") return TokenMode::kChar;
  if (name == "word") return TokenMode::kWord;
  throw ConfigError("unknown vocabulary mode '" + std::string(name) + "' (expected char or word)");
}

std::vector<std::string> split_tokens(std::string_view line, TokenMode mode) {
  std::vector<std::string> out;
  if (mode == TokenMode::kChar) {
    for (std::size_t i = 0; i < line.size();) {
      if (line[i] == '\r' || line[i] == '\n') {
        ++i;
        continue;
      }
      const std::size_t n = std::min(utf8_length(static_cast<unsigned char>(line[i])), line.size() - i);
      out.emplace_back(line.substr(i, n));
      i += n;
    }
    return out;
  }
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

Vocabulary::Vocabulary(TokenMode mode) : mode_(mode) {}

Vocabulary Vocabulary::build(std::span<const std::string> lines, TokenMode mode, std::size_t min_freq) {
  if (min_freq == 0) throw InputError("min_freq must be at least 1");
  if (lines.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines) {
    for (auto& tok : split_tokens(line, mode)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return from_tokens(std::move(tokens), mode);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, TokenMode mode) {
  Vocabulary v(mode);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw VocabularyError("empty token at position " + std::to_string(i));
    if (!v.index_.emplace(tokens[i], static_cast<int>(kNumReserved + i)).second) {
      throw VocabularyError("duplicate token '" + tokens[i] + "'");
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path, TokenMode mode) {
  return from_tokens(read_lines(path), mode);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary file " + path.string());
  for (const auto& tok : tokens_) out << tok << '\n';
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  if (id < kNumReserved) return kReservedNames[id];
  return tokens_[static_cast<std::size_t>(id - kNumReserved)];
}

std::vector<int> Vocabulary::encode(std::string_view line) const {
  std::vector<int> ids;
  for (const auto& tok : split_tokens(line, mode_)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  bool first = true;
  for (int id : ids) {
    if (id == kBlankId || id == kPadId || id == kEosId) continue;
    if (mode_ == TokenMode::kWord && !first) out += ' ';
    out += token(id);
    first = false;
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

ParallelCorpus make_parallel(std::span<const std::string> source_lines, std::span<const std::string> target_lines,
                             const Vocabulary& vocab, std::size_t max_len) {
  if (source_lines.size() != target_lines.size()) {
    throw CorpusError("parallel corpus line counts differ: " + std::to_string(source_lines.size()) +
                      " source vs " + std::to_string(target_lines.size()) + " target");
  }
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < source_lines.size(); ++i) {
    SentencePair pair{vocab.encode(source_lines[i]), vocab.encode(target_lines[i]), source_lines[i],
                      target_lines[i]};
    if (pair.source_ids.empty() || pair.target_ids.empty()) {
      ++corpus.dropped_empty;
      continue;
    }
    if (max_len > 0 && (pair.source_ids.size() > max_len || pair.target_ids.size() > max_len)) {
      ++corpus.dropped_too_long;
      continue;
    }
    corpus.pairs.push_back(std::move(pair));
  }
  if (corpus.dropped_empty > 0) spdlog::info("dropped {} pairs that are empty after tokenization", corpus.dropped_empty);
  if (corpus.dropped_too_long > 0) {
    spdlog::info("dropped {} pairs longer than max_len={}", corpus.dropped_too_long, max_len);
  }
  return corpus;
}

ParallelCorpus load_parallel(const std::filesystem::path& source_path, const std::filesystem::path& target_path,
                             const Vocabulary& vocab, std::size_t max_len) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  return make_parallel(src, tgt, vocab, max_len);
}

std::string_view synthetic_task_name(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::kCopy:
      return "copy";
    case SyntheticTask::kReverse:
      return "reverse";
    case SyntheticTask::kDuplicate:
      return "duplicate";
  }
  return "unknown";
}

SyntheticTask parse_synthetic_task(std::string_view name) {
  for (auto t : {SyntheticTask::kCopy, SyntheticTask::kReverse, SyntheticTask::kDuplicate}) {
    if (synthetic_task_name(t) == name) return t;
  }
  throw ConfigError("unknown synthetic task '" + std::string(name) + "' (expected copy, reverse or duplicate)");
}

Vocabulary synthetic_vocabulary(std::size_t symbols) {
  std::vector<std::string> tokens;
  tokens.reserve(symbols);
  for (std::size_t i = 0; i < symbols; ++i) tokens.push_back("t" + std::to_string(i));
  return Vocabulary::from_tokens(std::move(tokens), TokenMode::kWord);
}

std::vector<SentencePair> gen_synthetic(SyntheticTask task, std::size_t symbols, std::size_t n,
                                        std::size_t min_len, std::size_t max_len, std::uint64_t seed) {
  if (symbols < 2) throw ConfigError("synthetic tasks need at least 2 symbols");
  if (min_len < 1 || min_len > max_len) {
    throw ConfigError("invalid synthetic length range [" + std::to_string(min_len) + ", " +
                      std::to_string(max_len) + "]");
  }
  const Vocabulary vocab = synthetic_vocabulary(symbols);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length(min_len, max_len);
  std::uniform_int_distribution<int> symbol(0, static_cast<int>(symbols) - 1);
  std::vector<SentencePair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SentencePair p;
    const std::size_t len = length(rng);
    for (std::size_t j = 0; j < len; ++j) p.source_ids.push_back(kNumReserved + symbol(rng));
    switch (task) {
      case SyntheticTask::kCopy:
        p.target_ids = p.source_ids;
        break;
      case SyntheticTask::kReverse:
        p.target_ids.assign(p.source_ids.rbegin(), p.source_ids.rend());
        break;
      case SyntheticTask::kDuplicate:
        for (int id : p.source_ids) {
          p.target_ids.push_back(id);
          p.target_ids.push_back(id);
        }
        break;
    }
    p.source_text = vocab.decode(p.source_ids);
    p.target_text = vocab.decode(p.target_ids);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::span<const int> Batch::source_row(std::size_t i) const {
  return std::span<const int>(source).subspan(i * source_width, source_lengths.at(i));
}

std::span<const int> Batch::target_row(std::size_t i) const {
  return std::span<const int>(target).subspan(i * target_width, target_lengths.at(i));
}

Batch make_batch(std::span<const SentencePair> pairs) {
  Batch b;
  b.size = pairs.size();
  for (const auto& p : pairs) {
    b.source_width = std::max(b.source_width, p.source_ids.size());
    b.target_width = std::max(b.target_width, p.target_ids.size());
  }
  b.source.assign(b.size * b.source_width, kPadId);
  b.target.assign(b.size * b.target_width, kPadId);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::copy(pairs[i].source_ids.begin(), pairs[i].source_ids.end(),
              b.source.begin() + static_cast<std::ptrdiff_t>(i * b.source_width));
    std::copy(pairs[i].target_ids.begin(), pairs[i].target_ids.end(),
              b.target.begin() + static_cast<std::ptrdiff_t>(i * b.target_width));
    b.source_lengths.push_back(pairs[i].source_ids.size());
    b.target_lengths.push_back(pairs[i].target_ids.size());
  }
  return b;
}

std::vector<SentencePair> unbatch(const Batch& batch) {
  std::vector<SentencePair> out;
  out.reserve(batch.size);
  for (std::size_t i = 0; i < batch.size; ++i) {
    auto s = batch.source_row(i);
    auto t = batch.target_row(i);
    out.push_back(SentencePair{{s.begin(), s.end()}, {t.begin(), t.end()}, {}, {}});
  }
  return out;
}

}  // namespace ctcnat
