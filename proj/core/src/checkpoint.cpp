#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "ctcnat/errors.hpp"
#include "ctcnat/training.hpp"

namespace ctcnat {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "CTCNAT01";
constexpr std::size_t kMagicSize = 8;

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw CheckpointError(std::string(what) + " does not fit the checkpoint format");
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
    }
    std::string_view s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T get(const char* what) {
    std::string_view s = take(sizeof(T), what);
    T v;
    std::memcpy(&v, s.data(), sizeof(T));
    return v;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t at) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint config lacks '" + key + "'", at);
  std::size_t v = 0;
  const auto& s = it->second;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw FormatError("checkpoint config '" + key + "' is not an unsigned integer: " + s, at);
  }
  return v;
}

double parse_real(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t at) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("checkpoint config lacks '" + key + "'", at);
  double v = 0.0;
  const auto& s = it->second;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw FormatError("checkpoint config '" + key + "' is not a number: " + s, at);
  }
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ckpt.config.validate();
  check_params(ckpt.config, ckpt.params);
  const ModelConfig& c = ckpt.config;

  std::ostringstream cfg;
  cfg << "variant=" << variant_name(c.variant) << '\n'
      << "d_model=" << c.d_model << '\n'
      << "ff_dim=" << c.ff_dim << '\n'
      << "heads=" << c.heads << '\n'
      << "enc_layers=" << c.enc_layers << '\n'
      << "dec_layers=" << c.dec_layers << '\n'
      << "k=" << c.k << '\n'
      << "vocab_size=" << c.vocab_size << '\n'
      << "max_len=" << c.max_len << '\n'
      << "dropout=" << format_double(c.dropout_rate) << '\n'
      << "step=" << ckpt.step << '\n'
      << "valid_score=" << format_double(ckpt.valid_score) << '\n';
  if (ckpt.vocab) {
    if (ckpt.vocab->size() != c.vocab_size) {
      throw CheckpointError("vocabulary has " + std::to_string(ckpt.vocab->size()) + " ids, model expects " +
                            std::to_string(c.vocab_size));
    }
    cfg << "vocab_mode=" << token_mode_name(ckpt.vocab->mode()) << '\n';
    const auto& tokens = ckpt.vocab->tokens();
    for (std::size_t i = 0; i < tokens.size(); ++i) cfg << "token." << kNumReserved + i << '=' << tokens[i] << '\n';
  }

  std::string out(kMagic, kMagicSize);
  const std::string block = cfg.str();
  put(out, checked_u32(block.size(), "config block"));
  out += block;
  for (const auto& [name, t] : ckpt.params) {
    put(out, checked_u32(name.size(), "parameter name"));
    out += name;
    put(out, checked_u32(t.rank(), "rank"));
    for (std::size_t d : t.shape()) put(out, checked_u32(d, "dimension"));
    const auto data = t.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }

  // Write to a sibling file first so a failed save never leaves a torn checkpoint.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r(bytes);
  if (r.take(kMagicSize, "magic") != std::string_view(kMagic, kMagicSize)) {
    throw FormatError("not a checkpoint (bad magic or version)", 0);
  }
  const std::size_t block_at = r.offset();
  const auto block_len = r.get<std::uint32_t>("config length");
  const std::string_view block = r.take(block_len, "config block");

  std::map<std::string, std::string> kv;
  std::size_t line_start = 0;
  while (line_start < block.size()) {
    std::size_t nl = block.find('\n', line_start);
    if (nl == std::string_view::npos) nl = block.size();
    const std::string_view line = block.substr(line_start, nl - line_start);
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("config line without '=': " + std::string(line), block_at + 4 + line_start);
    }
    kv[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
    line_start = nl + 1;
  }

  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  {
    auto it = kv.find("variant");
    if (it == kv.end()) throw FormatError("checkpoint config lacks 'variant'", block_at);
    try {
      c.variant = parse_variant(it->second);
    } catch (const Error& e) {
      throw FormatError(e.what(), block_at);
    }
  }
  c.d_model = parse_size(kv, "d_model", block_at);
  c.ff_dim = parse_size(kv, "ff_dim", block_at);
  c.heads = parse_size(kv, "heads", block_at);
  c.enc_layers = parse_size(kv, "enc_layers", block_at);
  c.dec_layers = parse_size(kv, "dec_layers", block_at);
  c.k = parse_size(kv, "k", block_at);
  c.vocab_size = parse_size(kv, "vocab_size", block_at);
  c.max_len = parse_size(kv, "max_len", block_at);
  c.dropout_rate = parse_real(kv, "dropout", block_at);
  ckpt.step = parse_size(kv, "step", block_at);
  ckpt.valid_score = parse_real(kv, "valid_score", block_at);
  c.validate();

  if (auto it = kv.find("vocab_mode"); it != kv.end()) {
    const TokenMode mode = parse_token_mode(it->second);
    std::vector<std::string> tokens;
    for (std::size_t id = kNumReserved; id < c.vocab_size; ++id) {
      auto tok = kv.find("token." + std::to_string(id));
      if (tok == kv.end()) throw FormatError("vocabulary lacks id " + std::to_string(id), block_at);
      tokens.push_back(tok->second);
    }
    ckpt.vocab = Vocabulary::from_tokens(std::move(tokens), mode);
  }

  const auto layout = param_layout(c);
  std::map<std::string, Shape> expected;
  for (const auto& spec : layout) expected.emplace(spec.name, spec.shape);

  while (!r.at_end()) {
    const std::size_t record_at = r.offset();
    const auto name_len = r.get<std::uint32_t>("parameter name length");
    std::string name(r.take(name_len, "parameter name"));
    const auto rank = r.get<std::uint32_t>("parameter rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible rank for '" + name + "'", record_at);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = r.get<std::uint32_t>("parameter dimension");
      if (d == 0) throw FormatError("zero dimension for '" + name + "'", record_at);
      shape.push_back(d);
    }
    auto it = expected.find(name);
    if (it == expected.end()) {
      throw ConfigError("checkpoint parameter '" + name + "' is not part of its " +
                        std::string(variant_name(c.variant)) + " configuration");
    }
    if (it->second != shape) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_string(shape) +
                        ", configuration expects " + shape_string(it->second));
    }
    if (ckpt.params.count(name)) throw FormatError("duplicate parameter '" + name + "'", record_at);
    const std::size_t n = shape_size(shape);
    const std::string_view raw = r.take(n * sizeof(double), "parameter values");
    std::vector<double> values(n);
    std::memcpy(values.data(), raw.data(), raw.size());
    ckpt.params.emplace(std::move(name), Tensor(std::move(shape), std::move(values), true));
  }
  for (const auto& spec : layout) {
    if (!ckpt.params.count(spec.name)) {
      throw FormatError("checkpoint ends before parameter '" + spec.name + "'", r.offset());
    }
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, Variant expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config.variant != expected) {
    throw ConfigError("checkpoint " + path.string() + " holds a " + std::string(variant_name(ckpt.config.variant)) +
                      " model, expected " + std::string(variant_name(expected)));
  }
  return ckpt;
}

ModelParams average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw CheckpointError("no checkpoints to average");
  const ModelConfig& config = checkpoints.front().config;
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    if (!(checkpoints[i].config == config)) {
      throw CheckpointError("checkpoint " + std::to_string(i) + " has a different model configuration");
    }
  }
  for (const auto& c : checkpoints) check_params(config, c.params);

  ModelParams out;
  for (const auto& [name, first] : checkpoints.front().params) {
    Tensor mean = first.detach();
    auto m = mean.mutable_data();
    for (std::size_t i = 1; i < checkpoints.size(); ++i) {
      const auto x = checkpoints[i].params.at(name).data();
      const double count = static_cast<double>(i + 1);
      for (std::size_t j = 0; j < m.size(); ++j) m[j] += (x[j] - m[j]) / count;
    }
    mean.set_requires_grad(true);
    out.emplace(name, std::move(mean));
  }
  return out;
}

}  // namespace ctcnat
