#include "ctcnat/transformer.hpp"

#include <Eigen/Core>
#include <cmath>
#include <set>

#include "ctcnat/errors.hpp"
#include "ctcnat/ops.hpp"
#include "ctcnat/symbols.hpp"

namespace ctcnat {

namespace {

const Tensor& param(const ModelParams& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ConfigError("missing model parameter '" + name + "'");
  return it->second;
}

using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapVec = Eigen::Map<const RowVec>;

CMapMat mat(const Tensor& t) {
  return CMapMat(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

CMapVec vec(const Tensor& t) { return CMapVec(t.data().data(), static_cast<Eigen::Index>(t.size())); }

Tensor linear(const ModelParams& p, const std::string& prefix, const Tensor& x, const std::string& w,
              const std::string& b) {
  return add_row_bias(matmul(x, param(p, prefix + w)), param(p, prefix + b));
}

Tensor norm(const ModelParams& p, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, param(p, prefix + ".g"), param(p, prefix + ".b"));
}

Tensor maybe_dropout(const Tensor& x, double rate, const ForwardOptions& opt) {
  if (!opt.training || opt.rng == nullptr || rate <= 0.0) return x;
  return dropout(x, rate, *opt.rng);
}

// Multi-head attention of queries over keys_values. prefix names the
// parameter group, e.g. "dec.0.cross".
Tensor attention(const ModelParams& p, const std::string& prefix, const Tensor& queries,
                 const Tensor& keys_values, std::size_t heads, bool causal) {
  const Tensor q = linear(p, prefix, queries, ".wq", ".bq");
  const Tensor k = linear(p, prefix, keys_values, ".wk", ".bk");
  const Tensor v = linear(p, prefix, keys_values, ".wv", ".bv");
  const std::size_t d = q.cols();
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (causal) scores = mask_future(scores);
    outputs.push_back(matmul(softmax(scores, 1), vh));
  }
  const Tensor merged = heads == 1 ? outputs.front() : concat_cols(outputs);
  return linear(p, prefix, merged, ".wo", ".bo");
}

Tensor feed_forward(const ModelParams& p, const std::string& prefix, const Tensor& x) {
  return linear(p, prefix, relu(linear(p, prefix, x, ".w1", ".b1")), ".w2", ".b2");
}

Tensor encoder_block(const ModelConfig& c, const ModelParams& p, std::size_t layer, const Tensor& x,
                     const ForwardOptions& opt) {
  const std::string pre = "enc." + std::to_string(layer);
  const Tensor n1 = norm(p, pre + ".ln1", x);
  Tensor h = add(x, maybe_dropout(attention(p, pre + ".attn", n1, n1, c.heads, false), c.dropout_rate, opt));
  const Tensor n2 = norm(p, pre + ".ln2", h);
  return add(h, maybe_dropout(feed_forward(p, pre + ".ff", n2), c.dropout_rate, opt));
}

Tensor decoder_block(const ModelConfig& c, const ModelParams& p, std::size_t layer, const Tensor& x,
                     const Tensor& memory, bool causal, const ForwardOptions& opt) {
  const std::string pre = "dec." + std::to_string(layer);
  const Tensor n1 = norm(p, pre + ".ln1", x);
  Tensor h = add(x, maybe_dropout(attention(p, pre + ".self", n1, n1, c.heads, causal), c.dropout_rate, opt));
  const Tensor n2 = norm(p, pre + ".ln2", h);
  h = add(h, maybe_dropout(attention(p, pre + ".cross", n2, memory, c.heads, false), c.dropout_rate, opt));
  const Tensor n3 = norm(p, pre + ".ln3", h);
  return add(h, maybe_dropout(feed_forward(p, pre + ".ff", n3), c.dropout_rate, opt));
}

Tensor embed_tokens(const ModelConfig& c, const ModelParams& p, std::span<const int> ids, bool positional,
                    const ForwardOptions& opt) {
  Tensor x = scale(embedding(param(p, "embed"), ids), std::sqrt(static_cast<double>(c.d_model)));
  if (positional) x = add(x, sinusoidal_encoding(ids.size(), c.d_model));
  return maybe_dropout(x, c.dropout_rate, opt);
}

Tensor labeler(const ModelParams& p, const Tensor& states) {
  return log_softmax(linear(p, "out", states, ".w", ".b"));
}

// Inference-only forward pass on Eigen matrices. Same arithmetic as the
// Tensor ops above without the tape and per-op allocation overhead; used
// whenever nothing is being recorded.

RowMat affine_rows(const ModelParams& p, const std::string& prefix, const RowMat& x, const char* w, const char* b) {
  RowMat y = x * mat(param(p, prefix + w));
  y.rowwise() += vec(param(p, prefix + b));
  return y;
}

RowMat norm_rows(const ModelParams& p, const std::string& prefix, const RowMat& x) {
  const auto g = vec(param(p, prefix + ".g"));
  const auto b = vec(param(p, prefix + ".b"));
  const double d = static_cast<double>(x.cols());
  RowMat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).sum() / d;
    const RowVec centered = x.row(r).array() - mu;
    const double rstd = 1.0 / std::sqrt(centered.squaredNorm() / d + 1e-6);
    y.row(r) = (centered * rstd).cwiseProduct(g) + b;
  }
  return y;
}

RowMat attention_rows(const ModelParams& p, const std::string& prefix, const RowMat& queries,
                      const RowMat& keys_values, std::size_t heads) {
  const RowMat q = affine_rows(p, prefix, queries, ".wq", ".bq");
  const RowMat k = affine_rows(p, prefix, keys_values, ".wk", ".bk");
  const RowMat v = affine_rows(p, prefix, keys_values, ".wv", ".bv");
  const auto dh = static_cast<Eigen::Index>(static_cast<std::size_t>(q.cols()) / heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  RowMat merged(q.rows(), q.cols());
  RowMat scores;
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    scores.noalias() = q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose();
    scores *= inv_sqrt;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      const double m = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - m).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    merged.middleCols(c0, dh).noalias() = scores * v.middleCols(c0, dh);
  }
  return affine_rows(p, prefix, merged, ".wo", ".bo");
}

RowMat feed_forward_rows(const ModelParams& p, const std::string& prefix, const RowMat& x) {
  const RowMat hidden = affine_rows(p, prefix, x, ".w1", ".b1").cwiseMax(0.0);
  return affine_rows(p, prefix, hidden, ".w2", ".b2");
}

void add_positions(RowMat& x) {
  const Tensor pe = sinusoidal_encoding(static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(x.cols()));
  x += mat(pe);
}

Tensor to_tensor(const RowMat& m) {
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::vector<double>(m.data(), m.data() + m.size()));
}

RowMat from_tensor(const Tensor& t) { return mat(t); }

void require_finite(const RowMat& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + " produced a non-finite value");
}

RowMat encode_rows(const ModelConfig& c, const ModelParams& p, std::span<const int> ids, bool positional) {
  const Tensor& table = param(p, "embed");
  const auto d = static_cast<Eigen::Index>(c.d_model);
  RowMat x(static_cast<Eigen::Index>(ids.size()), d);
  const double scale_by = std::sqrt(static_cast<double>(c.d_model));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        CMapVec(table.data().data() + static_cast<std::size_t>(ids[i]) * c.d_model, d) * scale_by;
  }
  if (positional) add_positions(x);
  for (std::size_t l = 0; l < c.enc_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    const RowMat n1 = norm_rows(p, pre + ".ln1", x);
    x += attention_rows(p, pre + ".attn", n1, n1, c.heads);
    x += feed_forward_rows(p, pre + ".ff", norm_rows(p, pre + ".ln2", x));
  }
  RowMat out = norm_rows(p, "enc.ln", x);
  require_finite(out, "encoder");
  return out;
}

RowMat log_softmax_rows(RowMat logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    logits.row(r).array() -= lse;
  }
  return logits;
}

RowMat decode_parallel_rows(const ModelConfig& c, const ModelParams& p, const RowMat& split, const RowMat& memory,
                            bool positional) {
  if (c.variant == Variant::kDeepEncoder) return log_softmax_rows(affine_rows(p, "out", split, ".w", ".b"));
  RowMat x = split;
  if (c.variant == Variant::kEncoderDecoderPosEnc && positional) add_positions(x);
  for (std::size_t l = 0; l < c.dec_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    const RowMat n1 = norm_rows(p, pre + ".ln1", x);
    x += attention_rows(p, pre + ".self", n1, n1, c.heads);
    x += attention_rows(p, pre + ".cross", norm_rows(p, pre + ".ln2", x), memory, c.heads);
    x += feed_forward_rows(p, pre + ".ff", norm_rows(p, pre + ".ln3", x));
  }
  RowMat out = log_softmax_rows(affine_rows(p, "out", norm_rows(p, "dec.ln", x), ".w", ".b"));
  require_finite(out, "parallel decoder");
  return out;
}

// Nothing records without a tape, and dropout only runs in training mode.
bool inference_only(const ForwardOptions& opt) {
  return GradTape::current() == nullptr && !(opt.training && opt.rng != nullptr);
}

void add_attention_specs(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t d) {
  for (const char* m : {"q", "k", "v", "o"}) {
    specs.push_back({prefix + ".w" + m, {d, d}});
    specs.push_back({prefix + ".b" + m, {d}});
  }
}

void add_norm_specs(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t d) {
  specs.push_back({prefix + ".g", {d}});
  specs.push_back({prefix + ".b", {d}});
}

void add_ff_specs(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t d, std::size_t ff) {
  specs.push_back({prefix + ".w1", {d, ff}});
  specs.push_back({prefix + ".b1", {ff}});
  specs.push_back({prefix + ".w2", {ff, d}});
  specs.push_back({prefix + ".b2", {d}});
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kDeepEncoder:
      return "deep-encoder";
    case Variant::kEncoderDecoder:
      return "encoder-decoder";
    case Variant::kEncoderDecoderPosEnc:
      return "encoder-decoder-posenc";
    case Variant::kAutoregressive:
      return "autoregressive-baseline";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::kDeepEncoder, Variant::kEncoderDecoder, Variant::kEncoderDecoderPosEnc,
                    Variant::kAutoregressive}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

bool is_non_autoregressive(Variant v) { return v != Variant::kAutoregressive; }

void ModelConfig::validate() const {
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (ff_dim == 0) throw ConfigError("ff_dim must be positive");
  if (k == 0) throw ConfigError("split factor k must be at least 1");
  if (vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    throw ConfigError("vocab_size must exceed the " + std::to_string(kNumReserved) + " reserved ids");
  }
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (variant == Variant::kDeepEncoder && dec_layers != 0) {
    throw ConfigError("deep-encoder variant requires dec_layers = 0");
  }
  if (variant != Variant::kDeepEncoder && dec_layers == 0) {
    throw ConfigError(std::string(variant_name(variant)) + " variant requires dec_layers >= 1");
  }
}

std::vector<ParamSpec> param_layout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model;
  std::vector<ParamSpec> specs;
  specs.push_back({"embed", {c.vocab_size, d}});
  for (std::size_t l = 0; l < c.enc_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    add_norm_specs(specs, pre + ".ln1", d);
    add_attention_specs(specs, pre + ".attn", d);
    add_norm_specs(specs, pre + ".ln2", d);
    add_ff_specs(specs, pre + ".ff", d, c.ff_dim);
  }
  add_norm_specs(specs, "enc.ln", d);
  if (is_non_autoregressive(c.variant)) {
    specs.push_back({"split.w", {d, c.k * d}});
    specs.push_back({"split.b", {c.k * d}});
  }
  for (std::size_t l = 0; l < c.dec_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    add_norm_specs(specs, pre + ".ln1", d);
    add_attention_specs(specs, pre + ".self", d);
    add_norm_specs(specs, pre + ".ln2", d);
    add_attention_specs(specs, pre + ".cross", d);
    add_norm_specs(specs, pre + ".ln3", d);
    add_ff_specs(specs, pre + ".ff", d, c.ff_dim);
  }
  if (c.dec_layers > 0) add_norm_specs(specs, "dec.ln", d);
  specs.push_back({"out.w", {d, c.vocab_size}});
  specs.push_back({"out.b", {c.vocab_size}});
  return specs;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& spec : param_layout(config)) {
    std::vector<double> values(shape_size(spec.shape), 0.0);
    if (spec.name == "embed") {
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(config.d_model)));
      for (double& v : values) v = dist(rng);
    } else if (spec.shape.size() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : values) v = dist(rng);
    } else if (ends_with(spec.name, ".g")) {
      std::fill(values.begin(), values.end(), 1.0);
    }
    params.emplace(spec.name, Tensor(spec.shape, std::move(values), true));
  }
  return params;
}

void check_params(const ModelConfig& config, const ModelParams& params) {
  const auto layout = param_layout(config);
  std::set<std::string> expected;
  for (const auto& spec : layout) {
    expected.insert(spec.name);
    auto it = params.find(spec.name);
    if (it == params.end()) throw ConfigError("parameter '" + spec.name + "' missing for this configuration");
    if (it->second.shape() != spec.shape) {
      throw ConfigError("parameter '" + spec.name + "' has shape " + shape_string(it->second.shape()) +
                        ", configuration expects " + shape_string(spec.shape));
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.count(name)) throw ConfigError("parameter '" + name + "' is not part of this configuration");
  }
}

std::size_t param_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& spec : param_layout(config)) n += shape_size(spec.shape);
  return n;
}

Tensor sinusoidal_encoding(std::size_t rows, std::size_t d) {
  std::vector<double> v(rows * d);
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) / rate;
      v[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({rows, d}, std::move(v));
}

EncoderStates encode(const ModelConfig& config, const ModelParams& params, std::span<const int> source_ids,
                     const ForwardOptions& options) {
  if (source_ids.empty()) throw LengthError("source sentence is empty");
  if (source_ids.size() > config.max_len) {
    throw LengthError("source length " + std::to_string(source_ids.size()) + " exceeds max_len " +
                      std::to_string(config.max_len));
  }
  for (int id : source_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw VocabularyError("source id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config.vocab_size));
    }
  }
  if (inference_only(options)) {
    return EncoderStates{to_tensor(encode_rows(config, params, source_ids, options.positional_encoding))};
  }
  Tensor x = embed_tokens(config, params, source_ids, options.positional_encoding, options);
  for (std::size_t l = 0; l < config.enc_layers; ++l) x = encoder_block(config, params, l, x, options);
  return EncoderStates{norm(params, "enc.ln", x)};
}

SplitStates split_states(const ModelParams& params, const EncoderStates& enc, std::size_t k) {
  const Tensor& w = param(params, "split.w");
  const std::size_t d = enc.states.cols();
  if (w.rank() != 2 || w.dim(0) != d || w.dim(1) != k * d) {
    throw DimensionError("split projection " + shape_string(w.shape()) + " does not map width " +
                         std::to_string(d) + " to k*d = " + std::to_string(k * d));
  }
  const Tensor projected = linear(params, "split", enc.states, ".w", ".b");
  // Row-major [T_x × k·d] viewed as [k·T_x × d] puts slice b of position c at row c·k+b.
  return SplitStates{reshape(projected, {k * enc.length(), d})};
}

Tensor decode_parallel(const ModelConfig& config, const ModelParams& params, const SplitStates& split,
                       const EncoderStates& enc, const ForwardOptions& options) {
  if (!is_non_autoregressive(config.variant)) {
    throw ConfigError("decode_parallel needs a non-autoregressive variant, got " +
                      std::string(variant_name(config.variant)));
  }
  if (inference_only(options)) {
    return to_tensor(decode_parallel_rows(config, params, from_tensor(split.states), from_tensor(enc.states),
                                          options.positional_encoding));
  }
  if (config.variant == Variant::kDeepEncoder) return labeler(params, split.states);
  Tensor x = split.states;
  if (config.variant == Variant::kEncoderDecoderPosEnc && options.positional_encoding) {
    x = add(x, sinusoidal_encoding(x.rows(), config.d_model));
  }
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    x = decoder_block(config, params, l, x, enc.states, false, options);
  }
  return labeler(params, norm(params, "dec.ln", x));
}

Tensor nar_log_probs(const ModelConfig& config, const ModelParams& params, std::span<const int> source_ids,
                     const ForwardOptions& options) {
  const EncoderStates enc = encode(config, params, source_ids, options);
  return decode_parallel(config, params, split_states(params, enc, config.k), enc, options);
}

Tensor decode_teacher_forced(const ModelConfig& config, const ModelParams& params, const EncoderStates& enc,
                             std::span<const int> input_ids, const ForwardOptions& options) {
  if (config.variant != Variant::kAutoregressive) {
    throw ConfigError("teacher-forced decoding needs the autoregressive-baseline variant");
  }
  for (int id : input_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw VocabularyError("decoder input id " + std::to_string(id) + " outside vocabulary");
    }
  }
  Tensor x = embed_tokens(config, params, input_ids, options.positional_encoding, options);
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    x = decoder_block(config, params, l, x, enc.states, true, options);
  }
  return labeler(params, norm(params, "dec.ln", x));
}

Tensor decode_autoregressive_step(const ModelConfig& config, const ModelParams& params,
                                  const EncoderStates& enc, std::span<const int> prefix_ids) {
  std::vector<int> inputs;
  inputs.reserve(prefix_ids.size() + 1);
  inputs.push_back(kEosId);
  inputs.insert(inputs.end(), prefix_ids.begin(), prefix_ids.end());
  const Tensor rows = decode_teacher_forced(config, params, enc, inputs);
  return reshape(slice_rows(rows, inputs.size() - 1, 1), {config.vocab_size});
}

// ---------------------------------------------------------------------------
// Incremental decoding works on raw vectors; it mirrors decoder_block for a
// single new row attending over cached rows.

namespace {

RowVec affine(const ModelParams& p, const std::string& prefix, const RowVec& x, const std::string& w,
              const std::string& b) {
  RowVec y = x * mat(param(p, prefix + w));
  y += vec(param(p, prefix + b));
  return y;
}

RowVec norm_vec(const ModelParams& p, const std::string& prefix, const RowVec& x) {
  const double d = static_cast<double>(x.size());
  const double mu = x.sum() / d;
  const RowVec centered = x.array() - mu;
  const double var = centered.squaredNorm() / d;
  const double rstd = 1.0 / std::sqrt(var + 1e-6);
  return (centered * rstd).cwiseProduct(vec(param(p, prefix + ".g"))) + vec(param(p, prefix + ".b"));
}

RowVec attend(const RowVec& q, const std::vector<double>& keys, const std::vector<double>& values,
              std::size_t rows, std::size_t heads) {
  const auto d = static_cast<std::size_t>(q.size());
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  RowVec out = RowVec::Zero(static_cast<Eigen::Index>(d));
  std::vector<double> w(rows);
  for (std::size_t h = 0; h < heads; ++h) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < rows; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < dh; ++i) s += q[static_cast<Eigen::Index>(h * dh + i)] * keys[j * d + h * dh + i];
      w[j] = s * inv_sqrt;
      m = std::max(m, w[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      w[j] = std::exp(w[j] - m);
      z += w[j];
    }
    for (std::size_t j = 0; j < rows; ++j) {
      const double a = w[j] / z;
      for (std::size_t i = 0; i < dh; ++i) out[static_cast<Eigen::Index>(h * dh + i)] += a * values[j * d + h * dh + i];
    }
  }
  return out;
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const ModelConfig& config, const ModelParams& params,
                                       const EncoderStates& enc)
    : config_(&config), params_(&params), source_length_(enc.length()) {
  if (config.variant != Variant::kAutoregressive) {
    throw ConfigError("incremental decoding needs the autoregressive-baseline variant");
  }
  NoGradGuard no_grad;
  layers_.resize(config.dec_layers);
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l) + ".cross";
    const Tensor k = linear(params, pre, enc.states, ".wk", ".bk");
    const Tensor v = linear(params, pre, enc.states, ".wv", ".bv");
    layers_[l].cross_keys.assign(k.data().begin(), k.data().end());
    layers_[l].cross_values.assign(v.data().begin(), v.data().end());
  }
}

std::vector<double> IncrementalDecoder::step(int token) {
  const ModelConfig& c = *config_;
  const ModelParams& p = *params_;
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) {
    throw VocabularyError("decoder input id " + std::to_string(token) + " outside vocabulary");
  }
  const std::size_t d = c.d_model;
  const Tensor& table = param(p, "embed");
  RowVec x = CMapVec(table.data().data() + static_cast<std::size_t>(token) * d, static_cast<Eigen::Index>(d)) *
             std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i) {
    const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
    const double angle = static_cast<double>(position_) / rate;
    x[static_cast<Eigen::Index>(i)] += (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }

  for (std::size_t l = 0; l < c.dec_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    LayerCache& cache = layers_[l];

    const RowVec n1 = norm_vec(p, pre + ".ln1", x);
    const RowVec q = affine(p, pre + ".self", n1, ".wq", ".bq");
    const RowVec k = affine(p, pre + ".self", n1, ".wk", ".bk");
    const RowVec v = affine(p, pre + ".self", n1, ".wv", ".bv");
    cache.self_keys.insert(cache.self_keys.end(), k.data(), k.data() + d);
    cache.self_values.insert(cache.self_values.end(), v.data(), v.data() + d);
    const RowVec self = attend(q, cache.self_keys, cache.self_values, position_ + 1, c.heads);
    x += affine(p, pre + ".self", self, ".wo", ".bo");

    const RowVec n2 = norm_vec(p, pre + ".ln2", x);
    const RowVec qc = affine(p, pre + ".cross", n2, ".wq", ".bq");
    const RowVec cross = attend(qc, cache.cross_keys, cache.cross_values, source_length_, c.heads);
    x += affine(p, pre + ".cross", cross, ".wo", ".bo");

    const RowVec n3 = norm_vec(p, pre + ".ln3", x);
    const RowVec hidden = affine(p, pre + ".ff", n3, ".w1", ".b1").cwiseMax(0.0);
    x += affine(p, pre + ".ff", hidden, ".w2", ".b2");
  }
  ++position_;

  const RowVec logits = affine(p, "out", norm_vec(p, "dec.ln", x), ".w", ".b");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[static_cast<Eigen::Index>(i)] - lse;
  return out;
}

}  // namespace ctcnat
