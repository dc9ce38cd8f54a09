#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctcnat/tensor.hpp"

namespace ctcnat {

enum class Variant {
  kDeepEncoder,           // encoder stack, split, labeler
  kEncoderDecoder,        // encoder, split, unmasked decoder, labeler
  kEncoderDecoderPosEnc,  // as above with positional encodings on the split states
  kAutoregressive,        // causally masked baseline decoder
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
bool is_non_autoregressive(Variant v);

struct ModelConfig {
  Variant variant = Variant::kEncoderDecoder;
  std::size_t d_model = 64;
  std::size_t ff_dim = 256;
  std::size_t heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  // Split factor: each encoder state becomes k decoder inputs.
  std::size_t k = 3;
  // Number of token ids, reserved ids included. Output layers have one
  // column per id; column 0 is the CTC blank.
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  double dropout_rate = 0.1;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Named parameters, ordered by name.
using ModelParams = std::map<std::string, Tensor>;

struct ParamSpec {
  std::string name;
  Shape shape;
};

// Exact parameter set implied by a configuration, in initialisation order.
std::vector<ParamSpec> param_layout(const ModelConfig& config);
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
// Throws ConfigError unless params has exactly the names and shapes of the layout.
void check_params(const ModelConfig& config, const ModelParams& params);
std::size_t param_count(const ModelConfig& config);

struct EncoderStates {
  Tensor states;  // T_x × d
  std::size_t length() const { return states.rows(); }
};

struct SplitStates {
  Tensor states;  // (k·T_x) × d
  std::size_t length() const { return states.rows(); }
};

struct ForwardOptions {
  // Dropout is applied only when training and rng is set.
  bool training = false;
  std::mt19937_64* rng = nullptr;
  bool positional_encoding = true;
};

// rows × d sinusoidal table.
Tensor sinusoidal_encoding(std::size_t rows, std::size_t d);

EncoderStates encode(const ModelConfig& config, const ModelParams& params, std::span<const int> source_ids,
                     const ForwardOptions& options = {});

// Projects every encoder state to k·d values and slices the result into k
// consecutive d-wide states, so source position c yields rows c·k .. c·k+k-1.
SplitStates split_states(const ModelParams& params, const EncoderStates& enc, std::size_t k);

// Per-position log-probabilities, (k·T_x) × vocab_size. No temporal mask.
Tensor decode_parallel(const ModelConfig& config, const ModelParams& params, const SplitStates& split,
                       const EncoderStates& enc, const ForwardOptions& options = {});

// encode → split → decode_parallel.
Tensor nar_log_probs(const ModelConfig& config, const ModelParams& params, std::span<const int> source_ids,
                     const ForwardOptions& options = {});

// Causally masked decoder over input_ids (kEosId acts as start symbol);
// row i is the next-token distribution after input_ids[0..i]. n × vocab_size.
Tensor decode_teacher_forced(const ModelConfig& config, const ModelParams& params, const EncoderStates& enc,
                             std::span<const int> input_ids, const ForwardOptions& options = {});

// Next-token log-distribution after the start symbol followed by prefix_ids.
Tensor decode_autoregressive_step(const ModelConfig& config, const ModelParams& params,
                                  const EncoderStates& enc, std::span<const int> prefix_ids);

// Step-wise autoregressive decoder that keeps per-layer key/value rows of
// the decoded prefix. Copy it to branch a hypothesis.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const ModelConfig& config, const ModelParams& params, const EncoderStates& enc);

  // Feeds one input token and returns the log-distribution for the next one.
  std::vector<double> step(int token);
  std::size_t position() const { return position_; }

 private:
  struct LayerCache {
    std::vector<double> self_keys;    // position × d
    std::vector<double> self_values;  // position × d
    std::vector<double> cross_keys;   // T_x × d
    std::vector<double> cross_values; // T_x × d
  };

  const ModelConfig* config_;
  const ModelParams* params_;
  std::size_t source_length_;
  std::size_t position_ = 0;
  std::vector<LayerCache> layers_;
};

}  // namespace ctcnat
