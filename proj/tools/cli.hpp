#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ctcnat/data.hpp"
#include "ctcnat/training.hpp"
#include "ctcnat/transformer.hpp"

namespace ctcnat::cli {

// Flat key=value run configuration. Blank lines and lines starting with '#'
// are ignored; every other line must be key=value with a known key.
struct RunConfig {
  Variant variant = Variant::kEncoderDecoder;
  std::size_t d_model = 64;
  std::size_t ff_dim = 256;
  std::size_t heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t k = 3;
  std::size_t max_len = 64;
  double dropout = 0.1;
  TokenMode vocab_mode = TokenMode::kWord;
  std::size_t min_freq = 1;
  double lr = 1e-3;
  std::size_t warmup = 200;
  std::size_t batch_size = 32;
  std::size_t max_steps = 3000;
  std::size_t valid_interval = 250;
  std::size_t keep_top = 5;
  std::uint64_t seed = 1;
  std::filesystem::path train_src;
  std::filesystem::path train_tgt;
  std::filesystem::path valid_src;
  std::filesystem::path valid_tgt;
  std::filesystem::path checkpoint_dir;

  bool operator==(const RunConfig&) const = default;

  ModelConfig model_config(std::size_t vocab_size) const;
  TrainConfig train_config() const;
};

// Every accepted key, in serialization order.
const std::vector<std::string>& run_config_keys();

// Throws ConfigError naming the offending key or line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& config);

// Runs one command line. Returns the process exit code: 0 success,
// 1 runtime failure, 2 usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctcnat::cli
