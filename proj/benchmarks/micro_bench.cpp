#include <benchmark/benchmark.h>

#include <random>

#include "ctcnat/ctc.hpp"
#include "ctcnat/decoding.hpp"
#include "ctcnat/ops.hpp"
#include "ctcnat/transformer.hpp"

namespace {

using namespace ctcnat;

Tensor random_log_probs(std::size_t T, std::size_t C, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.5);
  std::vector<double> v(T * C);
  for (double& x : v) x = n(rng);
  NoGradGuard no_grad;
  return log_softmax(Tensor({T, C}, std::move(v)));
}

std::vector<int> random_ids(std::size_t n, int lo, int hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(lo, hi);
  std::vector<int> out(n);
  for (int& x : out) x = pick(rng);
  return out;
}

ModelConfig bench_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.d_model = 64;
  c.ff_dim = 256;
  c.heads = 4;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.k = 2;
  c.vocab_size = 1000;
  c.max_len = 64;
  c.dropout_rate = 0.0;
  return c;
}

void BM_CtcLoss(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  const Tensor lp = random_log_probs(T, 1000, 1);
  const auto labels = random_ids(T / 2, 4, 999, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ctc_loss(lp, labels).loss);
}
BENCHMARK(BM_CtcLoss)->Arg(16)->Arg(32)->Arg(64);

void BM_CtcBeam(benchmark::State& state) {
  const Tensor lp = random_log_probs(64, 1000, 3);
  DecodeOptions opt;
  opt.beam_width = static_cast<std::size_t>(state.range(0));
  opt.max_candidates = 16;
  for (auto _ : state) benchmark::DoNotOptimize(ctc_beam_search(lp, opt));
}
BENCHMARK(BM_CtcBeam)->Arg(1)->Arg(4)->Arg(16);

void BM_NarForward(benchmark::State& state) {
  const ModelConfig c = bench_config(Variant::kEncoderDecoder);
  const ModelParams p = init_params(c, 1);
  const auto src = random_ids(static_cast<std::size_t>(state.range(0)), 4, 999, 4);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(nar_log_probs(c, p, src));
}
BENCHMARK(BM_NarForward)->Arg(8)->Arg(16)->Arg(32);

void BM_ArGreedy(benchmark::State& state) {
  const ModelConfig c = bench_config(Variant::kAutoregressive);
  const ModelParams p = init_params(c, 1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto src = random_ids(n, 4, 999, 5);
  for (auto _ : state) benchmark::DoNotOptimize(ar_greedy_decode(c, p, src, n, false));
}
BENCHMARK(BM_ArGreedy)->Arg(8)->Arg(16)->Arg(32);

}  // namespace
BENCHMARK_MAIN();
