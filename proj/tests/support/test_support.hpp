#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "ctcnat/ctc.hpp"
#include "ctcnat/ops.hpp"
#include "ctcnat/tensor.hpp"
#include "ctcnat/transformer.hpp"

namespace ctcnat::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor({rows, cols}, std::move(v));
}

// T × classes table of normalized log-probabilities.
inline Tensor random_log_probs(std::size_t T, std::size_t classes, std::mt19937_64& rng, double scale = 1.5) {
  NoGradGuard no_grad;
  return log_softmax(random_matrix(T, classes, rng, scale));
}

inline std::vector<int> random_labels(std::size_t length, int symbols, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(1, symbols);
  std::vector<int> out(length);
  for (int& x : out) x = pick(rng);
  return out;
}

// Every frame sequence of length T over `classes` ids, visited in
// lexicographic order.
inline void for_each_path(std::size_t T, std::size_t classes, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> path(T, 0);
  while (true) {
    fn(path);
    std::size_t i = T;
    while (i > 0) {
      --i;
      if (++path[i] < static_cast<int>(classes)) break;
      path[i] = 0;
      if (i == 0) return;
    }
    if (T == 0) return;
  }
}

// Total probability of every collapsed output, by direct path enumeration.
inline std::map<LabelSequence, double> collapsed_distribution(const Tensor& log_probs) {
  std::map<LabelSequence, double> out;
  const std::size_t T = log_probs.rows(), C = log_probs.cols();
  for_each_path(T, C, [&](const std::vector<int>& path) {
    double lp = 0.0;
    for (std::size_t t = 0; t < T; ++t) lp += log_probs.at(t, static_cast<std::size_t>(path[t]));
    out[collapse(path)] += std::exp(lp);
  });
  return out;
}

struct GradCheck {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares tape gradients of a scalar function with central differences.
// Relative error uses max(|analytic|, |numeric|) as denominator and falls
// back to the absolute error when both are below 1e-6.
inline GradCheck gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) t.set_requires_grad(true);
  std::vector<std::vector<double>> analytic;
  {
    GradTape tape;
    TapeScope scope(tape);
    const Tensor loss = f(inputs);
    tape.backward(loss);
    for (const auto& t : inputs) {
      const auto g = tape.gradient(t);
      analytic.emplace_back(g.empty() ? std::vector<double>(t.size(), 0.0) : std::vector<double>(g.begin(), g.end()));
    }
  }
  GradCheck result;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + h;
      const double up = f(inputs).item();
      data[j] = saved - h;
      const double down = f(inputs).item();
      data[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max(std::abs(a), std::abs(numeric));
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, denom < 1e-6 ? abs_err : abs_err / denom);
      ++result.checked;
    }
  }
  return result;
}

inline ModelConfig tiny_config(Variant variant, std::size_t vocab_size = 10) {
  ModelConfig c;
  c.variant = variant;
  c.d_model = 8;
  c.ff_dim = 16;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = variant == Variant::kDeepEncoder ? 0 : 1;
  c.k = 2;
  c.vocab_size = vocab_size;
  c.max_len = 16;
  c.dropout_rate = 0.0;
  return c;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

}  // namespace ctcnat::testing
