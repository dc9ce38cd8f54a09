#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "ctcnat/tensor.hpp"

namespace ctcnat {

// Log-domain zero. The only representation of log(0) used anywhere.
inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// log(sum(exp(xs))) with max shift; kLogZero for empty input.
double log_sum_exp(std::span<const double> xs);
double log_add(double a, double b);

// All differentiable operations below record onto GradTape::current() when
// an input requires a gradient. Shape violations throw DimensionError and
// non-finite results throw NumericError.

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[m×n] + bias[n] on every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
// Along the last axis.
Tensor log_softmax(const Tensor& x);
// Per-vector normalisation over the last axis, variance epsilon 1e-6.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-6);

// Sets entries above the diagonal of a square-or-wider score matrix to a
// value whose softmax weight is exactly zero; gradient flows only through
// the kept entries.
Tensor mask_future(const Tensor& scores);

// Rows of table[V×d] selected by ids; gradient scatters back into table.
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// −Σᵢ log_probs[i, targets[i]].
Tensor nll_loss(const Tensor& log_probs, std::span<const int> targets);

// Inverted dropout with a mask drawn from rng.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

}  // namespace ctcnat
