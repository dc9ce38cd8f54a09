#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ctcnat/symbols.hpp"
#include "ctcnat/tensor.hpp"

namespace ctcnat {

// Output token ids without blanks.
using LabelSequence = std::vector<int>;

// Merges adjacent repeats, then drops blanks.
LabelSequence collapse(std::span<const int> frame_ids, int blank = kBlankId);

// Fewest frames that can emit labels: one per label plus a separating blank
// between every pair of equal adjacent labels.
std::size_t min_frames(std::span<const int> labels);

// Forward (prefix) and backward (suffix) log-probability tables over the
// blank-extended label sequence  ∅ y1 ∅ y2 ... yL ∅.
//
// alpha(t, s) is the log mass of all frame prefixes 0..t that end in
// extended state s; beta(t, s) the log mass of all suffixes t..T-1 that start
// in s. Both include the emission at frame t.
struct CtcLattice {
  std::size_t frames = 0;
  std::size_t states = 0;
  std::vector<int> extended_labels;
  std::vector<double> alpha;
  std::vector<double> beta;
  double log_likelihood = 0.0;

  double alpha_at(std::size_t t, std::size_t s) const { return alpha[t * states + s]; }
  double beta_at(std::size_t t, std::size_t s) const { return beta[t * states + s]; }
};

CtcLattice ctc_lattice(const Tensor& log_probs, std::span<const int> labels, int blank = kBlankId);

struct CtcLossResult {
  // Negative log-likelihood; +inf when no path collapses to the labels.
  double loss = 0.0;
  // d(loss)/d(log_probs), row-major T×C. All zero for infeasible targets.
  std::vector<double> grad;
};

// log_probs is T×C with normalised log-distributions in every row (checked
// to 1e-6). Labels must be non-blank column ids.
CtcLossResult ctc_loss(const Tensor& log_probs, std::span<const int> labels, int blank = kBlankId);

// Differentiable wrapper for training; records the analytic gradient on the
// current tape. Throws InputError for infeasible targets.
Tensor ctc_loss_op(const Tensor& log_probs, std::span<const int> labels, int blank = kBlankId);

// Number of length-T frame sequences whose collapse equals labels.
// Throws BoundError if the count does not fit in 64 bits.
std::uint64_t count_alignments(std::size_t frames, std::span<const int> labels);

// Limits on the brute-force oracle.
inline constexpr std::size_t kOracleMaxFrames = 10;
inline constexpr std::size_t kOracleMaxLabels = 4;

// Exhaustive sum over every (V+1)^T frame path. Reference for ctc_loss.
double ctc_oracle_loss(const Tensor& log_probs, std::span<const int> labels, int blank = kBlankId);

}  // namespace ctcnat
