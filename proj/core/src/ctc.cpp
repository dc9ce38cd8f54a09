#include "ctcnat/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ctcnat/errors.hpp"
#include "ctcnat/ops.hpp"

namespace ctcnat {

namespace {

constexpr double kNormTolerance = 1e-6;

void validate_inputs(const Tensor& log_probs, std::span<const int> labels, int blank) {
  if (log_probs.rank() != 2) {
    throw DimensionError("CTC expects a T×C log-probability matrix, got " + shape_string(log_probs.shape()));
  }
  const std::size_t classes = log_probs.cols();
  if (blank < 0 || static_cast<std::size_t>(blank) >= classes) {
    throw VocabularyError("blank id " + std::to_string(blank) + " outside " + std::to_string(classes) +
                          " output columns");
  }
  for (int id : labels) {
    if (id < 0 || static_cast<std::size_t>(id) >= classes) {
      throw VocabularyError("label id " + std::to_string(id) + " outside " + std::to_string(classes) +
                            " output columns");
    }
    if (id == blank) throw VocabularyError("label sequence contains the blank id");
  }
  auto data = log_probs.data();
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    const double lse = log_sum_exp(data.subspan(t * classes, classes));
    if (!(std::abs(lse) <= kNormTolerance)) {
      throw InputError("row " + std::to_string(t) + " of log_probs is not normalised (logsumexp = " +
                       std::to_string(lse) + ")");
    }
  }
}

std::vector<int> extend_with_blanks(std::span<const int> labels, int blank) {
  std::vector<int> ext(2 * labels.size() + 1, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  return ext;
}

}  // namespace

LabelSequence collapse(std::span<const int> frame_ids, int blank) {
  LabelSequence out;
  int previous = -1;
  bool have_previous = false;
  for (int id : frame_ids) {
    if (!(have_previous && id == previous) && id != blank) out.push_back(id);
    previous = id;
    have_previous = true;
  }
  return out;
}

std::size_t min_frames(std::span<const int> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

CtcLattice ctc_lattice(const Tensor& log_probs, std::span<const int> labels, int blank) {
  validate_inputs(log_probs, labels, blank);
  const std::size_t T = log_probs.rows();
  const std::size_t C = log_probs.cols();
  if (T == 0) throw InputError("CTC needs at least one frame");

  CtcLattice lat;
  lat.frames = T;
  lat.extended_labels = extend_with_blanks(labels, blank);
  lat.states = lat.extended_labels.size();
  const std::size_t S = lat.states;
  const auto& ext = lat.extended_labels;
  lat.alpha.assign(T * S, kLogZero);
  lat.beta.assign(T * S, kLogZero);
  auto lp = [&](std::size_t t, std::size_t s) { return log_probs.data()[t * C + static_cast<std::size_t>(ext[s])]; };
  // A label state may be entered from two states back unless that state
  // carries the same label (repeat needs a blank in between).
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  auto alpha = [&](std::size_t t, std::size_t s) -> double& { return lat.alpha[t * S + s]; };
  auto beta = [&](std::size_t t, std::size_t s) -> double& { return lat.beta[t * S + s]; };

  alpha(0, 0) = lp(0, 0);
  if (S > 1) alpha(0, 1) = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      alpha(t, s) = acc == kLogZero ? kLogZero : acc + lp(t, s);
    }
  }

  beta(T - 1, S - 1) = lp(T - 1, S - 1);
  if (S > 1) beta(T - 1, S - 2) = lp(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = beta(t + 1, s);
      if (s + 1 < S) acc = log_add(acc, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) acc = log_add(acc, beta(t + 1, s + 2));
      beta(t, s) = acc == kLogZero ? kLogZero : acc + lp(t, s);
    }
  }

  double ll = alpha(T - 1, S - 1);
  if (S > 1) ll = log_add(ll, alpha(T - 1, S - 2));
  lat.log_likelihood = ll;
  return lat;
}

CtcLossResult ctc_loss(const Tensor& log_probs, std::span<const int> labels, int blank) {
  const CtcLattice lat = ctc_lattice(log_probs, labels, blank);
  const std::size_t T = lat.frames, S = lat.states, C = log_probs.cols();
  CtcLossResult result;
  result.grad.assign(T * C, 0.0);
  if (lat.log_likelihood == kLogZero) {
    result.loss = std::numeric_limits<double>::infinity();
    return result;
  }
  result.loss = -lat.log_likelihood;

  // Occupancy of column c at frame t: all paths through any state labelled c.
  std::vector<double> occupancy(C);
  auto lp = log_probs.data();
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kLogZero);
    for (std::size_t s = 0; s < S; ++s) {
      const auto c = static_cast<std::size_t>(lat.extended_labels[s]);
      const double a = lat.alpha_at(t, s), b = lat.beta_at(t, s);
      if (a == kLogZero || b == kLogZero) continue;
      occupancy[c] = log_add(occupancy[c], a + b - lp[t * C + c]);
    }
    for (std::size_t c = 0; c < C; ++c) {
      if (occupancy[c] != kLogZero) result.grad[t * C + c] = -std::exp(occupancy[c] - lat.log_likelihood);
    }
  }
  return result;
}

Tensor ctc_loss_op(const Tensor& log_probs, std::span<const int> labels, int blank) {
  CtcLossResult r = ctc_loss(log_probs, labels, blank);
  if (!std::isfinite(r.loss)) {
    throw InputError("target of length " + std::to_string(labels.size()) + " cannot be emitted in " +
                     std::to_string(log_probs.rows()) + " frames");
  }
  Tensor out({1}, {r.loss});
  GradTape* tape = GradTape::current();
  if (tape != nullptr && log_probs.requires_grad()) {
    tape->record({log_probs}, out, [log_probs, out, grad = std::move(r.grad)](GradTape& t) {
      const double g = t.gradient(out)[0];
      auto dst = t.grad_buffer(log_probs);
      for (std::size_t i = 0; i < grad.size(); ++i) dst[i] += g * grad[i];
    });
  }
  return out;
}

std::uint64_t count_alignments(std::size_t frames, std::span<const int> labels) {
  if (frames < min_frames(labels)) return 0;
  // The blank id only needs to differ from every label.
  int blank = -1;
  for (int id : labels) blank = std::min(blank, id - 1);
  const std::vector<int> ext = extend_with_blanks(labels, blank);
  const std::size_t S = ext.size();
  if (frames == 0) return labels.empty() ? 1 : 0;

  auto add = [](std::uint64_t a, std::uint64_t b) {
    std::uint64_t r = 0;
    if (__builtin_add_overflow(a, b, &r)) throw BoundError("alignment count overflows 64 bits");
    return r;
  };
  std::vector<std::uint64_t> cur(S, 0), next(S, 0);
  cur[0] = 1;
  if (S > 1) cur[1] = 1;
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      std::uint64_t acc = cur[s];
      if (s >= 1) acc = add(acc, cur[s - 1]);
      if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]) acc = add(acc, cur[s - 2]);
      next[s] = acc;
    }
    std::swap(cur, next);
  }
  return S > 1 ? add(cur[S - 1], cur[S - 2]) : cur[S - 1];
}

double ctc_oracle_loss(const Tensor& log_probs, std::span<const int> labels, int blank) {
  validate_inputs(log_probs, labels, blank);
  const std::size_t T = log_probs.rows(), C = log_probs.cols();
  if (T > kOracleMaxFrames || C > kOracleMaxLabels + 1) {
    throw BoundError("oracle enumeration limited to T <= " + std::to_string(kOracleMaxFrames) +
                     " and V <= " + std::to_string(kOracleMaxLabels) + ", got T=" + std::to_string(T) +
                     " V=" + std::to_string(C - 1));
  }
  auto lp = log_probs.data();
  std::vector<int> path(T, 0);
  std::vector<double> masses;
  while (true) {
    if (collapse(path, blank) == LabelSequence(labels.begin(), labels.end())) {
      double m = 0.0;
      for (std::size_t t = 0; t < T; ++t) m += lp[t * C + static_cast<std::size_t>(path[t])];
      masses.push_back(m);
    }
    std::size_t pos = 0;
    while (pos < T && ++path[pos] == static_cast<int>(C)) path[pos++] = 0;
    if (pos == T) break;
  }
  return -log_sum_exp(masses);
}

}  // namespace ctcnat
