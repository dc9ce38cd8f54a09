#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ctcnat/errors.hpp"
#include "ctcnat/ops.hpp"
#include "ctcnat/symbols.hpp"
#include "ctcnat/transformer.hpp"
#include "test_support.hpp"

using namespace ctcnat;
using namespace ctcnat::testing;

namespace {

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  const auto d = t.data();
  return std::vector<double>(d.begin() + static_cast<long>(r * t.cols()), d.begin() + static_cast<long>((r + 1) * t.cols()));
}

void expect_rows_normalized(const Tensor& lp) {
  for (std::size_t r = 0; r < lp.rows(); ++r) EXPECT_NEAR(log_sum_exp(row_of(lp, r)), 0.0, 1e-9);
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny_config(Variant::kEncoderDecoder);
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(Variant::kEncoderDecoder);
  c.k = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(Variant::kDeepEncoder);
  c.dec_layers = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(Variant::kEncoderDecoder);
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, VariantNames) {
  for (Variant v : {Variant::kDeepEncoder, Variant::kEncoderDecoder, Variant::kEncoderDecoderPosEnc,
                    Variant::kAutoregressive}) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  }
  EXPECT_THROW(parse_variant("transformer"), ConfigError);
}

TEST(Params, LayoutDeterminedByConfig) {
  const ModelConfig c = tiny_config(Variant::kEncoderDecoder);
  const ModelParams a = init_params(c, 1), b = init_params(c, 2);
  ASSERT_EQ(a.size(), b.size());
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    EXPECT_EQ(ia->first, ib->first);
    EXPECT_EQ(ia->second.shape(), ib->second.shape());
  }
  EXPECT_EQ(a.at("split.w").shape(), (Shape{8, 16}));
  EXPECT_EQ(a.at("split.b").shape(), (Shape{16}));
  EXPECT_NO_THROW(check_params(c, a));

  std::size_t n = 0;
  for (const auto& [name, t] : a) n += t.size();
  EXPECT_EQ(n, param_count(c));

  const ModelParams deep = init_params(tiny_config(Variant::kDeepEncoder), 1);
  for (const auto& [name, t] : deep) EXPECT_NE(name.rfind("dec.", 0), 0u) << name;
  EXPECT_THROW(check_params(c, deep), ConfigError);

  const ModelParams ar = init_params(tiny_config(Variant::kAutoregressive), 1);
  EXPECT_EQ(ar.count("split.w"), 0u);
}

TEST(Encode, ShapeAndErrors) {
  const ModelConfig c = tiny_config(Variant::kEncoderDecoder);
  const ModelParams p = init_params(c, 3);
  const std::vector<int> src{4, 5, 6};
  const EncoderStates enc = encode(c, p, src);
  EXPECT_EQ(enc.states.shape(), (Shape{3, 8}));
  EXPECT_THROW(encode(c, p, std::vector<int>{4, 10}), VocabularyError);
  EXPECT_THROW(encode(c, p, std::vector<int>(17, 4)), LengthError);
  EXPECT_THROW(encode(c, p, std::vector<int>{}), LengthError);
}

TEST(Encode, DeterministicAtInference) {
  ModelConfig c = tiny_config(Variant::kEncoderDecoder);
  c.dropout_rate = 0.3;
  const ModelParams p = init_params(c, 3);
  const std::vector<int> src{4, 5, 6, 7};
  const Tensor a = nar_log_probs(c, p, src), b = nar_log_probs(c, p, src);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  std::mt19937_64 rng(1);
  ForwardOptions train;
  train.training = true;
  train.rng = &rng;
  const Tensor d = nar_log_probs(c, p, src, train);
  EXPECT_GT(max_abs_diff(a.data(), d.data()), 1e-6);
}

TEST(Encode, PermutationEquivariantWithoutPositions) {
  const ModelConfig c = tiny_config(Variant::kEncoderDecoder);
  const ModelParams p = init_params(c, 4);
  const std::vector<int> src{4, 7, 5, 9};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<int> permuted;
  for (std::size_t i : perm) permuted.push_back(src[i]);
  ForwardOptions no_pos;
  no_pos.positional_encoding = false;
  const Tensor a = encode(c, p, src, no_pos).states;
  const Tensor b = encode(c, p, permuted, no_pos).states;
  for (std::size_t r = 0; r < perm.size(); ++r) {
    EXPECT_LT(max_abs_diff(row_of(b, r), row_of(a, perm[r])), 1e-12);
  }
}

TEST(Split, LengthIsKTimesSource) {
  for (std::size_t k = 1; k <= 4; ++k) {
    ModelConfig c = tiny_config(Variant::kEncoderDecoder);
    c.k = k;
    const ModelParams p = init_params(c, 5);
    for (std::size_t T = 1; T <= 10; ++T) {
      const std::vector<int> src(T, 4);
      EXPECT_EQ(split_states(p, encode(c, p, src), k).length(), k * T);
    }
  }
}

TEST(Split, IdentityProjection) {
  const std::size_t d = 3;
  ModelParams p;
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  p.emplace("split.w", Tensor({d, d}, eye));
  p.emplace("split.b", Tensor::zeros({d}));
  const EncoderStates enc{Tensor::from_rows({{1, 2, 3}, {4, 5, 6}})};
  const SplitStates s = split_states(p, enc, 1);
  EXPECT_TRUE(std::equal(s.states.data().begin(), s.states.data().end(), enc.states.data().begin()));
}

TEST(Split, StackedProjectionIsSliceMajor) {
  // W = [I | 2I] so slice 0 of h is h and slice 1 is 2h.
  const std::size_t d = 2;
  ModelParams p;
  p.emplace("split.w", Tensor::from_rows({{1, 0, 2, 0}, {0, 1, 0, 2}}));
  p.emplace("split.b", Tensor::zeros({2 * d}));
  const EncoderStates enc{Tensor::from_rows({{1.5, -2.0}, {3.0, 0.25}})};
  const SplitStates s = split_states(p, enc, 2);
  ASSERT_EQ(s.states.shape(), (Shape{4, 2}));
  EXPECT_EQ(row_of(s.states, 0), (std::vector<double>{1.5, -2.0}));
  EXPECT_EQ(row_of(s.states, 1), (std::vector<double>{3.0, -4.0}));
  EXPECT_EQ(row_of(s.states, 2), (std::vector<double>{3.0, 0.25}));
  EXPECT_EQ(row_of(s.states, 3), (std::vector<double>{6.0, 0.5}));
  EXPECT_THROW(split_states(p, enc, 3), DimensionError);
}

TEST(DecodeParallel, RowsAreLogDistributions) {
  for (Variant v : {Variant::kDeepEncoder, Variant::kEncoderDecoder, Variant::kEncoderDecoderPosEnc}) {
    const ModelConfig c = tiny_config(v);
    const ModelParams p = init_params(c, 6);
    const Tensor lp = nar_log_probs(c, p, std::vector<int>{4, 5, 6});
    EXPECT_EQ(lp.shape(), (Shape{6, 10}));
    expect_rows_normalized(lp);
  }
}

TEST(DecodeParallel, VariantsWithEqualDepthShareOutputShape) {
  ModelConfig deep = tiny_config(Variant::kDeepEncoder);
  deep.enc_layers = 2;
  const ModelConfig ed = tiny_config(Variant::kEncoderDecoder);
  const ModelConfig pe = tiny_config(Variant::kEncoderDecoderPosEnc);
  const std::vector<int> src{4, 5, 6, 7, 8};
  const Shape a = nar_log_probs(deep, init_params(deep, 1), src).shape();
  EXPECT_EQ(a, nar_log_probs(ed, init_params(ed, 1), src).shape());
  EXPECT_EQ(a, nar_log_probs(pe, init_params(pe, 1), src).shape());
}

TEST(DecodeParallel, RejectsAutoregressiveVariant) {
  const ModelConfig c = tiny_config(Variant::kAutoregressive);
  const ModelParams p = init_params(c, 1);
  const EncoderStates enc = encode(c, p, std::vector<int>{4, 5});
  EXPECT_THROW(decode_parallel(c, p, SplitStates{enc.states}, enc), ConfigError);
}

TEST(DecodeParallel, PermutingSplitStatesPermutesRows) {
  const ModelConfig c = tiny_config(Variant::kEncoderDecoder);
  const ModelParams p = init_params(c, 8);
  const EncoderStates enc = encode(c, p, std::vector<int>{4, 5, 6});
  const SplitStates s = split_states(p, enc, c.k);
  const std::vector<std::size_t> perm{3, 5, 0, 1, 4, 2};
  std::vector<Tensor> rows;
  for (std::size_t i : perm) rows.push_back(slice_rows(s.states, i, 1));
  const Tensor a = decode_parallel(c, p, s, enc);
  const Tensor b = decode_parallel(c, p, SplitStates{concat_rows(rows)}, enc);
  for (std::size_t r = 0; r < perm.size(); ++r) EXPECT_LT(max_abs_diff(row_of(b, r), row_of(a, perm[r])), 1e-12);
}

TEST(Masks, CausalDecoderIgnoresFutureInputs) {
  const ModelConfig c = tiny_config(Variant::kAutoregressive, 12);
  ModelParams p = init_params(c, 9);
  const EncoderStates enc = encode(c, p, std::vector<int>{4, 5, 6});
  const std::vector<int> inputs{kEosId, 4, 5, 6, 7, 8};  // distinct tokens
  const Tensor base = decode_teacher_forced(c, p, enc, inputs);
  const std::size_t future = 4;  // token 7 appears only at position 4
  auto embed = p.at("embed").mutable_data();
  const double h = 1e-5;
  for (std::size_t j = 0; j < c.d_model; ++j) {
    double& w = embed[static_cast<std::size_t>(inputs[future]) * c.d_model + j];
    const double saved = w;
    w = saved + h;
    const Tensor up = decode_teacher_forced(c, p, enc, inputs);
    w = saved - h;
    const Tensor down = decode_teacher_forced(c, p, enc, inputs);
    w = saved;
    for (std::size_t r = 0; r < future; ++r) {
      for (std::size_t col = 0; col < c.vocab_size; ++col) {
        EXPECT_EQ((up.at(r, col) - down.at(r, col)) / (2 * h), 0.0);
      }
    }
    double later = 0.0;
    for (std::size_t col = 0; col < c.vocab_size; ++col) later = std::max(later, std::abs(up.at(future, col) - down.at(future, col)));
    EXPECT_GT(later, 0.0);
  }
  (void)base;
}

TEST(Masks, ParallelDecoderSeesFutureStates) {
  const ModelConfig c = tiny_config(Variant::kEncoderDecoder);
  const ModelParams p = init_params(c, 10);
  const EncoderStates enc = encode(c, p, std::vector<int>{4, 5, 6});
  SplitStates s = split_states(p, enc, c.k);
  s.states = s.states.clone();
  auto data = s.states.mutable_data();
  const double h = 1e-5;
  const std::size_t future_row = 5;
  double max_derivative = 0.0;
  for (std::size_t j = 0; j < c.d_model; ++j) {
    double& x = data[future_row * c.d_model + j];
    const double saved = x;
    x = saved + h;
    const Tensor up = decode_parallel(c, p, s, enc);
    x = saved - h;
    const Tensor down = decode_parallel(c, p, s, enc);
    x = saved;
    for (std::size_t col = 0; col < c.vocab_size; ++col) {
      max_derivative = std::max(max_derivative, std::abs(up.at(0, col) - down.at(0, col)) / (2 * h));
    }
  }
  EXPECT_GT(max_derivative, 1e-6);
}

TEST(Autoregressive, StepMatchesTeacherForced) {
  const ModelConfig c = tiny_config(Variant::kAutoregressive, 12);
  const ModelParams p = init_params(c, 11);
  const EncoderStates enc = encode(c, p, std::vector<int>{4, 5, 6, 7});
  const std::vector<int> prefix{8, 4, 9, 9, 5};
  std::vector<int> inputs{kEosId};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  const Tensor full = decode_teacher_forced(c, p, enc, inputs);
  expect_rows_normalized(full);

  const Tensor step = decode_autoregressive_step(c, p, enc, prefix);
  EXPECT_LT(max_abs_diff(step.data(), row_of(full, 5)), 1e-9);
  EXPECT_NEAR(log_sum_exp(step.data()), 0.0, 1e-9);

  IncrementalDecoder inc(c, p, enc);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> row = inc.step(inputs[i]);
    EXPECT_LT(max_abs_diff(row, row_of(full, i)), 1e-9) << "position " << i;
  }
  EXPECT_EQ(inc.position(), inputs.size());
}

TEST(Autoregressive, IncrementalDecoderCopiesBranch) {
  const ModelConfig c = tiny_config(Variant::kAutoregressive, 12);
  const ModelParams p = init_params(c, 12);
  const EncoderStates enc = encode(c, p, std::vector<int>{4, 5});
  IncrementalDecoder a(c, p, enc);
  a.step(kEosId);
  a.step(6);
  IncrementalDecoder b = a;
  const auto ra = a.step(7);
  const auto rb = b.step(7);
  EXPECT_EQ(ra, rb);
  EXPECT_NE(b.step(8), a.step(9));
}

TEST(Inference, FastPathMatchesTapedPath) {
  for (Variant v : {Variant::kDeepEncoder, Variant::kEncoderDecoder, Variant::kEncoderDecoderPosEnc}) {
    ModelConfig c = tiny_config(v);
    c.heads = 4;
    const ModelParams p = init_params(c, 13);
    const std::vector<int> src{4, 9, 5, 5, 7};
    const Tensor fast = nar_log_probs(c, p, src);
    GradTape tape;
    TapeScope scope(tape);
    const Tensor taped = nar_log_probs(c, p, src);
    EXPECT_LT(max_abs_diff(fast.data(), taped.data()), 1e-12) << variant_name(v);
  }
  const ModelConfig ar = tiny_config(Variant::kAutoregressive);
  const ModelParams pa = init_params(ar, 14);
  const std::vector<int> src{6, 4, 8};
  const Tensor fast = encode(ar, pa, src).states;
  GradTape tape;
  TapeScope scope(tape);
  EXPECT_LT(max_abs_diff(fast.data(), encode(ar, pa, src).states.data()), 1e-12);
}
