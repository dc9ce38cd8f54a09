#pragma once

namespace ctcnat {

// Reserved token ids shared by the vocabulary, the models and the decoders.
// The CTC blank is a real output column (id 0); eos doubles as the
// autoregressive start-of-sequence input.
inline constexpr int kBlankId = 0;
inline constexpr int kPadId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

}  // namespace ctcnat
