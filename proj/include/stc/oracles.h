// stc/oracles.h

// Copyright 2026 The STC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Exponential brute-force references for the sequence losses. They walk all
// V^T frame strings and apply the projection definitions literally, so they
// share no code with the dynamic programs they check. Test use only.

#ifndef STC_ORACLES_H_
#define STC_ORACLES_H_

#include <functional>
#include <span>

#include "stc/seqloss.h"

namespace stc::oracle {

inline constexpr std::size_t kMaxFrames = 12;
inline constexpr std::size_t kMaxVocab = 4;

/// Calls fn(alignment, probability) for each of the V^T strings.
void for_each_alignment(const Matrix& log_probs,
                        const std::function<void(std::span<const Token>, double)>& fn);

/// CTC projection: drop repeats, then drop blanks.
std::vector<Token> ctc_project(std::span<const Token> alignment, Token blank);

/// P(y|x) = sum over alignments a with ctc_project(a) == y of P(a|x).
double enumerate_ctc(const Matrix& log_probs, std::span<const Token> target, Token blank);

/// True iff y is one of the outputs of alignment a: same run tokens, each
/// output run no longer than the matching alignment run.
bool stc_produces(std::span<const Token> alignment, std::span<const Token> y);

/// Number of outputs of an alignment: product of its run lengths.
double stc_output_count(std::span<const Token> alignment);

/// P(y|x) = sum over alignments a producing y of P(a|x) / |outputs(a)|.
double enumerate_stc(const Matrix& log_probs, std::span<const Token> target);

/// All sequences over [0, vocab) with lengths in [min_len, max_len].
std::vector<std::vector<Token>> all_sequences(std::size_t vocab, std::size_t min_len,
                                              std::size_t max_len);

}  // namespace stc::oracle

#endif  // STC_ORACLES_H_
