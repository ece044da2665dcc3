// stc/stc_impls.h

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

// Three implementations of the STC loss with increasing efficiency:
//
//  - memoized:   top-down recursion over (frames consumed, target consumed),
//                splitting off the leading repeat run of the target, with a
//                hash-map memo. Segment scores are summed frame by frame.
//  - tabulated:  bottom-up forward/backward tables over (run, frame) with
//                O(1) segment scores from cumulative sums and a log-sum-exp
//                per state.
//  - vectorized: the same tables, with the inner accumulation rewritten as
//                scaled exp-domain dot products (no transcendental calls in
//                the inner loop); falls back to log-domain per state when
//                scaling would lose precision.
//
// All three return the gradient w.r.t. the log-probability lattice.

#ifndef STC_STC_IMPLS_H_
#define STC_STC_IMPLS_H_

#include <span>
#include <string_view>

#include "stc/seqloss.h"

namespace stc {

enum class StcNormalization {
  /// Divide each alignment by the product of its input run lengths; the
  /// resulting P(y|x) sums to one over all targets.
  formula,
  /// Divide by the *output* run length instead (log(prefixLength) in the
  /// reference recursion). Kept for comparison; does not normalize.
  listing,
};

/// Top-down recursion transcribed from the reference pseudo-code, with the
/// slack taken as T - |y|.
LossResult stc_loss_naive(const Matrix& log_probs, std::span<const Token> target,
                          StcNormalization normalization);

LossResult stc_loss_tabulated(const Matrix& log_probs, std::span<const Token> target);
LossResult stc_loss_vectorized(const Matrix& log_probs, std::span<const Token> target);

enum class StcImpl { memoized, tabulated, vectorized };

std::string_view to_string(StcImpl impl);
StcImpl parse_stc_impl(std::string_view name);
LossResult stc_loss_by(StcImpl impl, const Matrix& log_probs, std::span<const Token> target);

}  // namespace stc

#endif  // STC_STC_IMPLS_H_
