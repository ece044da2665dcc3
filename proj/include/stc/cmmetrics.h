// stc/cmmetrics.h

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

// Word error rate and its split into code-switch points (reference words
// next to a word of another language) and the remaining positions.

#ifndef STC_CMMETRICS_H_
#define STC_CMMETRICS_H_

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stc/seqloss.h"

namespace stc {

enum class EditKind : char { C = 'C', S = 'S', D = 'D', I = 'I' };

struct EditOp {
  EditKind kind;
  std::optional<std::size_t> ref;
  std::optional<std::size_t> hyp;

  bool operator==(const EditOp&) const = default;
};

struct ErrorCounts {
  std::size_t S = 0, D = 0, I = 0, C = 0;

  std::size_t errors() const { return S + D + I; }
  /// (S + D + I) / (S + D + C), with 0/0 = 0.
  double wer() const;
  ErrorCounts& operator+=(const ErrorCounts& o);
  bool operator==(const ErrorCounts&) const = default;
};

struct EditAlignment {
  std::vector<EditOp> ops;  // in reference/hypothesis order

  ErrorCounts counts() const;
  std::size_t cost() const { return counts().errors(); }
};

/// Unit-cost Levenshtein alignment. Among minimal alignments the backtrace
/// (from the end) prefers C, then S, then D, then I.
EditAlignment edit_align(std::span<const std::string> ref, std::span<const std::string> hyp);

double wer(const EditAlignment& alignment);

using CsPointSet = std::set<std::size_t>;

/// Positions whose left or right neighbor carries a different language
/// token. Requires a word-level sequence with one token per word.
CsPointSet cs_points(std::span<const std::string> ref, const LidSequence& lids);

/// Mistakes at code-switch points (M), correct code-switch points (N), and
/// the same split over the other reference positions. Every insertion is
/// charged to the non-code-switch bucket.
struct CmCounts {
  std::size_t M = 0, N = 0;
  std::size_t non_errors = 0, non_words = 0;

  double cm() const;      // M / (M + N)
  double non_cm() const;  // non_errors / non_words
  CmCounts& operator+=(const CmCounts& o);
  bool operator==(const CmCounts&) const = default;
};

CmCounts cm_counts(const EditAlignment& alignment, const CsPointSet& points);

struct CmWer {
  double cm = 0.0;
  double non_cm = 0.0;
};

CmWer cm_wer(const EditAlignment& alignment, const CsPointSet& points);

struct UttScore {
  std::string id;
  ErrorCounts counts;
  CmCounts cm;
};

struct CorpusScore {
  std::vector<UttScore> utts;
  ErrorCounts counts;
  CmCounts cm;
};

struct ScoringInput {
  std::string id;
  std::vector<std::string> ref, hyp;
  LidSequence lids;  // word level, parallel to ref
};

/// Scores every utterance; totals are summed in input order.
CorpusScore score_corpus(std::span<const ScoringInput> utts);

}  // namespace stc

#endif  // STC_CMMETRICS_H_
