// stc/cmmetrics.cc

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

#include "stc/cmmetrics.h"

#include <algorithm>

namespace stc {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double ErrorCounts::wer() const { return ratio(S + D + I, S + D + C); }

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  S += o.S;
  D += o.D;
  I += o.I;
  C += o.C;
  return *this;
}

ErrorCounts EditAlignment::counts() const {
  ErrorCounts c;
  for (const EditOp& op : ops) {
    switch (op.kind) {
      case EditKind::C: ++c.C; break;
      case EditKind::S: ++c.S; break;
      case EditKind::D: ++c.D; break;
      case EditKind::I: ++c.I; break;
    }
  }
  return c;
}

EditAlignment edit_align(std::span<const std::string> ref, std::span<const std::string> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1,
                           at(i, j - 1) + 1});

  EditAlignment a;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t cur = at(i, j);
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i - 1, j - 1) == cur) {
      a.ops.push_back({EditKind::C, i - 1, j - 1});
      --i, --j;
    } else if (i > 0 && j > 0 && at(i - 1, j - 1) + 1 == cur) {
      a.ops.push_back({EditKind::S, i - 1, j - 1});
      --i, --j;
    } else if (i > 0 && at(i - 1, j) + 1 == cur) {
      a.ops.push_back({EditKind::D, i - 1, std::nullopt});
      --i;
    } else {
      a.ops.push_back({EditKind::I, std::nullopt, j - 1});
      --j;
    }
  }
  std::reverse(a.ops.begin(), a.ops.end());
  return a;
}

double wer(const EditAlignment& alignment) { return alignment.counts().wer(); }

CsPointSet cs_points(std::span<const std::string> ref, const LidSequence& lids) {
  if (lids.level != LidLevel::word) throw Error("cs_points needs word-level language ids");
  if (lids.tokens.size() != ref.size())
    throw Error("cs_points: " + std::to_string(ref.size()) + " words but " + std::to_string(lids.tokens.size()) +
                " language ids");
  CsPointSet points;
  const auto& t = lids.tokens;
  for (std::size_t i = 0; i < t.size(); ++i)
    if ((i > 0 && t[i - 1] != t[i]) || (i + 1 < t.size() && t[i + 1] != t[i])) points.insert(i);
  return points;
}

double CmCounts::cm() const { return ratio(M, M + N); }
double CmCounts::non_cm() const { return ratio(non_errors, non_words); }

CmCounts& CmCounts::operator+=(const CmCounts& o) {
  M += o.M;
  N += o.N;
  non_errors += o.non_errors;
  non_words += o.non_words;
  return *this;
}

CmCounts cm_counts(const EditAlignment& alignment, const CsPointSet& points) {
  CmCounts c;
  for (const EditOp& op : alignment.ops) {
    if (!op.ref) {
      ++c.non_errors;  // insertion
      continue;
    }
    const bool error = op.kind != EditKind::C;
    if (points.count(*op.ref)) {
      (error ? c.M : c.N) += 1;
    } else {
      ++c.non_words;
      if (error) ++c.non_errors;
    }
  }
  return c;
}

CmWer cm_wer(const EditAlignment& alignment, const CsPointSet& points) {
  const CmCounts c = cm_counts(alignment, points);
  return {c.cm(), c.non_cm()};
}

CorpusScore score_corpus(std::span<const ScoringInput> utts) {
  CorpusScore out;
  for (const ScoringInput& u : utts) {
    const EditAlignment a = edit_align(u.ref, u.hyp);
    UttScore s{u.id, a.counts(), cm_counts(a, cs_points(u.ref, u.lids))};
    out.counts += s.counts;
    out.cm += s.cm;
    out.utts.push_back(std::move(s));
  }
  return out;
}

}  // namespace stc
