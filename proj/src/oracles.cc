// stc/oracles.cc

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

#include "stc/oracles.h"

#include <cmath>

namespace stc::oracle {

namespace {

void guard(const Matrix& log_probs) {
  if (log_probs.rows() > kMaxFrames || log_probs.cols() > kMaxVocab)
    throw Error("enumeration oracle limited to T <= 12, V <= 4; got " + log_probs.shape());
}

std::vector<std::pair<Token, std::size_t>> runs_of(std::span<const Token> s) {
  std::vector<std::pair<Token, std::size_t>> r;
  for (Token t : s) {
    if (!r.empty() && r.back().first == t)
      ++r.back().second;
    else
      r.emplace_back(t, 1);
  }
  return r;
}

}  // namespace

void for_each_alignment(const Matrix& log_probs,
                        const std::function<void(std::span<const Token>, double)>& fn) {
  guard(log_probs);
  const std::size_t frames = log_probs.rows(), vocab = log_probs.cols();
  std::vector<Token> a(frames, 0);
  while (true) {
    double lp = 0.0;
    for (std::size_t t = 0; t < frames; ++t) lp += log_probs(t, a[t]);
    fn(a, std::exp(lp));
    std::size_t t = 0;
    while (t < frames && ++a[t] == static_cast<Token>(vocab)) a[t++] = 0;
    if (t == frames) break;
  }
}

std::vector<Token> ctc_project(std::span<const Token> alignment, Token blank) {
  std::vector<Token> out;
  for (std::size_t t = 0; t < alignment.size(); ++t) {
    if (t > 0 && alignment[t] == alignment[t - 1]) continue;
    if (alignment[t] != blank) out.push_back(alignment[t]);
  }
  return out;
}

double enumerate_ctc(const Matrix& log_probs, std::span<const Token> target, Token blank) {
  double total = 0.0;
  for_each_alignment(log_probs, [&](std::span<const Token> a, double p) {
    const auto y = ctc_project(a, blank);
    if (std::equal(y.begin(), y.end(), target.begin(), target.end())) total += p;
  });
  return total;
}

bool stc_produces(std::span<const Token> alignment, std::span<const Token> y) {
  const auto ra = runs_of(alignment), ry = runs_of(y);
  if (ra.size() != ry.size()) return false;
  for (std::size_t i = 0; i < ra.size(); ++i)
    if (ra[i].first != ry[i].first || ry[i].second > ra[i].second) return false;
  return true;
}

double stc_output_count(std::span<const Token> alignment) {
  double n = 1.0;
  for (const auto& r : runs_of(alignment)) n *= static_cast<double>(r.second);
  return n;
}

double enumerate_stc(const Matrix& log_probs, std::span<const Token> target) {
  double total = 0.0;
  for_each_alignment(log_probs, [&](std::span<const Token> a, double p) {
    if (stc_produces(a, target)) total += p / stc_output_count(a);
  });
  return total;
}

std::vector<std::vector<Token>> all_sequences(std::size_t vocab, std::size_t min_len,
                                              std::size_t max_len) {
  std::vector<std::vector<Token>> out;
  for (std::size_t len = min_len; len <= max_len; ++len) {
    std::vector<Token> s(len, 0);
    while (true) {
      out.push_back(s);
      std::size_t i = 0;
      while (i < len && ++s[i] == static_cast<Token>(vocab)) s[i++] = 0;
      if (i == len) break;
    }
  }
  return out;
}

}  // namespace stc::oracle
