// stc/stc_impls.cc

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

#include "stc/stc_impls.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>

namespace stc {

namespace {

struct Run {
  Token token;
  std::size_t length;
};

std::vector<Run> target_runs(std::span<const Token> target) {
  std::vector<Run> runs;
  for (Token t : target) {
    if (!runs.empty() && runs.back().token == t)
      ++runs.back().length;
    else
      runs.push_back({t, 1});
  }
  return runs;
}

void check_target(const Matrix& log_probs, std::span<const Token> target) {
  for (Token t : target)
    if (t < 0 || static_cast<std::size_t>(t) >= log_probs.cols())
      throw Error("target token " + std::to_string(t) + " outside vocabulary of size " +
                  std::to_string(log_probs.cols()));
}

// Returns true (and fills the trivial result) for the cases settled without a DP.
bool trivial_case(const Matrix& log_probs, std::span<const Token> target, LossResult& out) {
  check_target(log_probs, target);
  out = LossResult{kInf, Matrix(log_probs.rows(), log_probs.cols())};
  if (target.empty()) {
    if (log_probs.rows() == 0) out.loss = 0.0;
    return true;
  }
  return target.size() > log_probs.rows();
}

// Cumulative sums of the finite entries of one lattice column, with a
// running count of -inf entries; segment [s, e) scores C[e] - C[s] unless it
// contains a -inf.
struct ColumnPrefix {
  std::vector<double> sum;
  std::vector<std::uint32_t> zeros;

  ColumnPrefix(const Matrix& lp, Token c) : sum(lp.rows() + 1, 0.0), zeros(lp.rows() + 1, 0) {
    for (std::size_t t = 0; t < lp.rows(); ++t) {
      const double v = lp(t, c);
      const bool z = v == kLogZero;
      sum[t + 1] = sum[t] + (z ? 0.0 : v);
      zeros[t + 1] = zeros[t] + (z ? 1 : 0);
    }
  }
  double segment(std::size_t s, std::size_t e) const {
    return zeros[e] != zeros[s] ? kLogZero : sum[e] - sum[s];
  }
};

std::vector<double> log_table(std::size_t n) {
  std::vector<double> t(n + 1, kLogZero);
  for (std::size_t i = 1; i <= n; ++i) t[i] = std::log(static_cast<double>(i));
  return t;
}

// Prefix sums of run minimum lengths: min_frames[j] = sum_{i<j} runs[i].length.
std::vector<std::size_t> min_frames(const std::vector<Run>& runs) {
  std::vector<std::size_t> m(runs.size() + 1, 0);
  for (std::size_t j = 0; j < runs.size(); ++j) m[j + 1] = m[j] + runs[j].length;
  return m;
}

// ---------------------------------------------------------------------------
// Memoized top-down recursion.

class NaiveStc {
 public:
  NaiveStc(const Matrix& lp, std::span<const Token> y, StcNormalization norm)
      : lp_(lp), y_(y), norm_(norm) {}

  double solve(std::size_t t0, std::size_t j0) {
    if (j0 == y_.size()) return t0 != lp_.rows() ? kInf : 0.0;
    const std::uint64_t k = key(t0, j0);
    if (auto it = memo_.find(k); it != memo_.end()) return it->second;

    terms_scratch(t0, j0, /*fill_children=*/true);
    double best = kInf;
    for (const auto& term : terms_) best = std::min(best, term.loss);
    double value = kInf;
    if (best != kInf) {
      double s = 0.0;
      for (const auto& term : terms_) s += std::exp(best - term.loss);
      value = best - std::log(s);
    }
    memo_.emplace(k, value);
    return value;
  }

  LossResult run() {
    LossResult out{solve(0, 0), Matrix(lp_.rows(), lp_.cols())};
    if (!std::isfinite(out.loss)) {
      out.loss = kInf;
      return out;
    }
    // Reverse sweep: the recursion only moves to larger target offsets, so
    // visiting memo entries by increasing j0 is a topological order.
    std::vector<std::uint64_t> keys;
    keys.reserve(memo_.size());
    for (const auto& kv : memo_) keys.push_back(kv.first);
    std::sort(keys.begin(), keys.end(), [&](std::uint64_t a, std::uint64_t b) {
      return std::pair(a % stride(), a / stride()) < std::pair(b % stride(), b / stride());
    });
    std::unordered_map<std::uint64_t, double> adjoint;
    adjoint[key(0, 0)] = 1.0;
    for (std::uint64_t k : keys) {
      const auto it = adjoint.find(k);
      if (it == adjoint.end() || it->second == 0.0) continue;
      const double adj = it->second;
      const std::size_t t0 = k / stride(), j0 = k % stride();
      const double value = memo_.at(k);
      if (!std::isfinite(value)) continue;
      const std::size_t prefix_len = terms_scratch(t0, j0, /*fill_children=*/false);
      const Token prefix = y_[j0];
      for (const auto& term : terms_) {
        if (!std::isfinite(term.loss)) continue;
        const double w = adj * std::exp(value - term.loss);
        for (std::size_t u = 0; u < term.frames; ++u) out.grad(t0 + u, prefix) -= w;
        if (j0 + prefix_len < y_.size()) adjoint[key(t0 + term.frames, j0 + prefix_len)] += w;
      }
    }
    return out;
  }

 private:
  struct Term {
    std::size_t frames;
    double loss;
  };

  std::size_t stride() const { return y_.size() + 1; }
  std::uint64_t key(std::size_t t0, std::size_t j0) const { return t0 * stride() + j0; }

  // Fills terms_ for entry (t0, j0); returns the repeat-prefix length.
  std::size_t terms_scratch(std::size_t t0, std::size_t j0, bool fill_children) {
    const std::size_t rem_w = lp_.rows() - t0, rem_y = y_.size() - j0;
    std::size_t prefix_len = 1;
    while (j0 + prefix_len < y_.size() && y_[j0 + prefix_len] == y_[j0]) ++prefix_len;
    const Token prefix = y_[j0];
    std::vector<Term> terms;
    for (std::size_t x = 0; x + rem_y <= rem_w; ++x) {
      const std::size_t frames = prefix_len + x;
      double neg_log_prob = 0.0;
      for (std::size_t u = 0; u < frames; ++u) neg_log_prob -= lp_(t0 + u, prefix);
      const double rem_loss = fill_children ? solve(t0 + frames, j0 + prefix_len)
                                            : lookup(t0 + frames, j0 + prefix_len);
      const double norm = std::log(static_cast<double>(
          norm_ == StcNormalization::formula ? frames : prefix_len));
      terms.push_back({frames, neg_log_prob + rem_loss + norm});
    }
    terms_ = std::move(terms);
    return prefix_len;
  }

  double lookup(std::size_t t0, std::size_t j0) const {
    if (j0 == y_.size()) return t0 == lp_.rows() ? 0.0 : kInf;
    return memo_.at(key(t0, j0));
  }

  const Matrix& lp_;
  std::span<const Token> y_;
  StcNormalization norm_;
  std::unordered_map<std::uint64_t, double> memo_;
  std::vector<Term> terms_;
};

}  // namespace

LossResult stc_loss_naive(const Matrix& log_probs, std::span<const Token> target,
                          StcNormalization normalization) {
  LossResult out;
  if (trivial_case(log_probs, target, out)) return out;
  return NaiveStc(log_probs, target, normalization).run();
}

// ---------------------------------------------------------------------------
// Bottom-up tabulation, log-sum-exp per state.

LossResult stc_loss_tabulated(const Matrix& log_probs, std::span<const Token> target) {
  LossResult out;
  if (trivial_case(log_probs, target, out)) return out;

  const std::size_t frames = log_probs.rows();
  const auto runs = target_runs(target);
  const std::size_t num_runs = runs.size();
  const auto minf = min_frames(runs);
  const std::size_t total = minf[num_runs];
  const auto logn = log_table(frames);

  std::vector<ColumnPrefix> cols;
  cols.reserve(num_runs);
  for (const auto& r : runs) cols.emplace_back(log_probs, r.token);

  // alpha(j, t): first j runs emitted over frames [0, t).
  // beta(j, t): runs j+1..K emitted over frames [t, T).
  Matrix alpha(num_runs + 1, frames + 1, kLogZero);
  Matrix beta(num_runs + 1, frames + 1, kLogZero);
  alpha(0, 0) = 0.0;
  std::vector<double> buf;
  for (std::size_t j = 1; j <= num_runs; ++j) {
    const std::size_t m = runs[j - 1].length;
    const auto& col = cols[j - 1];
    for (std::size_t e = minf[j]; e + (total - minf[j]) <= frames; ++e) {
      buf.clear();
      for (std::size_t s = minf[j - 1]; s + m <= e; ++s) {
        if (alpha(j - 1, s) == kLogZero) continue;
        const double seg = col.segment(s, e);
        if (seg == kLogZero) continue;
        buf.push_back(alpha(j - 1, s) + seg - logn[e - s]);
      }
      if (!buf.empty()) alpha(j, e) = log_sum_exp(buf);
    }
  }
  const double log_z = alpha(num_runs, frames);
  if (log_z == kLogZero) return out;
  out.loss = -log_z;

  beta(num_runs, frames) = 0.0;
  for (std::size_t j = num_runs; j >= 1; --j) {
    const std::size_t m = runs[j - 1].length;
    const auto& col = cols[j - 1];
    for (std::size_t s = minf[j - 1]; s + (total - minf[j - 1]) <= frames; ++s) {
      buf.clear();
      for (std::size_t e = s + m; e + (total - minf[j]) <= frames; ++e) {
        if (beta(j, e) == kLogZero) continue;
        const double seg = col.segment(s, e);
        if (seg == kLogZero) continue;
        buf.push_back(seg - logn[e - s] + beta(j, e));
      }
      if (!buf.empty()) beta(j - 1, s) = log_sum_exp(buf);
    }
  }

  std::vector<double> occupancy(frames + 1);
  for (std::size_t j = 1; j <= num_runs; ++j) {
    const std::size_t m = runs[j - 1].length;
    const auto& col = cols[j - 1];
    std::fill(occupancy.begin(), occupancy.end(), 0.0);
    for (std::size_t s = minf[j - 1]; s < frames; ++s) {
      if (alpha(j - 1, s) == kLogZero) continue;
      for (std::size_t e = s + m; e <= frames; ++e) {
        if (beta(j, e) == kLogZero) continue;
        const double seg = col.segment(s, e);
        if (seg == kLogZero) continue;
        const double p = std::exp(alpha(j - 1, s) + seg - logn[e - s] + beta(j, e) - log_z);
        occupancy[s] += p;
        occupancy[e] -= p;
      }
    }
    double run = 0.0;
    const Token c = runs[j - 1].token;
    for (std::size_t t = 0; t < frames; ++t) {
      run += occupancy[t];
      out.grad(t, c) -= run;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bottom-up tabulation with exp-domain inner loops.

namespace {

// Below this a scaled sum may have lost digits to underflow.
constexpr double kScaledFloor = 1e-250;
// Above this exp(scale) risks overflow in the posterior pass.
constexpr double kMaxScale = 600.0;

double max_finite(std::span<const double> v) {
  double m = kLogZero;
  for (double x : v)
    if (x > m) m = x;
  return m;
}

}  // namespace

LossResult stc_loss_vectorized(const Matrix& log_probs, std::span<const Token> target) {
  LossResult out;
  if (trivial_case(log_probs, target, out)) return out;

  const std::size_t frames = log_probs.rows();
  const auto runs = target_runs(target);
  const std::size_t num_runs = runs.size();
  const auto minf = min_frames(runs);
  const std::size_t total = minf[num_runs];
  const auto logn = log_table(frames);
  std::vector<double> inv(frames + 1, 0.0);
  for (std::size_t i = 1; i <= frames; ++i) inv[i] = 1.0 / static_cast<double>(i);

  std::vector<ColumnPrefix> cols;
  cols.reserve(num_runs);
  for (const auto& r : runs) cols.emplace_back(log_probs, r.token);

  // Valid segment [s, e) for column c: lo[e] <= s, i.e. no -inf in between.
  // lo[e] = 1 + last -inf frame before e; hi[s] = first -inf frame at or after s.
  auto bounds = [&](const ColumnPrefix& col, std::vector<std::size_t>& lo, std::vector<std::size_t>& hi) {
    lo.assign(frames + 1, 0);
    hi.assign(frames + 1, frames);
    for (std::size_t t = 1; t <= frames; ++t)
      lo[t] = col.zeros[t] != col.zeros[t - 1] ? t : lo[t - 1];
    for (std::size_t t = frames; t-- > 0;)
      hi[t] = col.zeros[t + 1] != col.zeros[t] ? t : hi[t + 1];
  };

  std::vector<double> alpha((num_runs + 1) * (frames + 1), kLogZero);
  std::vector<double> beta((num_runs + 1) * (frames + 1), kLogZero);
  auto A = [&](std::size_t j, std::size_t t) -> double& { return alpha[j * (frames + 1) + t]; };
  auto B = [&](std::size_t j, std::size_t t) -> double& { return beta[j * (frames + 1) + t]; };

  std::vector<double> shifted(frames + 1), scaled(frames + 1);
  std::vector<std::size_t> lo, hi;

  A(0, 0) = 0.0;
  for (std::size_t j = 1; j <= num_runs; ++j) {
    const std::size_t m = runs[j - 1].length;
    const auto& col = cols[j - 1];
    bounds(col, lo, hi);
    for (std::size_t s = 0; s <= frames; ++s) shifted[s] = A(j - 1, s) - col.sum[s];
    const double ms = max_finite(shifted);
    if (ms == kLogZero) continue;
    for (std::size_t s = 0; s <= frames; ++s) scaled[s] = std::exp(shifted[s] - ms);

    for (std::size_t e = minf[j]; e + (total - minf[j]) <= frames; ++e) {
      const std::size_t s0 = std::max(minf[j - 1], lo[e]);
      if (s0 + m > e) continue;
      const std::size_t s1 = e - m;
      double acc = 0.0;
      const double* sc = scaled.data();
      const double* iv = inv.data() + e;
      for (std::size_t s = s0; s <= s1; ++s) acc += sc[s] * iv[-static_cast<std::ptrdiff_t>(s)];
      if (acc > kScaledFloor) {
        A(j, e) = col.sum[e] + ms + std::log(acc);
      } else {
        double best = kLogZero;
        for (std::size_t s = s0; s <= s1; ++s) best = std::max(best, shifted[s] - logn[e - s]);
        if (best == kLogZero) continue;
        double sum = 0.0;
        for (std::size_t s = s0; s <= s1; ++s) sum += std::exp(shifted[s] - logn[e - s] - best);
        A(j, e) = col.sum[e] + best + std::log(sum);
      }
    }
  }
  const double log_z = A(num_runs, frames);
  if (log_z == kLogZero) return out;
  out.loss = -log_z;

  B(num_runs, frames) = 0.0;
  std::vector<double> bshift(frames + 1), bscaled(frames + 1);
  std::vector<double> occupancy(frames + 1);
  for (std::size_t j = num_runs; j >= 1; --j) {
    const std::size_t m = runs[j - 1].length;
    const auto& col = cols[j - 1];
    bounds(col, lo, hi);
    for (std::size_t e = 0; e <= frames; ++e) bshift[e] = B(j, e) + col.sum[e];
    const double mb = max_finite(bshift);
    if (mb == kLogZero) continue;
    for (std::size_t e = 0; e <= frames; ++e) bscaled[e] = std::exp(bshift[e] - mb);

    const std::size_t e_max = frames - (total - minf[j]);
    for (std::size_t s = minf[j - 1]; s + (total - minf[j - 1]) <= frames; ++s) {
      const std::size_t e0 = s + m, e1 = std::min(e_max, hi[s]);
      if (e0 > e1) continue;
      double acc = 0.0;
      const double* bs = bscaled.data();
      const double* iv = inv.data() - static_cast<std::ptrdiff_t>(s);
      for (std::size_t e = e0; e <= e1; ++e) acc += bs[e] * iv[e];
      if (acc > kScaledFloor) {
        B(j - 1, s) = -col.sum[s] + mb + std::log(acc);
      } else {
        double best = kLogZero;
        for (std::size_t e = e0; e <= e1; ++e) best = std::max(best, bshift[e] - logn[e - s]);
        if (best == kLogZero) continue;
        double sum = 0.0;
        for (std::size_t e = e0; e <= e1; ++e) sum += std::exp(bshift[e] - logn[e - s] - best);
        B(j - 1, s) = -col.sum[s] + best + std::log(sum);
      }
    }

    // Segment posteriors p(s, e) = exp(shifted[s] + bshift[e] - log(e-s) - logZ).
    for (std::size_t s = 0; s <= frames; ++s) shifted[s] = A(j - 1, s) - col.sum[s];
    const double ms = max_finite(shifted);
    std::fill(occupancy.begin(), occupancy.end(), 0.0);
    if (ms != kLogZero) {
      const double scale = ms + mb - log_z;
      const bool exp_domain = scale < kMaxScale;
      const double factor = exp_domain ? std::exp(scale) : 0.0;
      for (std::size_t s = minf[j - 1]; s + (total - minf[j - 1]) <= frames; ++s) {
        if (shifted[s] == kLogZero) continue;
        const std::size_t e0 = s + m, e1 = std::min(e_max, hi[s]);
        if (e0 > e1) continue;
        double row = 0.0;
        if (exp_domain) {
          const double a = std::exp(shifted[s] - ms) * factor;
          const double* iv = inv.data() - static_cast<std::ptrdiff_t>(s);
          for (std::size_t e = e0; e <= e1; ++e) {
            const double p = a * bscaled[e] * iv[e];
            occupancy[e] -= p;
            row += p;
          }
        } else {
          for (std::size_t e = e0; e <= e1; ++e) {
            const double lp = shifted[s] + bshift[e] - logn[e - s] - log_z;
            const double p = lp == kLogZero ? 0.0 : std::exp(lp);
            occupancy[e] -= p;
            row += p;
          }
        }
        occupancy[s] += row;
      }
    }
    double run = 0.0;
    const Token c = runs[j - 1].token;
    for (std::size_t t = 0; t < frames; ++t) {
      run += occupancy[t];
      out.grad(t, c) -= run;
    }
  }
  return out;
}

std::string_view to_string(StcImpl impl) {
  switch (impl) {
    case StcImpl::memoized: return "memoized";
    case StcImpl::tabulated: return "tabulated";
    case StcImpl::vectorized: return "vectorized";
  }
  return "?";
}

StcImpl parse_stc_impl(std::string_view name) {
  if (name == "memo" || name == "memoized") return StcImpl::memoized;
  if (name == "table" || name == "tabulated") return StcImpl::tabulated;
  if (name == "vec" || name == "vectorized") return StcImpl::vectorized;
  throw Error("unknown STC implementation '" + std::string(name) + "'");
}

LossResult stc_loss_by(StcImpl impl, const Matrix& log_probs, std::span<const Token> target) {
  switch (impl) {
    case StcImpl::memoized: return stc_loss_naive(log_probs, target, StcNormalization::formula);
    case StcImpl::tabulated: return stc_loss_tabulated(log_probs, target);
    case StcImpl::vectorized: return stc_loss_vectorized(log_probs, target);
  }
  throw Error("unknown STC implementation");
}

}  // namespace stc
