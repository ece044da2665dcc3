// stc/bench.h

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

// Timing ladder for the STC implementations. Every run first checks that
// the implementations agree; disagreeing implementations are never timed.

#ifndef STC_BENCH_H_
#define STC_BENCH_H_

#include <optional>
#include <span>

#include "stc/formats.h"
#include "stc/stc_impls.h"

namespace stc {

struct BenchWorkload {
  std::size_t batch = 5;
  std::size_t frames = 60;
  std::size_t target_len = 0;  // 0 means frames / 2
  std::size_t vocab = 6;
  /// "repetitive": each token repeats its predecessor with repeat_prob,
  /// like character-level language IDs. "random": uniform tokens.
  std::string profile = "repetitive";
  double repeat_prob = 0.9;
  std::uint64_t seed = 1;

  std::size_t effective_target_len() const { return target_len == 0 ? frames / 2 : target_len; }
  void validate() const;
};

struct BenchBatch {
  std::vector<Matrix> lattices;
  std::vector<std::vector<Token>> targets;
};

BenchBatch make_workload(const BenchWorkload& w);

struct Agreement {
  double max_loss_diff = 0.0;
  double max_grad_diff = 0.0;
  std::vector<double> losses;  // reference implementation, per batch item
};

/// Compares every implementation against the first on loss and gradient.
/// Throws ConsistencyError naming the pair when losses differ by more than
/// tol (or one side is infinite and the other is not).
Agreement check_agreement(const BenchBatch& batch, std::span<const StcImpl> impls, double tol = 1e-9);

struct BenchTiming {
  StcImpl impl;
  std::size_t iterations = 0;
  double total_seconds = 0.0;
  double seconds_per_iteration = 0.0;
  std::optional<double> speedup_vs_memoized;
};

struct BenchReport {
  BenchWorkload workload;
  Agreement agreement;
  std::vector<BenchTiming> timings;
};

/// One iteration = forward and backward of every batch item.
BenchReport run_bench(const BenchWorkload& w, std::span<const StcImpl> impls, std::size_t iterations);

/// Timing fields live under "timings"; everything else is deterministic.
Json to_json(const BenchReport& report);

}  // namespace stc

#endif  // STC_BENCH_H_
