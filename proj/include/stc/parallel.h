// stc/parallel.h

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

#ifndef STC_PARALLEL_H_
#define STC_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace stc {

/// Worker count: hardware concurrency, capped by the STC_THREADS
/// environment variable when it holds a positive integer.
std::size_t thread_budget();

/// Calls fn(i) for i in [0, n) on up to thread_budget() threads. Callers
/// write results by index, so the outcome does not depend on scheduling.
/// If any call throws, the exception of the lowest failing index is
/// rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace stc

#endif  // STC_PARALLEL_H_
