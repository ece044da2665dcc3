// stc/tape.h

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

// Matrix-granularity reverse-mode differentiation. Every op appends a node,
// so creation order is a topological order and backward() is a single
// reverse sweep.

#ifndef STC_TAPE_H_
#define STC_TAPE_H_

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "stc/numkit.h"

namespace stc {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

class Tape {
 public:
  /// Differentiable input (a parameter or an input we want gradients for).
  Var leaf(Matrix value);
  /// Input that never receives a gradient.
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  /// a * b^T without materializing the transpose node.
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  /// Adds a 1 x C row to every row of a.
  Var add_row(Var a, Var row);
  Var scale(Var a, double s);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var tanh(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  /// out[t, :] = a[t, :] * g[t, col]
  Var mul_col(Var a, Var g, std::size_t col);
  /// Forward identity, backward zero.
  Var detach(Var a);

  const Matrix& value(Var v) const;
  /// Gradient accumulated by backward(); zeros if the node got none.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const;

  /// Seeds d(loss)/d(node) for each pair and sweeps the tape once in
  /// reverse. Throws if the tape is empty or a seed does not match its node.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);
  void backward(Var root, Matrix seed);

  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes the last backward() visited.
  std::size_t visited() const { return visited_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Matrix&)> backprop;
  };

  Var push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> backprop);
  Node& node(Var v);
  const Node& node(Var v) const;
  void accumulate(Var v, const Matrix& g);
  void accumulate_scaled(Var v, const Matrix& g, double s);

  std::vector<Node> nodes_;
  std::size_t visited_ = 0;
};

}  // namespace stc

#endif  // STC_TAPE_H_
