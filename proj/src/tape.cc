// stc/tape.cc

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

#include "stc/tape.h"

#include <cmath>

namespace stc {

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> backprop) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backprop)});
  return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("tape: invalid variable");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("tape: invalid variable");
  return nodes_[v.id];
}

void Tape::accumulate(Var v, const Matrix& g) { accumulate_scaled(v, g, 1.0); }

void Tape::accumulate_scaled(Var v, const Matrix& g, double s) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  double* dst = n.grad.data().data();
  const double* src = g.data().data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * src[i];
}

Var Tape::leaf(Matrix value) { return push(std::move(value), true, nullptr); }
Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

const Matrix& Tape::value(Var v) const { return node(v).value; }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::matmul(Var a, Var b) {
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(stc::matmul(value(a), value(b)), rg, [a, b](Tape& t, const Matrix& g) {
    if (t.node(a).requires_grad) t.accumulate(a, stc::matmul(g, transpose(t.value(b))));
    if (t.node(b).requires_grad) t.accumulate(b, stc::matmul(transpose(t.value(a)), g));
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(stc::matmul(value(a), transpose(value(b))), rg, [a, b](Tape& t, const Matrix& g) {
    if (t.node(a).requires_grad) t.accumulate(a, stc::matmul(g, t.value(b)));
    if (t.node(b).requires_grad) t.accumulate(b, stc::matmul(transpose(g), t.value(a)));
  });
}

Var Tape::add(Var a, Var b) {
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  return push(stc::add(value(a), value(b)), rg, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& x = value(a);
  const Matrix& r = value(row);
  if (r.rows() != 1 || r.cols() != x.cols())
    throw Error("add_row: row " + r.shape() + " does not fit " + x.shape());
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r(0, j);
  const bool rg = node(a).requires_grad || node(row).requires_grad;
  return push(std::move(out), rg, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.node(row).requires_grad) {
      Matrix s(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) s(0, j) += g(i, j);
      t.accumulate(row, s);
    }
  });
}

Var Tape::scale(Var a, double s) {
  return push(stc::scale(value(a), s), node(a).requires_grad,
              [a, s](Tape& t, const Matrix& g) { t.accumulate_scaled(a, g, s); });
}

Var Tape::softmax_rows(Var a) {
  Var out = push(stc::softmax_rows(value(a)), node(a).requires_grad, nullptr);
  node(out).backprop = [a, out](Tape& t, const Matrix& g) {
    const Matrix& p = t.value(out);
    Matrix d(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += g(i, j) * p(i, j);
      for (std::size_t j = 0; j < p.cols(); ++j) d(i, j) = p(i, j) * (g(i, j) - dot);
    }
    t.accumulate(a, d);
  };
  return out;
}

Var Tape::log_softmax_rows(Var a) {
  Var out = push(stc::log_softmax_rows(value(a)), node(a).requires_grad, nullptr);
  node(out).backprop = [a, out](Tape& t, const Matrix& g) {
    const Matrix& lp = t.value(out);
    Matrix d = g;
    for (std::size_t i = 0; i < lp.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < lp.cols(); ++j) s += g(i, j);
      for (std::size_t j = 0; j < lp.cols(); ++j) d(i, j) -= std::exp(lp(i, j)) * s;
    }
    t.accumulate(a, d);
  };
  return out;
}

Var Tape::tanh(Var a) {
  Matrix y = value(a);
  for (double& v : y.data()) v = std::tanh(v);
  Var out = push(std::move(y), node(a).requires_grad, nullptr);
  node(out).backprop = [a, out](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out);
    Matrix d = g;
    for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
    t.accumulate(a, d);
  };
  return out;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (value(p).rows() != rows)
      throw Error("concat_cols: row mismatch " + value(parts[0]).shape() + " vs " + value(p).shape());
    cols += value(p).cols();
    rg = rg || node(p).requires_grad;
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& m = value(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) out(i, off + j) = m(i, j);
    off += m.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return push(std::move(out), rg, [ps](Tape& t, const Matrix& g) {
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t c = t.value(p).cols();
      if (t.node(p).requires_grad) {
        Matrix d(g.rows(), c);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) d(i, j) = g(i, off + j);
        t.accumulate(p, d);
      }
      off += c;
    }
  });
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& x = value(a);
  if (begin + count > x.cols())
    throw Error("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                ") outside " + x.shape());
  Matrix out(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = x(i, begin + j);
  return push(std::move(out), node(a).requires_grad, [a, begin, count](Tape& t, const Matrix& g) {
    Matrix d(t.value(a).rows(), t.value(a).cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < count; ++j) d(i, begin + j) = g(i, j);
    t.accumulate(a, d);
  });
}

Var Tape::mul_col(Var a, Var g, std::size_t col) {
  const Matrix& x = value(a);
  const Matrix& w = value(g);
  if (w.rows() != x.rows() || col >= w.cols())
    throw Error("mul_col: weights " + w.shape() + " column " + std::to_string(col) + " vs " + x.shape());
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) *= w(i, col);
  const bool rg = node(a).requires_grad || node(g).requires_grad;
  return push(std::move(out), rg, [a, g, col](Tape& t, const Matrix& gr) {
    const Matrix& x = t.value(a);
    const Matrix& w = t.value(g);
    if (t.node(a).requires_grad) {
      Matrix d = gr;
      for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) *= w(i, col);
      t.accumulate(a, d);
    }
    if (t.node(g).requires_grad) {
      Matrix d(w.rows(), w.cols());
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) s += gr(i, j) * x(i, j);
        d(i, col) = s;
      }
      t.accumulate(g, d);
    }
  });
}

Var Tape::detach(Var a) { return push(value(a), false, nullptr); }

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  if (nodes_.empty()) throw Error("backward called before any forward op was recorded");
  for (const auto& [v, g] : seeds) {
    if (!node(v).value.same_shape(g))
      throw Error("backward: seed " + g.shape() + " does not match node " + node(v).value.shape());
    accumulate(v, g);
  }
  visited_ = 0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backprop) continue;
    ++visited_;
    // Copy: backprop may grow other nodes' grads but never this one.
    const Matrix g = n.grad;
    n.backprop(*this, g);
  }
}

void Tape::backward(Var root, Matrix seed) {
  const std::pair<Var, Matrix> s[] = {{root, std::move(seed)}};
  backward(s);
}

}  // namespace stc
