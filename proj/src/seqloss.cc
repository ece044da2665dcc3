// stc/seqloss.cc

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

#include "stc/seqloss.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>

#include "stc/stc_impls.h"

namespace stc {

// ---------------------------------------------------------------------------
// Vocab and typed containers

Vocab Vocab::lid(std::vector<std::string> languages) {
  if (languages.empty()) throw Error("language-ID vocabulary needs at least one language");
  Vocab v;
  v.num_languages_ = languages.size();
  v.tokens_ = std::move(languages);
  for (auto s : {kSpace, kBlank, kUnk, kEosSos}) {
    if (std::find(v.tokens_.begin(), v.tokens_.end(), s) != v.tokens_.end())
      throw Error("language token collides with special token " + std::string(s));
    v.tokens_.emplace_back(s);
  }
  v.blank_ = static_cast<Token>(v.num_languages_ + 1);
  return v;
}

Vocab Vocab::generic(std::vector<std::string> tokens) {
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j)
      if (v.tokens_[i] == v.tokens_[j]) throw Error("duplicate token " + v.tokens_[i]);
    if (v.tokens_[i] == kBlank) v.blank_ = static_cast<Token>(i);
  }
  return v;
}

const std::string& Vocab::name(Token t) const {
  if (t < 0 || static_cast<std::size_t>(t) >= tokens_.size())
    throw Error("token index " + std::to_string(t) + " outside vocabulary of size " +
                std::to_string(tokens_.size()));
  return tokens_[t];
}

std::optional<Token> Vocab::find(std::string_view name) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] == name) return static_cast<Token>(i);
  return std::nullopt;
}

Token Vocab::index(std::string_view name) const {
  if (auto t = find(name)) return *t;
  throw Error("unknown token '" + std::string(name) + "'");
}

Token Vocab::require_blank() const {
  if (!blank_) throw Error("vocabulary has no BLANK token");
  return *blank_;
}

Token Vocab::lid_special(std::size_t k) const {
  if (!is_lid()) throw Error("not a language-ID vocabulary");
  return static_cast<Token>(num_languages_ + k);
}

void LogProbLattice::check_normalized(double tol) const {
  if (values.cols() != vocab.size())
    throw Error("lattice has " + std::to_string(values.cols()) + " columns, vocabulary has " +
                std::to_string(vocab.size()));
  for (std::size_t t = 0; t < values.rows(); ++t) {
    for (double v : values.row(t))
      if (std::isnan(v) || v > 0.0) throw Error("lattice row " + std::to_string(t) + " has entry > 0");
    const double lse = log_sum_exp(values.row(t));
    if (!(std::abs(lse) <= tol))
      throw Error("lattice row " + std::to_string(t) + " is not normalized");
  }
}

void LidSequence::validate(const Vocab& vocab) const {
  for (Token t : tokens) {
    const std::string& name = vocab.name(t);
    if (level == LidLevel::word && vocab.is_lid() && !vocab.is_language(t))
      throw Error("word-level LID sequence contains special token " + name);
    if (vocab.blank() && t == *vocab.blank())
      throw Error("LID sequence contains " + name);
  }
}

void GateMatrix::check_rows(double tol) const {
  for (std::size_t t = 0; t < values.rows(); ++t) {
    double s = 0.0;
    for (double v : values.row(t)) {
      if (!(v >= 0.0)) throw Error("gate row " + std::to_string(t) + " has a negative entry");
      s += v;
    }
    if (!(std::abs(s - 1.0) <= tol))
      throw Error("gate row " + std::to_string(t) + " sums to " + std::to_string(s));
  }
}

bool LossResult::finite() const { return std::isfinite(loss); }

// ---------------------------------------------------------------------------
// CTC

std::vector<Token> collapse(std::span<const Token> seq) {
  std::vector<Token> out;
  for (Token t : seq)
    if (out.empty() || out.back() != t) out.push_back(t);
  return out;
}

std::size_t ctc_required_length(std::span<const Token> target) {
  if (target.empty()) throw Error("ctc_required_length: empty target");
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

namespace {

void check_tokens(std::span<const Token> target, std::size_t vocab_size) {
  for (Token t : target)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
      throw Error("target token " + std::to_string(t) + " outside vocabulary of size " +
                  std::to_string(vocab_size));
}

}  // namespace

LossResult ctc_loss(const Matrix& log_probs, std::span<const Token> target, Token blank) {
  if (target.empty()) throw Error("ctc_loss: empty target");
  if (log_probs.rows() == 0) throw Error("ctc_loss: lattice has no frames");
  const std::size_t frames = log_probs.rows();
  check_tokens(target, log_probs.cols());
  if (blank < 0 || static_cast<std::size_t>(blank) >= log_probs.cols())
    throw Error("ctc_loss: blank index outside vocabulary");
  for (Token t : target)
    if (t == blank) throw Error("ctc_loss: target contains the blank token");

  LossResult result{kInf, Matrix(log_probs.rows(), log_probs.cols())};
  if (frames < ctc_required_length(target)) return result;

  // Extended label sequence: blank, y1, blank, y2, ..., yU, blank.
  const std::size_t states = 2 * target.size() + 1;
  std::vector<Token> ext(states, blank);
  for (std::size_t u = 0; u < target.size(); ++u) ext[2 * u + 1] = target[u];
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  Matrix alpha(frames, states, kLogZero);
  Matrix beta(frames, states, kLogZero);
  alpha(0, 0) = log_probs(0, ext[0]);
  alpha(0, 1) = log_probs(0, ext[1]);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kLogZero ? kLogZero : a + log_probs(t, ext[s]);
    }
  }
  // beta(t, s): log-prob of frames t+1.. given state s at frame t.
  beta(frames - 1, states - 1) = 0.0;
  beta(frames - 1, states - 2) = 0.0;
  for (std::size_t t = frames - 1; t-- > 0;) {
    for (std::size_t s = 0; s < states; ++s) {
      double b = beta(t + 1, s) + log_probs(t + 1, ext[s]);
      if (s + 1 < states) b = log_add(b, beta(t + 1, s + 1) + log_probs(t + 1, ext[s + 1]));
      if (s + 2 < states && can_skip(s + 2))
        b = log_add(b, beta(t + 1, s + 2) + log_probs(t + 1, ext[s + 2]));
      beta(t, s) = std::isnan(b) ? kLogZero : b;
    }
  }
  const double log_z = log_add(alpha(frames - 1, states - 1), alpha(frames - 1, states - 2));
  if (log_z == kLogZero) return result;

  result.loss = -log_z;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t s = 0; s < states; ++s) {
      const double lp = alpha(t, s) + beta(t, s);
      if (lp != kLogZero) result.grad(t, ext[s]) -= std::exp(lp - log_z);
    }
  return result;
}

LossResult ctc_loss(const LogProbLattice& lattice, const LidSequence& target) {
  if (lattice.values.cols() != lattice.vocab.size())
    throw Error("lattice width does not match its vocabulary");
  target.validate(lattice.vocab);
  return ctc_loss(lattice.values, target.tokens, lattice.vocab.require_blank());
}

std::vector<Token> trim_target(std::span<const Token> target, std::size_t max_frames, Rng& rng) {
  if (max_frames == 0) throw Error("trim_target: max_frames must be positive");
  std::vector<Token> y(target.begin(), target.end());
  std::vector<std::size_t> candidates;
  while (y.size() > 1 && ctc_required_length(y) > max_frames) {
    candidates.clear();
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool in_run = (i > 0 && y[i] == y[i - 1]) || (i + 1 < y.size() && y[i] == y[i + 1]);
      if (in_run) candidates.push_back(i);
    }
    if (candidates.empty()) {
      y.erase(y.begin() + static_cast<std::ptrdiff_t>(rng.index(y.size())));
    } else {
      y.erase(y.begin() + static_cast<std::ptrdiff_t>(candidates[rng.index(candidates.size())]));
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// STC

LossResult stc_loss(const Matrix& log_probs, std::span<const Token> target) {
  return stc_loss_vectorized(log_probs, target);
}

LossResult stc_loss(const LogProbLattice& lattice, const LidSequence& target) {
  if (lattice.values.cols() != lattice.vocab.size())
    throw Error("lattice width does not match its vocabulary");
  for (Token t : target.tokens)
    if (lattice.vocab.blank() && t == *lattice.vocab.blank()) throw Error("STC has no blank");
  target.validate(lattice.vocab);
  return stc_loss(lattice.values, target.tokens);
}

// ---------------------------------------------------------------------------
// Projections from gates to token lattices

LogProbLattice alpha_project(const GateMatrix& gates, double alpha, const Vocab& vocab) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
  if (!vocab.is_lid()) throw Error("alpha_project needs a language-ID vocabulary");
  if (gates.langs() != vocab.num_languages())
    throw Error("gate width " + std::to_string(gates.langs()) + " does not match " +
                std::to_string(vocab.num_languages()) + " languages");
  const double special = std::log((1.0 - alpha) / static_cast<double>(Vocab::kNumSpecials));
  LogProbLattice out{vocab, Matrix(gates.frames(), vocab.size(), special)};
  for (std::size_t t = 0; t < gates.frames(); ++t)
    for (std::size_t n = 0; n < gates.langs(); ++n) {
      const double g = gates.values(t, n);
      out.values(t, n) = g > 0.0 ? std::log(alpha * g) : kLogZero;
    }
  return out;
}

Matrix alpha_project_backward(const Matrix& lattice_grad, const GateMatrix& gates) {
  if (lattice_grad.rows() != gates.frames() || lattice_grad.cols() < gates.langs())
    throw Error("alpha_project_backward: shape mismatch " + lattice_grad.shape() + " vs gates " +
                gates.values.shape());
  Matrix grad(gates.frames(), gates.langs());
  for (std::size_t t = 0; t < gates.frames(); ++t)
    for (std::size_t n = 0; n < gates.langs(); ++n) {
      const double g = gates.values(t, n);
      // A zero gate carries zero posterior mass, so its gradient is zero.
      if (g > 0.0) grad(t, n) = lattice_grad(t, n) / g;
    }
  return grad;
}

Matrix LinearProjection::window(const GateMatrix& gates) const {
  const std::size_t frames = gates.frames(), langs = gates.langs();
  const std::size_t width = 2 * context + 1;
  Matrix w(frames, width * langs);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t o = 0; o < width; ++o) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + o) - static_cast<std::ptrdiff_t>(context);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      for (std::size_t n = 0; n < langs; ++n) w(t, o * langs + n) = gates.values(src, n);
    }
  return w;
}

Matrix LinearProjection::forward(const GateMatrix& gates) const {
  const std::size_t in = (2 * context + 1) * gates.langs();
  if (weights.rows() != in)
    throw Error("linear_project: weights " + weights.shape() + " need " + std::to_string(in) + " rows");
  Matrix logits = matmul(window(gates), weights);
  if (!bias.empty()) {
    if (bias.rows() != 1 || bias.cols() != weights.cols())
      throw Error("linear_project: bias shape " + bias.shape());
    for (std::size_t t = 0; t < logits.rows(); ++t)
      for (std::size_t v = 0; v < logits.cols(); ++v) logits(t, v) += bias(0, v);
  }
  return log_softmax_rows(logits);
}

LinearProjection::Grads LinearProjection::backward(const GateMatrix& gates,
                                                   const Matrix& lattice_grad) const {
  const Matrix log_p = forward(gates);
  if (!lattice_grad.same_shape(log_p))
    throw Error("linear_project backward: grad shape " + lattice_grad.shape());
  // d logits = G - softmax * rowsum(G)
  Matrix dlogits = lattice_grad;
  for (std::size_t t = 0; t < dlogits.rows(); ++t) {
    double s = 0.0;
    for (double g : lattice_grad.row(t)) s += g;
    for (std::size_t v = 0; v < dlogits.cols(); ++v) dlogits(t, v) -= std::exp(log_p(t, v)) * s;
  }
  const Matrix win = window(gates);
  Grads g;
  g.weights = matmul(transpose(win), dlogits);
  g.bias = Matrix(1, dlogits.cols());
  for (std::size_t t = 0; t < dlogits.rows(); ++t)
    for (std::size_t v = 0; v < dlogits.cols(); ++v) g.bias(0, v) += dlogits(t, v);
  const Matrix dwin = matmul(dlogits, transpose(weights));
  const std::size_t frames = gates.frames(), langs = gates.langs();
  g.gates = Matrix(frames, langs);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t o = 0; o < 2 * context + 1; ++o) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + o) - static_cast<std::ptrdiff_t>(context);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      for (std::size_t n = 0; n < langs; ++n) g.gates(src, n) += dwin(t, o * langs + n);
    }
  return g;
}

Matrix linear_project(const GateMatrix& gates, const Matrix& weights, std::size_t context_k) {
  return LinearProjection{weights, Matrix(), context_k}.forward(gates);
}

// ---------------------------------------------------------------------------
// Frame-level losses on gates

LossResult gate_ce_loss(const GateMatrix& gates, const LidSequence& target, const Vocab& vocab,
                        double smoothing) {
  if (target.level != LidLevel::chr) throw Error("gate_ce_loss needs a char-level LID sequence");
  if (target.tokens.size() != gates.frames())
    throw Error("gate_ce_loss: " + std::to_string(gates.frames()) + " gate frames vs " +
                std::to_string(target.tokens.size()) + " LID tokens; resolutions must match");
  if (!vocab.is_lid() || vocab.num_languages() != gates.langs())
    throw Error("gate_ce_loss: vocabulary does not match gate width");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw Error("gate_ce_loss: smoothing must lie in [0, 1)");
  target.validate(vocab);

  const std::size_t langs = gates.langs();
  const double off = langs > 1 ? smoothing / static_cast<double>(langs - 1) : 0.0;
  const double on = langs > 1 ? 1.0 - smoothing : 1.0;

  LossResult r{0.0, Matrix(gates.frames(), langs)};
  std::size_t supervised = 0;
  for (Token t : target.tokens) supervised += vocab.is_language(t) ? 1 : 0;
  if (supervised == 0) return r;

  const double inv = 1.0 / static_cast<double>(supervised);
  for (std::size_t t = 0; t < gates.frames(); ++t) {
    const Token ref = target.tokens[t];
    if (!vocab.is_language(ref)) continue;
    for (std::size_t n = 0; n < langs; ++n) {
      const double q = static_cast<Token>(n) == ref ? on : off;
      if (q == 0.0) continue;
      const double g = gates.values(t, n);
      if (g <= 0.0) {
        r.loss = kInf;
        continue;
      }
      r.loss += inv * q * (std::log(q) - std::log(g));
      r.grad(t, n) -= inv * q / g;
    }
  }
  if (!std::isfinite(r.loss)) r.grad = Matrix(gates.frames(), langs);
  return r;
}

LossResult smoothness_penalty(const GateMatrix& gates) {
  LossResult r{0.0, Matrix(gates.frames(), gates.langs())};
  if (gates.frames() < 2) return r;
  const double inv = 1.0 / static_cast<double>(gates.frames() - 1);
  for (std::size_t t = 1; t < gates.frames(); ++t)
    for (std::size_t n = 0; n < gates.langs(); ++n) {
      const double d = gates.values(t, n) - gates.values(t - 1, n);
      r.loss += inv * std::abs(d);
      const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      r.grad(t, n) += inv * s;
      r.grad(t - 1, n) -= inv * s;
    }
  return r;
}

// ---------------------------------------------------------------------------
// Schedules and aggregation

WgSchedule::WgSchedule(std::vector<double> weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw Error("w_g schedule needs at least one stage");
  for (double w : weights_)
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("w_g stage weights must be finite and >= 0");
}

WgSchedule WgSchedule::parse(std::string_view text) {
  std::vector<double> w;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = text.find("::", pos);
    const std::string part(text.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (part.empty()) throw Error("empty stage in w_g schedule '" + std::string(text) + "'");
    char* end = nullptr;
    const double v = std::strtod(part.c_str(), &end);
    if (end != part.c_str() + part.size())
      throw Error("bad stage '" + part + "' in w_g schedule '" + std::string(text) + "'");
    w.push_back(v);
    if (next == std::string_view::npos) break;
    pos = next + 2;
  }
  return WgSchedule(std::move(w));
}

std::string WgSchedule::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (i) out += "::";
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, weights_[i]);
    out.append(buf, p);
  }
  return out;
}

double WgSchedule::weight(std::size_t epoch) const {
  return weights_[std::min(epoch / kStageEpochs, weights_.size() - 1)];
}

WgSchedule WgSchedule::scaled(double factor) const {
  std::vector<double> w = weights_;
  for (double& x : w) x *= factor;
  return WgSchedule(std::move(w));
}

GatingTotal gating_loss_total(std::span<const LossResult> per_layer, const WgSchedule& schedule,
                              std::size_t epoch) {
  if (per_layer.empty()) throw Error("gating_loss_total: no layers");
  GatingTotal out;
  out.weight = schedule.weight(epoch);
  const double inv = 1.0 / static_cast<double>(per_layer.size());
  double mean = 0.0;
  for (const auto& l : per_layer) mean += inv * l.loss;
  // A zero weight switches the loss off entirely, even when a layer is +inf.
  out.mean = mean;
  out.loss = out.weight == 0.0 ? 0.0 : out.weight * mean;
  for (const auto& l : per_layer) out.grads.push_back(scale(l.grad, out.weight * inv));
  return out;
}

}  // namespace stc
