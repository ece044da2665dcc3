// stc/seqloss.h

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

#ifndef STC_SEQLOSS_H_
#define STC_SEQLOSS_H_

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stc/numkit.h"

namespace stc {

using Token = int;

/// Token inventory of a lattice. A language-ID vocabulary holds the L
/// language tokens first, followed by exactly four specials in the order
/// SPACE, BLANK, UNK, EOSSOS. Generic vocabularies (used by tests and the
/// toy output head) carry an optional blank.
class Vocab {
 public:
  static constexpr std::string_view kSpace = "SPACE";
  static constexpr std::string_view kBlank = "BLANK";
  static constexpr std::string_view kUnk = "UNK";
  static constexpr std::string_view kEosSos = "EOSSOS";
  static constexpr std::size_t kNumSpecials = 4;

  Vocab() = default;

  static Vocab lid(std::vector<std::string> languages);
  /// Arbitrary token list; the token named BLANK, if present, is the blank.
  static Vocab generic(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& name(Token t) const;
  /// Throws naming the token when unknown.
  Token index(std::string_view name) const;
  std::optional<Token> find(std::string_view name) const;

  bool is_lid() const { return num_languages_ > 0; }
  std::size_t num_languages() const { return num_languages_; }
  bool is_language(Token t) const { return t >= 0 && static_cast<std::size_t>(t) < num_languages_; }
  std::optional<Token> blank() const { return blank_; }
  Token require_blank() const;

  Token space() const { return lid_special(0); }
  Token unk() const { return lid_special(2); }
  Token eossos() const { return lid_special(3); }

  bool operator==(const Vocab&) const = default;

 private:
  Token lid_special(std::size_t k) const;

  std::vector<std::string> tokens_;
  std::size_t num_languages_ = 0;
  std::optional<Token> blank_;
};

/// Per-frame log-probabilities over a vocabulary.
struct LogProbLattice {
  Vocab vocab;
  Matrix values;  // frames x vocab.size()

  std::size_t frames() const { return values.rows(); }
  /// Throws unless every row log-sum-exps to 0 within tol and entries <= 0.
  void check_normalized(double tol = 1e-9) const;
};

enum class LidLevel { word, chr };

struct LidSequence {
  LidLevel level = LidLevel::chr;
  std::vector<Token> tokens;

  /// Word level: language tokens only. Char level: no BLANK.
  void validate(const Vocab& vocab) const;
};

/// Per-frame language distribution produced by a gate network.
struct GateMatrix {
  Matrix values;  // frames x languages

  std::size_t frames() const { return values.rows(); }
  std::size_t langs() const { return values.cols(); }
  void check_rows(double tol = 1e-9) const;
};

/// Loss and its gradient w.r.t. the differentiated input. A +inf loss
/// carries an all-zero gradient.
struct LossResult {
  double loss = 0.0;
  Matrix grad;

  bool finite() const;
};

/// Removes consecutive duplicates.
std::vector<Token> collapse(std::span<const Token> seq);

/// Minimal frame count for a finite CTC loss: |y| plus the number of
/// adjacent equal pairs.
std::size_t ctc_required_length(std::span<const Token> target);

/// Standard blank-interleaved CTC. The lattice is read as unnormalized
/// log-scores; grad is d(loss)/d(lattice), i.e. minus the frame posteriors.
LossResult ctc_loss(const Matrix& log_probs, std::span<const Token> target, Token blank);
LossResult ctc_loss(const LogProbLattice& lattice, const LidSequence& target);

/// Randomly removes tokens from repeat runs until the CTC required length
/// fits max_frames. When no repeat remains and it still does not fit,
/// uniformly chosen tokens are removed (repeat runs created by such a
/// removal are trimmed first) until it fits or a single token is left.
std::vector<Token> trim_target(std::span<const Token> target, std::size_t max_frames, Rng& rng);

/// Blank-free seamless temporal classification loss:
///   -log sum_{a in B^-1_T(y)} P(a|x) / prod_i n_i
/// where n_i are the run lengths of the alignment a. Uses the vectorized
/// tabulation from stc_impls.h.
LossResult stc_loss(const Matrix& log_probs, std::span<const Token> target);
LossResult stc_loss(const LogProbLattice& lattice, const LidSequence& target);

/// Row t: log(alpha * g[t][n]) on language n, log((1 - alpha) / 4) on each
/// special. Requires a language-ID vocabulary with L languages.
LogProbLattice alpha_project(const GateMatrix& gates, double alpha, const Vocab& vocab);
/// Chain rule through alpha_project: lattice gradient -> gate gradient.
Matrix alpha_project_backward(const Matrix& lattice_grad, const GateMatrix& gates);

/// Windowed affine projection of gates to a vocabulary followed by a row
/// log-softmax. Frame t sees gates t-k..t+k (zero padded), flattened
/// oldest-first into a (2k+1)*L row; weights are ((2k+1)*L) x V and bias
/// is 1 x V (or empty).
struct LinearProjection {
  Matrix weights;
  Matrix bias;
  std::size_t context = 0;

  /// Windowed input rows, exposed for tests.
  Matrix window(const GateMatrix& gates) const;
  Matrix forward(const GateMatrix& gates) const;

  struct Grads {
    Matrix gates;
    Matrix weights;
    Matrix bias;
  };
  Grads backward(const GateMatrix& gates, const Matrix& lattice_grad) const;
};

Matrix linear_project(const GateMatrix& gates, const Matrix& weights, std::size_t context_k);

/// Mean over supervised frames of KL(q_t || g_t), q_t = label-smoothed
/// one-hot of the reference language. Frames labelled SPACE/UNK/EOSSOS are
/// skipped. Requires |target| == frames.
LossResult gate_ce_loss(const GateMatrix& gates, const LidSequence& target, const Vocab& vocab,
                        double smoothing = 0.1);

/// Mean L1 total variation (1/(T-1)) sum_t |g_t - g_{t-1}|_1, subgradient
/// with sign(0) = 0.
LossResult smoothness_penalty(const GateMatrix& gates);

/// Stage-wise gating-loss weight in the "x::y::z" notation. Every stage
/// lasts kStageEpochs epochs; the last one is open ended.
class WgSchedule {
 public:
  static constexpr std::size_t kStageEpochs = 10;

  WgSchedule() : weights_{1.0} {}
  explicit WgSchedule(std::vector<double> weights);
  static WgSchedule parse(std::string_view text);

  std::string to_string() const;
  double weight(std::size_t epoch) const;
  const std::vector<double>& stages() const { return weights_; }
  WgSchedule scaled(double factor) const;

  bool operator==(const WgSchedule&) const = default;

 private:
  std::vector<double> weights_;
};

struct GatingTotal {
  double loss = 0.0;
  /// Unweighted mean of the per-layer losses (reported even when weight is 0).
  double mean = 0.0;
  double weight = 0.0;
  /// Per-layer gradients scaled by weight / layers.
  std::vector<Matrix> grads;
};

/// weight(epoch) * mean(per-layer losses).
GatingTotal gating_loss_total(std::span<const LossResult> per_layer, const WgSchedule& schedule,
                              std::size_t epoch);

}  // namespace stc

#endif  // STC_SEQLOSS_H_
