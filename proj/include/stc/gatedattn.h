// stc/gatedattn.h

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

// Multi-head self-attention with language-specific projections mixed by a
// per-frame gate distribution.
//
//   Method 1 (pre-attention):  q = sum_n g_n * (z Q_n), same for k and v,
//                              then ordinary attention per head.
//   Method 2 (post-attention): one attention pass per language, giving
//                              Lhead_n; gate scores s_n = Lhead_n . w,
//                              g = softmax_n(s); mix = sum_n g_n * Lhead_n.
//
// Both finish with Concat(heads) W. There is no layer norm, residual or
// dropout. Attention logits are scaled by 1/sqrt(d/h).

#ifndef STC_GATEDATTN_H_
#define STC_GATEDATTN_H_

#include <optional>
#include <variant>

#include "stc/seqloss.h"
#include "stc/tape.h"

namespace stc {

struct AttentionConfig {
  std::size_t model_dim = 16;
  std::size_t heads = 2;
  std::size_t langs = 2;
  bool gated = true;
  int method = 1;

  std::size_t head_dim() const { return model_dim / heads; }
  /// Throws on d % h != 0, L == 0, method not in {1, 2}, or an ungated
  /// config with L != 1.
  void validate() const;
  /// Rows x cols of the gate map: d x L for method 1, d x 1 for method 2.
  std::pair<std::size_t, std::size_t> gate_shape() const;
};

/// Per-language projections are stored as d x d matrices whose column block
/// [i*d/h, (i+1)*d/h) is head i's d x (d/h) projection.
struct GatedAttentionParams {
  std::vector<Matrix> query, key, value;  // one per language
  Matrix output;                          // d x d
  Matrix gate;                            // gate_shape(); empty when ungated

  /// Glorot-uniform projections; the gate map starts at zero so gates start
  /// uniform.
  static GatedAttentionParams init(const AttentionConfig& config, Rng& rng);
  void check(const AttentionConfig& config) const;
  /// Ungated params reusing language `lang`'s projections.
  GatedAttentionParams single_language(std::size_t lang) const;
};

/// Constant gates for ablations: one language everywhere, or a full matrix.
using GateConstants = std::variant<std::size_t, GateMatrix>;

struct ParamVars {
  std::vector<Var> query, key, value;
  Var output;
  Var gate;
};

struct ForwardOptions {
  /// Gates reach the attention as constants and the gate map sees a
  /// detached input, so the main loss cannot train the gate map and the
  /// gating loss cannot train anything else.
  bool disconnect = false;
};

struct LayerVars {
  Var out;
  Var gates;     // gates used on the query side (and everywhere for self-attention)
  Var gates_kv;  // cross attention only
};

class GatedAttentionLayer {
 public:
  GatedAttentionLayer(AttentionConfig config, GatedAttentionParams params);

  const AttentionConfig& config() const { return config_; }
  const GatedAttentionParams& params() const { return params_; }
  GatedAttentionParams& mutable_params() { return params_; }

  /// Fixes the gates for subsequent forwards; the gate map gets no gradient
  /// while an override is active. Matrix rows must sum to one.
  void set_override(GateConstants constants);
  void clear_override() { override_.reset(); }
  bool overridden() const { return override_.has_value(); }

  /// Adds the parameters to the tape as leaves.
  ParamVars bind(Tape& tape) const;

  LayerVars forward(Tape& tape, const ParamVars& p, Var z, const ForwardOptions& opts = {}) const;
  /// Method 1 cross attention: queries (and their gates) from q_input, keys
  /// and values (and their gates) from kv_input, one shared gate map.
  LayerVars cross_forward(Tape& tape, const ParamVars& p, Var q_input, Var kv_input,
                          const ForwardOptions& opts = {}) const;

 private:
  Var gates_for(Tape& tape, const ParamVars& p, Var input, std::size_t frames,
                const ForwardOptions& opts) const;
  Var attend(Tape& tape, Var q, Var k, Var v) const;

  AttentionConfig config_;
  GatedAttentionParams params_;
  std::optional<GateConstants> override_;
};

struct GatedOutput {
  Matrix output;
  GateMatrix gates;
};

struct CrossOutput {
  Matrix output;
  GateMatrix gates_q;
  GateMatrix gates_kv;
};

/// Ungated multi-head attention; config.gated must be false.
Matrix mha_forward(const Matrix& z, const GatedAttentionParams& params, const AttentionConfig& config);
/// softmax_rows(z G).
GateMatrix gate_forward(const Matrix& z, const Matrix& gate_map);
GatedOutput gated_mha_method1(const Matrix& z, const GatedAttentionParams& params,
                              const AttentionConfig& config);
GatedOutput gated_mha_method2(const Matrix& z, const GatedAttentionParams& params,
                              const AttentionConfig& config);
CrossOutput gated_cross_attention(const Matrix& q_input, const Matrix& kv_input,
                                  const GatedAttentionParams& params, const AttentionConfig& config);

struct ParamCount {
  std::size_t base = 0;   // regular layer: Q, K, V, W
  std::size_t gated = 0;  // gated layer incl. gate map
  std::size_t gate_network = 0;
  double delta_fraction = 0.0;  // (gated - base) / base
};

ParamCount param_count(const AttentionConfig& config);

}  // namespace stc

#endif  // STC_GATEDATTN_H_
