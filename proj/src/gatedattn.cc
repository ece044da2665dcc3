// stc/gatedattn.cc

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

#include "stc/gatedattn.h"

#include <cmath>

namespace stc {

void AttentionConfig::validate() const {
  if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
    throw Error("attention: model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                std::to_string(heads));
  if (langs == 0) throw Error("attention: need at least one language");
  if (method != 1 && method != 2) throw Error("attention: method must be 1 or 2");
  if (!gated && langs != 1) throw Error("attention: an ungated layer has exactly one language");
}

std::pair<std::size_t, std::size_t> AttentionConfig::gate_shape() const {
  if (!gated) return {0, 0};
  return method == 1 ? std::pair{model_dim, langs} : std::pair{model_dim, std::size_t{1}};
}

namespace {

Matrix glorot(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + fan_out));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-limit, limit);
  return m;
}

Var sum_vars(Tape& tape, const std::vector<Var>& vars) {
  Var acc = vars.at(0);
  for (std::size_t i = 1; i < vars.size(); ++i) acc = tape.add(acc, vars[i]);
  return acc;
}

}  // namespace

GatedAttentionParams GatedAttentionParams::init(const AttentionConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.model_dim;
  GatedAttentionParams p;
  for (std::size_t n = 0; n < config.langs; ++n) {
    p.query.push_back(glorot(rng, d, d, config.head_dim()));
    p.key.push_back(glorot(rng, d, d, config.head_dim()));
    p.value.push_back(glorot(rng, d, d, config.head_dim()));
  }
  p.output = glorot(rng, d, d, d);
  if (config.gated) {
    const auto [r, c] = config.gate_shape();
    p.gate = Matrix(r, c);
  }
  return p;
}

void GatedAttentionParams::check(const AttentionConfig& config) const {
  config.validate();
  const std::size_t d = config.model_dim;
  auto square = [d](const Matrix& m) { return m.rows() == d && m.cols() == d; };
  if (query.size() != config.langs || key.size() != config.langs || value.size() != config.langs)
    throw Error("attention params: expected " + std::to_string(config.langs) + " languages");
  for (std::size_t n = 0; n < config.langs; ++n)
    if (!square(query[n]) || !square(key[n]) || !square(value[n]))
      throw Error("attention params: per-language projections must be " + std::to_string(d) + "x" +
                  std::to_string(d));
  if (!square(output)) throw Error("attention params: output is " + output.shape());
  const auto [r, c] = config.gate_shape();
  if (gate.rows() != r || gate.cols() != c)
    throw Error("attention params: gate map is " + gate.shape() + ", expected " + std::to_string(r) + "x" +
                std::to_string(c));
}

GatedAttentionParams GatedAttentionParams::single_language(std::size_t lang) const {
  GatedAttentionParams p;
  p.query = {query.at(lang)};
  p.key = {key.at(lang)};
  p.value = {value.at(lang)};
  p.output = output;
  return p;
}

GatedAttentionLayer::GatedAttentionLayer(AttentionConfig config, GatedAttentionParams params)
    : config_(config), params_(std::move(params)) {
  params_.check(config_);
}

void GatedAttentionLayer::set_override(GateConstants constants) {
  if (!config_.gated) throw Error("gate override needs a gated layer");
  if (const auto* lang = std::get_if<std::size_t>(&constants)) {
    if (*lang >= config_.langs) throw Error("gate override language out of range");
  } else {
    const auto& g = std::get<GateMatrix>(constants);
    if (g.langs() != config_.langs) throw Error("gate override has the wrong number of languages");
    g.check_rows();
  }
  override_ = std::move(constants);
}

ParamVars GatedAttentionLayer::bind(Tape& tape) const {
  ParamVars v;
  for (std::size_t n = 0; n < config_.langs; ++n) {
    v.query.push_back(tape.leaf(params_.query[n]));
    v.key.push_back(tape.leaf(params_.key[n]));
    v.value.push_back(tape.leaf(params_.value[n]));
  }
  v.output = tape.leaf(params_.output);
  if (config_.gated) v.gate = tape.leaf(params_.gate);
  return v;
}

Var GatedAttentionLayer::attend(Tape& tape, Var q, Var k, Var v) const {
  const std::size_t dh = config_.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (std::size_t i = 0; i < config_.heads; ++i) {
    Var qi = tape.slice_cols(q, i * dh, dh);
    Var ki = tape.slice_cols(k, i * dh, dh);
    Var vi = tape.slice_cols(v, i * dh, dh);
    Var weights = tape.softmax_rows(tape.scale(tape.matmul_nt(qi, ki), inv_sqrt));
    heads.push_back(tape.matmul(weights, vi));
  }
  return heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
}

Var GatedAttentionLayer::gates_for(Tape& tape, const ParamVars& p, Var input, std::size_t frames,
                                   const ForwardOptions& opts) const {
  if (override_) {
    if (const auto* lang = std::get_if<std::size_t>(&*override_)) {
      Matrix g(frames, config_.langs);
      for (std::size_t t = 0; t < frames; ++t) g(t, *lang) = 1.0;
      return tape.constant(std::move(g));
    }
    const auto& g = std::get<GateMatrix>(*override_);
    if (g.frames() != frames)
      throw Error("gate override has " + std::to_string(g.frames()) + " frames, input has " +
                  std::to_string(frames));
    return tape.constant(g.values);
  }
  Var src = opts.disconnect ? tape.detach(input) : input;
  return tape.softmax_rows(tape.matmul(src, p.gate));
}

LayerVars GatedAttentionLayer::forward(Tape& tape, const ParamVars& p, Var z,
                                       const ForwardOptions& opts) const {
  const Matrix& zin = tape.value(z);
  if (zin.cols() != config_.model_dim)
    throw Error("attention: input " + zin.shape() + " does not have model_dim " +
                std::to_string(config_.model_dim) + " columns");
  const std::size_t frames = zin.rows();
  const std::size_t langs = config_.langs;
  LayerVars out;

  if (!config_.gated) {
    Var heads = attend(tape, tape.matmul(z, p.query[0]), tape.matmul(z, p.key[0]), tape.matmul(z, p.value[0]));
    out.out = tape.matmul(heads, p.output);
    out.gates = tape.constant(Matrix(frames, 1, 1.0));
    return out;
  }

  if (config_.method == 1) {
    out.gates = gates_for(tape, p, z, frames, opts);
    Var used = opts.disconnect ? tape.detach(out.gates) : out.gates;
    std::vector<Var> qs, ks, vs;
    for (std::size_t n = 0; n < langs; ++n) {
      qs.push_back(tape.mul_col(tape.matmul(z, p.query[n]), used, n));
      ks.push_back(tape.mul_col(tape.matmul(z, p.key[n]), used, n));
      vs.push_back(tape.mul_col(tape.matmul(z, p.value[n]), used, n));
    }
    Var heads = attend(tape, sum_vars(tape, qs), sum_vars(tape, ks), sum_vars(tape, vs));
    out.out = tape.matmul(heads, p.output);
    return out;
  }

  std::vector<Var> lheads;
  for (std::size_t n = 0; n < langs; ++n)
    lheads.push_back(
        attend(tape, tape.matmul(z, p.query[n]), tape.matmul(z, p.key[n]), tape.matmul(z, p.value[n])));
  if (override_) {
    out.gates = gates_for(tape, p, z, frames, opts);
  } else {
    std::vector<Var> scores;
    for (Var lh : lheads) scores.push_back(tape.matmul(opts.disconnect ? tape.detach(lh) : lh, p.gate));
    out.gates = tape.softmax_rows(scores.size() == 1 ? scores[0] : tape.concat_cols(scores));
  }
  Var used = opts.disconnect ? tape.detach(out.gates) : out.gates;
  std::vector<Var> mixed;
  for (std::size_t n = 0; n < langs; ++n) mixed.push_back(tape.mul_col(lheads[n], used, n));
  out.out = tape.matmul(sum_vars(tape, mixed), p.output);
  return out;
}

LayerVars GatedAttentionLayer::cross_forward(Tape& tape, const ParamVars& p, Var q_input, Var kv_input,
                                             const ForwardOptions& opts) const {
  if (!config_.gated || config_.method != 1)
    throw Error("gated cross attention is defined for method 1 only");
  const std::size_t tq = tape.value(q_input).rows(), tkv = tape.value(kv_input).rows();
  if (tape.value(q_input).cols() != config_.model_dim || tape.value(kv_input).cols() != config_.model_dim)
    throw Error("cross attention: inputs must have model_dim columns");
  LayerVars out;
  out.gates = gates_for(tape, p, q_input, tq, opts);
  out.gates_kv = gates_for(tape, p, kv_input, tkv, opts);
  Var used_q = opts.disconnect ? tape.detach(out.gates) : out.gates;
  Var used_kv = opts.disconnect ? tape.detach(out.gates_kv) : out.gates_kv;
  std::vector<Var> qs, ks, vs;
  for (std::size_t n = 0; n < config_.langs; ++n) {
    qs.push_back(tape.mul_col(tape.matmul(q_input, p.query[n]), used_q, n));
    ks.push_back(tape.mul_col(tape.matmul(kv_input, p.key[n]), used_kv, n));
    vs.push_back(tape.mul_col(tape.matmul(kv_input, p.value[n]), used_kv, n));
  }
  Var heads = attend(tape, sum_vars(tape, qs), sum_vars(tape, ks), sum_vars(tape, vs));
  out.out = tape.matmul(heads, p.output);
  return out;
}

Matrix mha_forward(const Matrix& z, const GatedAttentionParams& params, const AttentionConfig& config) {
  if (config.gated) throw Error("mha_forward expects an ungated config");
  GatedAttentionLayer layer(config, params);
  Tape tape;
  const auto vars = layer.forward(tape, layer.bind(tape), tape.constant(z));
  return tape.value(vars.out);
}

GateMatrix gate_forward(const Matrix& z, const Matrix& gate_map) {
  return {softmax_rows(matmul(z, gate_map))};
}

namespace {

GatedOutput run_gated(const Matrix& z, const GatedAttentionParams& params, const AttentionConfig& config,
                      int method) {
  if (!config.gated || config.method != method)
    throw Error("expected a gated method " + std::to_string(method) + " config");
  GatedAttentionLayer layer(config, params);
  Tape tape;
  const auto vars = layer.forward(tape, layer.bind(tape), tape.constant(z));
  return {tape.value(vars.out), {tape.value(vars.gates)}};
}

}  // namespace

GatedOutput gated_mha_method1(const Matrix& z, const GatedAttentionParams& params,
                              const AttentionConfig& config) {
  return run_gated(z, params, config, 1);
}

GatedOutput gated_mha_method2(const Matrix& z, const GatedAttentionParams& params,
                              const AttentionConfig& config) {
  return run_gated(z, params, config, 2);
}

CrossOutput gated_cross_attention(const Matrix& q_input, const Matrix& kv_input,
                                  const GatedAttentionParams& params, const AttentionConfig& config) {
  GatedAttentionLayer layer(config, params);
  Tape tape;
  const auto vars = layer.cross_forward(tape, layer.bind(tape), tape.constant(q_input), tape.constant(kv_input));
  return {tape.value(vars.out), {tape.value(vars.gates)}, {tape.value(vars.gates_kv)}};
}

ParamCount param_count(const AttentionConfig& config) {
  config.validate();
  const std::size_t d = config.model_dim;
  ParamCount c;
  c.base = 4 * d * d;
  if (!config.gated) {
    c.gated = c.base;
  } else {
    const auto [r, cols] = config.gate_shape();
    c.gate_network = r * cols;
    c.gated = 3 * config.langs * d * d + d * d + c.gate_network;
  }
  c.delta_fraction = static_cast<double>(c.gated - c.base) / static_cast<double>(c.base);
  return c;
}

}  // namespace stc
