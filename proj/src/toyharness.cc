// stc/toyharness.cc

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

#include "stc/toyharness.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "stc/cmmetrics.h"
#include "stc/parallel.h"

namespace stc {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::joint: return "joint";
    case Regime::disconnect: return "disconnect";
    case Regime::unsupervised: return "unsupervised";
  }
  return "?";
}

std::string to_string(GateLossKind k) {
  switch (k) {
    case GateLossKind::ctc: return "ctc";
    case GateLossKind::ctc_trim: return "ctc-trim";
    case GateLossKind::stc: return "stc";
    case GateLossKind::kl: return "kl";
  }
  return "?";
}

Regime parse_regime(std::string_view s) {
  for (Regime r : {Regime::joint, Regime::disconnect, Regime::unsupervised})
    if (s == to_string(r)) return r;
  throw Error("unknown regime '" + std::string(s) + "' (joint, disconnect, unsupervised)");
}

GateLossKind parse_gate_loss(std::string_view s) {
  for (GateLossKind k : {GateLossKind::ctc, GateLossKind::ctc_trim, GateLossKind::stc, GateLossKind::kl})
    if (s == to_string(k)) return k;
  throw Error("unknown gate loss '" + std::string(s) + "' (ctc, ctc-trim, stc, kl)");
}

void ToyConfig::validate() const {
  // Messages carry the JSON pointer of the offending field.
  auto fail = [](const std::string& field, const std::string& what) {
    throw Error("toy config /" + field + ": " + what);
  };
  if (inventory.empty()) fail("inventory", "need at least one language");
  for (std::size_t n : inventory)
    if (n == 0) fail("inventory", "every language needs at least one token");
  if (feature_dim == 0) fail("feature_dim", "must be positive");
  if (min_frames_per_token == 0 || min_frames_per_token > max_frames_per_token)
    fail("min_frames_per_token", "frames per token range is empty");
  if (min_words == 0 || min_words > max_words) fail("min_words", "words per utterance range is empty");
  if (min_word_len == 0 || min_word_len > max_word_len) fail("min_word_len", "tokens per word range is empty");
  if (!(switch_prob >= 0.0 && switch_prob <= 1.0)) fail("switch_prob", "must be in [0, 1]");
  if (!(noise >= 0.0)) fail("noise", "must be non-negative");
  if (train_utts == 0) fail("train_utts", "must be positive");
  if (valid_utts == 0) fail("valid_utts", "must be positive");
  if (layers == 0) fail("layers", "need at least one layer");
  if (epochs == 0) fail("epochs", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
  if (!(clip_norm >= 0.0)) fail("clip_norm", "must be non-negative");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha", "must be in (0, 1)");
  if (!(kl_smoothing >= 0.0 && kl_smoothing < 1.0)) fail("kl_smoothing", "must be in [0, 1)");
  if (method != 1 && method != 2) fail("method", "must be 1 or 2");
  if (heads == 0 || model_dim % heads != 0) fail("heads", "must divide model_dim");
}

std::vector<Token> ToyUtterance::frame_lid() const {
  std::vector<Token> out;
  out.reserve(frames());
  for (std::size_t i = 0; i < token_frames.size(); ++i) out.insert(out.end(), token_frames[i], lid_char.tokens[i]);
  return out;
}

const ToyUtterance* ToyDataset::find(std::string_view id) const {
  for (const auto* set : {&train, &valid})
    for (const auto& u : *set)
      if (u.id == id) return &u;
  return nullptr;
}

std::vector<std::string> language_names(std::size_t langs) {
  std::vector<std::string> names;
  for (std::size_t n = 0; n < langs; ++n) names.push_back("L" + std::to_string(n));
  return names;
}

namespace {

std::string utt_id(const char* prefix, std::size_t i) {
  std::string n = std::to_string(i);
  return prefix + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

std::size_t uniform_count(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

}  // namespace

ToyDataset gen_synthetic(const ToyConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t langs = config.langs(), dim = config.feature_dim;
  const auto names = language_names(langs);

  ToyDataset data;
  std::vector<std::string> text_tokens;
  std::vector<std::size_t> first_token;
  for (std::size_t n = 0; n < langs; ++n) {
    first_token.push_back(text_tokens.size());
    for (std::size_t k = 0; k < config.inventory[n]; ++k) text_tokens.push_back(names[n] + "_" + std::to_string(k));
  }
  const auto space = static_cast<Token>(text_tokens.size());
  text_tokens.emplace_back(Vocab::kSpace);
  text_tokens.emplace_back(Vocab::kBlank);
  data.text_vocab = Vocab::generic(text_tokens);
  data.lid_vocab = Vocab::lid(names);

  const Rng root(seed);
  Rng world = root.split(0);
  std::vector<std::vector<double>> proto(space + 1, std::vector<double>(dim));
  std::vector<std::vector<double>> centers(langs, std::vector<double>(dim));
  for (auto& c : centers)
    for (double& v : c) v = config.center_scale * world.normal();
  for (std::size_t n = 0; n < langs; ++n)
    for (std::size_t k = 0; k < config.inventory[n]; ++k)
      for (std::size_t j = 0; j < dim; ++j)
        proto[first_token[n] + k][j] = centers[n][j] + config.token_scale * world.normal();
  for (double& v : proto[space]) v = config.token_scale * world.normal();

  auto make = [&](const std::string& id, Rng rng) {
    ToyUtterance u;
    u.id = id;
    u.lid_word.level = LidLevel::word;
    u.lid_char.level = LidLevel::chr;
    const std::size_t words = uniform_count(rng, config.min_words, config.max_words);
    std::size_t lang = rng.index(langs);
    for (std::size_t w = 0; w < words; ++w) {
      if (w > 0 && langs > 1 && rng.bernoulli(config.switch_prob)) lang = (lang + 1 + rng.index(langs - 1)) % langs;
      if (w > 0) {
        u.text.push_back(space);
        u.lid_char.tokens.push_back(data.lid_vocab.space());
      }
      u.lid_word.tokens.push_back(static_cast<Token>(lang));
      const std::size_t len = uniform_count(rng, config.min_word_len, config.max_word_len);
      for (std::size_t i = 0; i < len; ++i) {
        u.text.push_back(static_cast<Token>(first_token[lang] + rng.index(config.inventory[lang])));
        u.lid_char.tokens.push_back(static_cast<Token>(lang));
      }
    }
    for (std::size_t i = 0; i < u.text.size(); ++i)
      u.token_frames.push_back(uniform_count(rng, config.min_frames_per_token, config.max_frames_per_token));
    u.features = Matrix(std::accumulate(u.token_frames.begin(), u.token_frames.end(), std::size_t{0}), dim);
    std::size_t t = 0;
    for (std::size_t i = 0; i < u.text.size(); ++i)
      for (std::size_t f = 0; f < u.token_frames[i]; ++f, ++t)
        for (std::size_t j = 0; j < dim; ++j) u.features(t, j) = proto[u.text[i]][j] + config.noise * rng.normal();
    return u;
  };

  for (std::size_t i = 0; i < config.train_utts; ++i) data.train.push_back(make(utt_id("train", i), root.split(1 + i)));
  for (std::size_t i = 0; i < config.valid_utts; ++i)
    data.valid.push_back(make(utt_id("valid", i), root.split(1 + config.train_utts + i)));
  return data;
}

namespace {

bool uses_projection(GateLossKind k) { return k == GateLossKind::ctc || k == GateLossKind::ctc_trim; }

Matrix glorot(Rng& rng, std::size_t rows, std::size_t cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-limit, limit);
  return m;
}

}  // namespace

ToyModel ToyModel::init(const ToyConfig& config, const ToyDataset& data, Rng& rng) {
  config.validate();
  const std::size_t d = config.model_dim;
  ToyModel m;
  m.in_weights = glorot(rng, config.feature_dim, d);
  m.in_bias = Matrix(1, d);
  const AttentionConfig ac{d, config.heads, config.langs(), true, config.method};
  for (std::size_t l = 0; l < config.layers; ++l) m.layers.emplace_back(ac, GatedAttentionParams::init(ac, rng));
  m.out_weights = glorot(rng, d, data.text_vocab.size());
  m.out_bias = Matrix(1, data.text_vocab.size());
  if (uses_projection(config.gate_loss)) {
    const std::size_t in = (2 * config.projection_context + 1) * config.langs();
    for (std::size_t l = 0; l < config.layers; ++l)
      m.gate_proj.push_back({glorot(rng, in, data.lid_vocab.size()), Matrix(1, data.lid_vocab.size()),
                             config.projection_context});
  }
  return m;
}

bool ToyModel::same_gates(const ToyModel& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].params().gate.data() != other.layers[l].params().gate.data()) return false;
  return true;
}

namespace {

// Every trainable matrix, in a fixed order shared with the gradient vector.
std::vector<Matrix*> trainable(ToyModel& m) {
  std::vector<Matrix*> out{&m.in_weights, &m.in_bias};
  for (auto& layer : m.layers) {
    auto& p = layer.mutable_params();
    for (auto* group : {&p.query, &p.key, &p.value})
      for (Matrix& x : *group) out.push_back(&x);
    out.push_back(&p.output);
    out.push_back(&p.gate);
  }
  out.push_back(&m.out_weights);
  out.push_back(&m.out_bias);
  for (auto& p : m.gate_proj) {
    out.push_back(&p.weights);
    out.push_back(&p.bias);
  }
  return out;
}

struct Graph {
  Tape tape;
  Var in_w, in_b, out_w, out_b;
  std::vector<ParamVars> layer_vars;
  std::vector<Var> gates;
  Var log_probs;
};

void build(Graph& g, const ToyModel& m, const Matrix& features, bool residual, const ForwardOptions& opts) {
  Tape& t = g.tape;
  g.in_w = t.leaf(m.in_weights);
  g.in_b = t.leaf(m.in_bias);
  Var h = t.tanh(t.add_row(t.matmul(t.constant(features), g.in_w), g.in_b));
  for (const auto& layer : m.layers) {
    g.layer_vars.push_back(layer.bind(t));
    const LayerVars lv = layer.forward(t, g.layer_vars.back(), h, opts);
    g.gates.push_back(lv.gates);
    h = residual ? t.add(h, lv.out) : lv.out;
  }
  g.out_w = t.leaf(m.out_weights);
  g.out_b = t.leaf(m.out_bias);
  g.log_probs = t.log_softmax_rows(t.add_row(t.matmul(h, g.out_w), g.out_b));
}

std::vector<Token> gate_target(const ToyConfig& config, const ToyUtterance& u) {
  return config.lid_level == LidLevel::chr ? u.lid_char.tokens : u.lid_word.tokens;
}

struct GateEval {
  LossResult loss;                       // w.r.t. the gates, per frame
  std::optional<LinearProjection::Grads> proj;
  Matrix lattice;
};

GateEval gate_loss(const ToyConfig& config, const ToyModel& m, const ToyDataset& data, std::size_t layer,
                   const GateMatrix& g, const ToyUtterance& u, Rng* trim_rng) {
  const double inv_t = 1.0 / static_cast<double>(u.frames());
  GateEval e;
  switch (config.gate_loss) {
    case GateLossKind::stc: {
      e.lattice = alpha_project(g, config.alpha, data.lid_vocab).values;
      const LossResult r = stc_loss(e.lattice, gate_target(config, u));
      e.loss = {r.loss * inv_t, scale(alpha_project_backward(r.grad, g), inv_t)};
      break;
    }
    case GateLossKind::ctc:
    case GateLossKind::ctc_trim: {
      std::vector<Token> y = gate_target(config, u);
      if (config.gate_loss == GateLossKind::ctc_trim) y = trim_target(y, u.frames(), *trim_rng);
      const LinearProjection& proj = m.gate_proj.at(layer);
      e.lattice = proj.forward(g);
      const LossResult r = ctc_loss(e.lattice, y, data.lid_vocab.require_blank());
      auto grads = proj.backward(g, scale(r.grad, inv_t));
      e.loss = {r.loss * inv_t, grads.gates};
      e.proj = std::move(grads);
      break;
    }
    case GateLossKind::kl: {
      e.lattice = alpha_project(g, config.alpha, data.lid_vocab).values;
      e.loss = gate_ce_loss(g, LidSequence{LidLevel::chr, u.frame_lid()}, data.lid_vocab, config.kl_smoothing);
      break;
    }
  }
  return e;
}

struct UttResult {
  double main_loss = 0.0;
  double gate_loss = 0.0;  // unweighted layer mean
  std::vector<Matrix> grads;
};

struct StepFlags {
  bool main = true;
  bool gate = true;
};

UttResult utterance_step(const ToyConfig& config, const ToyModel& m, const ToyDataset& data, const ToyUtterance& u,
                         std::size_t epoch, Rng trim_rng, StepFlags flags) {
  Graph g;
  build(g, m, u.features, config.residual, {config.regime == Regime::disconnect});
  const double inv_t = 1.0 / static_cast<double>(u.frames());

  UttResult r;
  const LossResult main = ctc_loss(g.tape.value(g.log_probs), u.text, data.text_vocab.require_blank());
  if (!main.finite()) throw Error("utterance " + u.id + ": main CTC loss is not finite");
  r.main_loss = main.loss * inv_t;

  std::vector<LossResult> per_layer;
  std::vector<GateEval> evals;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    evals.push_back(gate_loss(config, m, data, l, GateMatrix{g.tape.value(g.gates[l])}, u, &trim_rng));
    per_layer.push_back(evals.back().loss);
  }
  const GatingTotal total = gating_loss_total(per_layer, config.schedule, epoch);
  r.gate_loss = total.mean;
  const bool optimize_gates = flags.gate && config.regime != Regime::unsupervised && total.weight != 0.0;
  if (optimize_gates && !std::isfinite(total.loss))
    throw Error("utterance " + u.id + ": gating loss is not finite");

  std::vector<std::pair<Var, Matrix>> seeds;
  if (flags.main) seeds.emplace_back(g.log_probs, scale(main.grad, inv_t));
  if (optimize_gates)
    for (std::size_t l = 0; l < m.layers.size(); ++l) seeds.emplace_back(g.gates[l], total.grads[l]);
  if (!seeds.empty()) g.tape.backward(seeds);

  r.grads.push_back(g.tape.grad(g.in_w));
  r.grads.push_back(g.tape.grad(g.in_b));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const ParamVars& pv = g.layer_vars[l];
    for (const auto* group : {&pv.query, &pv.key, &pv.value})
      for (Var v : *group) r.grads.push_back(g.tape.grad(v));
    r.grads.push_back(g.tape.grad(pv.output));
    r.grads.push_back(g.tape.grad(pv.gate));
  }
  r.grads.push_back(g.tape.grad(g.out_w));
  r.grads.push_back(g.tape.grad(g.out_b));
  const double proj_scale = optimize_gates ? total.weight / static_cast<double>(m.layers.size()) : 0.0;
  for (std::size_t l = 0; l < m.gate_proj.size(); ++l) {
    const auto& pg = evals[l].proj;
    const Matrix& w = m.gate_proj[l].weights;
    r.grads.push_back(pg ? scale(pg->weights, proj_scale) : Matrix(w.rows(), w.cols()));
    r.grads.push_back(pg ? scale(pg->bias, proj_scale) : Matrix(1, m.gate_proj[l].bias.cols()));
  }
  return r;
}

void sgd_step(ToyModel& m, std::vector<Matrix>& grads, double lr, double clip) {
  double sq = 0.0;
  for (const Matrix& g : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  const double factor = clip > 0.0 && norm > clip ? clip / norm : 1.0;
  auto params = trainable(m);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data().data();
    const double* g = grads[i].data().data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) p[k] -= lr * factor * g[k];
  }
}

std::size_t argmax_row(const Matrix& m, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < m.cols(); ++j)
    if (m(row, j) > m(row, best)) best = j;
  return best;
}

struct AccuracyCount {
  std::size_t correct = 0, total = 0;
};

AccuracyCount count_accuracy(const GateMatrix& gates, const ToyUtterance& utt, std::size_t langs) {
  const auto ref = utt.frame_lid();
  if (ref.size() != gates.frames())
    throw Error("gate accuracy: " + std::to_string(gates.frames()) + " gate frames for a " +
                std::to_string(ref.size()) + "-frame utterance");
  if (gates.langs() != langs) throw Error("gate accuracy: gate matrix has the wrong number of languages");
  AccuracyCount c;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    if (ref[t] < 0 || static_cast<std::size_t>(ref[t]) >= langs) continue;
    ++c.total;
    if (argmax_row(gates.values, t) == static_cast<std::size_t>(ref[t])) ++c.correct;
  }
  return c;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

ForwardResult run_model(const ToyModel& model, const Matrix& features, bool residual) {
  Graph g;
  build(g, model, features, residual, {});
  ForwardResult r;
  r.log_probs = g.tape.value(g.log_probs);
  for (Var v : g.gates) r.gates.push_back({g.tape.value(v)});
  return r;
}

double gate_frame_accuracy(const GateMatrix& gates, const ToyUtterance& utt, std::size_t langs) {
  const AccuracyCount c = count_accuracy(gates, utt, langs);
  return c.total == 0 ? 0.0 : static_cast<double>(c.correct) / static_cast<double>(c.total);
}

std::string gates_csv(const ForwardResult& forward, const ToyUtterance& utt, const Vocab& lid_vocab) {
  const auto ref = utt.frame_lid();
  std::string out = "layer,frame,ref_lang";
  for (std::size_t n = 0; n < lid_vocab.num_languages(); ++n) out += ",g_" + lid_vocab.name(static_cast<Token>(n));
  out += '\n';
  for (std::size_t l = 0; l < forward.gates.size(); ++l) {
    const Matrix& g = forward.gates[l].values;
    if (g.rows() != ref.size()) throw Error("gates_csv: frame count mismatch for " + utt.id);
    for (std::size_t t = 0; t < g.rows(); ++t) {
      out += std::to_string(l) + ',' + std::to_string(t) + ',' + lid_vocab.name(ref[t]);
      for (std::size_t n = 0; n < g.cols(); ++n) out += ',' + format_double(g(t, n));
      out += '\n';
    }
  }
  return out;
}

void dump_gates(const ToyModel& model, const ToyConfig& config, const ToyUtterance& utt, const Vocab& lid_vocab,
                const std::string& path) {
  const std::string csv = gates_csv(run_model(model, utt.features, config.residual), utt, lid_vocab);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << csv;
  if (!f) throw Error("failed writing '" + path + "'");
}

double blank_fraction(const ToyModel& model, const ToyConfig& config, const ToyDataset& data) {
  const Token blank = data.lid_vocab.require_blank();
  std::size_t hits = 0, frames = 0;
  for (const auto& u : data.valid) {
    const auto fwd = run_model(model, u.features, config.residual);
    const GateMatrix& g = fwd.gates.back();
    const Matrix lattice = uses_projection(config.gate_loss) ? model.gate_proj.back().forward(g)
                                                             : alpha_project(g, config.alpha, data.lid_vocab).values;
    for (std::size_t t = 0; t < lattice.rows(); ++t)
      if (argmax_row(lattice, t) == static_cast<std::size_t>(blank)) ++hits;
    frames += lattice.rows();
  }
  return frames == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(frames);
}

namespace {

void evaluate(const ToyConfig& config, const ToyModel& m, const ToyDataset& data, std::size_t epoch,
              EpochStats& s) {
  const Rng eval_root = Rng(config.seed).split(7);
  const std::size_t layers = m.layers.size();
  std::vector<AccuracyCount> acc(layers);
  std::size_t errors = 0, ref_tokens = 0;
  const Token blank = data.text_vocab.require_blank();
  for (std::size_t i = 0; i < data.valid.size(); ++i) {
    const ToyUtterance& u = data.valid[i];
    const auto fwd = run_model(m, u.features, config.residual);
    s.valid_main_loss += ctc_loss(fwd.log_probs, u.text, blank).loss / static_cast<double>(u.frames());
    Rng trim = eval_root.split(i);
    std::vector<LossResult> per_layer;
    for (std::size_t l = 0; l < layers; ++l) {
      per_layer.push_back(gate_loss(config, m, data, l, fwd.gates[l], u, &trim).loss);
      const auto c = count_accuracy(fwd.gates[l], u, config.langs());
      acc[l].correct += c.correct;
      acc[l].total += c.total;
    }
    s.valid_gate_loss += gating_loss_total(per_layer, config.schedule, epoch).mean;

    std::vector<Token> path;
    for (std::size_t t = 0; t < fwd.log_probs.rows(); ++t)
      path.push_back(static_cast<Token>(argmax_row(fwd.log_probs, t)));
    std::vector<std::string> hyp, ref;
    for (Token t : collapse(path))
      if (t != blank) hyp.push_back(data.text_vocab.name(t));
    for (Token t : u.text) ref.push_back(data.text_vocab.name(t));
    errors += edit_align(ref, hyp).cost();
    ref_tokens += ref.size();
  }
  const double n = static_cast<double>(data.valid.size());
  s.valid_main_loss /= n;
  s.valid_gate_loss /= n;
  for (const auto& c : acc)
    s.gate_accuracy.push_back(c.total == 0 ? 0.0 : static_cast<double>(c.correct) / static_cast<double>(c.total));
  s.token_error_rate = static_cast<double>(errors) / static_cast<double>(ref_tokens);
  s.blank_fraction = blank_fraction(m, config, data);
}

void add_into(std::vector<Matrix>& acc, const std::vector<Matrix>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    double* a = acc[i].data().data();
    const double* b = g[i].data().data();
    for (std::size_t k = 0; k < acc[i].size(); ++k) a[k] += b[k];
  }
}

DisconnectCheck check_disconnect(const ToyConfig& config, const ToyModel& model, const ToyDataset& data) {
  DisconnectCheck c;
  const ToyUtterance& u = data.train.front();
  for (const bool main : {true, false}) {
    ToyModel copy = model;
    auto r = utterance_step(config, copy, data, u, 0, Rng(config.seed).split(9), {main, !main});
    sgd_step(copy, r.grads, config.learning_rate, 0.0);
    const bool moved = !copy.same_gates(model);
    if (main)
      c.main_step_keeps_gates = !moved;
    else
      c.gate_step_moves_gates = moved;
  }
  return c;
}

}  // namespace

TrainReport train(const ToyConfig& config, const ToyDataset& data, ToyModel& model) {
  config.validate();
  if (data.train.empty() || data.valid.empty()) throw Error("train: dataset has no utterances");
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  if (config.regime == Regime::disconnect) report.disconnect = check_disconnect(config, model, data);

  const Rng root(config.seed);
  const std::size_t n = data.train.size();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.split(100 + epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
    const Rng trim_root = root.split(1'000'000 + epoch);

    EpochStats s;
    s.epoch = epoch + 1;
    s.weight = config.regime == Regime::unsupervised ? 0.0 : config.schedule.weight(epoch);
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - b);
      std::vector<UttResult> results(count);
      parallel_for(count, [&](std::size_t i) {
        const std::size_t idx = order[b + i];
        results[i] = utterance_step(config, model, data, data.train[idx], epoch, trim_root.split(idx), {});
      });
      std::vector<Matrix> grads;
      for (const auto& r : results) {
        add_into(grads, r.grads);
        s.train_main_loss += r.main_loss;
        s.train_gate_loss += r.gate_loss;
      }
      for (Matrix& g : grads) g = scale(g, 1.0 / static_cast<double>(count));
      sgd_step(model, grads, config.learning_rate, config.clip_norm);
    }
    s.train_main_loss /= static_cast<double>(n);
    s.train_gate_loss /= static_cast<double>(n);
    evaluate(config, model, data, epoch, s);
    report.epochs.push_back(std::move(s));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace stc
