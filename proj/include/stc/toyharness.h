// stc/toyharness.h

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

// A synthetic code-switched sequence task and a small gated encoder trained
// on it. Each frame is a noisy copy of a language-and-token prototype, so the
// frame-level language is known exactly and gate/LID alignment can be
// measured directly.
//
// Model: tanh(x W_in + b) -> gated attention layers -> linear CTC head over
// the text vocabulary. Gating losses are applied to every layer's gates.

#ifndef STC_TOYHARNESS_H_
#define STC_TOYHARNESS_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stc/gatedattn.h"
#include "stc/seqloss.h"

namespace stc {

enum class Regime { joint, disconnect, unsupervised };
enum class GateLossKind { ctc, ctc_trim, stc, kl };

std::string to_string(Regime r);
std::string to_string(GateLossKind k);
Regime parse_regime(std::string_view s);
GateLossKind parse_gate_loss(std::string_view s);

struct ToyConfig {
  // Data.
  std::vector<std::size_t> inventory{6, 6};  // text tokens per language; size is L
  std::size_t feature_dim = 8;
  std::size_t min_frames_per_token = 2, max_frames_per_token = 4;
  std::size_t min_words = 3, max_words = 6;
  std::size_t min_word_len = 1, max_word_len = 3;
  double center_scale = 0.3;   // spread of the per-language centers
  double token_scale = 1.0;    // spread of token offsets around a center
  double noise = 0.5;
  double switch_prob = 0.3;
  std::size_t train_utts = 400, valid_utts = 50;

  // Model.
  std::size_t model_dim = 16, heads = 2, layers = 2;
  int method = 1;
  bool residual = false;

  // Training.
  std::size_t epochs = 50;
  double learning_rate = 0.05;
  double clip_norm = 5.0;  // global gradient norm clip; 0 disables
  std::size_t batch_size = 1;
  WgSchedule schedule;
  Regime regime = Regime::joint;
  GateLossKind gate_loss = GateLossKind::stc;
  LidLevel lid_level = LidLevel::chr;
  double alpha = 0.8;                  // STC gate lattice smoothing
  std::size_t projection_context = 1;  // CTC gate lattice window
  double kl_smoothing = 0.1;

  std::uint64_t seed = 1;

  std::size_t langs() const { return inventory.size(); }
  void validate() const;
};

struct ToyUtterance {
  std::string id;
  Matrix features;           // frames x feature_dim
  std::vector<Token> text;   // over the text vocabulary, SPACE between words
  LidSequence lid_word;      // one language per word
  LidSequence lid_char;      // one token per text token, SPACE kept
  std::vector<std::size_t> token_frames;  // frames emitted by each text token

  std::size_t frames() const { return features.rows(); }
  /// Per-frame reference over the LID vocabulary (SPACE on space frames).
  std::vector<Token> frame_lid() const;
};

struct ToyDataset {
  Vocab text_vocab;  // L*inventory tokens, SPACE, BLANK
  Vocab lid_vocab;
  std::vector<ToyUtterance> train, valid;

  const ToyUtterance* find(std::string_view id) const;
};

std::vector<std::string> language_names(std::size_t langs);

/// Fully determined by (config, seed): the seed drives the prototypes and
/// every utterance through separate rng streams.
ToyDataset gen_synthetic(const ToyConfig& config, std::uint64_t seed);

struct ToyModel {
  Matrix in_weights, in_bias;  // feature_dim x d, 1 x d
  std::vector<GatedAttentionLayer> layers;
  Matrix out_weights, out_bias;             // d x V_text, 1 x V_text
  std::vector<LinearProjection> gate_proj;  // CTC gate losses only, one per layer

  static ToyModel init(const ToyConfig& config, const ToyDataset& data, Rng& rng);
  AttentionConfig attention_config() const { return layers.at(0).config(); }
  /// True when every gate map equals the other model's bit for bit.
  bool same_gates(const ToyModel& other) const;
};

struct ForwardResult {
  Matrix log_probs;             // frames x V_text
  std::vector<GateMatrix> gates;  // per layer
};

ForwardResult run_model(const ToyModel& model, const Matrix& features, bool residual);

/// Fraction of language-labelled frames whose argmax gate (lowest index on
/// ties) is the reference language.
double gate_frame_accuracy(const GateMatrix& gates, const ToyUtterance& utt, std::size_t langs);

/// CSV: layer,frame,ref_lang,g_<lang>... one row per frame per layer.
std::string gates_csv(const ForwardResult& forward, const ToyUtterance& utt, const Vocab& lid_vocab);
void dump_gates(const ToyModel& model, const ToyConfig& config, const ToyUtterance& utt,
                const Vocab& lid_vocab, const std::string& path);

struct EpochStats {
  std::size_t epoch = 0;
  double weight = 0.0;
  double train_main_loss = 0.0;  // per frame, mean over utterances
  double train_gate_loss = 0.0;  // unweighted layer mean, per utterance
  double valid_main_loss = 0.0;
  double valid_gate_loss = 0.0;
  std::vector<double> gate_accuracy;  // per layer, validation frames
  double token_error_rate = 0.0;      // greedy CTC decode on validation
  double blank_fraction = 0.0;        // last layer, argmax of the gate lattice
};

struct DisconnectCheck {
  bool main_step_keeps_gates = false;
  bool gate_step_moves_gates = false;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::optional<DisconnectCheck> disconnect;
  double seconds = 0.0;  // wall clock; not part of the serialized report

  const EpochStats& last() const { return epochs.back(); }
  double final_gate_accuracy() const { return last().gate_accuracy.back(); }
};

/// Plain minibatch SGD. Per-utterance gradients are computed in parallel and
/// summed in utterance order. Throws naming the utterance when a loss that
/// is being optimized is not finite.
TrainReport train(const ToyConfig& config, const ToyDataset& data, ToyModel& model);

/// Gating-loss lattice frames argmaxed to BLANK, over the validation set.
double blank_fraction(const ToyModel& model, const ToyConfig& config, const ToyDataset& data);

}  // namespace stc

#endif  // STC_TOYHARNESS_H_
