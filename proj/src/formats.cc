// stc/formats.cc

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

#include "stc/formats.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace stc {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open '" + path + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw InputError("failed writing '" + path + "'");
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

Json parse_json(std::string_view text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError(source + ": " + e.what());
  }
}

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start)));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_number(const std::string& field, const std::string& where) {
  if (field == "-inf" || field == "-Infinity") return kLogZero;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw InputError(where + ": '" + field + "' is not a number");
  return v;
}

std::string format_double(double v) {
  if (v == kLogZero) return "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<NamedLattice> parse_lattice_csv(std::string_view text, const std::string& source) {
  const auto lines = split_lines(text);
  std::vector<std::string> vocab;
  std::vector<NamedLattice> out;
  std::vector<std::vector<double>> rows;
  std::set<std::string> seen;
  bool markers = false;

  auto flush = [&] {
    if (out.empty()) return;
    NamedLattice& cur = out.back();
    if (rows.empty()) throw InputError(source + ":" + std::to_string(cur.line) + ": lattice has no frames");
    cur.values = Matrix(rows.size(), vocab.size());
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t v = 0; v < vocab.size(); ++v) cur.values(t, v) = rows[t][v];
    rows.clear();
  };

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = source + ":" + std::to_string(i + 1);
    const std::string_view line = trim(lines[i]);
    if (line.empty()) continue;
    if (line.starts_with("#vocab:")) {
      if (!vocab.empty()) throw InputError(where + ": duplicate #vocab line");
      vocab = split_on(line.substr(7), ',');
      std::set<std::string> unique(vocab.begin(), vocab.end());
      if (unique.size() != vocab.size() || unique.count("")) throw InputError(where + ": bad vocabulary");
      continue;
    }
    if (vocab.empty()) throw InputError(where + ": expected '#vocab: tok1,tok2,...' first");
    if (line.starts_with("#utt:")) {
      if (!out.empty() && !markers) throw InputError(where + ": #utt marker after unnamed frames");
      markers = true;
      flush();
      std::string id(trim(line.substr(5)));
      if (id.empty() || !seen.insert(id).second) throw InputError(where + ": missing or duplicate utterance id");
      out.push_back({id, vocab, {}, i + 2});
      continue;
    }
    if (line.starts_with("#")) continue;
    if (out.empty()) out.push_back({"", vocab, {}, i + 1});
    const auto fields = split_on(line, ',');
    if (fields.size() != vocab.size())
      throw InputError(where + ": " + std::to_string(fields.size()) + " values for a vocabulary of " +
                       std::to_string(vocab.size()));
    std::vector<double> row;
    for (const auto& f : fields) row.push_back(parse_number(f, where));
    rows.push_back(std::move(row));
  }
  if (vocab.empty()) throw InputError(source + ": empty lattice file");
  if (out.empty()) throw InputError(source + ": lattice has no frames");
  flush();
  return out;
}

std::string lattice_csv(const std::vector<std::string>& vocab, const Matrix& values) {
  std::string out = "#vocab: ";
  for (std::size_t i = 0; i < vocab.size(); ++i) out += (i ? "," : "") + vocab[i];
  out += '\n';
  for (std::size_t t = 0; t < values.rows(); ++t) {
    for (std::size_t v = 0; v < values.cols(); ++v) out += (v ? "," : "") + format_double(values(t, v));
    out += '\n';
  }
  return out;
}

std::vector<TextRecord> parse_text(std::string_view text, const std::string& source) {
  std::vector<TextRecord> out;
  std::set<std::string> seen;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto fields = split_ws(lines[i]);
    if (fields.empty()) continue;
    if (!seen.insert(fields[0]).second)
      throw InputError(source + ":" + std::to_string(i + 1) + ": duplicate utterance id '" + fields[0] + "'");
    TextRecord r{fields[0], {}, i + 1};
    r.tokens.assign(fields.begin() + 1, fields.end());
    out.push_back(std::move(r));
  }
  return out;
}

Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j, const std::string& pointer) {
  if (!j.is_array()) throw InputError(pointer + ": expected an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = rows == 0 ? 0 : j[0].size();
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw InputError(pointer + "/" + std::to_string(i) + ": expected a row of " + std::to_string(cols) + " numbers");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[i][c].is_number())
        throw InputError(pointer + "/" + std::to_string(i) + "/" + std::to_string(c) + ": expected a number");
      m(i, c) = j[i][c].get<double>();
    }
  }
  return m;
}

Json to_json(const ToyConfig& c) {
  Json j;
  j["inventory"] = c.inventory;
  j["feature_dim"] = c.feature_dim;
  j["min_frames_per_token"] = c.min_frames_per_token;
  j["max_frames_per_token"] = c.max_frames_per_token;
  j["min_words"] = c.min_words;
  j["max_words"] = c.max_words;
  j["min_word_len"] = c.min_word_len;
  j["max_word_len"] = c.max_word_len;
  j["center_scale"] = c.center_scale;
  j["token_scale"] = c.token_scale;
  j["noise"] = c.noise;
  j["switch_prob"] = c.switch_prob;
  j["train_utts"] = c.train_utts;
  j["valid_utts"] = c.valid_utts;
  j["model_dim"] = c.model_dim;
  j["heads"] = c.heads;
  j["layers"] = c.layers;
  j["method"] = c.method;
  j["residual"] = c.residual;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["clip_norm"] = c.clip_norm;
  j["batch_size"] = c.batch_size;
  j["schedule"] = c.schedule.to_string();
  j["regime"] = to_string(c.regime);
  j["gate_loss"] = to_string(c.gate_loss);
  j["lid_level"] = c.lid_level == LidLevel::chr ? "char" : "word";
  j["alpha"] = c.alpha;
  j["projection_context"] = c.projection_context;
  j["kl_smoothing"] = c.kl_smoothing;
  j["seed"] = c.seed;
  return j;
}

namespace {

class ConfigReader {
 public:
  explicit ConfigReader(const Json& j) : j_(j) {
    if (!j.is_object()) throw InputError("/: config must be a JSON object");
  }

  void count(const char* key, std::size_t& out) {
    if (const Json* v = get(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void seed(const char* key, std::uint64_t& out) {
    if (const Json* v = get(key)) {
      if (!v->is_number_unsigned()) fail(key, "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void integer(const char* key, int& out) {
    if (const Json* v = get(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      out = v->get<int>();
    }
  }
  void real(const char* key, double& out) {
    if (const Json* v = get(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void boolean(const char* key, bool& out) {
    if (const Json* v = get(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  template <typename F>
  void text(const char* key, F&& apply) {
    if (const Json* v = get(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      try {
        apply(v->get<std::string>());
      } catch (const InputError&) {
        throw;
      } catch (const Error& e) {
        fail(key, e.what());
      }
    }
  }
  void counts(const char* key, std::vector<std::size_t>& out) {
    if (const Json* v = get(key)) {
      if (!v->is_array()) fail(key, "expected an array");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number_unsigned())
          fail(std::string(key) + "/" + std::to_string(i), "expected a non-negative integer");
        out.push_back((*v)[i].get<std::size_t>());
      }
    }
  }

  void reject_unknown() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw InputError("/" + key + ": unknown config key");
  }

  [[noreturn]] static void fail(const std::string& key, const std::string& what) {
    throw InputError("/" + key + ": " + what);
  }

 private:
  const Json* get(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const Json& j_;
  std::set<std::string> used_;
};

}  // namespace

ToyConfig toy_config_from_json(const Json& j) {
  ToyConfig c;
  ConfigReader r(j);
  r.counts("inventory", c.inventory);
  r.count("feature_dim", c.feature_dim);
  r.count("min_frames_per_token", c.min_frames_per_token);
  r.count("max_frames_per_token", c.max_frames_per_token);
  r.count("min_words", c.min_words);
  r.count("max_words", c.max_words);
  r.count("min_word_len", c.min_word_len);
  r.count("max_word_len", c.max_word_len);
  r.real("center_scale", c.center_scale);
  r.real("token_scale", c.token_scale);
  r.real("noise", c.noise);
  r.real("switch_prob", c.switch_prob);
  r.count("train_utts", c.train_utts);
  r.count("valid_utts", c.valid_utts);
  r.count("model_dim", c.model_dim);
  r.count("heads", c.heads);
  r.count("layers", c.layers);
  r.integer("method", c.method);
  r.boolean("residual", c.residual);
  r.count("epochs", c.epochs);
  r.real("learning_rate", c.learning_rate);
  r.real("clip_norm", c.clip_norm);
  r.count("batch_size", c.batch_size);
  r.text("schedule", [&](const std::string& s) { c.schedule = WgSchedule::parse(s); });
  r.text("regime", [&](const std::string& s) { c.regime = parse_regime(s); });
  r.text("gate_loss", [&](const std::string& s) { c.gate_loss = parse_gate_loss(s); });
  r.text("lid_level", [&](const std::string& s) {
    if (s == "char")
      c.lid_level = LidLevel::chr;
    else if (s == "word")
      c.lid_level = LidLevel::word;
    else
      throw Error("expected \"char\" or \"word\"");
  });
  r.real("alpha", c.alpha);
  r.count("projection_context", c.projection_context);
  r.real("kl_smoothing", c.kl_smoothing);
  r.seed("seed", c.seed);
  r.reject_unknown();
  try {
    c.validate();
  } catch (const Error& e) {
    // validate() names the field as a pointer after "toy config ".
    std::string msg = e.what();
    const std::string prefix = "toy config ";
    throw InputError(msg.starts_with(prefix) ? msg.substr(prefix.size()) : msg);
  }
  return c;
}

Json to_json(const TrainReport& report, const ToyConfig& config) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = to_json(config);
  Json epochs = Json::array();
  for (const auto& e : report.epochs) {
    Json x;
    x["epoch"] = e.epoch;
    x["w_g"] = e.weight;
    x["train_main_loss"] = e.train_main_loss;
    x["train_gate_loss"] = e.train_gate_loss;
    x["valid_main_loss"] = e.valid_main_loss;
    x["valid_gate_loss"] = e.valid_gate_loss;
    x["gate_accuracy"] = e.gate_accuracy;
    x["token_error_rate"] = e.token_error_rate;
    x["blank_fraction"] = e.blank_fraction;
    epochs.push_back(std::move(x));
  }
  j["epochs"] = std::move(epochs);
  if (!report.epochs.empty()) {
    j["final"] = {{"gate_accuracy", report.final_gate_accuracy()},
                  {"token_error_rate", report.last().token_error_rate},
                  {"blank_fraction", report.last().blank_fraction}};
  }
  if (report.disconnect) {
    j["disconnect_check"] = {{"main_step_keeps_gates", report.disconnect->main_step_keeps_gates},
                             {"gate_step_moves_gates", report.disconnect->gate_step_moves_gates}};
  }
  return j;
}

Json model_json(const ToyModel& m, const ToyConfig& config) {
  Json j;
  j["format"] = kModelFormat;
  j["schema_version"] = kSchemaVersion;
  j["config"] = to_json(config);
  Json p;
  p["in_weights"] = matrix_json(m.in_weights);
  p["in_bias"] = matrix_json(m.in_bias);
  Json layers = Json::array();
  for (const auto& layer : m.layers) {
    const auto& lp = layer.params();
    Json x;
    for (const auto& [name, group] : {std::pair{"query", &lp.query}, {"key", &lp.key}, {"value", &lp.value}}) {
      Json arr = Json::array();
      for (const Matrix& mm : *group) arr.push_back(matrix_json(mm));
      x[name] = std::move(arr);
    }
    x["output"] = matrix_json(lp.output);
    x["gate"] = matrix_json(lp.gate);
    layers.push_back(std::move(x));
  }
  p["layers"] = std::move(layers);
  p["out_weights"] = matrix_json(m.out_weights);
  p["out_bias"] = matrix_json(m.out_bias);
  Json proj = Json::array();
  for (const auto& gp : m.gate_proj)
    proj.push_back({{"weights", matrix_json(gp.weights)}, {"bias", matrix_json(gp.bias)}});
  p["gate_proj"] = std::move(proj);
  j["params"] = std::move(p);
  return j;
}

namespace {

const Json& member(const Json& j, const char* key, const std::string& pointer) {
  if (!j.is_object() || !j.contains(key)) throw InputError(pointer + "/" + key + ": missing");
  return j.at(key);
}

}  // namespace

Checkpoint model_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("format") || j["format"] != kModelFormat)
    throw InputError("/format: not a " + std::string(kModelFormat) + " checkpoint");
  if (!j.contains("schema_version") || j["schema_version"] != kSchemaVersion)
    throw InputError("/schema_version: unsupported version");
  Checkpoint c;
  c.config = toy_config_from_json(member(j, "config", ""));
  const Json& p = member(j, "params", "");
  c.model.in_weights = matrix_from_json(member(p, "in_weights", "/params"), "/params/in_weights");
  c.model.in_bias = matrix_from_json(member(p, "in_bias", "/params"), "/params/in_bias");
  const Json& layers = member(p, "layers", "/params");
  if (!layers.is_array() || layers.size() != c.config.layers)
    throw InputError("/params/layers: expected " + std::to_string(c.config.layers) + " layers");
  const AttentionConfig ac{c.config.model_dim, c.config.heads, c.config.langs(), true, c.config.method};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string ptr = "/params/layers/" + std::to_string(l);
    GatedAttentionParams lp;
    for (const auto& [name, group] : {std::pair{"query", &lp.query}, {"key", &lp.key}, {"value", &lp.value}}) {
      const Json& arr = member(layers[l], name, ptr);
      if (!arr.is_array()) throw InputError(ptr + "/" + name + ": expected an array");
      for (std::size_t n = 0; n < arr.size(); ++n)
        group->push_back(matrix_from_json(arr[n], ptr + "/" + name + "/" + std::to_string(n)));
    }
    lp.output = matrix_from_json(member(layers[l], "output", ptr), ptr + "/output");
    lp.gate = matrix_from_json(member(layers[l], "gate", ptr), ptr + "/gate");
    try {
      c.model.layers.emplace_back(ac, std::move(lp));
    } catch (const Error& e) {
      throw InputError(ptr + ": " + e.what());
    }
  }
  c.model.out_weights = matrix_from_json(member(p, "out_weights", "/params"), "/params/out_weights");
  c.model.out_bias = matrix_from_json(member(p, "out_bias", "/params"), "/params/out_bias");
  const Json& proj = member(p, "gate_proj", "/params");
  for (std::size_t l = 0; l < proj.size(); ++l) {
    const std::string ptr = "/params/gate_proj/" + std::to_string(l);
    c.model.gate_proj.push_back({matrix_from_json(member(proj[l], "weights", ptr), ptr + "/weights"),
                                 matrix_from_json(member(proj[l], "bias", ptr), ptr + "/bias"),
                                 c.config.projection_context});
  }
  const std::size_t d = c.config.model_dim;
  if (c.model.in_weights.rows() != c.config.feature_dim || c.model.in_weights.cols() != d ||
      c.model.in_bias.rows() != 1 || c.model.in_bias.cols() != d || c.model.out_weights.rows() != d ||
      c.model.out_bias.cols() != c.model.out_weights.cols())
    throw InputError("/params: parameter shapes do not match the config");
  return c;
}

Json utterance_json(const ToyUtterance& u, const ToyDataset& data) {
  Json j;
  j["id"] = u.id;
  j["features"] = matrix_json(u.features);
  Json text = Json::array(), word = Json::array(), chr = Json::array();
  for (Token t : u.text) text.push_back(data.text_vocab.name(t));
  for (Token t : u.lid_word.tokens) word.push_back(data.lid_vocab.name(t));
  for (Token t : u.lid_char.tokens) chr.push_back(data.lid_vocab.name(t));
  j["text"] = std::move(text);
  j["lid_word"] = std::move(word);
  j["lid_char"] = std::move(chr);
  j["token_frames"] = u.token_frames;
  return j;
}

std::string dataset_jsonl(const ToyDataset& data) {
  std::string out;
  for (const auto* set : {&data.train, &data.valid})
    for (const auto& u : *set) out += utterance_json(u, data).dump() + "\n";
  return out;
}

Json to_json(const CorpusScore& score) {
  auto fill = [](Json& x, const ErrorCounts& c, const CmCounts& cm) {
    x["wer"] = c.wer();
    x["cm_wer"] = cm.cm();
    x["non_cm_wer"] = cm.non_cm();
    x["S"] = c.S;
    x["D"] = c.D;
    x["I"] = c.I;
    x["C"] = c.C;
    x["M"] = cm.M;
    x["N"] = cm.N;
  };
  Json j;
  j["schema_version"] = kSchemaVersion;
  Json corpus;
  fill(corpus, score.counts, score.cm);
  j["corpus"] = std::move(corpus);
  Json per = Json::array();
  for (const auto& u : score.utts) {
    Json x;
    x["utt"] = u.id;
    fill(x, u.counts, u.cm);
    per.push_back(std::move(x));
  }
  j["per_utt"] = std::move(per);
  return j;
}

}  // namespace stc
