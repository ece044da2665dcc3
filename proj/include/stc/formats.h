// stc/formats.h

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

// File formats: lattice CSV, kaldi-style text, and the JSON documents
// (configs, reports, checkpoints, datasets).
//
// Lattice CSV:
//   #vocab: a,b,BLANK
//   -1.0986,-1.0986,-1.0986
//   ...
// Several lattices may share one file, each introduced by "#utt: <id>"
// after the vocab line.

#ifndef STC_FORMATS_H_
#define STC_FORMATS_H_

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "stc/cmmetrics.h"
#include "stc/toyharness.h"

namespace stc {

/// Malformed or inconsistent user input.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Internal cross-check failed (e.g. implementations disagree).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kModelFormat = "stc-toy-model";

using Json = nlohmann::ordered_json;

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
/// Two-space indented, trailing newline.
std::string dump_json(const Json& j);
Json parse_json(std::string_view text, const std::string& source);

struct NamedLattice {
  std::string id;  // empty when the file has no #utt markers
  std::vector<std::string> vocab;
  Matrix values;
  std::size_t line = 0;  // first data line
};

std::vector<NamedLattice> parse_lattice_csv(std::string_view text, const std::string& source);
std::string lattice_csv(const std::vector<std::string>& vocab, const Matrix& values);

struct TextRecord {
  std::string id;
  std::vector<std::string> tokens;
  std::size_t line = 0;
};

/// "uttid tok1 tok2 ..." per line; blank lines skipped; ids must be unique.
std::vector<TextRecord> parse_text(std::string_view text, const std::string& source);

Json matrix_json(const Matrix& m);
Matrix matrix_from_json(const Json& j, const std::string& pointer);

Json to_json(const ToyConfig& config);
/// Unknown keys and type errors are reported with their JSON pointer.
ToyConfig toy_config_from_json(const Json& j);

Json to_json(const TrainReport& report, const ToyConfig& config);

Json model_json(const ToyModel& model, const ToyConfig& config);
struct Checkpoint {
  ToyConfig config;
  ToyModel model;
};
Checkpoint model_from_json(const Json& j);

Json utterance_json(const ToyUtterance& utt, const ToyDataset& data);
/// One utterance per line, training set first.
std::string dataset_jsonl(const ToyDataset& data);

Json to_json(const CorpusScore& score);

}  // namespace stc

#endif  // STC_FORMATS_H_
