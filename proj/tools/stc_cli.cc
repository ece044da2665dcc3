// stc/tools/stc_cli.cc

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

// stc: loss evaluation, metric scoring, toy training, gate dumps and the
// STC benchmark ladder.
//
// Exit codes: 0 success, 2 bad input, 3 internal consistency failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "stc/bench.h"
#include "stc/formats.h"
#include "stc/parallel.h"
#include "stc/stc_impls.h"

namespace {

using namespace stc;

constexpr int kExitInput = 2;
constexpr int kExitConsistency = 3;

void emit(const Json& j, const std::string& out) {
  const std::string text = dump_json(j);
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_file(out, text);
}

// ---- loss ------------------------------------------------------------------

struct LossArgs {
  std::string type;
  std::string lattice;
  std::string targets;
  std::optional<double> alpha;
  std::uint64_t seed = 0;
  std::string impl = "vectorized";
  std::string out;
};

struct PreparedLattice {
  Vocab vocab;
  Matrix values;
};

PreparedLattice prepare(const NamedLattice& nl, const LossArgs& a) {
  const std::string where = a.lattice + (nl.id.empty() ? "" : " (" + nl.id + ")");
  try {
    if (a.alpha) {
      const Vocab vocab = Vocab::lid(nl.vocab);
      const GateMatrix gates{nl.values};
      gates.check_rows(1e-6);
      return {vocab, alpha_project(gates, *a.alpha, vocab).values};
    }
    LogProbLattice lat{Vocab::generic(nl.vocab), nl.values};
    lat.check_normalized(1e-6);
    return {lat.vocab, lat.values};
  } catch (const InputError&) {
    throw;
  } catch (const Error& e) {
    throw InputError(where + ": " + e.what());
  }
}

int cmd_loss(const LossArgs& a) {
  if (a.type != "ctc" && a.type != "ctc-trim" && a.type != "stc")
    throw InputError("--type must be ctc, ctc-trim or stc");
  if (a.alpha && !(*a.alpha > 0.0 && *a.alpha < 1.0)) throw InputError("--alpha must be in (0, 1)");
  const StcImpl impl = [&] {
    try {
      return parse_stc_impl(a.impl);
    } catch (const Error& e) {
      throw InputError(e.what());
    }
  }();

  const auto lattices = parse_lattice_csv(read_file(a.lattice), a.lattice);
  const auto targets = parse_text(read_file(a.targets), a.targets);
  const bool named = !lattices.front().id.empty();
  if (!named && lattices.size() != 1) throw InputError(a.lattice + ": several unnamed lattices");
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < lattices.size(); ++i) by_id[lattices[i].id] = i;

  std::vector<PreparedLattice> prepared;
  for (const auto& nl : lattices) prepared.push_back(prepare(nl, a));

  struct Job {
    const PreparedLattice* lattice;
    std::vector<Token> target;
  };
  std::vector<Job> jobs;
  for (const auto& rec : targets) {
    std::size_t li = 0;
    if (named) {
      auto it = by_id.find(rec.id);
      if (it == by_id.end())
        throw InputError(a.targets + ":" + std::to_string(rec.line) + ": no lattice for utterance '" + rec.id + "'");
      li = it->second;
    }
    Job job{&prepared[li], {}};
    for (const auto& tok : rec.tokens) {
      const auto t = job.lattice->vocab.find(tok);
      if (!t) throw InputError(a.targets + ":" + std::to_string(rec.line) + ": unknown token '" + tok + "'");
      job.target.push_back(*t);
    }
    if (job.target.empty()) throw InputError(a.targets + ":" + std::to_string(rec.line) + ": empty target");
    if (a.type != "stc" && !job.lattice->vocab.blank())
      throw InputError(a.lattice + ": CTC needs a BLANK column in the vocabulary");
    if (a.type == "stc" && job.lattice->vocab.blank() &&
        std::count(job.target.begin(), job.target.end(), *job.lattice->vocab.blank()))
      throw InputError(a.targets + ":" + std::to_string(rec.line) + ": STC targets cannot contain BLANK");
    jobs.push_back(std::move(job));
  }

  struct Row {
    double loss = 0.0;
    std::size_t trimmed = 0;
  };
  std::vector<Row> rows(jobs.size());
  const Rng root(a.seed);
  parallel_for(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const Matrix& lp = job.lattice->values;
    if (a.type == "stc") {
      rows[i].loss = stc_loss_by(impl, lp, job.target).loss;
    } else {
      std::vector<Token> y = job.target;
      if (a.type == "ctc-trim") {
        Rng rng = root.split(i);
        y = trim_target(y, lp.rows(), rng);
      }
      rows[i].trimmed = y.size();
      rows[i].loss = ctc_loss(lp, y, *job.lattice->vocab.blank()).loss;
    }
  });

  Json j;
  j["schema_version"] = kSchemaVersion;
  j["type"] = a.type;
  if (a.alpha) j["alpha"] = *a.alpha;
  j["seed"] = a.seed;
  Json utts = Json::array();
  std::size_t finite = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const bool ok = std::isfinite(rows[i].loss);
    Json x;
    x["utt"] = targets[i].id;
    x["loss"] = ok ? Json(rows[i].loss) : Json(nullptr);
    x["finite"] = ok;
    x["frames"] = jobs[i].lattice->values.rows();
    x["target_len"] = jobs[i].target.size();
    if (a.type == "ctc-trim") x["trimmed_len"] = rows[i].trimmed;
    utts.push_back(std::move(x));
    if (ok) {
      ++finite;
      total += rows[i].loss;
    }
  }
  j["utterances"] = std::move(utts);
  j["summary"] = {{"count", jobs.size()}, {"finite", finite}, {"total_finite_loss", total}};
  emit(j, a.out);
  return 0;
}

// ---- metrics ---------------------------------------------------------------

struct MetricsArgs {
  std::string ref, hyp, lid, out;
};

int cmd_metrics(const MetricsArgs& a) {
  const auto ref = parse_text(read_file(a.ref), a.ref);
  const auto hyp = parse_text(read_file(a.hyp), a.hyp);
  const auto lid = parse_text(read_file(a.lid), a.lid);
  auto check_ids = [&](const std::vector<TextRecord>& other, const std::string& path) {
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i >= other.size()) throw InputError(path + ": missing utterance '" + ref[i].id + "'");
      if (other[i].id != ref[i].id)
        throw InputError(path + ":" + std::to_string(other[i].line) + ": expected utterance '" + ref[i].id +
                         "', found '" + other[i].id + "'");
    }
    if (other.size() > ref.size())
      throw InputError(path + ":" + std::to_string(other[ref.size()].line) + ": utterance '" +
                       other[ref.size()].id + "' is not in " + a.ref);
  };
  check_ids(hyp, a.hyp);
  check_ids(lid, a.lid);

  std::map<std::string, Token> langs;
  std::vector<ScoringInput> inputs;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (lid[i].tokens.size() != ref[i].tokens.size())
      throw InputError(a.lid + ":" + std::to_string(lid[i].line) + ": utterance '" + ref[i].id + "' has " +
                       std::to_string(lid[i].tokens.size()) + " language ids for " +
                       std::to_string(ref[i].tokens.size()) + " words");
    LidSequence seq{LidLevel::word, {}};
    for (const auto& l : lid[i].tokens) {
      auto it = langs.try_emplace(l, static_cast<Token>(langs.size())).first;
      seq.tokens.push_back(it->second);
    }
    inputs.push_back({ref[i].id, ref[i].tokens, hyp[i].tokens, std::move(seq)});
  }
  emit(to_json(score_corpus(inputs)), a.out);
  return 0;
}

// ---- train-toy / gates -----------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> dump;
};

int cmd_train_toy(const TrainArgs& a) {
  ToyConfig config;
  if (!a.config.empty()) {
    try {
      config = toy_config_from_json(parse_json(read_file(a.config), a.config));
    } catch (const InputError& e) {
      throw InputError(a.config + ": " + e.what());
    }
  }
  if (a.seed) config.seed = *a.seed;
  std::filesystem::create_directories(a.out);
  const ToyDataset data = gen_synthetic(config, config.seed);
  for (const auto& id : a.dump)
    if (!data.find(id)) throw InputError("--dump-gates: no utterance '" + id + "'");
  Rng init_rng = Rng(config.seed).split(2);
  ToyModel model = ToyModel::init(config, data, init_rng);
  const TrainReport report = train(config, data, model);

  const std::filesystem::path dir(a.out);
  Json j = to_json(report, config);
  Json dumps = Json::array();
  for (const auto& id : a.dump) {
    const std::string name = "gates_" + id + ".csv";
    dump_gates(model, config, *data.find(id), data.lid_vocab, (dir / name).string());
    dumps.push_back(name);
  }
  j["gate_dumps"] = std::move(dumps);
  write_file((dir / "report.json").string(), dump_json(j));
  write_file((dir / "model.json").string(), dump_json(model_json(model, config)));
  write_file((dir / "dataset.jsonl").string(), dataset_jsonl(data));
  std::cerr << "trained " << report.epochs.size() << " epochs; final gate accuracy " << report.final_gate_accuracy()
            << "\n";
  return 0;
}

struct GatesArgs {
  std::string model, utt, out;
};

int cmd_gates(const GatesArgs& a) {
  const Checkpoint ck = [&] {
    try {
      return model_from_json(parse_json(read_file(a.model), a.model));
    } catch (const InputError& e) {
      throw InputError(a.model + ": " + e.what());
    }
  }();
  const ToyDataset data = gen_synthetic(ck.config, ck.config.seed);
  const ToyUtterance* utt = data.find(a.utt);
  if (!utt) throw InputError("--utt: no utterance '" + a.utt + "' in the model's dataset");
  if (a.out.empty() || a.out == "-")
    std::cout << gates_csv(run_model(ck.model, utt->features, ck.config.residual), *utt, data.lid_vocab);
  else
    dump_gates(ck.model, ck.config, *utt, data.lid_vocab, a.out);
  return 0;
}

// ---- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string impls = "memo,table,vec";
  BenchWorkload workload;
  std::size_t iters = 50;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  std::vector<StcImpl> impls;
  std::size_t start = 0;
  while (start <= a.impls.size()) {
    const std::size_t end = std::min(a.impls.find(',', start), a.impls.size());
    try {
      impls.push_back(parse_stc_impl(a.impls.substr(start, end - start)));
    } catch (const Error& e) {
      throw InputError(std::string("--impls: ") + e.what());
    }
    start = end + 1;
  }
  emit(to_json(run_bench(a.workload, impls, a.iters)), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STC loss, gated attention and code-switching metrics toolkit"};
  app.require_subcommand(1);

  LossArgs loss;
  auto* l = app.add_subcommand("loss", "Evaluate CTC / trimmed CTC / STC losses on a lattice file");
  l->add_option("--type", loss.type, "ctc, ctc-trim or stc")->required();
  l->add_option("--lattice", loss.lattice, "Lattice CSV")->required();
  l->add_option("--targets", loss.targets, "Targets, one 'uttid tok...' per line")->required();
  l->add_option("--alpha", loss.alpha, "Treat the CSV as gate weights and alpha-project them");
  l->add_option("--seed", loss.seed, "Seed for target trimming");
  l->add_option("--impl", loss.impl, "STC implementation: memo, table or vec")->capture_default_str();
  l->add_option("--out", loss.out, "Output JSON (default stdout)");

  MetricsArgs metrics;
  auto* m = app.add_subcommand("metrics", "Score WER, CM-WER and non-CM WER");
  m->add_option("--ref", metrics.ref, "Reference text")->required();
  m->add_option("--hyp", metrics.hyp, "Hypothesis text")->required();
  m->add_option("--lid", metrics.lid, "Word-level language ids parallel to --ref")->required();
  m->add_option("--out", metrics.out, "Output JSON (default stdout)");

  TrainArgs train_args;
  auto* t = app.add_subcommand("train-toy", "Train the gated toy encoder on synthetic data");
  t->add_option("--config", train_args.config, "Config JSON (defaults apply to missing keys)");
  t->add_option("--seed", train_args.seed, "Override the config seed");
  t->add_option("--out", train_args.out, "Output directory")->required();
  t->add_option("--dump-gates", train_args.dump, "Utterance ids whose gates are written as CSV");

  GatesArgs gates;
  auto* g = app.add_subcommand("gates", "Dump per-frame gates of a trained model for one utterance");
  g->add_option("--model", gates.model, "model.json from train-toy")->required();
  g->add_option("--utt", gates.utt, "Utterance id")->required();
  g->add_option("--out", gates.out, "Output CSV (default stdout)");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time the STC implementations on a shared workload");
  b->add_option("--impls", bench.impls, "Comma-separated list of memo, table, vec")->capture_default_str();
  b->add_option("--batch", bench.workload.batch)->capture_default_str();
  b->add_option("--frames", bench.workload.frames)->capture_default_str();
  b->add_option("--target-len", bench.workload.target_len, "0 means frames / 2")->capture_default_str();
  b->add_option("--vocab", bench.workload.vocab)->capture_default_str();
  b->add_option("--target-profile", bench.workload.profile, "repetitive or random")->capture_default_str();
  b->add_option("--repeat-prob", bench.workload.repeat_prob)->capture_default_str();
  b->add_option("--iters", bench.iters)->capture_default_str();
  b->add_option("--seed", bench.workload.seed)->capture_default_str();
  b->add_option("--out", bench.out, "Output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*l) return cmd_loss(loss);
    if (*m) return cmd_metrics(metrics);
    if (*t) return cmd_train_toy(train_args);
    if (*g) return cmd_gates(gates);
    if (*b) return cmd_bench(bench);
  } catch (const ConsistencyError& e) {
    std::cerr << "stc: " << e.what() << "\n";
    return kExitConsistency;
  } catch (const stc::Error& e) {
    std::cerr << "stc: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "stc: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "stc: internal error: " << e.what() << "\n";
    return kExitConsistency;
  }
  return 0;
}
