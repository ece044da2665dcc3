#include <cmath>
#include <sstream>

#include "doctest.h"
#include "stc/formats.h"
#include "stc/toyharness.h"
#include "test_util.h"

using namespace stc;

namespace {

ToyConfig small_config() {
  ToyConfig c;
  c.train_utts = 24;
  c.valid_utts = 6;
  c.model_dim = 8;
  c.epochs = 2;
  return c;
}

std::size_t count_frames(const ToyDataset& data) {
  std::size_t n = 0;
  for (const auto& u : data.valid) n += u.frames();
  return n;
}

GateMatrix one_hot_gates(const ToyUtterance& u, std::size_t langs) {
  const auto ref = u.frame_lid();
  Matrix g(ref.size(), langs);
  for (std::size_t t = 0; t < ref.size(); ++t)
    g(t, static_cast<std::size_t>(ref[t]) < langs ? static_cast<std::size_t>(ref[t]) : 0) = 1.0;
  return {g};
}

std::size_t language_frames(const ToyUtterance& u, std::size_t langs, Token which = -1) {
  std::size_t n = 0;
  for (Token t : u.frame_lid())
    if (t >= 0 && static_cast<std::size_t>(t) < langs && (which < 0 || t == which)) ++n;
  return n;
}

}  // namespace

TEST_CASE("synthetic data shape") {
  ToyConfig c;
  c.train_utts = 50;
  c.valid_utts = 10;
  const ToyDataset data = gen_synthetic(c, 3);
  CHECK(data.train.size() == 50);
  CHECK(data.valid.size() == 10);
  CHECK(data.text_vocab.size() == 6 + 6 + 2);
  CHECK(data.lid_vocab.num_languages() == 2);
  CHECK(data.train[0].id == "train0000");
  CHECK(data.valid[9].id == "valid0009");
  CHECK(data.find("valid0003") == &data.valid[3]);
  CHECK(data.find("nope") == nullptr);
  for (const auto& u : data.train) {
    REQUIRE(u.text.size() == u.lid_char.tokens.size());
    REQUIRE(u.text.size() == u.token_frames.size());
    CHECK(u.features.cols() == c.feature_dim);
    CHECK(u.frame_lid().size() == u.frames());
    CHECK(u.lid_word.tokens.size() >= c.min_words);
    CHECK(u.lid_word.tokens.size() <= c.max_words);
    for (std::size_t f : u.token_frames) {
      CHECK(f >= c.min_frames_per_token);
      CHECK(f <= c.max_frames_per_token);
    }
  }
}

TEST_CASE("switch probability zero gives monolingual utterances") {
  ToyConfig c;
  c.switch_prob = 0.0;
  c.train_utts = 100;
  c.valid_utts = 1;
  c.min_words = 4;
  const ToyDataset data = gen_synthetic(c, 11);
  for (const auto& u : data.train) {
    for (Token t : u.lid_word.tokens) CHECK(t == u.lid_word.tokens.front());
    for (Token t : u.lid_char.tokens) CHECK((t == u.lid_word.tokens.front() || t == data.lid_vocab.space()));
  }
}

TEST_CASE("same seed same data, different seed different data") {
  ToyConfig c = small_config();
  const ToyDataset a = gen_synthetic(c, 5), b = gen_synthetic(c, 5), d = gen_synthetic(c, 6);
  CHECK(dataset_jsonl(a) == dataset_jsonl(b));
  CHECK(dataset_jsonl(a) != dataset_jsonl(d));
}

TEST_CASE("switch rate matches the configured probability") {
  // With two languages every boundary switches independently with
  // probability p, so the switch count over n boundaries is Binomial(n, p).
  ToyConfig c;
  c.switch_prob = 0.5;
  c.min_words = c.max_words = 11;
  c.train_utts = 100;
  c.valid_utts = 1;
  const ToyDataset data = gen_synthetic(c, 21);
  std::size_t boundaries = 0, switches = 0;
  for (const auto& u : data.train)
    for (std::size_t w = 1; w < u.lid_word.tokens.size(); ++w) {
      ++boundaries;
      if (u.lid_word.tokens[w] != u.lid_word.tokens[w - 1]) ++switches;
    }
  REQUIRE(boundaries == 1000);
  const double n = static_cast<double>(boundaries), p = c.switch_prob;
  CHECK(std::abs(static_cast<double>(switches) - n * p) <= 3.0 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("gate frame accuracy") {
  ToyConfig c;
  c.train_utts = 1;
  c.valid_utts = 400;
  const ToyDataset data = gen_synthetic(c, 4);
  const std::size_t L = c.langs();

  SUBCASE("one-hot reference gates score 1") {
    for (const auto& u : data.valid) CHECK(gate_frame_accuracy(one_hot_gates(u, L), u, L) == 1.0);
  }
  SUBCASE("uniform gates pick the first language") {
    for (const auto& u : data.valid) {
      const GateMatrix g{Matrix(u.frames(), L, 1.0 / static_cast<double>(L))};
      const double expect =
          static_cast<double>(language_frames(u, L, 0)) / static_cast<double>(language_frames(u, L));
      CHECK(gate_frame_accuracy(g, u, L) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("random gates are at chance") {
    Rng rng(8);
    double correct = 0.0, total = 0.0;
    for (const auto& u : data.valid) {
      const double n = static_cast<double>(language_frames(u, L));
      correct += n * gate_frame_accuracy(testing::random_gates(rng, u.frames(), L), u, L);
      total += n;
    }
    REQUIRE(total >= 10000.0);
    CHECK(std::abs(correct / total - 0.5) <= 3.0 * std::sqrt(0.25 / total));
  }
  SUBCASE("shape errors") {
    const auto& u = data.valid[0];
    CHECK_THROWS_AS(gate_frame_accuracy(GateMatrix{Matrix(u.frames() + 1, L)}, u, L), Error);
    CHECK_THROWS_AS(gate_frame_accuracy(GateMatrix{Matrix(u.frames(), L + 1)}, u, L), Error);
  }
  CHECK(count_frames(data) > 0);
}

TEST_CASE("gate dump csv") {
  const ToyConfig c = small_config();
  const ToyDataset data = gen_synthetic(c, c.seed);
  Rng rng(c.seed);
  const ToyModel model = ToyModel::init(c, data, rng);
  const ToyUtterance& u = data.valid[1];
  const ForwardResult fwd = run_model(model, u.features, c.residual);
  const std::string csv = gates_csv(fwd, u, data.lid_vocab);
  CHECK(csv == gates_csv(run_model(model, u.features, c.residual), u, data.lid_vocab));

  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,frame,ref_lang,g_L0,g_L1");
  std::size_t rows = 0, last_layer_correct = 0, last_layer_total = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    REQUIRE(f.size() == 5);
    if (std::stoul(f[0]) != c.layers - 1 || f[2] == "SPACE") continue;
    const std::string best = std::stod(f[4]) > std::stod(f[3]) ? "L1" : "L0";
    ++last_layer_total;
    if (best == f[2]) ++last_layer_correct;
  }
  CHECK(rows == c.layers * u.frames());
  REQUIRE(last_layer_total > 0);
  CHECK(static_cast<double>(last_layer_correct) / static_cast<double>(last_layer_total) ==
        doctest::Approx(gate_frame_accuracy(fwd.gates.back(), u, c.langs())).epsilon(1e-12));
}

TEST_CASE("training is deterministic") {
  const ToyConfig c = small_config();
  const ToyDataset data = gen_synthetic(c, c.seed);
  auto run = [&] {
    Rng rng(c.seed);
    ToyModel m = ToyModel::init(c, data, rng);
    const TrainReport r = train(c, data, m);
    return dump_json(to_json(r, c)) + dump_json(model_json(m, c));
  };
  CHECK(run() == run());
}

TEST_CASE("every gate loss and both methods train to finite losses") {
  for (int method : {1, 2})
    for (GateLossKind kind : {GateLossKind::stc, GateLossKind::ctc, GateLossKind::ctc_trim, GateLossKind::kl})
      for (LidLevel level : {LidLevel::word, LidLevel::chr}) {
        CAPTURE(method);
        CAPTURE(to_string(kind));
        ToyConfig c = small_config();
        c.method = method;
        c.gate_loss = kind;
        c.lid_level = level;
        c.epochs = 1;
        const ToyDataset data = gen_synthetic(c, c.seed);
        Rng rng(c.seed);
        ToyModel m = ToyModel::init(c, data, rng);
        const TrainReport r = train(c, data, m);
        REQUIRE(r.epochs.size() == 1);
        CHECK(std::isfinite(r.last().train_main_loss));
        CHECK(std::isfinite(r.last().train_gate_loss));
        CHECK(std::isfinite(r.last().valid_gate_loss));
        CHECK(r.last().gate_accuracy.size() == c.layers);
      }
}

TEST_CASE("main loss goes down") {
  ToyConfig c = small_config();
  c.train_utts = 60;
  c.epochs = 6;
  const ToyDataset data = gen_synthetic(c, c.seed);
  Rng rng(c.seed);
  ToyModel m = ToyModel::init(c, data, rng);
  const TrainReport r = train(c, data, m);
  CHECK(r.last().train_main_loss < r.epochs.front().train_main_loss);
  CHECK(r.last().valid_main_loss < r.epochs.front().valid_main_loss);
}

TEST_CASE("regimes") {
  ToyConfig c = small_config();
  const ToyDataset data = gen_synthetic(c, c.seed);

  SUBCASE("unsupervised leaves the gates to the main loss") {
    c.regime = Regime::unsupervised;
    Rng rng(c.seed);
    ToyModel m = ToyModel::init(c, data, rng);
    const TrainReport r = train(c, data, m);
    CHECK(r.epochs.size() == c.epochs);
    CHECK(std::isfinite(r.last().valid_main_loss));
    CHECK(!r.disconnect.has_value());
  }
  SUBCASE("disconnect isolates the gate map") {
    c.regime = Regime::disconnect;
    Rng rng(c.seed);
    ToyModel m = ToyModel::init(c, data, rng);
    const TrainReport r = train(c, data, m);
    REQUIRE(r.disconnect.has_value());
    CHECK(r.disconnect->main_step_keeps_gates);
    CHECK(r.disconnect->gate_step_moves_gates);
  }
}

TEST_CASE("a non-finite main loss names the utterance") {
  // One token per language and one frame per token: a doubled token needs a
  // blank between the repeats, which does not fit.
  ToyConfig c = small_config();
  c.inventory = {1, 1};
  c.min_frames_per_token = c.max_frames_per_token = 1;
  c.min_word_len = c.max_word_len = 2;
  const ToyDataset data = gen_synthetic(c, c.seed);
  Rng rng(c.seed);
  ToyModel m = ToyModel::init(c, data, rng);
  try {
    train(c, data, m);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("utterance train") != std::string::npos);
    CHECK(what.find("not finite") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  auto bad = [](auto mutate) {
    ToyConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](ToyConfig& c) { c.inventory = {}; }).validate(), Error);
  CHECK_THROWS_AS(bad([](ToyConfig& c) { c.heads = 3; }).validate(), Error);
  CHECK_THROWS_AS(bad([](ToyConfig& c) { c.method = 3; }).validate(), Error);
  CHECK_THROWS_AS(bad([](ToyConfig& c) { c.switch_prob = 1.5; }).validate(), Error);
  CHECK_THROWS_AS(bad([](ToyConfig& c) { c.min_words = 5, c.max_words = 2; }).validate(), Error);
  CHECK_NOTHROW(ToyConfig{}.validate());
  CHECK(parse_regime("disconnect") == Regime::disconnect);
  CHECK(parse_gate_loss("ctc-trim") == GateLossKind::ctc_trim);
  CHECK(to_string(GateLossKind::ctc_trim) == "ctc-trim");
  CHECK_THROWS_AS(parse_gate_loss("mse"), Error);
}
