#include <cmath>
#include <set>

#include "doctest.h"
#include "stc/oracles.h"
#include "stc/seqloss.h"
#include "test_util.h"

using namespace stc;
using stc::testing::numeric_grad;
using stc::testing::random_gates;
using stc::testing::random_lattice;
using stc::testing::random_tokens;
using stc::testing::relative_error;

namespace {

constexpr Token a = 0, b = 1;

Matrix uniform(std::size_t frames, std::size_t vocab) {
  return Matrix(frames, vocab, -std::log(static_cast<double>(vocab)));
}

const Vocab& lid2() {
  static const Vocab v = Vocab::lid({"GUJ", "ENG"});
  return v;
}

}  // namespace

TEST_CASE("lid vocabulary layout") {
  const Vocab& v = lid2();
  CHECK(v.size() == 6);
  CHECK(v.name(0) == "GUJ");
  CHECK(v.space() == 2);
  CHECK(*v.blank() == 3);
  CHECK(v.unk() == 4);
  CHECK(v.eossos() == 5);
  CHECK(v.is_language(1));
  CHECK_FALSE(v.is_language(2));
  CHECK_THROWS_AS(Vocab::lid({"BLANK"}), Error);
  CHECK_THROWS_WITH_AS(v.index("FRA"), "unknown token 'FRA'", Error);
}

TEST_CASE("ctc_required_length") {
  CHECK(ctc_required_length(std::vector{0, 1, 2}) == 3);
  CHECK(ctc_required_length(std::vector{0, 0, 0, 0}) == 7);  // 2N - 1 with N = 4
  CHECK(ctc_required_length(std::vector{0, 0, 1, 0}) == 5);
  CHECK_THROWS_AS(ctc_required_length(std::vector<Token>{}), Error);
}

TEST_CASE("ctc_loss examples") {
  // vocab {a, b, BLANK}
  const Token blank = 2;
  Matrix onehot(1, 3, kLogZero);
  onehot(0, a) = 0.0;
  auto r = ctc_loss(onehot, std::vector{a}, blank);
  CHECK(r.loss == doctest::Approx(0.0));

  // Five admissible paths out of 27: aab, abb, a-b, -ab, ab-.
  r = ctc_loss(uniform(3, 3), std::vector{a, b}, blank);
  CHECK(r.loss == doctest::Approx(1.6863989535702288).epsilon(1e-12));

  r = ctc_loss(uniform(2, 3), std::vector{a, a}, blank);
  CHECK(r.loss == kInf);
  CHECK_FALSE(r.finite());
  CHECK(r.grad == Matrix(2, 3));

  CHECK_THROWS_AS(ctc_loss(uniform(3, 3), std::vector{a, 5}, blank), Error);
  CHECK_THROWS_AS(ctc_loss(uniform(3, 3), std::vector{a, blank}, blank), Error);
}

TEST_CASE("ctc_loss typed api names unknown tokens") {
  const Vocab v = Vocab::generic({"a", "b", "BLANK"});
  LogProbLattice lat{v, uniform(3, 3)};
  lat.check_normalized();
  LidSequence y{LidLevel::chr, {0, 1}};
  CHECK(ctc_loss(lat, y).loss == doctest::Approx(1.6863989535702288));
  y.tokens = {0, 7};
  CHECK_THROWS_WITH_AS(ctc_loss(lat, y), "token index 7 outside vocabulary of size 3", Error);
}

TEST_CASE("ctc gradient is minus the frame posterior") {
  const Matrix lp = uniform(3, 3);
  const auto r = ctc_loss(lp, std::vector{a, b}, 2);
  for (std::size_t t = 0; t < 3; ++t) {
    double s = 0.0;
    for (double g : r.grad.row(t)) s += g;
    CHECK(s == doctest::Approx(-1.0));  // posteriors per frame sum to one
  }
}

TEST_CASE("trim_target examples") {
  constexpr Token G = 0, E = 1;
  Rng rng(1);
  CHECK(trim_target(std::vector{G, E, G}, 7, rng) == std::vector{G, E, G});
  CHECK(trim_target(std::vector{G, G, G, G}, 3, rng) == std::vector{G, G});
  std::set<Token> seen;
  for (int i = 0; i < 50; ++i) {
    const auto y = trim_target(std::vector{G, E}, 1, rng);
    REQUIRE(y.size() == 1);
    seen.insert(y[0]);
  }
  CHECK(seen.size() == 2);
  CHECK_THROWS_AS(trim_target(std::vector{G}, 0, rng), Error);
}

TEST_CASE("trim_target is deterministic per stream") {
  const std::vector<Token> y{0, 0, 0, 1, 1, 0, 0, 1, 1, 1};
  Rng r1 = Rng(77).split(3), r2 = Rng(77).split(3);
  for (int i = 0; i < 10; ++i) CHECK(trim_target(y, 8, r1) == trim_target(y, 8, r2));
}

TEST_CASE("trim_target invariants, exhaustive over short binary targets") {
  Rng rng(5);
  for (const auto& y : oracle::all_sequences(2, 1, 6)) {
    for (std::size_t frames = 1; frames <= 6; ++frames) {
      const auto t = trim_target(y, frames, rng);
      CHECK((ctc_required_length(t) <= frames || t.size() == 1));
      CHECK(ctc_loss(uniform(frames, 3), t, 2).finite());
      if (collapse(y).size() <= frames) CHECK(collapse(t) == collapse(y));
    }
  }
}

TEST_CASE("stc_loss examples") {
  Matrix lp(2, 2, kLogZero);
  lp(0, a) = 0.0;
  lp(1, b) = 0.0;
  CHECK(stc_loss(lp, std::vector{a, b}).loss == doctest::Approx(0.0));

  // aab and abb, each P = 1/8 with two outputs apiece.
  CHECK(stc_loss(uniform(3, 2), std::vector{a, b}).loss ==
        doctest::Approx(2.0794415416798357).epsilon(1e-12));
  // Only aaa; one run of three frames, three outputs.
  CHECK(stc_loss(uniform(3, 2), std::vector{a, a}).loss ==
        doctest::Approx(3.1780538303479458).epsilon(1e-12));

  CHECK(stc_loss(uniform(2, 2), std::vector{a, b, a}).loss == kInf);
}

TEST_CASE("stc typed api rejects blank") {
  LogProbLattice lat{lid2(), uniform(4, 6)};
  LidSequence y{LidLevel::chr, {0, *lid2().blank(), 1}};
  CHECK_THROWS_WITH_AS(stc_loss(lat, y), "STC has no blank", Error);
  y.tokens = {0, lid2().space(), 1};
  CHECK(stc_loss(lat, y).finite());
}

TEST_CASE("enumeration oracles") {
  CHECK(oracle::enumerate_stc(uniform(2, 2), std::vector{a, b, a}) == 0.0);
  CHECK(oracle::enumerate_ctc(uniform(3, 3), std::vector{a, b}, 2) == doctest::Approx(5.0 / 27.0));
  CHECK(oracle::enumerate_stc(uniform(3, 2), std::vector{a, a}) == doctest::Approx(1.0 / 24.0));
  CHECK_THROWS_AS(oracle::enumerate_stc(uniform(13, 2), std::vector{a}), Error);
  CHECK_THROWS_AS(oracle::enumerate_stc(uniform(3, 5), std::vector{a}), Error);

  // Outputs of a uniform T=3 binary lattice form a distribution.
  double total = 0.0;
  for (const auto& y : oracle::all_sequences(2, 1, 3)) total += oracle::enumerate_stc(uniform(3, 2), y);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ctc and stc dynamic programs match enumeration") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t frames = 1 + rng.index(8);
    const std::size_t vocab = 2 + rng.index(2);
    const Matrix lp = random_lattice(rng, frames, vocab);
    const auto y = random_tokens(rng, 1 + rng.index(frames), vocab);

    const double p_stc = oracle::enumerate_stc(lp, y);
    const auto stc = stc_loss(lp, y);
    if (p_stc == 0.0) {
      CHECK(stc.loss == kInf);
    } else {
      CHECK(std::abs(-std::log(p_stc) - stc.loss) <= 1e-8);
    }

    // CTC: the last token is the blank; targets avoid it.
    const Token blank = static_cast<Token>(vocab - 1);
    const auto yc = random_tokens(rng, 1 + rng.index(frames), vocab - 1);
    const double p_ctc = oracle::enumerate_ctc(lp, yc, blank);
    const auto ctc = ctc_loss(lp, yc, blank);
    if (p_ctc == 0.0) {
      CHECK(ctc.loss == kInf);
    } else {
      CHECK(std::abs(-std::log(p_ctc) - ctc.loss) <= 1e-8);
    }
  }
}

TEST_CASE("stc output probabilities sum to one") {
  Rng rng(31);
  for (std::size_t frames = 2; frames <= 5; ++frames) {
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix lp = trial == 0 ? uniform(frames, 2) : random_lattice(rng, frames, 2);
      double total = 0.0;
      for (const auto& y : oracle::all_sequences(2, 1, frames)) total += std::exp(-stc_loss(lp, y).loss);
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t frames = 2 + rng.index(7), vocab = 3 + rng.index(2);
    const Matrix lp = random_lattice(rng, frames, vocab);
    const Token blank = static_cast<Token>(vocab - 1);

    const auto yc = random_tokens(rng, 1 + rng.index((frames + 1) / 2), vocab - 1);
    const auto ctc = ctc_loss(lp, yc, blank);
    if (ctc.finite()) {
      const auto num = numeric_grad([&](const Matrix& x) { return ctc_loss(x, yc, blank).loss; }, lp);
      CHECK(relative_error(ctc.grad, num) <= 1e-4);
    }

    const auto ys = random_tokens(rng, 1 + rng.index(frames), vocab);
    const auto stc = stc_loss(lp, ys);
    const auto num = numeric_grad([&](const Matrix& x) { return stc_loss(x, ys).loss; }, lp);
    CHECK(relative_error(stc.grad, num) <= 1e-4);
  }
}

TEST_CASE("alpha_project examples") {
  const GateMatrix g{Matrix{{1.0, 0.0}}};
  const auto lat = alpha_project(g, 0.8, lid2());
  const std::vector<double> expect{0.8, 0.0, 0.05, 0.05, 0.05, 0.05};
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(std::exp(lat.values(0, i)) == doctest::Approx(expect[i]));
  CHECK(lat.values(0, 1) == kLogZero);

  CHECK_THROWS_AS(alpha_project(g, 0.0, lid2()), Error);
  CHECK_THROWS_AS(alpha_project(g, 1.0, lid2()), Error);
  CHECK_THROWS_AS(alpha_project(g, 0.5, Vocab::generic({"a", "b"})), Error);
}

TEST_CASE("alpha_project rows normalize and favour languages above one third") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = random_gates(rng, 5, 2);
    const double alpha = rng.uniform(0.01, 0.99);
    alpha_project(g, alpha, lid2()).check_normalized(1e-12);

    const auto lat = alpha_project(g, 0.34, lid2());
    for (std::size_t t = 0; t < g.frames(); ++t) {
      if (std::max(g.values(t, 0), g.values(t, 1)) <= 0.5) continue;
      const auto row = lat.values.row(t);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      CHECK(lid2().is_language(static_cast<Token>(best)));
    }
  }
}

TEST_CASE("gate gradients through alpha_project") {
  Rng rng(12);
  const Vocab& v = lid2();
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t frames = 3 + rng.index(6);
    const auto g = random_gates(rng, frames, 2);
    const double alpha = 0.8;
    LidSequence y{LidLevel::chr, random_tokens(rng, 1 + rng.index(frames), 3)};  // GUJ, ENG, SPACE
    auto f_stc = [&](const Matrix& x) { return stc_loss(alpha_project({x}, alpha, v).values, y.tokens).loss; };
    const auto lat = alpha_project(g, alpha, v);
    const auto r = stc_loss(lat.values, y.tokens);
    CHECK(relative_error(alpha_project_backward(r.grad, g), numeric_grad(f_stc, g.values)) <= 1e-4);

    const auto yc = collapse(y.tokens);
    auto f_ctc = [&](const Matrix& x) { return ctc_loss(alpha_project({x}, alpha, v).values, yc, *v.blank()).loss; };
    const auto rc = ctc_loss(lat.values, yc, *v.blank());
    if (rc.finite())
      CHECK(relative_error(alpha_project_backward(rc.grad, g), numeric_grad(f_ctc, g.values)) <= 1e-4);
  }
}

TEST_CASE("linear_project examples") {
  Rng rng(8);
  const auto g = random_gates(rng, 6, 2);
  Matrix w(2, 6);
  w(0, 0) = 50.0;
  w(1, 1) = 50.0;
  const Matrix lp = linear_project(g, w, 0);
  for (std::size_t t = 0; t < 6; ++t) {
    const auto row = lp.row(t);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    CHECK(best == (g.values(t, 0) >= g.values(t, 1) ? 0 : 1));
  }

  const Matrix flat = linear_project(g, Matrix(2, 6), 0);
  for (double v : flat.data()) CHECK(v == doctest::Approx(-std::log(6.0)));

  // k = 2, T = 4: frame 0 sees two zero-padded frames, then gates 0..2.
  const auto g4 = random_gates(rng, 4, 2);
  const LinearProjection proj{Matrix(10, 6), Matrix(), 2};
  const Matrix win = proj.window(g4);
  CHECK(win.cols() == 10);
  for (std::size_t c = 0; c < 4; ++c) CHECK(win(0, c) == 0.0);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t n = 0; n < 2; ++n) CHECK(win(0, 4 + 2 * o + n) == g4.values(o, n));
  for (std::size_t c = 8; c < 10; ++c) CHECK(win(3, c) == 0.0);

  CHECK_THROWS_AS(linear_project(g, Matrix(3, 6), 0), Error);
  LogProbLattice{Vocab::lid({"GUJ", "ENG"}), linear_project(g4, stc::testing::random_matrix(rng, 10, 6), 2)}
      .check_normalized(1e-12);
}

TEST_CASE("linear projection gradients") {
  Rng rng(21);
  const Token blank = 3;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t frames = 3 + rng.index(6), k = rng.index(3);
    const auto g = random_gates(rng, frames, 2);
    LinearProjection proj{stc::testing::random_matrix(rng, (2 * k + 1) * 2, 6),
                          stc::testing::random_matrix(rng, 1, 6), k};
    const auto y = random_tokens(rng, 1 + rng.index((frames + 1) / 2), 3);
    const auto r = ctc_loss(proj.forward(g), y, blank);
    if (!r.finite()) continue;
    const auto grads = proj.backward(g, r.grad);

    auto f_gates = [&](const Matrix& x) { return ctc_loss(proj.forward({x}), y, blank).loss; };
    CHECK(relative_error(grads.gates, numeric_grad(f_gates, g.values)) <= 1e-4);
    auto f_w = [&](const Matrix& w) {
      LinearProjection p = proj;
      p.weights = w;
      return ctc_loss(p.forward(g), y, blank).loss;
    };
    CHECK(relative_error(grads.weights, numeric_grad(f_w, proj.weights)) <= 1e-4);
    auto f_b = [&](const Matrix& bias) {
      LinearProjection p = proj;
      p.bias = bias;
      return ctc_loss(p.forward(g), y, blank).loss;
    };
    CHECK(relative_error(grads.bias, numeric_grad(f_b, proj.bias)) <= 1e-4);
  }
}

TEST_CASE("gate_ce_loss examples") {
  const Vocab& v = lid2();
  const Token guj = 0, space = v.space();

  const GateMatrix q{Matrix{{0.9, 0.1}, {0.1, 0.9}}};
  CHECK(gate_ce_loss(q, {LidLevel::chr, {0, 1}}, v, 0.1).loss == doctest::Approx(0.0).epsilon(1e-15));

  const auto masked = gate_ce_loss(q, {LidLevel::chr, {space, space}}, v, 0.1);
  CHECK(masked.loss == 0.0);
  CHECK(masked.grad == Matrix(2, 2));

  const GateMatrix half{Matrix{{0.5, 0.5}}};
  CHECK(gate_ce_loss(half, {LidLevel::chr, {guj}}, v, 0.1).loss ==
        doctest::Approx(0.3680642071684971).epsilon(1e-12));

  CHECK_THROWS_AS(gate_ce_loss(half, {LidLevel::chr, {guj, guj}}, v, 0.1), Error);
  CHECK_THROWS_AS(gate_ce_loss(half, {LidLevel::word, {guj}}, v, 0.1), Error);
}

TEST_CASE("gate_ce_loss gradient") {
  Rng rng(17);
  const Vocab& v = lid2();
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t frames = 1 + rng.index(8);
    const auto g = random_gates(rng, frames, 2);
    LidSequence y{LidLevel::chr, random_tokens(rng, frames, 3)};
    const auto r = gate_ce_loss(g, y, v, 0.1);
    auto f = [&](const Matrix& x) { return gate_ce_loss({x}, y, v, 0.1).loss; };
    const Matrix num = numeric_grad(f, g.values);
    CHECK(relative_error(r.grad, num) <= 1e-4);
  }
}

TEST_CASE("smoothness_penalty") {
  const GateMatrix flat{Matrix{{0.3, 0.7}, {0.3, 0.7}, {0.3, 0.7}}};
  CHECK(smoothness_penalty(flat).loss == 0.0);
  const GateMatrix alt{Matrix{{1, 0}, {0, 1}, {1, 0}}};
  CHECK(smoothness_penalty(alt).loss == doctest::Approx(2.0));

  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_gates(rng, 2 + rng.index(8), 2 + rng.index(2));
    Matrix rev(g.frames(), g.langs());
    for (std::size_t t = 0; t < g.frames(); ++t)
      for (std::size_t n = 0; n < g.langs(); ++n) rev(t, n) = g.values(g.frames() - 1 - t, n);
    CHECK(smoothness_penalty(g).loss == doctest::Approx(smoothness_penalty({rev}).loss).epsilon(1e-12));

    const auto r = smoothness_penalty(g);
    auto f = [&](const Matrix& x) { return smoothness_penalty({x}).loss; };
    CHECK(relative_error(r.grad, numeric_grad(f, g.values)) <= 1e-4);
  }
}

TEST_CASE("w_g schedules") {
  CHECK(WgSchedule::parse("1.0").weight(37) == 1.0);
  const auto s = WgSchedule::parse("1.::0.1::0.");
  CHECK(s.stages() == std::vector{1.0, 0.1, 0.0});
  CHECK(s.weight(9) == 1.0);
  CHECK(s.weight(10) == 0.1);
  CHECK(s.weight(25) == 0.0);
  CHECK(WgSchedule::parse("1.::0.1").weight(10) == 0.1);
  CHECK(WgSchedule::parse("1.::0.1").weight(500) == 0.1);
  CHECK_THROWS_AS(WgSchedule::parse(""), Error);
  CHECK_THROWS_AS(WgSchedule::parse("1::"), Error);
  CHECK_THROWS_AS(WgSchedule::parse("1::x"), Error);
  CHECK_THROWS_AS(WgSchedule::parse("-1"), Error);

  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> w(1 + rng.index(4));
    for (double& x : w) x = rng.uniform(0, 3);
    const WgSchedule sched(w);
    CHECK(WgSchedule::parse(sched.to_string()) == sched);
  }
}

TEST_CASE("gating_loss_total") {
  std::vector<LossResult> layers{{2.0, Matrix(2, 2, 1.0)}, {4.0, Matrix(2, 2, 3.0)}};
  auto tot = gating_loss_total(layers, WgSchedule::parse("1.0"), 3);
  CHECK(tot.loss == 3.0);
  CHECK(tot.grads[1](0, 0) == 1.5);
  CHECK(gating_loss_total(layers, WgSchedule::parse("1.::0.1::0."), 25).loss == 0.0);
  CHECK(gating_loss_total(layers, WgSchedule::parse("1.::0.1"), 10).weight == 0.1);

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const WgSchedule s({rng.uniform(0, 2), rng.uniform(0, 2)});
    const std::size_t epoch = rng.index(30);
    CHECK(gating_loss_total(layers, s.scaled(2.0), epoch).loss == 2.0 * gating_loss_total(layers, s, epoch).loss);
  }

  // A disabled gating loss stays at zero even if a layer is infinite.
  layers[0].loss = kInf;
  CHECK(gating_loss_total(layers, WgSchedule::parse("0"), 0).loss == 0.0);
  CHECK_THROWS_AS(gating_loss_total(std::vector<LossResult>{}, WgSchedule(), 0), Error);
}
