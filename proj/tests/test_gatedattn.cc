#include <cmath>

#include "attn_util.h"
#include "doctest.h"
#include "stc/gatedattn.h"

using namespace stc;
using namespace stc::testing;

TEST_CASE("regular attention examples") {
  Rng rng(1);
  const auto cfg = ungated(4, 2);
  const auto p = GatedAttentionParams::init(cfg, rng);

  // One frame: attention weight 1, so the layer is z V W.
  const Matrix z1 = random_matrix(rng, 1, 4);
  CHECK(max_abs_diff(mha_forward(z1, p, cfg), matmul(matmul(z1, p.value[0]), p.output)) <= 1e-12);
  CHECK(max_abs_diff(mha_forward(Matrix(3, 4), p, cfg), Matrix(3, 4)) == 0.0);

  // Identity projections on the 2x2 identity input: frame 0 attends with
  // logits (1/sqrt2, 0), frame 1 with (0, 1/sqrt2).
  const auto cfg2 = ungated(2, 1);
  GatedAttentionParams id;
  id.query = {Matrix::identity(2)};
  id.key = {Matrix::identity(2)};
  id.value = {Matrix::identity(2)};
  id.output = Matrix::identity(2);
  const double e = std::exp(1.0 / std::sqrt(2.0));
  const double pw = e / (e + 1.0);
  const Matrix expected{{pw, 1 - pw}, {1 - pw, pw}};
  CHECK(max_abs_diff(mha_forward(Matrix::identity(2), id, cfg2), expected) <= 1e-15);

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = random_matrix(rng, 1 + rng.index(6), 4);
    CHECK(max_abs_diff(mha_forward(z, p, cfg), attention_oracle(z, p, 0, 2)) <= 1e-12);
  }
  CHECK_THROWS_AS(mha_forward(Matrix(3, 5), p, cfg), Error);
  CHECK_THROWS_AS(mha_forward(z1, p, AttentionConfig{}), Error);
  CHECK_THROWS_AS((AttentionConfig{6, 4, 2, true, 1}.validate()), Error);
}

TEST_CASE("gate network") {
  Rng rng(2);
  const Matrix z = random_matrix(rng, 5, 4);
  const auto one = gate_forward(z, random_matrix(rng, 4, 1));
  for (double v : one.values.data()) CHECK(v == 1.0);
  const auto flat = gate_forward(z, Matrix(4, 3));
  for (double v : flat.values.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  // Raising column 1 of G by delta * z_t direction raises gate 1 wherever
  // the score actually moves.
  const Matrix g = random_matrix(rng, 4, 3);
  Matrix g2 = g;
  for (std::size_t r = 0; r < 4; ++r) g2(r, 1) += 0.3 * (z(0, r) >= 0 ? 1 : -1);
  const auto a = gate_forward(z, g), b = gate_forward(z, g2);
  a.check_rows();
  b.check_rows();
  const Matrix delta = matmul(z, sub(g2, g));
  for (std::size_t t = 0; t < 5; ++t) {
    if (delta(t, 1) > 1e-12) CHECK(b.values(t, 1) > a.values(t, 1));
    if (delta(t, 1) < -1e-12) CHECK(b.values(t, 1) < a.values(t, 1));
  }
  CHECK_THROWS_AS(gate_forward(z, Matrix(3, 2)), Error);
}

TEST_CASE("method 1 identities") {
  Rng rng(3);
  const AttentionConfig cfg{8, 2, 3, true, 1};
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = random_matrix(rng, 1 + rng.index(7), 8);
    const auto p = random_params(rng, cfg, 2.0);

    const auto same = identical_languages(p, 3);
    const auto r = gated_mha_method1(z, same, cfg);
    r.gates.check_rows();
    CHECK(max_abs_diff(r.output, mha_forward(z, same.single_language(0), ungated(8, 2))) <= 1e-10);

    for (std::size_t n = 0; n < 3; ++n) {
      GatedAttentionLayer layer(cfg, p);
      layer.set_override(n);
      Tape tape;
      const auto lv = layer.forward(tape, layer.bind(tape), tape.constant(z));
      CHECK(max_abs_diff(tape.value(lv.out), attention_oracle(z, p, n, 2)) <= 1e-10);
    }

    // Uniform gates interpolate q, k, v equally, which by linearity is one
    // attention with the averaged projections.
    GatedAttentionLayer layer(cfg, p);
    layer.set_override(GateMatrix{Matrix(z.rows(), 3, 1.0 / 3)});
    Tape tape;
    const auto lv = layer.forward(tape, layer.bind(tape), tape.constant(z));
    auto avg = [&](const std::vector<Matrix>& m) { return scale(add(add(m[0], m[1]), m[2]), 1.0 / 3); };
    const Matrix expected =
        attention_oracle(z, z, avg(p.query), avg(p.key), avg(p.value), p.output, 2);
    CHECK(max_abs_diff(tape.value(lv.out), expected) <= 1e-10);
  }
}

TEST_CASE("method 1 output is linear in the value-side interpolation") {
  // Per-frame q and k fixed via identical query/key params: the output is
  // then an affine function of each frame's value mixture.
  Rng rng(31);
  const AttentionConfig cfg{4, 2, 2, true, 1};
  auto p = random_params(rng, cfg);
  p.query[1] = p.query[0];
  p.key[1] = p.key[0];
  const Matrix z = random_matrix(rng, 4, 4);
  auto run = [&](double w) {
    Matrix g(4, 2);
    for (std::size_t t = 0; t < 4; ++t) {
      g(t, 0) = w;
      g(t, 1) = 1 - w;
    }
    GatedAttentionLayer layer(cfg, p);
    layer.set_override(GateMatrix{g});
    Tape tape;
    return tape.value(layer.forward(tape, layer.bind(tape), tape.constant(z)).out);
  };
  const Matrix a = run(0.0), b = run(1.0), mid = run(0.3);
  CHECK(max_abs_diff(mid, add(scale(b, 0.3), scale(a, 0.7))) <= 1e-12);
}

TEST_CASE("method 2 identities") {
  Rng rng(4);
  const AttentionConfig cfg{8, 4, 2, true, 2};
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = random_matrix(rng, 1 + rng.index(7), 8);
    const auto p = random_params(rng, cfg, 2.0);

    const auto same = identical_languages(p, 2);
    const auto r = gated_mha_method2(z, same, cfg);
    for (double v : r.gates.values.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(max_abs_diff(r.output, attention_oracle(z, same, 0, 4)) <= 1e-10);

    gated_mha_method2(z, p, cfg).gates.check_rows();
    for (std::size_t n = 0; n < 2; ++n) {
      GatedAttentionLayer layer(cfg, p);
      layer.set_override(n);
      Tape tape;
      const auto lv = layer.forward(tape, layer.bind(tape), tape.constant(z));
      CHECK(max_abs_diff(tape.value(lv.out), attention_oracle(z, p, n, 4)) <= 1e-10);
    }
  }
  CHECK_THROWS_AS(gated_mha_method1(Matrix(2, 8), GatedAttentionParams::init(cfg, rng), cfg), Error);
}

TEST_CASE("gated cross attention") {
  Rng rng(5);
  const AttentionConfig cfg{6, 3, 2, true, 1};
  const auto p = random_params(rng, cfg, 1.0);
  const Matrix x = random_matrix(rng, 4, 6);
  const auto self = gated_cross_attention(x, x, p, cfg);
  CHECK(self.gates_q.values == self.gates_kv.values);
  CHECK(max_abs_diff(self.output, gated_mha_method1(x, p, cfg).output) <= 1e-12);

  const Matrix q = random_matrix(rng, 2, 6), kv = random_matrix(rng, 5, 6);
  const auto r = gated_cross_attention(q, kv, p, cfg);
  CHECK(r.gates_q.frames() == 2);
  CHECK(r.gates_kv.frames() == 5);
  CHECK(r.output.rows() == 2);
  CHECK(max_abs_diff(r.gates_q.values, gate_forward(q, p.gate).values) <= 1e-15);
  CHECK(max_abs_diff(r.gates_kv.values, gate_forward(kv, p.gate).values) <= 1e-15);

  GatedAttentionLayer layer(cfg, p);
  layer.set_override(std::size_t{1});
  Tape tape;
  const auto lv = layer.cross_forward(tape, layer.bind(tape), tape.constant(q), tape.constant(kv));
  const Matrix expected = attention_oracle(q, kv, p.query[1], p.key[1], p.value[1], p.output, 3);
  CHECK(max_abs_diff(tape.value(lv.out), expected) <= 1e-10);

  CHECK_THROWS_AS(gated_cross_attention(q, kv, p, AttentionConfig{6, 3, 2, true, 2}), Error);
  CHECK_THROWS_AS(gated_cross_attention(q, Matrix(5, 4), p, cfg), Error);
}

TEST_CASE("gate overrides") {
  Rng rng(6);
  const AttentionConfig cfg{4, 2, 2, true, 1};
  const auto p = identical_languages(random_params(rng, cfg), 2);
  const Matrix z = random_matrix(rng, 5, 4);
  GatedAttentionLayer layer(cfg, p);
  auto run = [&] {
    Tape tape;
    return tape.value(layer.forward(tape, layer.bind(tape), tape.constant(z)).out);
  };
  const Matrix plain = run();
  layer.set_override(std::size_t{0});
  const Matrix only0 = run();
  layer.set_override(std::size_t{1});
  const Matrix only1 = run();
  CHECK(max_abs_diff(only0, only1) <= 1e-12);
  CHECK(layer.overridden());
  layer.clear_override();
  CHECK(run() == plain);

  CHECK_THROWS_AS(layer.set_override(std::size_t{2}), Error);
  CHECK_THROWS_AS(layer.set_override(GateMatrix{Matrix(5, 2, 0.4)}), Error);
  CHECK_THROWS_AS(layer.set_override(GateMatrix{Matrix(5, 3, 1.0 / 3)}), Error);
  layer.set_override(GateMatrix{Matrix(4, 2, 0.5)});
  CHECK_THROWS_AS(run(), Error);  // frame count mismatch

  GatedAttentionLayer plain_layer(ungated(4, 2), p.single_language(0));
  CHECK_THROWS_AS(plain_layer.set_override(std::size_t{0}), Error);

  // An override cuts the gate map out of the graph.
  GatedAttentionLayer fixed(cfg, random_params(rng, cfg));
  fixed.set_override(std::size_t{1});
  Tape tape;
  const auto pv = fixed.bind(tape);
  const auto lv = fixed.forward(tape, pv, tape.constant(z));
  tape.backward(lv.out, Matrix(5, 4, 1.0));
  CHECK(max_abs_diff(tape.grad(pv.gate), Matrix(4, 2)) == 0.0);
  CHECK(max_abs_diff(tape.grad(pv.query[0]), Matrix(4, 4)) == 0.0);
}

TEST_CASE("parameter counts") {
  const auto big = param_count({1024, 8, 2, true, 1});
  CHECK(big.gate_network == 2048);
  CHECK(big.base == 4 * 1024 * 1024);
  CHECK(big.gated - big.base == 3 * 1024 * 1024 + 1024 * 2);
  CHECK(big.delta_fraction == doctest::Approx((3.0 * 1024 * 1024 + 2048) / (4.0 * 1024 * 1024)));

  const auto single = param_count({16, 2, 1, true, 1});
  CHECK(single.gated - single.base == single.gate_network);
  CHECK(single.gate_network == 16);
  CHECK(param_count({16, 2, 2, true, 1}).gated - single.gated == 3 * 16 * 16 + 16);
  CHECK(param_count(ungated(16, 2)).delta_fraction == 0.0);
  CHECK(param_count({16, 2, 3, true, 2}).gate_network == 16);
}

TEST_CASE("tape basics") {
  Rng rng(7);
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Var{0}, Matrix(1, 1)), Error);

  // d<seed, xW>/dW = x^T seed.
  const Matrix x = random_matrix(rng, 1, 3), w = random_matrix(rng, 3, 2), seed = random_matrix(rng, 1, 2);
  Tape tape;
  const Var xv = tape.constant(x), wv = tape.leaf(w);
  const Var y = tape.matmul(xv, wv);
  CHECK_THROWS_AS(tape.backward(y, Matrix(2, 1)), Error);
  tape.backward(y, seed);
  CHECK(max_abs_diff(tape.grad(wv), matmul(transpose(x), seed)) <= 1e-15);
  CHECK(tape.visited() == 1);
  CHECK(tape.grad(xv) == Matrix(1, 3));

  // A diamond: both branches feed one sum, every op is visited once.
  Tape d;
  const Var a = d.leaf(random_matrix(rng, 2, 2));
  const Var s = d.softmax_rows(a);
  const Var t = d.tanh(a);
  const Var u = d.add(d.scale(s, 2.0), t);
  d.backward(u, Matrix(2, 2, 1.0));
  CHECK(d.visited() == 4);
  const Matrix num = numeric_grad(
      [&](const Matrix& m) {
        Tape e;
        const Var av = e.leaf(m);
        const Matrix out = e.value(e.add(e.scale(e.softmax_rows(av), 2.0), e.tanh(av)));
        double total = 0.0;
        for (double v : out.data()) total += v;
        return total;
      },
      d.value(a));
  CHECK(relative_error(d.grad(a), num) <= 1e-7);
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(8);
  for (int method : {1, 2}) {
    CAPTURE(method);
    const AttentionConfig cfg{4, 2, 2, true, method};
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = random_params(rng, cfg, 1.0);
      const Matrix z = random_matrix(rng, 3, 4);
      worst = std::max(worst, max_rel_grad_error(cfg, p, z, random_probe(rng, 3, cfg)));
    }
    CHECK(worst <= 1e-4);
  }
  const auto cfg = ungated(4, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial)
    worst = std::max(worst, max_rel_grad_error(cfg, random_params(rng, cfg), random_matrix(rng, 3, 4),
                                               random_probe(rng, 3, cfg)));
  CHECK(worst <= 1e-4);
}

TEST_CASE("method 1 with an STC loss on its gates") {
  Rng rng(9);
  const AttentionConfig cfg{4, 2, 2, true, 1};
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    auto probe = random_probe(rng, 3, cfg);
    probe.stc_on_gates = true;
    probe.target = random_tokens(rng, 1 + rng.index(3), 2);
    worst = std::max(worst, max_rel_grad_error(cfg, random_params(rng, cfg, 1.0), random_matrix(rng, 3, 4),
                                               probe));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("disconnect stops gradients in both directions") {
  Rng rng(10);
  for (int method : {1, 2}) {
    CAPTURE(method);
    const AttentionConfig cfg{4, 2, 2, true, method};
    const auto p = random_params(rng, cfg);
    const Matrix z = random_matrix(rng, 3, 4);
    auto probe = random_probe(rng, 3, cfg);
    const std::size_t gate_slot = 3 * 2 + 1;

    probe.gate = false;
    const auto main_only = attn_eval(cfg, p, z, probe, {true});
    CHECK(max_abs_diff(main_only.param_grads[gate_slot], Matrix(4, method == 1 ? 2 : 1)) == 0.0);
    const auto joint_main = attn_eval(cfg, p, z, probe, {false});
    CHECK(max_abs_diff(joint_main.param_grads[gate_slot], Matrix(4, method == 1 ? 2 : 1)) > 0.0);

    probe.gate = true;
    probe.main = false;
    const auto gate_only = attn_eval(cfg, p, z, probe, {true});
    CHECK(max_abs_diff(gate_only.param_grads[gate_slot], Matrix(4, method == 1 ? 2 : 1)) > 0.0);
    for (std::size_t i = 0; i < gate_slot; ++i) CHECK(max_abs_diff(gate_only.param_grads[i], Matrix(4, 4)) == 0.0);
    CHECK(max_abs_diff(gate_only.input_grad, Matrix(3, 4)) == 0.0);

    // Disconnect changes nothing on the forward side.
    probe.main = true;
    CHECK(attn_eval(cfg, p, z, probe, {true}).loss == attn_eval(cfg, p, z, probe, {false}).loss);
  }
}

TEST_CASE("no dead parameters") {
  Rng rng(11);
  for (int method : {1, 2}) {
    const AttentionConfig cfg{4, 2, 2, true, method};
    const auto r = attn_eval(cfg, random_params(rng, cfg), random_matrix(rng, 3, 4), random_probe(rng, 3, cfg));
    for (const Matrix& g : r.param_grads) {
      bool all_nonzero = true;
      for (double v : g.data()) all_nonzero = all_nonzero && v != 0.0;
      CHECK(all_nonzero);
    }
  }
}
