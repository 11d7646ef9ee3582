// Copyright 2026 the surnn authors. Apache 2.0 License.

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "surnn/bptt.hpp"
#include "surnn/diagnostics.hpp"

using namespace surnn;
using surnn::testing::fd_gradient;
using surnn::testing::max_rel_err;

namespace {

struct SuTrace {
  Tape tape;
  Mat dloss;
};

// Builds a selective tape over random data with a fixed mask and a loss
// gradient injected at the final step only.
template <typename Params>
SuTrace make_trace(const Params& p, const std::vector<std::vector<uint8_t>>& gates,
                   const std::vector<Vec>& xs, const Vec& dl_final) {
  SuTrace out;
  out.tape.kind = std::is_same_v<Params, RnnParams> ? CellKind::Rnn : CellKind::Gru;
  const int h = p.hidden();
  const int t_len = static_cast<int>(xs.size());
  Vec h_state(h, 0.0);
  out.tape.steps.resize(t_len);
  for (int t = 0; t < t_len; ++t)
    h_state = selective_step(p, h_state, xs[t], gates[t], &out.tape.steps[t]);
  out.dloss = Mat(t_len, h);
  for (int i = 0; i < h; ++i) out.dloss(t_len - 1, i) = dl_final[i];
  return out;
}

}  // namespace

TEST_CASE("pure identity chain copies the adjoint bitwise") {
  Rng rng(3);
  GruParams p = GruParams::init(4, 2, rng);
  const int t_len = 12;
  std::vector<std::vector<uint8_t>> gates(t_len, std::vector<uint8_t>(4, 0));
  std::vector<Vec> xs(t_len, Vec{0.3, -0.7});
  Vec dl{0.11, -0.22, 0.33, -0.44};
  SuTrace tr = make_trace(p, gates, xs, dl);
  GradReport rep = backward(tr.tape, tr.dloss, p);
  const double n = vec_norm2(dl);
  for (int t = 0; t < t_len; ++t) CHECK(rep.adjoint_norms[t] == n);
  for (int i = 0; i < 4; ++i) CHECK(rep.d_h0[i] == dl[i]);
  // no active units anywhere: every parameter gradient is exactly zero
  for (double v : rep.gru.w_ih.data) CHECK(v == 0.0);
  for (double v : rep.gru.w_hh.data) CHECK(v == 0.0);
}

TEST_CASE("all-open gates reduce to the dense backbone gradients") {
  Rng rng(5);
  for (int variant = 0; variant < 2; ++variant) {
    const int h = 3, d = 2, t_len = 7;
    std::vector<Vec> xs(t_len);
    for (Vec& x : xs) x = {rng.normal(0, 1), rng.normal(0, 1)};
    Vec dl{0.5, -0.3, 0.9};
    std::vector<std::vector<uint8_t>> on(t_len, std::vector<uint8_t>(h, 1));

    if (variant == 0) {
      RnnParams p = RnnParams::init(h, d, rng);
      SuTrace gated = make_trace(p, on, xs, dl);
      // ungated tape: plain backbone steps
      Tape dense;
      dense.kind = CellKind::Rnn;
      dense.steps.resize(t_len);
      Vec hs(h, 0.0);
      for (int t = 0; t < t_len; ++t) hs = rnn_step(p, hs, xs[t], &dense.steps[t]);
      GradReport a = backward(gated.tape, gated.dloss, p);
      GradReport b = backward(dense, gated.dloss, p);
      CHECK(max_rel_err(a.rnn.w_xh, b.rnn.w_xh) < 1e-12);
      CHECK(max_rel_err(a.rnn.w_hh, b.rnn.w_hh) < 1e-12);
      CHECK(max_rel_err(a.rnn.b, b.rnn.b) < 1e-12);
    } else {
      GruParams p = GruParams::init(h, d, rng);
      SuTrace gated = make_trace(p, on, xs, dl);
      Tape dense;
      dense.kind = CellKind::Gru;
      dense.steps.resize(t_len);
      Vec hs(h, 0.0);
      for (int t = 0; t < t_len; ++t) hs = gru_step(p, hs, xs[t], &dense.steps[t]);
      GradReport a = backward(gated.tape, gated.dloss, p);
      GradReport b = backward(dense, gated.dloss, p);
      CHECK(max_rel_err(a.gru.w_ih, b.gru.w_ih) < 1e-12);
      CHECK(max_rel_err(a.gru.w_hh, b.gru.w_hh) < 1e-12);
      CHECK(max_rel_err(a.gru.b_ih, b.gru.b_ih) < 1e-12);
      CHECK(max_rel_err(a.gru.b_hh, b.gru.b_hh) < 1e-12);
    }
  }
}

TEST_CASE("parameter gradients match finite differences") {
  // Scalar loss: dot of the final state with a fixed vector. Central
  // differences over every parameter entry.
  Rng rng(17);
  const int h = 4, d = 3, t_len = 8;
  std::vector<Vec> xs(t_len);
  for (Vec& x : xs) x = {rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
  std::vector<std::vector<uint8_t>> gates(t_len);
  for (auto& g : gates) {
    g.resize(h);
    for (auto& gi : g) gi = rng.uniform01() < 0.6 ? 1 : 0;
  }
  Vec probe{0.7, -0.4, 0.2, 0.5};

  SUBCASE("selective rnn") {
    RnnParams p = RnnParams::init(h, d, rng);
    SuTrace tr = make_trace(p, gates, xs, probe);
    GradReport rep = backward(tr.tape, tr.dloss, p);
    auto loss_of = [&](const RnnParams& q) {
      Vec hs(h, 0.0);
      for (int t = 0; t < t_len; ++t) hs = selective_step(q, hs, xs[t], gates[t]);
      double acc = 0;
      for (int i = 0; i < h; ++i) acc += probe[i] * hs[i];
      return acc;
    };
    Mat fd_wxh(h, d), fd_whh(h, h);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < d; ++j) {
        RnnParams q = p;
        q.w_xh(i, j) += 1e-5;
        const double up = loss_of(q);
        q.w_xh(i, j) -= 2e-5;
        fd_wxh(i, j) = (up - loss_of(q)) / 2e-5;
      }
      for (int j = 0; j < h; ++j) {
        RnnParams q = p;
        q.w_hh(i, j) += 1e-5;
        const double up = loss_of(q);
        q.w_hh(i, j) -= 2e-5;
        fd_whh(i, j) = (up - loss_of(q)) / 2e-5;
      }
    }
    CHECK(max_rel_err(rep.rnn.w_xh, fd_wxh, 1e-7) < 1e-6);
    CHECK(max_rel_err(rep.rnn.w_hh, fd_whh, 1e-7) < 1e-6);
  }

  SUBCASE("selective gru") {
    GruParams p = GruParams::init(h, d, rng);
    SuTrace tr = make_trace(p, gates, xs, probe);
    GradReport rep = backward(tr.tape, tr.dloss, p);
    auto loss_of = [&](const GruParams& q) {
      Vec hs(h, 0.0);
      for (int t = 0; t < t_len; ++t) hs = selective_step(q, hs, xs[t], gates[t]);
      double acc = 0;
      for (int i = 0; i < h; ++i) acc += probe[i] * hs[i];
      return acc;
    };
    Mat fd_wih(3 * h, d), fd_whh(3 * h, h);
    for (int i = 0; i < 3 * h; ++i) {
      for (int j = 0; j < d; ++j) {
        GruParams q = p;
        q.w_ih(i, j) += 1e-5;
        const double up = loss_of(q);
        q.w_ih(i, j) -= 2e-5;
        fd_wih(i, j) = (up - loss_of(q)) / 2e-5;
      }
      for (int j = 0; j < h; ++j) {
        GruParams q = p;
        q.w_hh(i, j) += 1e-5;
        const double up = loss_of(q);
        q.w_hh(i, j) -= 2e-5;
        fd_whh(i, j) = (up - loss_of(q)) / 2e-5;
      }
    }
    CHECK(max_rel_err(rep.gru.w_ih, fd_wih, 1e-7) < 1e-6);
    CHECK(max_rel_err(rep.gru.w_hh, fd_whh, 1e-7) < 1e-6);
    // Eq-12 sparsity: a neuron that never opens contributes no parameter rows
    std::vector<std::vector<uint8_t>> closed = gates;
    for (auto& g : closed) g[2] = 0;
    SuTrace tr2 = make_trace(p, closed, xs, probe);
    GradReport rep2 = backward(tr2.tape, tr2.dloss, p);
    for (int head = 0; head < 3; ++head) {
      for (int j = 0; j < d; ++j) CHECK(rep2.gru.w_ih(head * h + 2, j) == 0.0);
      for (int j = 0; j < h; ++j) CHECK(rep2.gru.w_hh(head * h + 2, j) == 0.0);
    }
  }
}

TEST_CASE("adjoint identity rows carry the adjoint exactly") {
  Rng rng(23);
  GruParams p = GruParams::init(3, 1, rng);
  const int t_len = 9;
  // neuron 0 never opens; loss injected at several steps
  std::vector<std::vector<uint8_t>> gates(t_len);
  for (auto& g : gates) {
    g = {0, 1, 1};
    g[1] = rng.uniform01() < 0.5 ? 1 : 0;
  }
  std::vector<Vec> xs(t_len, Vec{0.4});
  SuTrace tr = make_trace(p, gates, xs, Vec{0.0, 0.0, 0.0});
  tr.dloss = Mat(t_len, 3);
  tr.dloss(2, 0) = 0.25;
  tr.dloss(5, 0) = -0.125;
  tr.dloss(8, 0) = 1.5;
  GradReport rep = backward(tr.tape, tr.dloss, p);
  // with gate 0 closed everywhere and no mixing, d_h0[0] is the exact sum of
  // the injections in backward (descending t) order
  const double expect = ((1.5 + -0.125) + 0.25);
  CHECK(rep.d_h0[0] == expect);
}

TEST_CASE("straight-through gate signal") {
  // hand case: one step, one unit, adjoint 1, delta 0.5, a = 0, beta = 2
  Tape tape;
  tape.kind = CellKind::Rnn;
  tape.steps.resize(1);
  StepRecord& rec = tape.steps[0];
  rec.kind = CellKind::Rnn;
  rec.h_prev = {0.0};
  rec.x = {0.0};
  rec.g = {1};
  rec.gate_preact = {0.0};
  rec.pre = {std::atanh(0.5)};
  rec.candidate = {0.5};
  rec.delta_h = {0.5};
  rec.h_next = {0.5};
  Mat dl(1, 1);
  dl(0, 0) = 1.0;
  RnnParams p;
  p.w_xh = Mat(1, 1);
  p.w_hh = Mat(1, 1);
  p.b = {0.0};
  GradReport rep = backward(tape, dl, p);
  CHECK(rep.d_gate_preact(0, 0) == doctest::Approx(0.25).epsilon(1e-15));

  // zero deviation kills the signal
  rec.delta_h = {0.0};
  GradReport rep2 = backward(tape, dl, p);
  CHECK(rep2.d_gate_preact(0, 0) == 0.0);
}

TEST_CASE("gate_backward agrees with the inline accumulation") {
  // All-carry tape: the adjoint stream has the closed form
  // lambda_t = sum of the injections at steps >= t, so the standalone op can
  // be fed the exact stream and compared with backward()'s inline chain.
  Rng rng(31);
  GateProgram prog = GateProgram::init(3, 2, 32, rng);
  GruParams p = GruParams::init(3, 2, rng);
  const int t_len = 6;
  GateMask mask = precompute_mask(prog, t_len);
  std::vector<Vec> xs(t_len);
  for (Vec& x : xs) x = {rng.normal(0, 1), rng.normal(0, 1)};
  Tape tape;
  tape.kind = CellKind::Gru;
  tape.steps.resize(t_len);
  Vec hs(3, 0.0);
  std::vector<uint8_t> off(3, 0);
  for (int t = 0; t < t_len; ++t) {
    hs = selective_step(p, hs, xs[t], off, &tape.steps[t]);
    tape.steps[t].gate_preact.assign(mask.preact_row(t), mask.preact_row(t) + 3);
  }
  Mat dl(t_len, 3);
  Rng lrng(8);
  for (double& v : dl.data) v = lrng.normal(0.0, 1.0);
  BackwardOptions opts;
  opts.program = &prog;
  GradReport rep = backward(tape, dl, p, opts);

  Mat adjoints(t_len, 3);
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int t = t_len; t >= 1; --t) {
      acc += dl(t - 1, i);
      adjoints(t - 1, i) = acc;
    }
  }
  GateProgramGrads standalone = gate_backward(tape, adjoints, prog, 2.0);
  CHECK(max_rel_err(standalone.d_alpha, rep.gate_program.d_alpha, 1e-12) < 1e-12);
  CHECK(max_rel_err(standalone.d_phi, rep.gate_program.d_phi, 1e-12) < 1e-12);
  CHECK(max_rel_err(standalone.d_bias, rep.gate_program.d_bias, 1e-12) < 1e-12);
}

TEST_CASE("soft-mode gate gradients are exact") {
  Rng rng(37);
  GateProgram prog = GateProgram::init(4, 3, 16, rng);
  RnnParams p = RnnParams::init(4, 2, rng);
  const int t_len = 6;
  GateMask mask = precompute_mask(prog, t_len);
  std::vector<Vec> xs(t_len);
  for (Vec& x : xs) x = {rng.normal(0, 1), rng.normal(0, 1)};
  const double beta = 2.0;

  Tape tape;
  tape.kind = CellKind::Rnn;
  tape.steps.resize(t_len);
  Vec hs(4, 0.0);
  for (int t = 0; t < t_len; ++t) {
    Vec s(4);
    for (int i = 0; i < 4; ++i) s[i] = sigmoid(beta * mask.preact(t, i));
    hs = soft_selective_step(p, hs, xs[t], s, &tape.steps[t]);
    tape.steps[t].gate_preact.assign(mask.preact_row(t), mask.preact_row(t) + 4);
  }
  Mat dl(t_len, 4);
  dl(t_len - 1, 2) = 1.0;
  BackwardOptions opts;
  opts.program = &prog;
  opts.surrogate_slope = beta;
  GradReport rep = backward(tape, dl, p, opts);

  auto soft_loss = [&](const GateProgram& q) {
    GateMask mm = precompute_mask(q, t_len);
    Vec h2(4, 0.0);
    for (int t = 0; t < t_len; ++t) {
      Vec s(4);
      for (int i = 0; i < 4; ++i) s[i] = sigmoid(beta * mm.preact(t, i));
      h2 = soft_selective_step(p, h2, xs[t], s);
    }
    return h2[2];
  };
  GateProgram q = prog;
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 3; ++k) {
      q.alpha(i, k) += 1e-6;
      const double up = soft_loss(q);
      q.alpha(i, k) -= 2e-6;
      const double dn = soft_loss(q);
      q.alpha(i, k) += 1e-6;
      const double fd = (up - dn) / 2e-6;
      CHECK(surnn::testing::rel_err(rep.gate_program.d_alpha(i, k), fd, 1e-7) < 1e-4);
    }
  // bias and phase heads too
  for (int i = 0; i < 4; ++i) {
    q.bias[i] += 1e-6;
    const double up = soft_loss(q);
    q.bias[i] -= 2e-6;
    const double dn = soft_loss(q);
    q.bias[i] += 1e-6;
    CHECK(surnn::testing::rel_err(rep.gate_program.d_bias[i], (up - dn) / 2e-6, 1e-7) < 1e-4);
  }
}

TEST_CASE("nonidentity counts and update rate") {
  Rng rng(41);
  GruParams p = GruParams::init(2, 1, rng);
  const int t_len = 9;
  GateMask every3 = generate_mask(EveryKStepsGate{3}, t_len, 2);
  Tape tape;
  tape.kind = CellKind::Gru;
  tape.steps.resize(t_len);
  Vec hs(2, 0.0);
  for (int t = 0; t < t_len; ++t) {
    std::span<const uint8_t> g(every3.gate_row(t), 2);
    hs = selective_step(p, hs, Vec{0.5}, g, &tape.steps[t]);
  }
  auto [counts, rate] = nonidentity_count(tape);
  CHECK(counts == std::vector<int>{3, 3});
  CHECK(rate == doctest::Approx(3.0 / 9.0));

  std::vector<std::vector<uint8_t>> ones(t_len, std::vector<uint8_t>{1, 1});
  std::vector<Vec> xs(t_len, Vec{0.5});
  SuTrace all_on = make_trace(p, ones, xs, Vec{1.0, 0.0});
  auto [c_on, r_on] = nonidentity_count(all_on.tape);
  CHECK(c_on == std::vector<int>{t_len, t_len});
  CHECK(r_on == 1.0);

  std::vector<std::vector<uint8_t>> zeros(t_len, std::vector<uint8_t>{0, 0});
  SuTrace all_off = make_trace(p, zeros, xs, Vec{1.0, 0.0});
  auto [c_off, r_off] = nonidentity_count(all_off.tape);
  CHECK(c_off == std::vector<int>{0, 0});
  CHECK(r_off == 0.0);
}

TEST_CASE("grad_trace shapes: flat carry vs contracting dense") {
  Rng rng(47);
  // flat: all-carry chain
  GruParams p = GruParams::init(3, 1, rng);
  const int t_len = 40;
  std::vector<std::vector<uint8_t>> zeros(t_len, std::vector<uint8_t>(3, 0));
  std::vector<Vec> xs(t_len, Vec{0.2});
  SuTrace off = make_trace(p, zeros, xs, Vec{1.0, 2.0, -1.0});
  GradReport rep = backward(off.tape, off.dloss, p);
  auto trace = grad_trace(rep);
  for (auto& [t, v] : trace) CHECK(v == trace.front().second);

  // dense contractive vanilla: trailing norms collapse
  RnnParams rp = RnnParams::init(6, 1, rng);
  spectral_scale(rp, 0.9);
  const int t2 = 300;
  Tape dense;
  dense.kind = CellKind::Rnn;
  dense.steps.resize(t2);
  Vec hs(6, 0.0);
  for (int t = 0; t < t2; ++t) hs = rnn_step(rp, hs, Vec{0.0}, &dense.steps[t]);
  Mat dl(t2, 6);
  for (int i = 0; i < 6; ++i) dl(t2 - 1, i) = 1.0;
  GradReport rep2 = backward(dense, dl, rp);
  CHECK(rep2.adjoint_norms.front() < 1e-8 * rep2.adjoint_norms.back());
}
