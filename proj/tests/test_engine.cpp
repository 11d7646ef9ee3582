// Copyright 2026 the surnn authors. Apache 2.0 License.

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "surnn/engine.hpp"

using namespace surnn;
using surnn::testing::max_rel_err;

namespace {

TaskBatch random_batch(Rng& rng, int b, int t, int d, int classes) {
  TaskBatch tb;
  tb.batch = b;
  tb.steps = t;
  tb.input_dim = d;
  tb.num_classes = classes;
  tb.inputs.resize(static_cast<size_t>(b) * t * d);
  for (double& v : tb.inputs) v = rng.normal(0.0, 1.0);
  tb.targets.resize(static_cast<size_t>(b) * t);
  tb.loss_mask.assign(static_cast<size_t>(b) * t, 0);
  for (int bb = 0; bb < b; ++bb)
    for (int tt = 0; tt < t; ++tt) {
      const bool masked = tt >= t - 3;  // loss on the last few steps
      tb.loss_mask[static_cast<size_t>(bb) * t + tt] = masked;
      if (classes > 0)
        tb.targets[static_cast<size_t>(bb) * t + tt] =
            static_cast<double>(rng.next_u64() % classes);
      else
        tb.targets[static_cast<size_t>(bb) * t + tt] = rng.normal(0.0, 1.0);
    }
  return tb;
}

ModelConfig config_for(LayerKind kind, int d, int h, int layers, int o, int max_t) {
  ModelConfig cfg;
  cfg.input_dim = d;
  cfg.output_dim = o;
  cfg.max_seq_len = max_t;
  for (int l = 0; l < layers; ++l) {
    LayerSpec spec;
    spec.kind = kind;
    spec.hidden = h;
    spec.gate.schedule = "rhythmic";
    spec.gate.num_freqs = 4;
    cfg.layers.push_back(spec);
  }
  return cfg;
}

// Gathers every learnable block into one flat vector for comparisons.
Vec flatten(const ModelGrads& g) {
  Vec out;
  auto push_mat = [&](const Mat& m) { out.insert(out.end(), m.data.begin(), m.data.end()); };
  auto push_vec = [&](const Vec& v) { out.insert(out.end(), v.begin(), v.end()); };
  for (const LayerGrads& lg : g.layers) {
    push_mat(lg.rnn.w_xh);
    push_mat(lg.rnn.w_hh);
    push_vec(lg.rnn.b);
    push_mat(lg.gru.w_ih);
    push_mat(lg.gru.w_hh);
    push_vec(lg.gru.b_ih);
    push_vec(lg.gru.b_hh);
    push_mat(lg.program.d_alpha);
    push_mat(lg.program.d_phi);
    push_vec(lg.program.d_bias);
    push_vec(lg.program.d_omega);
    push_mat(lg.table);
  }
  push_mat(g.w_out);
  push_vec(g.b_out);
  return out;
}

}  // namespace

TEST_CASE("batched execution matches the reference path") {
  Rng rng(61);
  for (LayerKind kind : {LayerKind::Rnn, LayerKind::Gru, LayerKind::SuRnn, LayerKind::SuGru,
                         LayerKind::OnePassSuGru}) {
    const int b = 3, t = 12, d = 3, h = 5, o = 2;
    ModelConfig cfg = config_for(kind, d, h, 1, o, t);
    Model model = Model::init(cfg, 1234 + static_cast<int>(kind));
    TaskBatch tb = random_batch(rng, b, t, d, o);

    BatchedForward fwd = model_forward_batched(model, tb);

    // states bitwise per lane
    for (int lane = 0; lane < b; ++lane) {
      RefForward ref = model_forward_reference(model, tb, lane);
      const LayerTape& tape = fwd.tapes[0];
      for (int tt = 1; tt <= t; ++tt) {
        const double* hb = tape.h_at(tt);
        for (int i = 0; i < h; ++i)
          CHECK(hb[static_cast<size_t>(i) * b + lane] == ref.tapes[0].steps[tt - 1].h_next[i]);
      }
      // logits bitwise
      for (int tt = 0; tt < t; ++tt)
        for (int oo = 0; oo < o; ++oo)
          CHECK(fwd.logits[(static_cast<size_t>(tt) * o + oo) * b + lane] ==
                ref.logits[static_cast<size_t>(tt) * o + oo]);
    }

    // gradients: batched equals the masked-count-weighted sum of per-lane
    // reference gradients
    ModelGrads batched = ModelGrads::zeros_like(model);
    model_backward_batched(model, tb, fwd, batched);
    ModelGrads want = ModelGrads::zeros_like(model);
    size_t total_masked = 0;
    std::vector<RefForward> refs;
    for (int lane = 0; lane < b; ++lane) {
      refs.push_back(model_forward_reference(model, tb, lane));
      total_masked += refs.back().loss.masked;
    }
    for (int lane = 0; lane < b; ++lane) {
      RefBackward rb = model_backward_reference(model, tb, lane, refs[lane]);
      want.add_scaled(rb.grads,
                      static_cast<double>(refs[lane].loss.masked) / static_cast<double>(total_masked));
    }
    Vec a = flatten(batched), w = flatten(want);
    REQUIRE(a.size() == w.size());
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, surnn::testing::rel_err(a[i], w[i], 1e-8));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("batched execution matches reference on a two-layer stack") {
  Rng rng(71);
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.output_dim = 3;
  cfg.max_seq_len = 10;
  LayerSpec l0;
  l0.kind = LayerKind::SuGru;
  l0.hidden = 4;
  l0.gate.schedule = "rhythmic";
  l0.gate.num_freqs = 3;
  LayerSpec l1;
  l1.kind = LayerKind::SuRnn;
  l1.hidden = 6;
  l1.gate.schedule = "every_k";
  l1.gate.k = 2;
  cfg.layers = {l0, l1};
  Model model = Model::init(cfg, 99);
  TaskBatch tb = random_batch(rng, 2, 10, 2, 3);

  BatchedForward fwd = model_forward_batched(model, tb);
  for (int lane = 0; lane < 2; ++lane) {
    RefForward ref = model_forward_reference(model, tb, lane);
    for (size_t l = 0; l < 2; ++l) {
      const LayerTape& tape = fwd.tapes[l];
      for (int tt = 1; tt <= 10; ++tt)
        for (int i = 0; i < tape.hidden; ++i)
          CHECK(tape.h_at(tt)[static_cast<size_t>(i) * 2 + lane] ==
                ref.tapes[l].steps[tt - 1].h_next[i]);
    }
  }
  ModelGrads batched = ModelGrads::zeros_like(model);
  model_backward_batched(model, tb, fwd, batched);
  ModelGrads want = ModelGrads::zeros_like(model);
  size_t total = 0;
  std::vector<RefForward> refs;
  for (int lane = 0; lane < 2; ++lane) {
    refs.push_back(model_forward_reference(model, tb, lane));
    total += refs.back().loss.masked;
  }
  for (int lane = 0; lane < 2; ++lane) {
    RefBackward rb = model_backward_reference(model, tb, lane, refs[lane]);
    want.add_scaled(rb.grads, static_cast<double>(refs[lane].loss.masked) / total);
  }
  Vec a = flatten(batched), w = flatten(want);
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, surnn::testing::rel_err(a[i], w[i], 1e-8));
  CHECK(worst < 1e-9);
}

TEST_CASE("input-threshold gates are rejected on the batched path") {
  ModelConfig cfg = config_for(LayerKind::SuGru, 2, 3, 1, 2, 8);
  cfg.layers[0].gate.schedule = "input_threshold";
  Model model = Model::init(cfg, 5);
  Rng rng(5);
  TaskBatch tb = random_batch(rng, 2, 8, 2, 2);
  CHECK_THROWS_AS(model_forward_batched(model, tb), std::invalid_argument);
  // ...but runs on the reference path
  RefForward ref = model_forward_reference(model, tb, 0);
  CHECK(ref.loss.masked > 0);
}
