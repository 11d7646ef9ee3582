// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Lane-batched execution. States are stored time-major as [t][row][lane];
// each lane runs exactly the same arithmetic sequence as the per-sequence
// reference path, so hidden states agree bitwise. Gate masks are shared
// across lanes (all schedules here are time-driven); the input-threshold
// schedule is per-sequence and handled by the reference path instead.

#pragma once

#include <vector>

#include "surnn/trainer.hpp"

namespace surnn {

struct LayerTape {
  LayerKind kind = LayerKind::Gru;
  int steps = 0, hidden = 0, lanes = 0, data_dim = 0;
  GateMask mask;  // selective / onepass layers
  std::vector<double> h;  // (T+1) * H * B, h[0] = 0
  // Stored activation values (not preacts): backward recomputes nothing.
  std::vector<double> f_v;                       // rnn: tanh of the preact, T * H * B
  std::vector<double> r_v, z_v, cand_v, hpre_n;  // gru: T * H * B

  double* h_at(int t) { return h.data() + static_cast<size_t>(t) * hidden * lanes; }
  const double* h_at(int t) const { return h.data() + static_cast<size_t>(t) * hidden * lanes; }
};

// x: [t][d][b]. Fills the tape; outputs live in tape.h rows 1..T.
void layer_forward(const LayerParams& layer, const double* x, int steps, int lanes,
                   LayerTape& tape);

// d_h: per-step injections dL/dh_t, consumed and overwritten as scratch.
// d_x: accumulated gradient w.r.t. the layer inputs, [t][d][b] (data part
// only for onepass layers). adjoint_sumsq, when non-null, receives per-step
// sum over (i, lane) of squared adjoints.
void layer_backward(const LayerParams& layer, const LayerTape& tape, const double* x,
                    std::vector<double>& d_h, LayerGrads& grads, double* d_x,
                    Vec* adjoint_sumsq = nullptr);

struct BatchedForward {
  std::vector<LayerTape> tapes;
  std::vector<double> x0;      // transposed inputs [t][d][b]
  std::vector<double> logits;  // [t][o][b], zeros at unmasked steps
  LossResult loss;
};

// Full model forward over a batch; masks are generated per layer from the
// schedules. Lanes must share gate masks (no input-threshold layers).
BatchedForward model_forward_batched(const Model& m, const TaskBatch& batch);

// Backward from loss.dlogits; accumulates into grads (zeroed by caller).
// Returns per-step bottom-layer adjoint sum-of-squares when requested.
void model_backward_batched(const Model& m, const TaskBatch& batch, BatchedForward& fwd,
                            ModelGrads& grads, Vec* adjoint_sumsq = nullptr);

}  // namespace surnn
