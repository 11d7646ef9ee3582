// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Hand-written reverse-mode backpropagation through time. The adjoint
// recursion
//
//   dL/dh_{t-1} = dL/dh_t (I + D_t (J^f_t - I)) + dl_{t-1}/dh_{t-1}
//
// is evaluated row-wise: coordinates with a closed gate copy their adjoint
// through the step untouched and contribute no Jacobian-vector work, so the
// backward pass costs scale with the number of open gates. Parameter
// gradients accumulate only over active (t, i) pairs. Gate-generator
// gradients flow through the straight-through surrogate with local signal
// (dL/dh_{t,i}) * delta_h_{t,i} * surrogate'(a_{t,i}).

#pragma once

#include <vector>

#include "surnn/cells.hpp"
#include "surnn/gates.hpp"

namespace surnn {

struct Tape {
  CellKind kind = CellKind::Rnn;
  bool onepass = false;   // records are GRU steps over augmented inputs
  int data_dim = 0;       // true input width when onepass
  std::vector<StepRecord> steps;  // step t at index t-1

  int length() const { return static_cast<int>(steps.size()); }
  int hidden() const { return steps.empty() ? 0 : steps.front().hidden(); }
};

struct RnnGrads {
  Mat w_xh, w_hh;
  Vec b;
};

struct GruGrads {
  Mat w_ih, w_hh;
  Vec b_ih, b_hh;
};

struct BackwardOptions {
  const GateProgram* program = nullptr;  // chain gate signals into rhythmic params
  Mat* table_grads = nullptr;            // chain into a learnable H x T logits table
  double surrogate_slope = 2.0;
  bool gate_grads = true;                // false for frozen schedules
};

struct GradReport {
  CellKind kind = CellKind::Rnn;
  RnnGrads rnn;
  GruGrads gru;
  GateProgramGrads gate_program;

  Vec adjoint_norms;                  // ||dL/dh_t||_2, t = 1..T
  std::vector<int> nonidentity_counts;  // per-neuron open-gate counts
  double update_rate = 0.0;
  Mat d_gate_preact;                  // T x H local gate signals (STE route)
  Mat d_inputs;                       // T x D (data part only for onepass)
  Vec d_h0;
};

// dloss_dh: T x H, the direct per-step loss gradient dl_t/dh_t (zero rows
// where the loss mask is closed).
GradReport backward(const Tape& tape, const Mat& dloss_dh, const RnnParams& p,
                    const BackwardOptions& opts = {});
GradReport backward(const Tape& tape, const Mat& dloss_dh, const GruParams& p,
                    const BackwardOptions& opts = {});

// Standalone gate-generator gradient from a recorded tape and an adjoint
// stream dL/dh (T x H); the same computation backward() performs inline.
GateProgramGrads gate_backward(const Tape& tape, const Mat& adjoints,
                               const GateProgram& program, double surrogate_slope);

// (t, ||dL/dh_t||) series ready for CSV; zeros stay zeros.
std::vector<std::pair<int, double>> grad_trace(const GradReport& report);

// Per-neuron open-gate counts n_i = sum_t g[t][i] plus the update rate.
std::pair<std::vector<int>, double> nonidentity_count(const Tape& tape);

}  // namespace surnn
