// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Recurrent backbones and the selective-update wrapper
//
//   h_t = (I - D_t) h_{t-1} + D_t f(h_{t-1}, x_t),   D_t = diag(g_t),
//
// with exact one-step Jacobians J_t = I + D_t (J^f_t - I). Gated-off
// coordinates carry bitwise: h_t[i] aliases h_{t-1}[i] exactly.
//
// GRU convention (residual form, two biases, reset on the hidden n-term):
//   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + r .* (W_hn h + b_hn))
//   h' = h + z .* (n - h)
// z is the update amount: z -> 0 is a carry, z -> 1 replaces the state.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "surnn/numerics.hpp"

namespace surnn {

enum class CellKind { Rnn, Gru };

struct RnnParams {
  Mat w_xh;  // H x D
  Mat w_hh;  // H x H
  Vec b;     // H

  int hidden() const { return w_hh.rows; }
  int input_dim() const { return w_xh.cols; }
  void validate() const;

  // Orthogonal recurrence (gain 1), uniform +-1/sqrt(D) input block, zero bias.
  static RnnParams init(int hidden, int input_dim, Rng& rng);
};

struct GruParams {
  Mat w_ih;   // 3H x D, row blocks [r; z; n]
  Mat w_hh;   // 3H x H, row blocks [r; z; n]
  Vec b_ih;   // 3H
  Vec b_hh;   // 3H

  int hidden() const { return w_hh.cols; }
  int input_dim() const { return w_ih.cols; }
  void validate() const;

  static GruParams init(int hidden, int input_dim, Rng& rng);
};

// Forward cache for one step; consumed by Jacobians and BPTT.
struct StepRecord {
  CellKind kind = CellKind::Rnn;
  Vec h_prev;
  Vec x;
  std::vector<uint8_t> g;  // empty => ungated backbone step
  Vec soft_g;              // relaxed gate values s = sigmoid(beta a), empty in hard mode
  Vec gate_preact;         // rhythmic preactivations a_t when present

  // RNN cache
  Vec pre;        // W_xh x + W_hh h + b

  // GRU cache
  Vec pre_r, pre_z, pre_n;  // head preactivations (pre_n includes r .* hpre_n)
  Vec hpre_n;               // W_hn h + b_hn before the reset product

  Vec candidate;  // f(h_prev, x)
  Vec delta_h;    // f - h_prev
  Vec h_next;

  int hidden() const { return static_cast<int>(h_next.size()); }
};

Vec rnn_step(const RnnParams& p, const Vec& h, const Vec& x, StepRecord* cache = nullptr);
Vec gru_step(const GruParams& p, const Vec& h, const Vec& x, StepRecord* cache = nullptr);

// Applies the per-neuron binary gate on top of a backbone step. g[i] == 0
// copies h[i] bitwise; g[i] == 1 takes the backbone output.
Vec selective_step(const RnnParams& p, const Vec& h, const Vec& x,
                   std::span<const uint8_t> g, StepRecord* cache = nullptr);
Vec selective_step(const GruParams& p, const Vec& h, const Vec& x,
                   std::span<const uint8_t> g, StepRecord* cache = nullptr);

// Continuous relaxation h' = h + s .* (f - h) with s in [0,1]; the reference
// model for checking straight-through gate gradients by finite differences.
Vec soft_selective_step(const RnnParams& p, const Vec& h, const Vec& x, const Vec& s,
                        StepRecord* cache = nullptr);
Vec soft_selective_step(const GruParams& p, const Vec& h, const Vec& x, const Vec& s,
                        StepRecord* cache = nullptr);

// Jacobian of the bare backbone, d f / d h_prev.
Mat backbone_jacobian(const RnnParams& p, const StepRecord& cache);
Mat backbone_jacobian(const GruParams& p, const StepRecord& cache);

// One-step Jacobian d h_next / d h_prev including the gate structure:
// rows with g[i] == 0 equal e_i exactly.
Mat step_jacobian(const RnnParams& p, const StepRecord& cache);
Mat step_jacobian(const GruParams& p, const StepRecord& cache);

// Right-to-left product of step Jacobians over a contiguous span
// (latest step leftmost). Empty span yields the identity.
Mat sensitivity_product(const std::vector<Mat>& step_jacobians);

// Subset-sum expansion of prod (I + D (J^f - I)): one term per subset of the
// span, each a descending-ordered product of D_tau (J^f_tau - I). Exponential
// in span length; refuses spans above 20.
Mat ensemble_expand(const std::vector<Mat>& backbone_jacobians,
                    const std::vector<std::vector<uint8_t>>& gates);

}  // namespace surnn
