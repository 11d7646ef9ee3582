// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Binary gate generation. The rhythmic generator produces per-neuron
// preactivations a[t][i] = b[i] + sum_k alpha[i][k] sin(omega[k] t + phi[i][k])
// (t is 1-based) which are binarized by a strict Heaviside: g = 1 iff a > 0.
// The backward substitute for the Heaviside is the tempered-sigmoid
// derivative beta * s * (1 - s) with s = sigmoid(beta a).

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "surnn/numerics.hpp"

namespace surnn {

struct GateProgram {
  Vec omega;   // K shared frequencies, strictly increasing, > 0 (radians/step)
  Mat alpha;   // H x K amplitudes
  Mat phi;     // H x K phases
  Vec bias;    // H
  double surrogate_slope = 2.0;
  bool learn_omega = false;
  bool learn_alpha = true;
  bool learn_phi = true;
  bool learn_bias = true;

  int hidden() const { return alpha.rows; }
  int num_freqs() const { return static_cast<int>(omega.size()); }
  void validate() const;

  // K frequencies log-spaced on [2*pi/max_seq_len, pi], alpha ~ N(0, 1/sqrt(K)),
  // phi ~ U[0, 2*pi), bias 0. Opens roughly half of all (t, i) pairs at init.
  static GateProgram init(int hidden, int num_freqs, int max_seq_len, Rng& rng);
};

// Gradients w.r.t. a GateProgram; shapes mirror the program.
struct GateProgramGrads {
  Vec d_omega;
  Mat d_alpha;
  Mat d_phi;
  Vec d_bias;
  static GateProgramGrads zeros_like(const GateProgram& p);
};

struct GateMask {
  int steps = 0;    // T
  int hidden = 0;   // H
  std::vector<uint8_t> g;  // T*H, row t-1 holds step t
  std::vector<double> a;   // T*H preactivations

  uint8_t gate(int t_idx, int i) const { return g[static_cast<size_t>(t_idx) * hidden + i]; }
  double preact(int t_idx, int i) const { return a[static_cast<size_t>(t_idx) * hidden + i]; }
  const uint8_t* gate_row(int t_idx) const { return g.data() + static_cast<size_t>(t_idx) * hidden; }
  const double* preact_row(int t_idx) const { return a.data() + static_cast<size_t>(t_idx) * hidden; }
};

// Gate schedules of the ablation family. Exactly one variant is active.
struct RhythmicGate { GateProgram program; };
struct FixedRandomRhythmicGate { GateProgram program; };  // frozen at init
struct EveryKStepsGate { int k = 1; };                    // open at t % k == 0, t 1-based
struct FixedRandomBernoulliGate { double p = 0.5; uint64_t seed = 0; };
struct InputThresholdGate {};                             // open where any input channel > 0
struct LearnableTableGate { Mat logits; double surrogate_slope = 2.0; };  // H x T

using GateSchedule = std::variant<RhythmicGate, FixedRandomRhythmicGate, EveryKStepsGate,
                                  FixedRandomBernoulliGate, InputThresholdGate,
                                  LearnableTableGate>;

bool schedule_is_learnable(const GateSchedule& s);
const GateProgram* schedule_program(const GateSchedule& s);
GateProgram* schedule_program(GateSchedule& s);

// a[i] for step t (1-based), direct formula.
Vec preactivation(const GateProgram& prog, int t);

// Whole-sequence table for steps 1..T; runs the same arithmetic as the
// per-step formula, so the two paths agree bitwise.
GateMask precompute_mask(const GateProgram& prog, int steps);

// Shared sin/cos tables over the frequency grid, one row per step. Rebuilt
// only when omega or the step count changes.
struct RhythmTable {
  int steps = 0;
  Vec omega;
  std::vector<double> sin_wt, cos_wt;  // [t-1][k]

  void build(const Vec& omega_grid, int step_count);
  bool matches(const Vec& omega_grid, int step_count) const;
};

// Throughput variant used by the training engine: evaluates the preacts via
// sin(wt + phi) = sin(wt) cos(phi) + cos(wt) sin(phi). Agrees with the
// direct formula to rounding (~1e-13), not bitwise; masks can differ only
// when a preactivation sits within rounding distance of zero.
GateMask precompute_mask_fast(const GateProgram& prog, int steps, RhythmTable& table);

inline uint8_t binarize_one(double a) { return a > 0.0 ? 1 : 0; }
std::vector<uint8_t> binarize(const Vec& a);

inline double surrogate_grad(double a, double beta) {
  const double s = sigmoid(beta * a);
  return beta * s * (1.0 - s);
}

// inputs: T x D (required by InputThreshold, ignored otherwise).
GateMask generate_mask(const GateSchedule& schedule, int steps, int hidden,
                       const Mat* inputs = nullptr);

double update_rate(const GateMask& mask);

// CSV dump with header t,i,a,g (t 1-based).
void write_mask_csv(const GateMask& mask, const std::string& path,
                    const std::string& provenance = "");

}  // namespace surnn
