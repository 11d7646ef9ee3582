// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Single-pass selective-update GRU: the binary gate is injected through the
// input instead of per-step control flow. The input is augmented with skip
// drive channels [x_t; 1 - g_t] and the gate-channel column blocks of W_ih
// are held at fixed values (r/n heads zero, z head C*I with C < 0). The
// z preactivation then satisfies z_pre = z_org + C (1 - g): update steps
// (g = 1) match a plain GRU step exactly, carry steps shift z toward zero by
// a margin controlled by C.

#pragma once

#include <cstdint>
#include <span>

#include "surnn/cells.hpp"

namespace surnn {

struct OnePassGru {
  GruParams gru;      // input dim = data_dim + hidden
  int data_dim = 0;   // D, width of the real input block
  double wiring_c = -9.0;  // C < 0, z-head gate-channel diagonal

  int hidden() const { return gru.hidden(); }
  static OnePassGru init(int hidden, int data_dim, double wiring_c, Rng& rng);
};

// Overwrites the gate-channel column blocks: r/n blocks to zero, z block to
// C*I. Idempotent; run after every optimizer step.
void enforce_wiring(OnePassGru& p);

// Exact check of the wiring invariant.
bool wiring_ok(const OnePassGru& p);

// [x; 1 - g]; g must be binary.
Vec augment_input(const Vec& x, std::span<const uint8_t> g);

// Soft variant used by the relaxed-gate oracle: suffix is 1 - s, s in [0,1].
Vec augment_input_soft(const Vec& x, const Vec& s);

struct OnePassForward {
  std::vector<Vec> states;       // h_1 .. h_T
  std::vector<StepRecord> tape;  // GRU caches over augmented inputs
};

// One uninterrupted GRU recurrence over augmented inputs. Throws if the
// wiring invariant does not hold.
OnePassForward onepass_forward(const OnePassGru& p, const std::vector<Vec>& xs,
                               const std::vector<std::vector<uint8_t>>& gates, const Vec& h0,
                               bool want_tape = true);

struct RetentionSpec {
  int carry_len = 1;        // L
  double loss = 0.01;       // rho, allowed retention loss in (0,1)
  double margin = 0.0;      // a_min, carry margin in preactivation units
};

// Largest C (most permissive) that still guarantees keeping at least 1-rho
// of state mass over an L-step carry run with margins >= a_min:
//   C = a_min - logit((1-rho)^(1/L)),
// clamped to >= -15 so sigmoid(C) stays clear of double underflow.
double retention_bound_c(const RetentionSpec& spec);

}  // namespace surnn
