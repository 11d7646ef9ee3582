// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Full-model gradient certification. Every trainable parameter block of
// every cell variant is checked against central finite differences of the
// scalar masked loss; gate-generator parameters are checked through the
// relaxed (sigmoid) gate mode, where the surrogate derivative is exact.
// The hard-gate straight-through estimate is then compared against the
// relaxed-mode truth as a scale/sign sanity bound.

#pragma once

#include <string>
#include <vector>

#include "surnn/trainer.hpp"

namespace surnn {

struct GradCheckCase {
  std::string tag;
  double max_rel_err = 0.0;       // analytic vs central differences
  double gate_rel_err = 0.0;      // soft-mode gate params vs differences
  double ste_rel_err = 0.0;       // hard-mode STE vs soft-mode truth (norm level)
  bool pass = false;
};

struct GradCheckOptions {
  uint64_t seed = 1;
  double tol = 1e-5;
  double ste_tol = 0.2;
  double fd_eps = 3e-6;
  int hidden = 5;
  int steps = 9;
  int input_dim = 3;
  // Gate-program shaping for the instances. The straight-through comparison
  // is meaningful when gates are decisive (as they are after training):
  // preactivations oscillate around +-bias_magnitude instead of hugging the
  // zero crossing, where hard and relaxed trajectories decouple.
  double alpha_scale = 0.15;
  double bias_magnitude = 2.0;
};

// Runs the suite over {rnn, gru, su-rnn, su-gru, onepass-su-gru}.
std::vector<GradCheckCase> run_gradcheck(const GradCheckOptions& opts = {});

bool all_pass(const std::vector<GradCheckCase>& cases);

}  // namespace surnn
