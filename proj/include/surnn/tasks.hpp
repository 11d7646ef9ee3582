// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Benchmark data: copying-memory, selective copy, Mackey-Glass forecasting,
// and sequential/permuted pixel streams ingested from IDX files. All
// generators are pure functions of (seed, config).

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "surnn/numerics.hpp"

namespace surnn {

struct TaskBatch {
  int batch = 0, steps = 0, input_dim = 0;
  int num_classes = 0;              // 0 => regression targets
  std::vector<double> inputs;       // [B][T][D]
  std::vector<double> targets;      // [B][T] class index or regression value
  std::vector<uint8_t> loss_mask;   // [B][T]

  const double* input(int b, int t) const {
    return inputs.data() + (static_cast<size_t>(b) * steps + t) * input_dim;
  }
  double target(int b, int t) const { return targets[static_cast<size_t>(b) * steps + t]; }
  uint8_t mask(int b, int t) const { return loss_mask[static_cast<size_t>(b) * steps + t]; }
  size_t mask_count() const;
};

// Prefix of `prefix_len` symbols from {1..alphabet}, `delay` blanks, a
// delimiter, then `prefix_len` blanks during which the prefix must be
// reproduced. One-hot inputs over {blank, symbols, delimiter}; loss only on
// the final `prefix_len` positions; targets are 0-based symbol classes.
TaskBatch gen_copy_memory(Rng& rng, int batch, int prefix_len, int alphabet, int delay);

// `n_tokens` marked symbols at sorted random positions in a length-`steps`
// stream of blanks; after the stream the tokens must be emitted in order.
// Mark status and the recall phase are separate input channels.
TaskBatch gen_selective_copy(Rng& rng, int batch, int n_tokens, int steps, int alphabet = 8);

struct MgConfig {
  double beta = 0.2;
  double gamma = 0.1;
  int n = 10;
  double tau = 17.0;       // delay in time units
  double dt = 1.0;         // output grid
  double history = 1.2;    // constant pre-t0 state
};

struct MgSeries {
  Vec x;            // normalized unless raw was requested
  double mean = 0;  // de-normalization stats
  double stddev = 1;
};

// RK4 with linear interpolation for the delayed term; `warmup` leading
// points are discarded. Output normalized to zero mean / unit variance
// unless normalize is false.
MgSeries gen_mackey_glass(const MgConfig& cfg, int length, int warmup = 1000,
                          bool normalize = true);

// Per-step forecasting batch: input x_t, target x_{t+horizon}, full mask.
TaskBatch mg_batch(const MgSeries& series, Rng& rng, int batch, int steps, int horizon);

struct IdxImages {
  int count = 0, rows = 0, cols = 0;
  std::vector<uint8_t> pixels;  // count * rows * cols
};
struct IdxLabels {
  int count = 0;
  std::vector<uint8_t> labels;
};

// IDX readers (big-endian headers; magic 0x00000803 / 0x00000801). Errors
// report the byte offset of the offending field.
IdxImages load_idx_images(const std::string& path);
IdxLabels load_idx_labels(const std::string& path);

// Pixel stream batch: T = rows*cols, D = 1, pixels scaled to [0,1], label
// (class) at the final step only. `permutation`, when present, reorders the
// flattened pixel index (psMNIST uses one fixed permutation for the whole
// dataset). `indices` selects which images go into the batch.
TaskBatch make_sequential(const IdxImages& images, const IdxLabels& labels,
                          const std::vector<int>& indices,
                          const std::vector<int>* permutation = nullptr);

// The fixed psMNIST permutation: rand_perm with seed 42 over rows*cols.
std::vector<int> psmnist_permutation(int length = 784);

}  // namespace surnn
