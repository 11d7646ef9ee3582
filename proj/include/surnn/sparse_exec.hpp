// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Mask-aware stepwise GRU execution. Only the rows of active neurons are
// computed; h_{t-1} is always consumed densely (skipping columns would
// change results). Row skipping with a fixed accumulation order makes the
// sparse output bit-identical to dense-then-mask. Counters record exact
// multiply-accumulate work per head; the benchmark reports wall-clock
// medians for dense vs sparse in 32- or 64-bit arithmetic.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "surnn/cells.hpp"

namespace surnn {

struct OpCounter {
  uint64_t macs_r = 0, macs_z = 0, macs_n = 0, macs_combine = 0;
  uint64_t rows_gathered = 0;
  std::vector<int> active_sizes;  // |active| per step

  uint64_t total_macs() const { return macs_r + macs_z + macs_n + macs_combine; }
};

struct BlockGating {
  int block = 16;  // neurons per shared gate bit; H must divide evenly

  // Expands per-block bits into a per-neuron mask.
  std::vector<uint8_t> expand(std::span<const uint8_t> block_bits, int hidden) const;
};

// Full GRU step; counter records H*(D+H) MACs per head plus H combine ops.
// Bitwise-identical to gru_step.
Vec dense_step(const GruParams& p, const Vec& h, const Vec& x, OpCounter* counter = nullptr);

// Computes r/z/n rows and the combine only for active neurons (ascending
// index); inactive coordinates are copied. Bitwise equal to dense_step
// followed by masking.
Vec sparse_step(const GruParams& p, const Vec& h, const Vec& x, std::span<const uint8_t> g,
                OpCounter* counter = nullptr);

// float32 twin used by the throughput benchmark.
struct GruParamsF {
  int hidden = 0, input_dim = 0;
  std::vector<float> w_ih, w_hh, b_ih, b_hh;  // same layout as GruParams

  static GruParamsF from(const GruParams& p);
};

void dense_step_f32(const GruParamsF& p, const float* h, const float* x, float* out,
                    OpCounter* counter = nullptr);
void sparse_step_f32(const GruParamsF& p, const float* h, const float* x,
                     std::span<const uint8_t> g, float* out, OpCounter* counter = nullptr);

struct BenchConfig {
  std::string mode = "f32";  // "f32" or "f64"
  int hidden = 256;
  int input_dim = 1;
  int steps = 784;
  double sparsity = 0.83;  // fraction of closed gates
  int repeats = 9;         // >= 5
  int block = 16;
  uint64_t seed = 1;
};

struct HeadReport {
  std::string head;  // reset / update / candidate / combine
  uint64_t dense_macs = 0, sparse_macs = 0;
  double dense_median_us = 0, dense_iqr_us = 0;
  double sparse_median_us = 0, sparse_iqr_us = 0;
};

struct BenchResult {
  BenchConfig cfg;
  std::vector<HeadReport> heads;
  double dense_median_us = 0, dense_iqr_us = 0;    // per step, all heads
  double sparse_median_us = 0, sparse_iqr_us = 0;
  double measured_sparsity = 0;  // 1 - mean active fraction

  double mac_ratio() const;
  double wall_ratio() const { return sparse_median_us / dense_median_us; }
};

BenchResult bench(const BenchConfig& cfg);

// CSV columns: mode,H,D,T,sparsity,head,macs,median_us,iqr_us
void write_bench_csv(const BenchResult& r, const std::string& path,
                     const std::string& provenance = "");

}  // namespace surnn
