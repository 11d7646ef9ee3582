// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Instruments that check the selective-update theory at desk scale:
// gradient traces over long delays, the effective-depth regression
// (log sensitivity norm vs p*T), retention audits for the one-pass cell,
// hidden-state PCA, and spatio-temporal gate/increment dumps. Everything
// emits CSV; plotting stays outside the library.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "surnn/onepass.hpp"
#include "surnn/trainer.hpp"

namespace surnn {

// Scales W_hh so its top singular value is rho (20 power-iteration steps).
void spectral_scale(RnnParams& p, double rho, int iters = 20);

struct TraceSeries {
  std::string model_tag;
  int delay = 0;
  Vec norms;  // ||dL/dh_t||_2 for t = 1..T, bottom layer
  double update_rate = 1.0;
};

struct TraceBundle {
  std::vector<TraceSeries> series;
};

// Copying-memory forward+backward per (model, delay); records the adjoint
// norm profile of the bottom layer.
TraceBundle run_grad_profile(const std::vector<std::pair<std::string, Model>>& models,
                             const std::vector<int>& delays, uint64_t seed);

void write_trace_csv(const TraceBundle& bundle, const std::string& path,
                     const std::string& provenance = "");

struct DepthFit {
  std::vector<std::pair<double, double>> samples;  // (p*T, log ||dh_T/dh_0||)
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double target = 0.0;  // ln rho

  bool within(double tol) const { return std::abs(slope - target) <= tol; }
};

// Vanilla backbone spectrally scaled to rho, zero inputs (so the backbone
// Jacobian is exactly W_hh each step), Bernoulli masks over the p grid.
DepthFit fit_effective_depth(int hidden, double rho, const std::vector<double>& p_grid,
                             int steps, uint64_t seed, int trials_per_p = 3);

void write_depth_csv(const DepthFit& fit, const std::string& path,
                     const std::string& provenance = "");

struct CarryRun {
  int neuron = 0;
  int start = 0;  // 1-based step of the first carry
  int len = 0;
  double min_margin = 0.0;  // min a_t over the run, a_t = -z_org
  double product = 1.0;     // prod (1 - z')
  bool violates = false;
};

struct RetentionReport {
  std::vector<CarryRun> runs;
  int violations = 0;
  RetentionSpec spec;
  double wiring_c = 0.0;
};

// Scans every maximal carry run in the mask and compares the measured
// retained mass against the guarantee; a run violates when its margins
// clear spec.margin, its length is within spec.carry_len, and the product
// still falls below 1 - spec.loss.
RetentionReport audit_retention(const OnePassGru& model, const std::vector<Vec>& xs,
                                const std::vector<std::vector<uint8_t>>& gates,
                                const RetentionSpec& spec);

struct PcaResult {
  Mat components;   // k x H, deterministic sign (largest entry positive)
  Vec eigenvalues;  // all H, descending
  Vec mean;         // H
  std::vector<double> projected;  // [B][T][k]
  double total_variance = 0.0;
  int k = 0;  // effective count (reduced when rank-deficient)
};

PcaResult pca_trajectories(const std::vector<double>& states, int batch, int steps, int hidden,
                           int k = 2);

// Per-layer CSVs of mean gate activity and mean signed increments, reshaped
// to rows x cols (requires T == rows * cols). Returns the file paths.
std::vector<std::string> dump_spatiotemporal(const Model& m, const TaskBatch& batch, int rows,
                                             int cols, const std::string& out_dir,
                                             const std::string& tag = "model");

}  // namespace surnn
