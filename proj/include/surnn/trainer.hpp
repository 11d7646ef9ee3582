// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Model assembly (stacked recurrent layers + linear readout), losses, Adam,
// and the training loop. Two execution paths share one semantics: a
// per-sequence reference path built on cells/bptt (used by gradient checks
// and diagnostics) and a lane-batched path in engine.cpp (used for
// training). States agree bitwise between the two; gradients agree to
// rounding.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "surnn/bptt.hpp"
#include "surnn/cells.hpp"
#include "surnn/gates.hpp"
#include "surnn/tasks.hpp"

namespace surnn {

enum class LayerKind { Rnn, Gru, SuRnn, SuGru, OnePassSuGru };

LayerKind layer_kind_from_string(const std::string& s);
std::string layer_kind_to_string(LayerKind k);

struct GateSpec {
  std::string schedule = "rhythmic";  // rhythmic | fixed_random_rhythmic | every_k |
                                      // fixed_random_bernoulli | input_threshold | learnable_table
  int num_freqs = 0;                  // 0 => K = H
  // dense: alpha ~ N(0, 1/sqrt(K)) across all frequencies.
  // per_unit: one dominant frequency per neuron plus small exploration noise,
  // giving the layer a log-spaced population of gate timescales.
  std::string amp_init = "dense";
  double surrogate_slope = 2.0;
  bool learn_omega = false;
  int k = 3;                          // every_k
  double p = 0.5;                     // fixed_random_bernoulli
  uint64_t seed = 0;
};

struct LayerSpec {
  LayerKind kind = LayerKind::SuGru;
  int hidden = 64;
  GateSpec gate;
  std::optional<double> wiring_c;  // onepass only; default = retention bound
  double z_bias_init = 0.0;        // GRU update-head input bias (carry pressure when < 0)
};

enum class ReadoutMode { PerStep, LastMasked };

struct ModelConfig {
  int input_dim = 1;
  int output_dim = 1;
  ReadoutMode readout = ReadoutMode::PerStep;
  int max_seq_len = 256;  // frequency-grid floor and learnable-table width
  double dropout = 0.0;
  std::vector<LayerSpec> layers;

  void validate() const;
};

struct LayerParams {
  LayerKind kind = LayerKind::Gru;
  int hidden = 0;
  int input_dim = 0;  // data width; onepass cells internally use input_dim + hidden
  RnnParams rnn;
  GruParams gru;
  double wiring_c = 0.0;
  GateSchedule schedule = EveryKStepsGate{1};
  double surrogate_slope = 2.0;

  bool is_selective() const { return kind == LayerKind::SuRnn || kind == LayerKind::SuGru; }
  bool is_onepass() const { return kind == LayerKind::OnePassSuGru; }
  bool uses_gru() const { return kind != LayerKind::Rnn && kind != LayerKind::SuRnn; }
};

struct Model {
  ModelConfig cfg;
  std::vector<LayerParams> layers;
  Mat w_out;
  Vec b_out;

  static Model init(const ModelConfig& cfg, uint64_t seed);
  void enforce_wiring_all();
};

struct LayerGrads {
  RnnGrads rnn;
  GruGrads gru;
  GateProgramGrads program;
  Mat table;  // learnable-table logits
};

struct ModelGrads {
  std::vector<LayerGrads> layers;
  Mat w_out;
  Vec b_out;

  static ModelGrads zeros_like(const Model& m);
  void zero();
  void add_scaled(const ModelGrads& other, double scale);
};

// ---- losses -------------------------------------------------------------

// Logits layout: [t][o][b] (dense over t; unmasked rows are ignored).
struct LossResult {
  double value = 0.0;       // mean over masked positions
  size_t masked = 0;
  std::vector<double> dlogits;  // same layout as logits
  double accuracy = 0.0;        // classification only
};

LossResult loss_ce(const std::vector<double>& logits, int steps, int outputs,
                   const TaskBatch& batch);
LossResult loss_mse(const std::vector<double>& logits, int steps, int outputs,
                    const TaskBatch& batch);

// ---- reference (single-sequence) path ------------------------------------

enum class GateMode { Hard, Soft };

struct RefForward {
  std::vector<Tape> tapes;          // one per layer
  std::vector<GateMask> masks;      // per layer
  std::vector<double> logits;       // [t][o][b=1]
  LossResult loss;
};

// Runs one lane of `batch` through the model. Soft mode replaces the binary
// gates with sigmoid(beta a) end to end (the straight-through oracle).
RefForward model_forward_reference(const Model& m, const TaskBatch& batch, int lane,
                                   GateMode mode = GateMode::Hard);

// Full reference backward; returns gradients of the mean masked loss of this
// lane. Also reports the top layer's per-step adjoint norms.
struct RefBackward {
  ModelGrads grads;
  Vec adjoint_norms;  // layer 0 (bottom) adjoint norms, t = 1..T
  std::vector<GradReport> reports;  // per layer, bottom to top
};
RefBackward model_backward_reference(const Model& m, const TaskBatch& batch, int lane,
                                     const RefForward& fwd);

// ---- optimizer ------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;        // global L2 clip; 0 disables
  // Gate-generator-specific regularizers, both off by default.
  double gate_weight_decay = 0.0;  // decoupled decay on gate program/table blocks
  double gate_clip_norm = 0.0;     // extra L2 clip over gate blocks only
};

struct Adam {
  AdamConfig cfg;
  int64_t step_count = 0;
  std::vector<Vec> m, v;  // one slot per parameter block

  explicit Adam(const AdamConfig& c) : cfg(c) {}

  // Clips gradients globally, applies the update, re-projects onepass wiring.
  // Returns false (step skipped) when gradients are not finite.
  bool step(Model& model, ModelGrads& grads);
};

// ---- training -------------------------------------------------------------

struct TaskSource {
  // Fresh training batch for an optimizer step (seeded deterministically).
  std::function<TaskBatch(uint64_t step)> train_batch;
  // Fixed evaluation batch.
  std::function<TaskBatch()> eval_batch;
  std::string metric = "ce";  // ce | acc | mse
};

struct TrainOptions {
  int steps = 1000;
  int eval_every = 100;
  AdamConfig adam;
  uint64_t seed = 1;
  int workers = 1;
  // Early stop when the eval metric crosses the threshold (direction depends
  // on the metric: loss/mse stop below, accuracy stops above).
  std::optional<double> early_stop;
  std::string out_dir;       // empty => no files
  std::string config_hash;
  bool verbose = false;
};

struct MetricsRow {
  int step = 0;
  double train_loss = 0.0;
  double eval_value = 0.0;
  double update_rate = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  std::vector<MetricsRow> log;
  double best_eval = 0.0;
  int best_step = -1;
  int steps_run = 0;
  bool early_stopped = false;
};

// Thrown after two consecutive non-finite losses; the CLI maps it to exit 3.
struct NumericAbort : std::runtime_error {
  explicit NumericAbort(const std::string& what) : std::runtime_error(what) {}
};

TrainResult train(Model& model, const TaskSource& task, const TrainOptions& opts);

// One batched forward pass for evaluation; returns the loss result.
LossResult evaluate(const Model& m, const TaskBatch& batch, int workers = 1);

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::string& dir, const Model& m, const std::string& config_hash = "");
Model load_checkpoint(const std::string& dir);

// JSON round-trip for configs (strict: unknown keys are rejected).
ModelConfig model_config_from_json(const std::string& json_text);
std::string model_config_to_json(const ModelConfig& cfg);

}  // namespace surnn
