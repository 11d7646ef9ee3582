// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Experiment plumbing shared by the CLI and the acceptance suite: task
// sources built from declarative specs, experiment configs parsed from
// strict JSON, and the config fingerprint embedded in output files.

#pragma once

#include <optional>
#include <string>

#include "surnn/trainer.hpp"

namespace surnn {

struct TaskSpec {
  std::string name = "copy_memory";  // copy_memory | selective_copy | mackey_glass |
                                     // smnist | psmnist
  uint64_t seed = 1;
  int batch = 16;
  int eval_batch = 128;

  // copy_memory
  int delay = 200;
  int prefix_len = 10;
  int alphabet = 8;

  // selective_copy
  int stream_len = 512;
  int n_tokens = 16;

  // mackey_glass
  int horizon = 10;
  int seq_len = 256;
  int series_len = 20000;
  MgConfig mg;

  // smnist / psmnist (user-supplied IDX files)
  std::string data_dir;
  int train_count = 2000;
  int test_count = 2000;
};

// Builds the deterministic training source for a task spec. Synthetic tasks
// draw a fresh batch per optimizer step from (seed, step); dataset tasks
// shuffle per epoch. Mackey-Glass holds out the last fifth of the series for
// eval.
TaskSource make_task_source(const TaskSpec& spec);

// Expected input/output dims for a task (to validate model configs).
std::pair<int, int> task_dims(const TaskSpec& spec);

struct ExperimentConfig {
  TaskSpec task;
  ModelConfig model;
  AdamConfig optim;
  int steps = 1000;
  int eval_every = 100;
  std::optional<double> early_stop;
  uint64_t seed = 1;
  int workers = 1;
  std::string out_dir;
};

ExperimentConfig experiment_from_json(const std::string& text);
std::string experiment_to_json(const ExperimentConfig& cfg);

// SHA-256 fingerprint of the canonical JSON form.
std::string experiment_hash(const ExperimentConfig& cfg);

}  // namespace surnn
