// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/experiments.hpp"

#include <algorithm>
#include <memory>
#include <stdexcept>

#include "json.hpp"
#include "surnn/sha256.hpp"
#include "surnn/tasks.hpp"

namespace surnn {

std::pair<int, int> task_dims(const TaskSpec& spec) {
  if (spec.name == "copy_memory") return {spec.alphabet + 2, spec.alphabet};
  if (spec.name == "selective_copy") return {spec.alphabet + 2, spec.alphabet};
  if (spec.name == "mackey_glass") return {1, 1};
  if (spec.name == "smnist" || spec.name == "psmnist") return {1, 10};
  throw std::invalid_argument("unknown task: " + spec.name);
}

namespace {

TaskSource copy_memory_source(const TaskSpec& spec) {
  TaskSource src;
  src.metric = "ce";
  src.train_batch = [spec](uint64_t step) {
    Rng rng(spec.seed * 0x9e3779b9ULL + step);
    return gen_copy_memory(rng, spec.batch, spec.prefix_len, spec.alphabet, spec.delay);
  };
  src.eval_batch = [spec]() {
    Rng rng(spec.seed ^ 0x5ca1ab1eULL);
    return gen_copy_memory(rng, spec.eval_batch, spec.prefix_len, spec.alphabet, spec.delay);
  };
  return src;
}

TaskSource selective_copy_source(const TaskSpec& spec) {
  TaskSource src;
  src.metric = "acc";
  src.train_batch = [spec](uint64_t step) {
    Rng rng(spec.seed * 0x9e3779b9ULL + step);
    return gen_selective_copy(rng, spec.batch, spec.n_tokens, spec.stream_len, spec.alphabet);
  };
  src.eval_batch = [spec]() {
    Rng rng(spec.seed ^ 0x5ca1ab1eULL);
    return gen_selective_copy(rng, spec.eval_batch, spec.n_tokens, spec.stream_len, spec.alphabet);
  };
  return src;
}

TaskSource mackey_glass_source(const TaskSpec& spec) {
  // One shared series; training samples windows from the first 80%, the
  // fixed eval batch from the held-out tail.
  auto series = std::make_shared<MgSeries>(gen_mackey_glass(spec.mg, spec.series_len));
  const int split = static_cast<int>(spec.series_len * 0.8);
  auto train_view = std::make_shared<MgSeries>();
  train_view->x.assign(series->x.begin(), series->x.begin() + split);
  auto eval_view = std::make_shared<MgSeries>();
  eval_view->x.assign(series->x.begin() + split, series->x.end());

  TaskSource src;
  src.metric = "mse";
  src.train_batch = [spec, train_view](uint64_t step) {
    Rng rng(spec.seed * 0x9e3779b9ULL + step);
    return mg_batch(*train_view, rng, spec.batch, spec.seq_len, spec.horizon);
  };
  src.eval_batch = [spec, eval_view]() {
    Rng rng(spec.seed ^ 0x5ca1ab1eULL);
    return mg_batch(*eval_view, rng, spec.eval_batch, spec.seq_len, spec.horizon);
  };
  return src;
}

TaskSource mnist_source(const TaskSpec& spec, bool permuted) {
  if (spec.data_dir.empty())
    throw std::invalid_argument("mnist task: data_dir with IDX files is required");
  auto train_images = std::make_shared<IdxImages>(
      load_idx_images(spec.data_dir + "/train-images-idx3-ubyte"));
  auto train_labels = std::make_shared<IdxLabels>(
      load_idx_labels(spec.data_dir + "/train-labels-idx1-ubyte"));
  auto test_images = std::make_shared<IdxImages>(
      load_idx_images(spec.data_dir + "/t10k-images-idx3-ubyte"));
  auto test_labels = std::make_shared<IdxLabels>(
      load_idx_labels(spec.data_dir + "/t10k-labels-idx1-ubyte"));
  const int steps_dim = train_images->rows * train_images->cols;
  auto perm = std::make_shared<std::vector<int>>();
  if (permuted) *perm = psmnist_permutation(steps_dim);

  // Fixed training subset (first train_count after a seeded shuffle of the
  // full index range) and a fixed test subset.
  const int n_train = std::min(spec.train_count, train_images->count);
  const int n_test = std::min(spec.test_count, test_images->count);
  auto train_idx = std::make_shared<std::vector<int>>();
  {
    Rng rng(spec.seed ^ 0x0ddba11ULL);
    std::vector<int> all = rng.perm(train_images->count);
    train_idx->assign(all.begin(), all.begin() + n_train);
  }
  auto test_idx = std::make_shared<std::vector<int>>();
  for (int i = 0; i < n_test; ++i) test_idx->push_back(i);

  const int batch = spec.batch;
  TaskSource src;
  src.metric = "acc";
  src.train_batch = [=](uint64_t step) {
    // step -> (epoch, offset) over the fixed subset, reshuffled per epoch
    const uint64_t per_epoch = (train_idx->size() + batch - 1) / batch;
    const uint64_t epoch = (step - 1) / per_epoch;
    const uint64_t slot = (step - 1) % per_epoch;
    Rng rng(spec.seed + 0xef0c * (epoch + 1));
    std::vector<int> order = rng.perm(static_cast<int>(train_idx->size()));
    std::vector<int> pick;
    for (uint64_t i = slot * batch; i < std::min<uint64_t>((slot + 1) * batch, order.size()); ++i)
      pick.push_back((*train_idx)[order[i]]);
    return make_sequential(*train_images, *train_labels, pick, permuted ? perm.get() : nullptr);
  };
  src.eval_batch = [=]() {
    return make_sequential(*test_images, *test_labels, *test_idx, permuted ? perm.get() : nullptr);
  };
  return src;
}

}  // namespace

TaskSource make_task_source(const TaskSpec& spec) {
  if (spec.name == "copy_memory") return copy_memory_source(spec);
  if (spec.name == "selective_copy") return selective_copy_source(spec);
  if (spec.name == "mackey_glass") return mackey_glass_source(spec);
  if (spec.name == "smnist") return mnist_source(spec, false);
  if (spec.name == "psmnist") return mnist_source(spec, true);
  throw std::invalid_argument("unknown task: " + spec.name);
}

namespace {

void check_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("unknown " + where + " key: " + it.key());
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
  check_keys(j, {"name", "seed", "batch", "eval_batch", "delay", "prefix_len", "alphabet",
                 "stream_len", "n_tokens", "horizon", "seq_len", "series_len", "data_dir",
                 "train_count", "test_count"},
             "task");
  TaskSpec t;
  t.name = j.at("name").get<std::string>();
  if (j.contains("seed")) t.seed = j["seed"].get<uint64_t>();
  if (j.contains("batch")) t.batch = j["batch"].get<int>();
  if (j.contains("eval_batch")) t.eval_batch = j["eval_batch"].get<int>();
  if (j.contains("delay")) t.delay = j["delay"].get<int>();
  if (j.contains("prefix_len")) t.prefix_len = j["prefix_len"].get<int>();
  if (j.contains("alphabet")) t.alphabet = j["alphabet"].get<int>();
  if (j.contains("stream_len")) t.stream_len = j["stream_len"].get<int>();
  if (j.contains("n_tokens")) t.n_tokens = j["n_tokens"].get<int>();
  if (j.contains("horizon")) t.horizon = j["horizon"].get<int>();
  if (j.contains("seq_len")) t.seq_len = j["seq_len"].get<int>();
  if (j.contains("series_len")) t.series_len = j["series_len"].get<int>();
  if (j.contains("data_dir")) t.data_dir = j["data_dir"].get<std::string>();
  if (j.contains("train_count")) t.train_count = j["train_count"].get<int>();
  if (j.contains("test_count")) t.test_count = j["test_count"].get<int>();
  return t;
}

nlohmann::json task_spec_to_json(const TaskSpec& t) {
  nlohmann::json j;
  j["name"] = t.name;
  j["seed"] = t.seed;
  j["batch"] = t.batch;
  j["eval_batch"] = t.eval_batch;
  if (t.name == "copy_memory") {
    j["delay"] = t.delay;
    j["prefix_len"] = t.prefix_len;
    j["alphabet"] = t.alphabet;
  } else if (t.name == "selective_copy") {
    j["stream_len"] = t.stream_len;
    j["n_tokens"] = t.n_tokens;
    j["alphabet"] = t.alphabet;
  } else if (t.name == "mackey_glass") {
    j["horizon"] = t.horizon;
    j["seq_len"] = t.seq_len;
    j["series_len"] = t.series_len;
  } else {
    j["data_dir"] = t.data_dir;
    j["train_count"] = t.train_count;
    j["test_count"] = t.test_count;
  }
  return j;
}

}  // namespace

ExperimentConfig experiment_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  check_keys(j, {"task", "model", "optim", "budget", "seed", "workers", "out_dir"}, "experiment");
  ExperimentConfig cfg;
  cfg.task = task_spec_from_json(j.at("task"));
  cfg.model = model_config_from_json(j.at("model").dump());
  if (j.contains("optim")) {
    const nlohmann::json& o = j["optim"];
    check_keys(o, {"lr", "beta1", "beta2", "eps", "clip_norm", "gate_weight_decay",
                   "gate_clip_norm"},
               "optim");
    if (o.contains("lr")) cfg.optim.lr = o["lr"].get<double>();
    if (o.contains("beta1")) cfg.optim.beta1 = o["beta1"].get<double>();
    if (o.contains("beta2")) cfg.optim.beta2 = o["beta2"].get<double>();
    if (o.contains("eps")) cfg.optim.eps = o["eps"].get<double>();
    if (o.contains("clip_norm")) cfg.optim.clip_norm = o["clip_norm"].get<double>();
    if (o.contains("gate_weight_decay"))
      cfg.optim.gate_weight_decay = o["gate_weight_decay"].get<double>();
    if (o.contains("gate_clip_norm")) cfg.optim.gate_clip_norm = o["gate_clip_norm"].get<double>();
  }
  if (j.contains("budget")) {
    const nlohmann::json& b = j["budget"];
    check_keys(b, {"steps", "eval_every", "early_stop"}, "budget");
    if (b.contains("steps")) cfg.steps = b["steps"].get<int>();
    if (b.contains("eval_every")) cfg.eval_every = b["eval_every"].get<int>();
    if (b.contains("early_stop")) cfg.early_stop = b["early_stop"].get<double>();
  }
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("workers")) cfg.workers = j["workers"].get<int>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  const auto [din, dout] = task_dims(cfg.task);
  if (cfg.model.input_dim != din || cfg.model.output_dim != dout)
    throw std::invalid_argument("experiment: model dims do not match the task (want " +
                                std::to_string(din) + " -> " + std::to_string(dout) + ")");
  return cfg;
}

std::string experiment_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["task"] = task_spec_to_json(cfg.task);
  j["model"] = nlohmann::json::parse(model_config_to_json(cfg.model));
  j["optim"] = {{"lr", cfg.optim.lr},
                {"beta1", cfg.optim.beta1},
                {"beta2", cfg.optim.beta2},
                {"eps", cfg.optim.eps},
                {"clip_norm", cfg.optim.clip_norm},
                {"gate_weight_decay", cfg.optim.gate_weight_decay},
                {"gate_clip_norm", cfg.optim.gate_clip_norm}};
  j["budget"] = {{"steps", cfg.steps}, {"eval_every", cfg.eval_every}};
  if (cfg.early_stop) j["budget"]["early_stop"] = *cfg.early_stop;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2);
}

std::string experiment_hash(const ExperimentConfig& cfg) {
  return sha256_hex(experiment_to_json(cfg));
}

}  // namespace surnn
