// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Experiment driver: dataset generation, training, the sparse-executor
// benchmark, diagnostics, gradient certification, and the MNIST fetch
// helper. Exit codes: 0 ok, 1 usage, 2 I/O failure, 3 numeric abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "surnn/diagnostics.hpp"
#include "surnn/engine.hpp"
#include "surnn/experiments.hpp"
#include "surnn/gradcheck.hpp"
#include "surnn/sha256.hpp"
#include "surnn/sparse_exec.hpp"
#include "surnn/tensor_io.hpp"

// httplib pulled in only for fetch-mnist
#define CPPHTTPLIB_OPENSSL_SUPPORT_DISABLED
#include "httplib.h"

#include <zlib.h>

namespace fs = std::filesystem;
using namespace surnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

void write_task_tensors(const TaskBatch& tb, const std::string& dir, const std::string& hash) {
  fs::create_directories(dir);
  write_tensor(dir + "/inputs.bin",
               {tb.batch, tb.steps, tb.input_dim}, tb.inputs.data(), tb.inputs.size(), hash);
  write_tensor(dir + "/targets.bin", {tb.batch, tb.steps}, tb.targets.data(), tb.targets.size(),
               hash);
  Vec mask(tb.loss_mask.begin(), tb.loss_mask.end());
  write_tensor(dir + "/loss_mask.bin", {tb.batch, tb.steps}, mask.data(), mask.size(), hash);
}

int cmd_gen(const TaskSpec& spec, const std::string& out_dir) {
  TaskSource src = make_task_source(spec);
  TaskBatch train = src.train_batch(1);
  TaskBatch eval = src.eval_batch();
  nlohmann::json manifest;
  manifest["task"] = spec.name;
  manifest["seed"] = spec.seed;
  nlohmann::json dims;
  dims["batch"] = train.batch;
  dims["steps"] = train.steps;
  dims["input_dim"] = train.input_dim;
  dims["num_classes"] = train.num_classes;
  manifest["dims"] = dims;
  const std::string hash = sha256_hex(manifest.dump());
  manifest["config_hash"] = hash;
  try {
    write_task_tensors(train, out_dir + "/train", hash);
    write_task_tensors(eval, out_dir + "/eval", hash);
    std::ofstream mf(out_dir + "/manifest.json");
    if (!mf) throw std::runtime_error("cannot write manifest");
    mf << manifest.dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "gen: " << e.what() << "\n";
    return kExitIo;
  }
  std::cout << "wrote " << out_dir << " (config_hash " << hash.substr(0, 12) << ")\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_override, int workers_override,
              int64_t seed_override, bool verbose) {
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "train: cannot open config " << config_path << "\n";
    return kExitIo;
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ExperimentConfig cfg = experiment_from_json(text);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (workers_override > 0) cfg.workers = workers_override;
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  const std::string hash = experiment_hash(cfg);

  Model model = Model::init(cfg.model, cfg.seed);
  TaskSource task = make_task_source(cfg.task);
  TrainOptions opts;
  opts.steps = cfg.steps;
  opts.eval_every = cfg.eval_every;
  opts.adam = cfg.optim;
  opts.seed = cfg.seed;
  opts.workers = cfg.workers;
  opts.early_stop = cfg.early_stop;
  opts.out_dir = cfg.out_dir;
  opts.config_hash = hash;
  opts.verbose = verbose;
  try {
    TrainResult res = train(model, task, opts);
    std::cout << "best " << task.metric << " " << res.best_eval << " at step " << res.best_step
              << " (" << res.steps_run << " steps run, config_hash " << hash.substr(0, 12)
              << ")\n";
  } catch (const NumericAbort& e) {
    std::cerr << "train: " << e.what() << "\n";
    if (!cfg.out_dir.empty()) std::cerr << "diagnostic dump under " << cfg.out_dir << "/abort\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_bench(const BenchConfig& cfg, const std::string& out_csv) {
  BenchResult r = bench(cfg);
  char line[256];
  std::snprintf(line, sizeof(line),
                "dense %.1f us/step, sparse %.1f us/step, wall ratio %.3f, mac ratio %.3f "
                "(measured sparsity %.3f)",
                r.dense_median_us, r.sparse_median_us, r.wall_ratio(), r.mac_ratio(),
                r.measured_sparsity);
  std::cout << line << "\n";
  if (!out_csv.empty()) {
    try {
      write_bench_csv(r, out_csv, "mode=" + cfg.mode);
    } catch (const std::exception& e) {
      std::cerr << "bench: " << e.what() << "\n";
      return kExitIo;
    }
    std::cout << "wrote " << out_csv << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(uint64_t seed) {
  GradCheckOptions opts;
  opts.seed = seed;
  std::vector<GradCheckCase> cases = run_gradcheck(opts);
  bool ok = true;
  for (const GradCheckCase& c : cases) {
    std::printf("%-16s max_rel_err %.3e  gate_rel_err %.3e  ste_rel_err %.3f  %s\n",
                c.tag.c_str(), c.max_rel_err, c.gate_rel_err, c.ste_rel_err,
                c.pass ? "PASS" : "FAIL");
    ok = ok && c.pass;
  }
  return ok ? kExitOk : kExitUsage;
}

bool gunzip_file(const std::string& gz_path, const std::string& out_path) {
  gzFile gz = gzopen(gz_path.c_str(), "rb");
  if (!gz) return false;
  std::FILE* out = std::fopen(out_path.c_str(), "wb");
  if (!out) {
    gzclose(gz);
    return false;
  }
  char buf[1 << 16];
  int got;
  while ((got = gzread(gz, buf, sizeof(buf))) > 0) std::fwrite(buf, 1, got, out);
  std::fclose(out);
  gzclose(gz);
  return got == 0;
}

int cmd_fetch_mnist(const std::string& out_dir, const std::string& host,
                    const std::map<std::string, std::string>& expected, bool skip_verify) {
  const char* files[4] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                          "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  fs::create_directories(out_dir);
  httplib::Client client(host);
  client.set_follow_location(true);
  client.set_connection_timeout(20);
  for (const char* name : files) {
    const std::string target = out_dir + "/" + name;
    if (fs::exists(target)) {
      std::cout << name << ": already present\n";
    } else {
      const std::string url = "/mnist/" + std::string(name) + ".gz";
      std::cout << "fetching " << host << url << "\n";
      auto res = client.Get(url);
      if (!res || res->status != 200) {
        std::cerr << "fetch-mnist: download failed for " << name << " (no network?)\n";
        return kExitIo;
      }
      const std::string gz = target + ".gz";
      std::ofstream out(gz, std::ios::binary);
      out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
      out.close();
      if (!gunzip_file(gz, target)) {
        std::cerr << "fetch-mnist: cannot decompress " << gz << "\n";
        return kExitIo;
      }
      fs::remove(gz);
    }
    const std::string digest = sha256_file(target);
    auto it = expected.find(name);
    if (it != expected.end()) {
      if (digest != it->second) {
        std::cerr << "fetch-mnist: SHA-256 mismatch for " << name << "\n  got      " << digest
                  << "\n  expected " << it->second << "\n";
        return kExitIo;
      }
      std::cout << name << ": sha256 verified\n";
    } else if (!skip_verify) {
      std::cout << name << ": sha256 " << digest << " (no pin supplied; pass --expect to verify)\n";
    }
  }
  // structural validation
  try {
    IdxImages tr = load_idx_images(out_dir + "/train-images-idx3-ubyte");
    IdxLabels trl = load_idx_labels(out_dir + "/train-labels-idx1-ubyte");
    IdxImages te = load_idx_images(out_dir + "/t10k-images-idx3-ubyte");
    IdxLabels tel = load_idx_labels(out_dir + "/t10k-labels-idx1-ubyte");
    std::cout << "train " << tr.count << "x" << tr.rows << "x" << tr.cols << ", test " << te.count
              << "; labels " << trl.count << "/" << tel.count << "\n";
  } catch (const std::exception& e) {
    std::cerr << "fetch-mnist: structural validation failed: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

int cmd_diag(const std::string& kind, const std::string& out_dir, uint64_t seed) {
  fs::create_directories(out_dir);
  if (kind == "depthfit") {
    std::vector<double> grid;
    for (double p = 0.2; p <= 1.0001; p += 0.1) grid.push_back(p);
    DepthFit fit = fit_effective_depth(32, 0.9, grid, 200, seed, 3);
    write_depth_csv(fit, out_dir + "/depthfit.csv");
    std::printf("slope %.5f (target %.5f, r2 %.4f) -> %s\n", fit.slope, fit.target, fit.r2,
                fit.within(0.05) ? "within 0.05" : "OUTSIDE 0.05");
    return kExitOk;
  }
  if (kind == "gradprofile") {
    ModelConfig dense_cfg;
    dense_cfg.input_dim = 10;
    dense_cfg.output_dim = 8;
    dense_cfg.max_seq_len = 1024;
    LayerSpec spec;
    spec.kind = LayerKind::Rnn;
    spec.hidden = 64;
    dense_cfg.layers = {spec};
    Model dense = Model::init(dense_cfg, seed);
    spectral_scale(dense.layers[0].rnn, 0.9);

    ModelConfig su_cfg = dense_cfg;
    su_cfg.layers[0].kind = LayerKind::SuRnn;
    su_cfg.layers[0].gate.schedule = "fixed_random_bernoulli";
    su_cfg.layers[0].gate.p = 0.2;
    su_cfg.layers[0].gate.seed = seed + 1;
    Model su = Model::init(su_cfg, seed);
    spectral_scale(su.layers[0].rnn, 0.9);

    TraceBundle bundle = run_grad_profile({{"rnn-dense", dense}, {"su-rnn", su}},
                                          {100, 200, 500}, seed);
    write_trace_csv(bundle, out_dir + "/gradprofile.csv");
    std::cout << "wrote " << out_dir << "/gradprofile.csv\n";
    return kExitOk;
  }
  if (kind == "retention") {
    RetentionSpec spec{100, 0.01, 0.0};
    const double c = retention_bound_c(spec);
    Rng rng(seed);
    OnePassGru model = OnePassGru::init(16, 4, c, rng);
    for (int i = 0; i < 16; ++i) model.gru.b_ih[16 + i] = -1.0;
    const int t_len = 400;
    std::vector<Vec> xs(t_len, Vec(4, 0.1));
    std::vector<std::vector<uint8_t>> gates(t_len);
    for (int t = 0; t < t_len; ++t) gates[t].assign(16, (t / 100) % 2 ? 1 : 0);
    RetentionReport rep = audit_retention(model, xs, gates, spec);
    CsvWriter csv(out_dir + "/retention.csv", "neuron,start,len,min_margin,product,violates");
    char buf[160];
    for (const CarryRun& r : rep.runs) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.8g,%.8g,%d", r.neuron, r.start, r.len,
                    r.min_margin, r.product, r.violates ? 1 : 0);
      csv.row(buf);
    }
    std::printf("C %.4f, %zu carry runs, %d violations\n", c, rep.runs.size(), rep.violations);
    return kExitOk;
  }
  std::cerr << "diag: unknown kind " << kind << " (want depthfit|gradprofile|retention)\n";
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective-update recurrent network laboratory"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a dataset to tensor files");
  TaskSpec gen_spec;
  std::string gen_out = "data/generated";
  gen->add_option("--task", gen_spec.name, "copy_memory|selective_copy|mackey_glass")->required();
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_spec.seed);
  gen->add_option("--batch", gen_spec.batch);
  gen->add_option("--eval-batch", gen_spec.eval_batch);
  gen->add_option("--delay", gen_spec.delay);
  gen->add_option("--stream-len", gen_spec.stream_len);
  gen->add_option("--tokens", gen_spec.n_tokens);
  gen->add_option("--horizon", gen_spec.horizon);
  gen->add_option("--seq-len", gen_spec.seq_len);

  // train
  auto* tr = app.add_subcommand("train", "train from a JSON experiment config");
  std::string cfg_path, out_override;
  int workers = 0;
  int64_t seed_override = -1;
  bool verbose = false;
  tr->add_option("--config", cfg_path, "experiment JSON")->required();
  tr->add_option("--out", out_override, "override output directory");
  tr->add_option("--workers", workers, "data-parallel workers");
  tr->add_option("--seed", seed_override, "override seed");
  tr->add_flag("--verbose", verbose);

  // bench
  auto* be = app.add_subcommand("bench", "dense vs mask-aware step latency");
  BenchConfig bench_cfg;
  std::string bench_csv;
  be->add_option("--mode", bench_cfg.mode, "f32|f64");
  be->add_option("--hidden", bench_cfg.hidden);
  be->add_option("--input-dim", bench_cfg.input_dim);
  be->add_option("--steps", bench_cfg.steps);
  be->add_option("--sparsity", bench_cfg.sparsity);
  be->add_option("--repeats", bench_cfg.repeats);
  be->add_option("--block", bench_cfg.block);
  be->add_option("--seed", bench_cfg.seed);
  be->add_option("--out", bench_csv, "CSV path");

  // diag
  auto* di = app.add_subcommand("diag", "theory-verification dumps");
  std::string diag_kind, diag_out = "diag_out";
  uint64_t diag_seed = 1;
  di->add_option("--kind", diag_kind, "depthfit|gradprofile|retention")->required();
  di->add_option("--out", diag_out);
  di->add_option("--seed", diag_seed);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference certification");
  uint64_t gc_seed = 1;
  gc->add_option("--seed", gc_seed);

  // fetch-mnist
  auto* fm = app.add_subcommand("fetch-mnist", "download the four IDX files");
  std::string mnist_out = "data/mnist";
  std::string mnist_host = "https://ossci-datasets.s3.amazonaws.com";
  std::vector<std::string> expect_args;
  bool skip_verify = false;
  fm->add_option("--out", mnist_out);
  fm->add_option("--host", mnist_host, "mirror base URL");
  fm->add_option("--expect", expect_args, "name=sha256 pins (repeatable)");
  fm->add_flag("--skip-verify", skip_verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_spec, gen_out);
    if (tr->parsed()) return cmd_train(cfg_path, out_override, workers, seed_override, verbose);
    if (be->parsed()) return cmd_bench(bench_cfg, bench_csv);
    if (di->parsed()) return cmd_diag(diag_kind, diag_out, diag_seed);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
    if (fm->parsed()) {
      std::map<std::string, std::string> expected;
      for (const std::string& e : expect_args) {
        const size_t eq = e.find('=');
        if (eq == std::string::npos) {
          std::cerr << "fetch-mnist: --expect wants name=sha256\n";
          return kExitUsage;
        }
        expected[e.substr(0, eq)] = e.substr(eq + 1);
      }
      return cmd_fetch_mnist(mnist_out, mnist_host, expected, skip_verify);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
