// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace surnn {

size_t TaskBatch::mask_count() const {
  size_t n = 0;
  for (uint8_t m : loss_mask) n += m;
  return n;
}

TaskBatch gen_copy_memory(Rng& rng, int batch, int prefix_len, int alphabet, int delay) {
  if (batch < 1 || prefix_len < 1 || alphabet < 2 || delay < 0)
    throw std::invalid_argument("gen_copy_memory: bad config");
  const int steps = prefix_len + delay + 1 + prefix_len;
  const int d = alphabet + 2;  // blank, symbols 1..alphabet, delimiter
  const int delim = alphabet + 1;
  TaskBatch tb;
  tb.batch = batch;
  tb.steps = steps;
  tb.input_dim = d;
  tb.num_classes = alphabet;
  tb.inputs.assign(static_cast<size_t>(batch) * steps * d, 0.0);
  tb.targets.assign(static_cast<size_t>(batch) * steps, 0.0);
  tb.loss_mask.assign(static_cast<size_t>(batch) * steps, 0);
  for (int b = 0; b < batch; ++b) {
    std::vector<int> prefix(prefix_len);
    for (int& s : prefix) s = 1 + static_cast<int>(rng.next_u64() % alphabet);
    for (int t = 0; t < steps; ++t) {
      int token = 0;
      if (t < prefix_len) token = prefix[t];
      else if (t == prefix_len + delay) token = delim;
      tb.inputs[(static_cast<size_t>(b) * steps + t) * d + token] = 1.0;
    }
    for (int k = 0; k < prefix_len; ++k) {
      const int t = steps - prefix_len + k;
      tb.targets[static_cast<size_t>(b) * steps + t] = prefix[k] - 1;
      tb.loss_mask[static_cast<size_t>(b) * steps + t] = 1;
    }
  }
  return tb;
}

TaskBatch gen_selective_copy(Rng& rng, int batch, int n_tokens, int steps, int alphabet) {
  if (n_tokens >= steps) throw std::invalid_argument("gen_selective_copy: need n_tokens < T");
  if (batch < 1 || n_tokens < 1 || alphabet < 2)
    throw std::invalid_argument("gen_selective_copy: bad config");
  const int total = steps + n_tokens;
  const int d = alphabet + 2;  // one-hot symbol, mark flag, recall flag
  TaskBatch tb;
  tb.batch = batch;
  tb.steps = total;
  tb.input_dim = d;
  tb.num_classes = alphabet;
  tb.inputs.assign(static_cast<size_t>(batch) * total * d, 0.0);
  tb.targets.assign(static_cast<size_t>(batch) * total, 0.0);
  tb.loss_mask.assign(static_cast<size_t>(batch) * total, 0);
  for (int b = 0; b < batch; ++b) {
    // n_tokens distinct positions, ascending.
    std::vector<int> pos = rng.perm(steps);
    pos.resize(n_tokens);
    std::sort(pos.begin(), pos.end());
    for (int k = 0; k < n_tokens; ++k) {
      const int sym = static_cast<int>(rng.next_u64() % alphabet);
      double* in = &tb.inputs[(static_cast<size_t>(b) * total + pos[k]) * d];
      in[sym] = 1.0;
      in[alphabet] = 1.0;  // mark channel
      const int t_out = steps + k;
      tb.targets[static_cast<size_t>(b) * total + t_out] = sym;
      tb.loss_mask[static_cast<size_t>(b) * total + t_out] = 1;
    }
    for (int t = steps; t < total; ++t)
      tb.inputs[(static_cast<size_t>(b) * total + t) * d + alphabet + 1] = 1.0;  // recall flag
  }
  return tb;
}

namespace {

// Linear interpolation over the dt grid; idx may address the pre-history
// region, which is clamped to the constant initial state.
inline double mg_delayed(const std::vector<double>& grid, double hist, double pos) {
  if (pos <= 0.0) return hist;
  const int i0 = static_cast<int>(pos);
  const double frac = pos - i0;
  if (i0 + 1 >= static_cast<int>(grid.size()))
    return grid[i0];
  return (1.0 - frac) * grid[i0] + frac * grid[i0 + 1];
}

}  // namespace

MgSeries gen_mackey_glass(const MgConfig& cfg, int length, int warmup, bool normalize) {
  if (length < 1 || warmup < 0) throw std::invalid_argument("gen_mackey_glass: bad length");
  if (!(cfg.tau >= cfg.dt) || !(cfg.dt > 0))
    throw std::invalid_argument("gen_mackey_glass: need tau >= dt > 0");
  const int total = warmup + length;
  std::vector<double> grid;
  grid.reserve(total + 1);
  grid.push_back(cfg.history);  // x at t = 0

  auto deriv = [&](double t, double x) {
    const double pos = (t - cfg.tau) / cfg.dt;
    const double xd = mg_delayed(grid, cfg.history, pos);
    const double xn = std::pow(xd, cfg.n);
    return cfg.beta * xd / (1.0 + xn) - cfg.gamma * x;
  };

  for (int j = 0; j < total; ++j) {
    const double t = j * cfg.dt;
    const double x = grid.back();
    const double k1 = deriv(t, x);
    const double k2 = deriv(t + 0.5 * cfg.dt, x + 0.5 * cfg.dt * k1);
    const double k3 = deriv(t + 0.5 * cfg.dt, x + 0.5 * cfg.dt * k2);
    const double k4 = deriv(t + cfg.dt, x + cfg.dt * k3);
    grid.push_back(x + cfg.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  }

  MgSeries out;
  out.x.assign(grid.begin() + warmup + 1, grid.end());
  if (normalize) {
    double mean = 0;
    for (double v : out.x) mean += v;
    mean /= out.x.size();
    double var = 0;
    for (double v : out.x) var += (v - mean) * (v - mean);
    var /= out.x.size();
    const double sd = var > 0 ? std::sqrt(var) : 1.0;
    for (double& v : out.x) v = (v - mean) / sd;
    out.mean = mean;
    out.stddev = sd;
  }
  return out;
}

TaskBatch mg_batch(const MgSeries& series, Rng& rng, int batch, int steps, int horizon) {
  if (horizon < 1 || steps < 1) throw std::invalid_argument("mg_batch: bad config");
  const int len = static_cast<int>(series.x.size());
  const int span = steps + horizon;
  if (span >= len) throw std::invalid_argument("mg_batch: series too short");
  TaskBatch tb;
  tb.batch = batch;
  tb.steps = steps;
  tb.input_dim = 1;
  tb.num_classes = 0;
  tb.inputs.resize(static_cast<size_t>(batch) * steps);
  tb.targets.resize(static_cast<size_t>(batch) * steps);
  tb.loss_mask.assign(static_cast<size_t>(batch) * steps, 1);
  for (int b = 0; b < batch; ++b) {
    const int start = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(len - span));
    for (int t = 0; t < steps; ++t) {
      tb.inputs[static_cast<size_t>(b) * steps + t] = series.x[start + t];
      tb.targets[static_cast<size_t>(b) * steps + t] = series.x[start + t + horizon];
    }
  }
  return tb;
}

namespace {

uint32_t read_be32(std::FILE* f, const std::string& path, long offset) {
  unsigned char w[4];
  if (std::fread(w, 1, 4, f) != 4)
    throw std::runtime_error(path + ": truncated at byte offset " + std::to_string(offset));
  return (uint32_t(w[0]) << 24) | (uint32_t(w[1]) << 16) | (uint32_t(w[2]) << 8) | uint32_t(w[3]);
}

}  // namespace

IdxImages load_idx_images(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("load_idx_images: cannot open " + path);
  IdxImages out;
  try {
    const uint32_t magic = read_be32(f, path, 0);
    if (magic != 0x00000803u)
      throw std::runtime_error(path + ": bad image magic at byte offset 0 (got " +
                               std::to_string(magic) + ", want 2051)");
    out.count = static_cast<int>(read_be32(f, path, 4));
    out.rows = static_cast<int>(read_be32(f, path, 8));
    out.cols = static_cast<int>(read_be32(f, path, 12));
    if (out.count < 1 || out.rows < 1 || out.cols < 1)
      throw std::runtime_error(path + ": bad shape in header (byte offsets 4-15)");
    const size_t n = static_cast<size_t>(out.count) * out.rows * out.cols;
    out.pixels.resize(n);
    if (std::fread(out.pixels.data(), 1, n, f) != n)
      throw std::runtime_error(path + ": truncated pixel payload at byte offset 16");
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  return out;
}

IdxLabels load_idx_labels(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("load_idx_labels: cannot open " + path);
  IdxLabels out;
  try {
    const uint32_t magic = read_be32(f, path, 0);
    if (magic != 0x00000801u)
      throw std::runtime_error(path + ": bad label magic at byte offset 0 (got " +
                               std::to_string(magic) + ", want 2049)");
    out.count = static_cast<int>(read_be32(f, path, 4));
    if (out.count < 1) throw std::runtime_error(path + ": bad count at byte offset 4");
    out.labels.resize(out.count);
    if (std::fread(out.labels.data(), 1, out.count, f) != static_cast<size_t>(out.count))
      throw std::runtime_error(path + ": truncated label payload at byte offset 8");
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  return out;
}

TaskBatch make_sequential(const IdxImages& images, const IdxLabels& labels,
                          const std::vector<int>& indices, const std::vector<int>* permutation) {
  if (images.count != labels.count)
    throw std::invalid_argument("make_sequential: image/label count mismatch");
  const int steps = images.rows * images.cols;
  if (permutation && static_cast<int>(permutation->size()) != steps)
    throw std::invalid_argument("make_sequential: permutation length mismatch");
  TaskBatch tb;
  tb.batch = static_cast<int>(indices.size());
  tb.steps = steps;
  tb.input_dim = 1;
  tb.num_classes = 10;
  tb.inputs.resize(static_cast<size_t>(tb.batch) * steps);
  tb.targets.assign(static_cast<size_t>(tb.batch) * steps, 0.0);
  tb.loss_mask.assign(static_cast<size_t>(tb.batch) * steps, 0);
  for (int b = 0; b < tb.batch; ++b) {
    const int idx = indices[b];
    if (idx < 0 || idx >= images.count)
      throw std::invalid_argument("make_sequential: index out of range");
    const uint8_t* img = images.pixels.data() + static_cast<size_t>(idx) * steps;
    for (int t = 0; t < steps; ++t) {
      const int src = permutation ? (*permutation)[t] : t;
      tb.inputs[static_cast<size_t>(b) * steps + t] = img[src] / 255.0;
    }
    tb.targets[static_cast<size_t>(b) * steps + steps - 1] = labels.labels[idx];
    tb.loss_mask[static_cast<size_t>(b) * steps + steps - 1] = 1;
  }
  return tb;
}

std::vector<int> psmnist_permutation(int length) {
  Rng rng(42);
  return rng.perm(length);
}

}  // namespace surnn
