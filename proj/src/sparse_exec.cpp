// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/sparse_exec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "surnn/tensor_io.hpp"

namespace surnn {

namespace {

using clock_t_ = std::chrono::steady_clock;

inline double now_us() {
  return std::chrono::duration<double, std::micro>(clock_t_::now().time_since_epoch()).count();
}

inline float sigmoid_f(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

inline float dot_strict_f(const float* w, const float* v, int n) {
  float acc = 0.0f;
  for (int j = 0; j < n; ++j) acc += w[j] * v[j];
  return acc;
}

// One GRU row, same accumulation order as gru_step: biases, x terms, h terms.
inline void gru_row(const GruParams& p, const Vec& h, const Vec& x, int i, int n, int d,
                    double& r, double& z, double& cand) {
  double pr = p.b_ih[i] + p.b_hh[i];
  dot_strict_into(pr, p.w_ih.row(i), x.data(), d);
  dot_strict_into(pr, p.w_hh.row(i), h.data(), n);
  double pz = p.b_ih[n + i] + p.b_hh[n + i];
  dot_strict_into(pz, p.w_ih.row(n + i), x.data(), d);
  dot_strict_into(pz, p.w_hh.row(n + i), h.data(), n);
  double xpre_n = p.b_ih[2 * n + i];
  dot_strict_into(xpre_n, p.w_ih.row(2 * n + i), x.data(), d);
  double hpre_n = p.b_hh[2 * n + i];
  dot_strict_into(hpre_n, p.w_hh.row(2 * n + i), h.data(), n);
  r = sigmoid(pr);
  z = sigmoid(pz);
  cand = tanh_fast(xpre_n + r * hpre_n);
}

}  // namespace

std::vector<uint8_t> BlockGating::expand(std::span<const uint8_t> block_bits, int hidden) const {
  if (block < 1 || hidden % block != 0)
    throw std::invalid_argument("BlockGating: H must be divisible by block size");
  if (static_cast<int>(block_bits.size()) != hidden / block)
    throw std::invalid_argument("BlockGating: bit count mismatch");
  std::vector<uint8_t> g(hidden);
  for (int i = 0; i < hidden; ++i) g[i] = block_bits[i / block];
  return g;
}

Vec dense_step(const GruParams& p, const Vec& h, const Vec& x, OpCounter* counter) {
  Vec out = gru_step(p, h, x);
  if (counter) {
    const uint64_t per_head =
        static_cast<uint64_t>(p.hidden()) * (p.input_dim() + p.hidden());
    counter->macs_r += per_head;
    counter->macs_z += per_head;
    counter->macs_n += per_head;
    counter->macs_combine += p.hidden();
    counter->active_sizes.push_back(p.hidden());
  }
  return out;
}

Vec sparse_step(const GruParams& p, const Vec& h, const Vec& x, std::span<const uint8_t> g,
                OpCounter* counter) {
  const int n = p.hidden();
  const int d = p.input_dim();
  if (static_cast<int>(g.size()) != n) throw std::invalid_argument("sparse_step: mask length mismatch");
  Vec out = h;  // carry everyone, then overwrite the active rows
  int active = 0;
  for (int i = 0; i < n; ++i) {
    if (!g[i]) continue;
    ++active;
    double r, z, cand;
    gru_row(p, h, x, i, n, d, r, z, cand);
    out[i] = h[i] + z * (cand - h[i]);
  }
  if (counter) {
    const uint64_t per_head = static_cast<uint64_t>(active) * (d + n);
    counter->macs_r += per_head;
    counter->macs_z += per_head;
    counter->macs_n += per_head;
    counter->macs_combine += active;
    counter->rows_gathered += active;
    counter->active_sizes.push_back(active);
  }
  return out;
}

GruParamsF GruParamsF::from(const GruParams& p) {
  GruParamsF f;
  f.hidden = p.hidden();
  f.input_dim = p.input_dim();
  f.w_ih.assign(p.w_ih.data.begin(), p.w_ih.data.end());
  f.w_hh.assign(p.w_hh.data.begin(), p.w_hh.data.end());
  f.b_ih.assign(p.b_ih.begin(), p.b_ih.end());
  f.b_hh.assign(p.b_hh.begin(), p.b_hh.end());
  return f;
}

namespace {

inline void gru_row_f(const GruParamsF& p, const float* h, const float* x, int i,
                      float& r, float& z, float& cand) {
  const int n = p.hidden, d = p.input_dim;
  const float* wri = &p.w_ih[static_cast<size_t>(i) * d];
  const float* wzi = &p.w_ih[static_cast<size_t>(n + i) * d];
  const float* wni = &p.w_ih[static_cast<size_t>(2 * n + i) * d];
  const float* wrh = &p.w_hh[static_cast<size_t>(i) * n];
  const float* wzh = &p.w_hh[static_cast<size_t>(n + i) * n];
  const float* wnh = &p.w_hh[static_cast<size_t>(2 * n + i) * n];
  float pr = p.b_ih[i] + p.b_hh[i];
  pr += dot_strict_f(wri, x, d);
  pr += dot_strict_f(wrh, h, n);
  float pz = p.b_ih[n + i] + p.b_hh[n + i];
  pz += dot_strict_f(wzi, x, d);
  pz += dot_strict_f(wzh, h, n);
  const float xpre_n = p.b_ih[2 * n + i] + dot_strict_f(wni, x, d);
  const float hpre_n = p.b_hh[2 * n + i] + dot_strict_f(wnh, h, n);
  r = sigmoid_f(pr);
  z = sigmoid_f(pz);
  cand = std::tanh(xpre_n + r * hpre_n);
}

}  // namespace

void dense_step_f32(const GruParamsF& p, const float* h, const float* x, float* out,
                    OpCounter* counter) {
  const int n = p.hidden;
  for (int i = 0; i < n; ++i) {
    float r, z, cand;
    gru_row_f(p, h, x, i, r, z, cand);
    out[i] = h[i] + z * (cand - h[i]);
  }
  if (counter) {
    const uint64_t per_head = static_cast<uint64_t>(n) * (p.input_dim + n);
    counter->macs_r += per_head;
    counter->macs_z += per_head;
    counter->macs_n += per_head;
    counter->macs_combine += n;
    counter->active_sizes.push_back(n);
  }
}

void sparse_step_f32(const GruParamsF& p, const float* h, const float* x,
                     std::span<const uint8_t> g, float* out, OpCounter* counter) {
  const int n = p.hidden;
  int active = 0;
  for (int i = 0; i < n; ++i) out[i] = h[i];
  for (int i = 0; i < n; ++i) {
    if (!g[i]) continue;
    ++active;
    float r, z, cand;
    gru_row_f(p, h, x, i, r, z, cand);
    out[i] = h[i] + z * (cand - h[i]);
  }
  if (counter) {
    const uint64_t per_head = static_cast<uint64_t>(active) * (p.input_dim + n);
    counter->macs_r += per_head;
    counter->macs_z += per_head;
    counter->macs_n += per_head;
    counter->macs_combine += active;
    counter->rows_gathered += active;
    counter->active_sizes.push_back(active);
  }
}

namespace {

// Timed per-head f32 run over a full stream; fills per-head microseconds.
// `rows` lists the rows to compute each step (all rows for dense).
void timed_stream_f32(const GruParamsF& p, const std::vector<float>& xs,
                      const std::vector<std::vector<int>>& rows, int steps,
                      double head_us[4], float* h, float* scratch) {
  const int n = p.hidden;
  const int d = p.input_dim;
  float* r_v = scratch;
  float* z_v = scratch + n;
  float* c_v = scratch + 2 * n;
  head_us[0] = head_us[1] = head_us[2] = head_us[3] = 0.0;
  for (int t = 0; t < steps; ++t) {
    const float* x = &xs[static_cast<size_t>(t) * d];
    const std::vector<int>& act = rows[t];
    double t0 = now_us();
    for (int i : act) {
      float pr = p.b_ih[i] + p.b_hh[i];
      pr += dot_strict_f(&p.w_ih[static_cast<size_t>(i) * d], x, d);
      pr += dot_strict_f(&p.w_hh[static_cast<size_t>(i) * n], h, n);
      r_v[i] = sigmoid_f(pr);
    }
    double t1 = now_us();
    for (int i : act) {
      float pz = p.b_ih[n + i] + p.b_hh[n + i];
      pz += dot_strict_f(&p.w_ih[static_cast<size_t>(n + i) * d], x, d);
      pz += dot_strict_f(&p.w_hh[static_cast<size_t>(n + i) * n], h, n);
      z_v[i] = sigmoid_f(pz);
    }
    double t2 = now_us();
    for (int i : act) {
      const float xpre = p.b_ih[2 * n + i] + dot_strict_f(&p.w_ih[static_cast<size_t>(2 * n + i) * d], x, d);
      const float hpre = p.b_hh[2 * n + i] + dot_strict_f(&p.w_hh[static_cast<size_t>(2 * n + i) * n], h, n);
      c_v[i] = std::tanh(xpre + r_v[i] * hpre);
    }
    double t3 = now_us();
    for (int i : act) h[i] = h[i] + z_v[i] * (c_v[i] - h[i]);
    double t4 = now_us();
    head_us[0] += t1 - t0;
    head_us[1] += t2 - t1;
    head_us[2] += t3 - t2;
    head_us[3] += t4 - t3;
  }
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double iqr_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return v[(3 * n) / 4] - v[n / 4];
}

}  // namespace

double BenchResult::mac_ratio() const {
  uint64_t dense = 0, sparse = 0;
  for (const HeadReport& h : heads) {
    dense += h.dense_macs;
    sparse += h.sparse_macs;
  }
  return static_cast<double>(sparse) / static_cast<double>(dense);
}

BenchResult bench(const BenchConfig& cfg) {
  if (cfg.repeats < 5) throw std::invalid_argument("bench: need repeats >= 5");
  if (cfg.mode != "f32" && cfg.mode != "f64") throw std::invalid_argument("bench: mode must be f32 or f64");
  const int n = cfg.hidden;
  const int d = cfg.input_dim;
  Rng rng(cfg.seed);
  GruParams p = GruParams::init(n, d, rng);
  GruParamsF pf = GruParamsF::from(p);

  // Per-step block masks at the requested sparsity, frozen for all repeats.
  BlockGating blocks{cfg.block};
  const int nblocks = n / cfg.block;
  std::vector<std::vector<int>> sparse_rows(cfg.steps);
  std::vector<std::vector<int>> dense_rows(cfg.steps);
  std::vector<std::vector<uint8_t>> masks(cfg.steps);
  uint64_t active_total = 0;
  for (int t = 0; t < cfg.steps; ++t) {
    std::vector<uint8_t> bits(nblocks);
    for (int bidx = 0; bidx < nblocks; ++bidx)
      bits[bidx] = rng.uniform01() < (1.0 - cfg.sparsity) ? 1 : 0;
    masks[t] = blocks.expand(bits, n);
    dense_rows[t].resize(n);
    for (int i = 0; i < n; ++i) dense_rows[t][i] = i;
    for (int i = 0; i < n; ++i)
      if (masks[t][i]) sparse_rows[t].push_back(i);
    active_total += sparse_rows[t].size();
  }

  std::vector<float> xs(static_cast<size_t>(cfg.steps) * d);
  for (float& v : xs) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  BenchResult out;
  out.cfg = cfg;
  out.measured_sparsity = 1.0 - static_cast<double>(active_total) / (static_cast<double>(cfg.steps) * n);

  // MAC counters (exact, mode-independent).
  const uint64_t dense_head = static_cast<uint64_t>(cfg.steps) * n * (d + n);
  const uint64_t sparse_head = active_total * static_cast<uint64_t>(d + n);
  const char* names[4] = {"reset", "update", "candidate", "combine"};
  uint64_t dense_macs[4] = {dense_head, dense_head, dense_head, static_cast<uint64_t>(cfg.steps) * n};
  uint64_t sparse_macs[4] = {sparse_head, sparse_head, sparse_head, active_total};

  std::vector<double> dense_totals, sparse_totals;
  std::vector<std::vector<double>> dense_head_us(4), sparse_head_us(4);
  std::vector<float> h(n), scratch(3 * n);
  double head_us[4];

  // f64 timing reuses the double kernels through the same row lists.
  Vec h64(n), x64(d);
  auto timed_stream_f64 = [&](const std::vector<std::vector<int>>& rows, double us[4]) {
    us[0] = us[1] = us[2] = us[3] = 0.0;
    std::fill(h64.begin(), h64.end(), 0.0);
    Vec r_v(n), z_v(n), c_v(n);
    for (int t = 0; t < cfg.steps; ++t) {
      for (int k = 0; k < d; ++k) x64[k] = xs[static_cast<size_t>(t) * d + k];
      double t0 = now_us();
      for (int i : rows[t]) {
        double pr = p.b_ih[i] + p.b_hh[i];
        dot_strict_into(pr, p.w_ih.row(i), x64.data(), d);
        dot_strict_into(pr, p.w_hh.row(i), h64.data(), n);
        r_v[i] = sigmoid(pr);
      }
      double t1 = now_us();
      for (int i : rows[t]) {
        double pz = p.b_ih[n + i] + p.b_hh[n + i];
        dot_strict_into(pz, p.w_ih.row(n + i), x64.data(), d);
        dot_strict_into(pz, p.w_hh.row(n + i), h64.data(), n);
        z_v[i] = sigmoid(pz);
      }
      double t2 = now_us();
      for (int i : rows[t]) {
        double xpre = p.b_ih[2 * n + i];
        dot_strict_into(xpre, p.w_ih.row(2 * n + i), x64.data(), d);
        double hpre = p.b_hh[2 * n + i];
        dot_strict_into(hpre, p.w_hh.row(2 * n + i), h64.data(), n);
        c_v[i] = tanh_fast(xpre + r_v[i] * hpre);
      }
      double t3 = now_us();
      for (int i : rows[t]) h64[i] = h64[i] + z_v[i] * (c_v[i] - h64[i]);
      double t4 = now_us();
      us[0] += t1 - t0;
      us[1] += t2 - t1;
      us[2] += t3 - t2;
      us[3] += t4 - t3;
    }
  };

  for (int rep = 0; rep < cfg.repeats; ++rep) {
    std::fill(h.begin(), h.end(), 0.0f);
    if (cfg.mode == "f32")
      timed_stream_f32(pf, xs, dense_rows, cfg.steps, head_us, h.data(), scratch.data());
    else
      timed_stream_f64(dense_rows, head_us);
    double total = 0;
    for (int k = 0; k < 4; ++k) {
      dense_head_us[k].push_back(head_us[k] / cfg.steps);
      total += head_us[k];
    }
    dense_totals.push_back(total / cfg.steps);

    std::fill(h.begin(), h.end(), 0.0f);
    if (cfg.mode == "f32")
      timed_stream_f32(pf, xs, sparse_rows, cfg.steps, head_us, h.data(), scratch.data());
    else
      timed_stream_f64(sparse_rows, head_us);
    total = 0;
    for (int k = 0; k < 4; ++k) {
      sparse_head_us[k].push_back(head_us[k] / cfg.steps);
      total += head_us[k];
    }
    sparse_totals.push_back(total / cfg.steps);
  }

  out.dense_median_us = median_of(dense_totals);
  out.dense_iqr_us = iqr_of(dense_totals);
  out.sparse_median_us = median_of(sparse_totals);
  out.sparse_iqr_us = iqr_of(sparse_totals);
  for (int k = 0; k < 4; ++k) {
    HeadReport hr;
    hr.head = names[k];
    hr.dense_macs = dense_macs[k];
    hr.sparse_macs = sparse_macs[k];
    hr.dense_median_us = median_of(dense_head_us[k]);
    hr.dense_iqr_us = iqr_of(dense_head_us[k]);
    hr.sparse_median_us = median_of(sparse_head_us[k]);
    hr.sparse_iqr_us = iqr_of(sparse_head_us[k]);
    out.heads.push_back(hr);
  }
  return out;
}

void write_bench_csv(const BenchResult& r, const std::string& path, const std::string& provenance) {
  CsvWriter csv(path, "mode,H,D,T,sparsity,head,macs,median_us,iqr_us", provenance);
  char buf[256];
  for (const HeadReport& h : r.heads) {
    std::snprintf(buf, sizeof(buf), "dense-%s,%d,%d,%d,%.4f,%s,%llu,%.3f,%.3f", r.cfg.mode.c_str(),
                  r.cfg.hidden, r.cfg.input_dim, r.cfg.steps, r.cfg.sparsity, h.head.c_str(),
                  static_cast<unsigned long long>(h.dense_macs), h.dense_median_us, h.dense_iqr_us);
    csv.row(buf);
    std::snprintf(buf, sizeof(buf), "sparse-%s,%d,%d,%d,%.4f,%s,%llu,%.3f,%.3f", r.cfg.mode.c_str(),
                  r.cfg.hidden, r.cfg.input_dim, r.cfg.steps, r.cfg.sparsity, h.head.c_str(),
                  static_cast<unsigned long long>(h.sparse_macs), h.sparse_median_us, h.sparse_iqr_us);
    csv.row(buf);
  }
}

}  // namespace surnn
