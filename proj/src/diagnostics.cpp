// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "surnn/engine.hpp"
#include "surnn/tensor_io.hpp"

namespace surnn {

void spectral_scale(RnnParams& p, double rho, int iters) {
  const double sigma = spectral_norm(p.w_hh, iters);
  if (sigma <= 0.0) throw std::runtime_error("spectral_scale: zero matrix");
  const double s = rho / sigma;
  for (double& x : p.w_hh.data) x *= s;
}

TraceBundle run_grad_profile(const std::vector<std::pair<std::string, Model>>& models,
                             const std::vector<int>& delays, uint64_t seed) {
  TraceBundle bundle;
  for (int delay : delays) {
    Rng rng(seed + static_cast<uint64_t>(delay));
    TaskBatch tb = gen_copy_memory(rng, 1, 10, 8, delay);
    for (const auto& [tag, model] : models) {
      RefForward fwd = model_forward_reference(model, tb, 0, GateMode::Hard);
      RefBackward bwd = model_backward_reference(model, tb, 0, fwd);
      TraceSeries ts;
      ts.model_tag = tag;
      ts.delay = delay;
      ts.norms = bwd.adjoint_norms;
      ts.update_rate = bwd.reports.front().update_rate;
      bundle.series.push_back(std::move(ts));
    }
  }
  return bundle;
}

void write_trace_csv(const TraceBundle& bundle, const std::string& path,
                     const std::string& provenance) {
  CsvWriter csv(path, "model,delay,t,adjoint_norm", provenance);
  char buf[160];
  for (const TraceSeries& ts : bundle.series)
    for (size_t t = 0; t < ts.norms.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%s,%d,%zu,%.17g", ts.model_tag.c_str(), ts.delay, t + 1,
                    ts.norms[t]);
      csv.row(buf);
    }
}

DepthFit fit_effective_depth(int hidden, double rho, const std::vector<double>& p_grid,
                             int steps, uint64_t seed, int trials_per_p) {
  if (p_grid.size() < 2) throw std::invalid_argument("fit_effective_depth: need a p grid");
  Rng rng(seed);
  RnnParams p = RnnParams::init(hidden, 1, rng);
  spectral_scale(p, rho);
  // Zero input and state keeps tanh' at 1, so the backbone Jacobian is
  // exactly w_hh at every step.
  DepthFit fit;
  fit.target = std::log(rho);
  for (double pr : p_grid) {
    if (pr <= 0.0) continue;  // identity product, log 0/0 sample excluded
    double acc = 0.0;
    for (int trial = 0; trial < trials_per_p; ++trial) {
      Rng mr = rng.split(static_cast<uint64_t>(pr * 1e6) + trial);
      Mat prod = identity(hidden);
      for (int t = 0; t < steps; ++t) {
        Mat j = identity(hidden);
        for (int i = 0; i < hidden; ++i) {
          if (mr.uniform01() < pr) {
            for (int k = 0; k < hidden; ++k) j(i, k) = p.w_hh(i, k);
          }
        }
        prod = matmul(j, prod);
      }
      acc += std::log(spectral_norm(prod, 30));
    }
    fit.samples.emplace_back(pr * steps, acc / trials_per_p);
  }
  if (fit.samples.size() < 2) throw std::runtime_error("fit_effective_depth: degenerate grid");

  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  const double n = static_cast<double>(fit.samples.size());
  for (auto& [x, y] : fit.samples) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  const double varx = sxx - sx * sx / n;
  if (varx <= 0.0) throw std::runtime_error("fit_effective_depth: zero variance in p*T");
  fit.slope = (sxy - sx * sy / n) / varx;
  fit.intercept = (sy - fit.slope * sx) / n;
  const double vary = syy - sy * sy / n;
  fit.r2 = vary > 0 ? (fit.slope * fit.slope * varx) / vary : 1.0;
  return fit;
}

void write_depth_csv(const DepthFit& fit, const std::string& path, const std::string& provenance) {
  char head[160];
  std::snprintf(head, sizeof(head), "slope=%.8g intercept=%.8g r2=%.6g target=%.8g",
                fit.slope, fit.intercept, fit.r2, fit.target);
  CsvWriter csv(path, "pT,log_norm", provenance.empty() ? head : provenance + " " + head);
  char buf[96];
  for (auto& [x, y] : fit.samples) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g", x, y);
    csv.row(buf);
  }
}

RetentionReport audit_retention(const OnePassGru& model, const std::vector<Vec>& xs,
                                const std::vector<std::vector<uint8_t>>& gates,
                                const RetentionSpec& spec) {
  OnePassForward fwd = onepass_forward(model, xs, gates, Vec(model.hidden(), 0.0), true);
  const int T = static_cast<int>(xs.size());
  const int H = model.hidden();
  RetentionReport report;
  report.spec = spec;
  report.wiring_c = model.wiring_c;
  for (int i = 0; i < H; ++i) {
    int t = 0;
    while (t < T) {
      if (gates[t][i]) {
        ++t;
        continue;
      }
      CarryRun run;
      run.neuron = i;
      run.start = t + 1;
      run.min_margin = 1e300;
      run.product = 1.0;
      while (t < T && !gates[t][i]) {
        const double pre_z = fwd.tape[t].pre_z[i];  // includes the +C shift
        const double z_org = pre_z - model.wiring_c;
        run.min_margin = std::min(run.min_margin, -z_org);
        run.product *= 1.0 - sigmoid(pre_z);
        ++run.len;
        ++t;
      }
      run.violates = run.len <= spec.carry_len && run.min_margin >= spec.margin &&
                     run.product < 1.0 - spec.loss;
      if (run.violates) ++report.violations;
      report.runs.push_back(run);
    }
  }
  return report;
}

namespace {

// Cyclic Jacobi eigensolver for symmetric matrices; plenty at H <= 512.
void jacobi_eigen(Mat a, Vec& values, Mat& vectors) {
  const int n = a.rows;
  vectors = identity(n);
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = vectors(k, p), vkq = vectors(k, q);
          vectors(k, p) = c * vkp - s * vkq;
          vectors(k, q) = s * vkp + c * vkq;
        }
      }
  }
  values.resize(n);
  for (int i = 0; i < n; ++i) values[i] = a(i, i);
}

}  // namespace

PcaResult pca_trajectories(const std::vector<double>& states, int batch, int steps, int hidden,
                           int k) {
  const size_t n = static_cast<size_t>(batch) * steps;
  if (n < static_cast<size_t>(k)) throw std::invalid_argument("pca_trajectories: need B*T >= k");
  PcaResult res;
  res.mean.assign(hidden, 0.0);
  for (size_t r = 0; r < n; ++r)
    for (int i = 0; i < hidden; ++i) res.mean[i] += states[r * hidden + i];
  for (double& v : res.mean) v /= static_cast<double>(n);

  Mat cov(hidden, hidden);
  for (size_t r = 0; r < n; ++r) {
    for (int i = 0; i < hidden; ++i) {
      const double di = states[r * hidden + i] - res.mean[i];
      double* row = cov.row(i);
      for (int j = i; j < hidden; ++j) row[j] += di * (states[r * hidden + j] - res.mean[j]);
    }
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (int i = 0; i < hidden; ++i)
    for (int j = i; j < hidden; ++j) {
      cov(i, j) /= denom;
      cov(j, i) = cov(i, j);
    }

  Vec values;
  Mat vectors;
  jacobi_eigen(cov, values, vectors);
  std::vector<int> order(hidden);
  for (int i = 0; i < hidden; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });

  res.total_variance = 0.0;
  for (double v : values) res.total_variance += std::max(v, 0.0);

  // Rank floor relative to the data magnitude, so rounding noise in an
  // exactly-degenerate cloud does not masquerade as variance.
  double mean_sq = 0.0;
  for (size_t r = 0; r < n; ++r)
    for (int i = 0; i < hidden; ++i) mean_sq += states[r * hidden + i] * states[r * hidden + i];
  mean_sq /= static_cast<double>(n);
  int k_eff = std::min(k, hidden);
  const double lead = values[order[0]];
  const double floor = std::max({lead * 1e-12, mean_sq * 1e-24, 1e-300});
  while (k_eff > 0 && values[order[k_eff - 1]] <= floor) --k_eff;
  if (k_eff < k)
    std::fprintf(stderr, "pca_trajectories: rank-deficient data, keeping %d of %d components\n",
                 k_eff, k);

  // Keep the requested k columns; rows past the effective rank stay zero.
  res.k = k_eff;
  res.eigenvalues.resize(hidden);
  for (int i = 0; i < hidden; ++i) res.eigenvalues[i] = values[order[i]];
  res.components = Mat(std::min(k, hidden), hidden);
  for (int c = 0; c < k_eff; ++c) {
    int arg = 0;
    double best = 0.0;
    for (int i = 0; i < hidden; ++i) {
      const double v = std::abs(vectors(i, order[c]));
      if (v > best) {
        best = v;
        arg = i;
      }
    }
    const double sign = vectors(arg, order[c]) < 0.0 ? -1.0 : 1.0;
    for (int i = 0; i < hidden; ++i) res.components(c, i) = sign * vectors(i, order[c]);
  }

  const int kc = res.components.rows;
  res.projected.assign(n * kc, 0.0);
  for (size_t r = 0; r < n; ++r)
    for (int c = 0; c < k_eff; ++c) {
      double acc = 0.0;
      for (int i = 0; i < hidden; ++i)
        acc += res.components(c, i) * (states[r * hidden + i] - res.mean[i]);
      res.projected[r * kc + c] = acc;
    }
  return res;
}

std::vector<std::string> dump_spatiotemporal(const Model& m, const TaskBatch& batch, int rows,
                                             int cols, const std::string& out_dir,
                                             const std::string& tag) {
  if (rows * cols != batch.steps)
    throw std::invalid_argument("dump_spatiotemporal: T must equal rows*cols");
  std::filesystem::create_directories(out_dir);
  BatchedForward fwd = model_forward_batched(m, batch);
  std::vector<std::string> paths;
  char buf[160];
  for (size_t l = 0; l < m.layers.size(); ++l) {
    const LayerTape& tape = fwd.tapes[l];
    const int H = tape.hidden;
    const int B = tape.lanes;
    const std::string path = out_dir + "/" + tag + "_layer" + std::to_string(l) + ".csv";
    CsvWriter csv(path, "row,col,gate_mean,delta_mean");
    for (int t = 0; t < batch.steps; ++t) {
      double gate_mean = 1.0;
      if (tape.mask.steps > 0) {
        double s = 0;
        for (int i = 0; i < H; ++i) s += tape.mask.gate(t, i);
        gate_mean = s / H;
      }
      const double* hc = tape.h_at(t + 1);
      const double* hp = tape.h_at(t);
      double delta = 0;
      for (int i = 0; i < H; ++i)
        for (int b = 0; b < B; ++b)
          delta += hc[static_cast<size_t>(i) * B + b] - hp[static_cast<size_t>(i) * B + b];
      delta /= static_cast<double>(H) * B;
      std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g", t / cols, t % cols, gate_mean, delta);
      csv.row(buf);
    }
    paths.push_back(path);
  }
  return paths;
}

}  // namespace surnn
