// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/cells.hpp"

#include <cmath>
#include <stdexcept>

namespace surnn {

void RnnParams::validate() const {
  if (w_hh.rows != w_hh.cols) throw std::invalid_argument("RnnParams: w_hh must be square");
  if (w_xh.rows != w_hh.rows || static_cast<int>(b.size()) != w_hh.rows)
    throw std::invalid_argument("RnnParams: shape mismatch");
  if (w_hh.rows < 1 || w_xh.cols < 1) throw std::invalid_argument("RnnParams: degenerate dims");
}

RnnParams RnnParams::init(int hidden, int input_dim, Rng& rng) {
  if (hidden < 1 || input_dim < 1) throw std::invalid_argument("RnnParams::init: degenerate dims");
  RnnParams p;
  p.w_hh = random_orthogonal(hidden, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(input_dim));
  p.w_xh = random_uniform_mat(hidden, input_dim, -s, s, rng);
  p.b.assign(hidden, 0.0);
  return p;
}

void GruParams::validate() const {
  const int h = hidden();
  if (h < 1 || w_ih.cols < 1) throw std::invalid_argument("GruParams: degenerate dims");
  if (w_ih.rows != 3 * h || w_hh.rows != 3 * h ||
      static_cast<int>(b_ih.size()) != 3 * h || static_cast<int>(b_hh.size()) != 3 * h)
    throw std::invalid_argument("GruParams: shape mismatch");
}

GruParams GruParams::init(int hidden, int input_dim, Rng& rng) {
  if (hidden < 1 || input_dim < 1) throw std::invalid_argument("GruParams::init: degenerate dims");
  GruParams p;
  p.w_hh = Mat(3 * hidden, hidden);
  for (int head = 0; head < 3; ++head) {
    Mat q = random_orthogonal(hidden, rng);
    for (int i = 0; i < hidden; ++i)
      for (int j = 0; j < hidden; ++j) p.w_hh(head * hidden + i, j) = q(i, j);
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(input_dim));
  p.w_ih = random_uniform_mat(3 * hidden, input_dim, -s, s, rng);
  p.b_ih.assign(3 * hidden, 0.0);
  p.b_hh.assign(3 * hidden, 0.0);
  return p;
}

namespace {

// Shared head kernel. Computes the backbone output for the rows listed in
// `rows` (all rows when empty span semantics are requested by callers).
// Accumulation order per row: bias_ih + bias_hh, then x terms ascending,
// then h terms ascending. Never reordered; the sparse executor and the
// augmented-input construction depend on these prefix sums.

inline double head_preact(const double* w_x, const Vec& x, const double* w_h, const Vec& h,
                          double b_i, double b_h) {
  double acc = b_i + b_h;
  dot_strict_into(acc, w_x, x.data(), static_cast<int>(x.size()));
  dot_strict_into(acc, w_h, h.data(), static_cast<int>(h.size()));
  return acc;
}

}  // namespace

Vec rnn_step(const RnnParams& p, const Vec& h, const Vec& x, StepRecord* cache) {
  if (static_cast<int>(h.size()) != p.hidden() || static_cast<int>(x.size()) != p.input_dim())
    throw std::invalid_argument("rnn_step: dimension mismatch");
  const int n = p.hidden();
  Vec pre(n), out(n);
  for (int i = 0; i < n; ++i) {
    pre[i] = head_preact(p.w_xh.row(i), x, p.w_hh.row(i), h, p.b[i], 0.0);
    out[i] = tanh_fast(pre[i]);
  }
  if (cache) {
    cache->kind = CellKind::Rnn;
    cache->h_prev = h;
    cache->x = x;
    cache->pre = pre;
    cache->candidate = out;
    cache->delta_h.resize(n);
    for (int i = 0; i < n; ++i) cache->delta_h[i] = out[i] - h[i];
    cache->h_next = out;
    cache->g.clear();
  }
  return out;
}

Vec gru_step(const GruParams& p, const Vec& h, const Vec& x, StepRecord* cache) {
  if (static_cast<int>(h.size()) != p.hidden() || static_cast<int>(x.size()) != p.input_dim())
    throw std::invalid_argument("gru_step: dimension mismatch");
  const int n = p.hidden();
  Vec pre_r(n), pre_z(n), pre_n(n), hpre_n(n), out(n);
  for (int i = 0; i < n; ++i) {
    pre_r[i] = head_preact(p.w_ih.row(i), x, p.w_hh.row(i), h, p.b_ih[i], p.b_hh[i]);
    pre_z[i] = head_preact(p.w_ih.row(n + i), x, p.w_hh.row(n + i), h, p.b_ih[n + i], p.b_hh[n + i]);
    double xpre_n = p.b_ih[2 * n + i];
    dot_strict_into(xpre_n, p.w_ih.row(2 * n + i), x.data(), p.input_dim());
    hpre_n[i] = p.b_hh[2 * n + i];
    dot_strict_into(hpre_n[i], p.w_hh.row(2 * n + i), h.data(), n);
    const double r = sigmoid(pre_r[i]);
    pre_n[i] = xpre_n + r * hpre_n[i];
    const double z = sigmoid(pre_z[i]);
    const double cand = tanh_fast(pre_n[i]);
    out[i] = h[i] + z * (cand - h[i]);
  }
  if (cache) {
    cache->kind = CellKind::Gru;
    cache->h_prev = h;
    cache->x = x;
    cache->pre_r = pre_r;
    cache->pre_z = pre_z;
    cache->pre_n = pre_n;
    cache->hpre_n = hpre_n;
    cache->candidate = out;
    cache->delta_h.resize(n);
    for (int i = 0; i < n; ++i) cache->delta_h[i] = out[i] - h[i];
    cache->h_next = out;
    cache->g.clear();
  }
  return out;
}

namespace {

template <typename Params>
Vec selective_step_impl(const Params& p, const Vec& h, const Vec& x,
                        std::span<const uint8_t> g, StepRecord* cache) {
  if (static_cast<int>(g.size()) != p.hidden())
    throw std::invalid_argument("selective_step: gate length mismatch");
  for (uint8_t gi : g)
    if (gi > 1) throw std::invalid_argument("selective_step: gate must be binary");
  StepRecord local;
  StepRecord* rec = cache ? cache : &local;
  Vec f;
  if constexpr (std::is_same_v<Params, RnnParams>) {
    f = rnn_step(p, h, x, rec);
  } else {
    f = gru_step(p, h, x, rec);
  }
  const int n = p.hidden();
  Vec out(n);
  for (int i = 0; i < n; ++i) out[i] = g[i] ? f[i] : h[i];
  if (cache) {
    cache->g.assign(g.begin(), g.end());
    cache->h_next = out;
  }
  return out;
}

}  // namespace

Vec selective_step(const RnnParams& p, const Vec& h, const Vec& x,
                   std::span<const uint8_t> g, StepRecord* cache) {
  return selective_step_impl(p, h, x, g, cache);
}

Vec selective_step(const GruParams& p, const Vec& h, const Vec& x,
                   std::span<const uint8_t> g, StepRecord* cache) {
  return selective_step_impl(p, h, x, g, cache);
}

namespace {

template <typename Params>
Vec soft_selective_step_impl(const Params& p, const Vec& h, const Vec& x, const Vec& s,
                             StepRecord* cache) {
  if (static_cast<int>(s.size()) != p.hidden())
    throw std::invalid_argument("soft_selective_step: gate length mismatch");
  StepRecord local;
  StepRecord* rec = cache ? cache : &local;
  Vec f;
  if constexpr (std::is_same_v<Params, RnnParams>) {
    f = rnn_step(p, h, x, rec);
  } else {
    f = gru_step(p, h, x, rec);
  }
  const int n = p.hidden();
  Vec out(n);
  for (int i = 0; i < n; ++i) out[i] = h[i] + s[i] * (f[i] - h[i]);
  if (cache) {
    cache->soft_g = s;
    cache->g.clear();
    cache->h_next = out;
  }
  return out;
}

}  // namespace

Vec soft_selective_step(const RnnParams& p, const Vec& h, const Vec& x, const Vec& s,
                        StepRecord* cache) {
  return soft_selective_step_impl(p, h, x, s, cache);
}

Vec soft_selective_step(const GruParams& p, const Vec& h, const Vec& x, const Vec& s,
                        StepRecord* cache) {
  return soft_selective_step_impl(p, h, x, s, cache);
}

Mat backbone_jacobian(const RnnParams& p, const StepRecord& cache) {
  const int n = p.hidden();
  Mat j(n, n);
  for (int i = 0; i < n; ++i) {
    const double t = tanh_fast(cache.pre[i]);
    const double d = 1.0 - t * t;
    const double* w = p.w_hh.row(i);
    for (int k = 0; k < n; ++k) j(i, k) = d * w[k];
  }
  return j;
}

Mat backbone_jacobian(const GruParams& p, const StepRecord& cache) {
  const int n = p.hidden();
  Mat j(n, n);
  for (int i = 0; i < n; ++i) {
    const double r = sigmoid(cache.pre_r[i]);
    const double z = sigmoid(cache.pre_z[i]);
    const double cand = tanh_fast(cache.pre_n[i]);
    const double dcand = 1.0 - cand * cand;
    const double dz = z * (1.0 - z);
    const double dr = r * (1.0 - r);
    const double* w_r = p.w_hh.row(i);
    const double* w_z = p.w_hh.row(n + i);
    const double* w_n = p.w_hh.row(2 * n + i);
    for (int k = 0; k < n; ++k) {
      // d n_i / d h_k through both the candidate row and the reset gate
      const double dn = dcand * (r * w_n[k] + cache.hpre_n[i] * dr * w_r[k]);
      double v = z * dn + (cand - cache.h_prev[i]) * dz * w_z[k];
      if (k == i) v += 1.0 - z;
      j(i, k) = v;
    }
  }
  return j;
}

namespace {

template <typename Params>
Mat step_jacobian_impl(const Params& p, const StepRecord& cache) {
  Mat j = backbone_jacobian(p, cache);
  if (cache.g.empty()) return j;
  const int n = j.rows;
  for (int i = 0; i < n; ++i) {
    if (!cache.g[i]) {
      double* row = j.row(i);
      for (int k = 0; k < n; ++k) row[k] = (k == i) ? 1.0 : 0.0;
    }
  }
  return j;
}

}  // namespace

Mat step_jacobian(const RnnParams& p, const StepRecord& cache) { return step_jacobian_impl(p, cache); }
Mat step_jacobian(const GruParams& p, const StepRecord& cache) { return step_jacobian_impl(p, cache); }

Mat sensitivity_product(const std::vector<Mat>& step_jacobians) {
  if (step_jacobians.empty()) throw std::invalid_argument("sensitivity_product: empty span");
  const int n = step_jacobians.front().rows;
  Mat acc = identity(n);
  // Right-to-left: J_t J_{t-1} ... J_{s+1}, with the span stored in time order.
  for (const Mat& j : step_jacobians) {
    if (j.rows != n || j.cols != n) throw std::invalid_argument("sensitivity_product: shape mismatch");
    acc = matmul(j, acc);
  }
  return acc;
}

Mat ensemble_expand(const std::vector<Mat>& backbone_jacobians,
                    const std::vector<std::vector<uint8_t>>& gates) {
  const size_t span = backbone_jacobians.size();
  if (span != gates.size()) throw std::invalid_argument("ensemble_expand: span mismatch");
  if (span > 20) throw std::invalid_argument("ensemble_expand: span too long (2^span terms)");
  if (span == 0) throw std::invalid_argument("ensemble_expand: empty span");
  const int n = backbone_jacobians.front().rows;

  // Pre-build D_tau (J^f_tau - I) for each step in the span.
  std::vector<Mat> factors;
  factors.reserve(span);
  for (size_t t = 0; t < span; ++t) {
    Mat f(n, n);
    for (int i = 0; i < n; ++i) {
      const double gi = gates[t][i] ? 1.0 : 0.0;
      for (int k = 0; k < n; ++k)
        f(i, k) = gi * (backbone_jacobians[t](i, k) - (i == k ? 1.0 : 0.0));
    }
    factors.push_back(std::move(f));
  }

  Mat sum(n, n);
  const uint32_t subsets = 1u << span;
  for (uint32_t mask = 0; mask < subsets; ++mask) {
    Mat term = identity(n);
    // Descending tau so the latest selected step sits leftmost.
    for (int t = static_cast<int>(span) - 1; t >= 0; --t) {
      if (mask & (1u << t)) term = matmul(term, factors[t]);
    }
    for (size_t idx = 0; idx < sum.data.size(); ++idx) sum.data[idx] += term.data[idx];
  }
  return sum;
}

}  // namespace surnn
