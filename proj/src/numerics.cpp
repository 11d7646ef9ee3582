// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/numerics.hpp"

#include <algorithm>

namespace surnn {

Vec matvec(const Mat& m, const Vec& v) {
  if (m.cols != static_cast<int>(v.size()))
    throw std::invalid_argument("matvec: dimension mismatch");
  Vec out(m.rows);
  for (int i = 0; i < m.rows; ++i) out[i] = dot_strict(m.row(i), v.data(), m.cols);
  return out;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: dimension mismatch");
  Mat out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      const double* brow = b.row(k);
      double* orow = out.row(i);
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Mat transpose(const Mat& m) {
  Mat out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

Mat identity(int n) {
  Mat out(n, n);
  for (int i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

double vec_norm2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double frobenius_norm(const Mat& m) {
  double s = 0.0;
  for (double x : m.data) s += x * x;
  return std::sqrt(s);
}

double spectral_norm(const Mat& m, int iters) {
  if (m.rows == 0 || m.cols == 0) return 0.0;
  Rng rng(0x5eedULL);
  Vec v(m.cols);
  for (double& x : v) x = rng.normal(0.0, 1.0);
  double nv = vec_norm2(v);
  if (nv == 0.0) return 0.0;
  for (double& x : v) x /= nv;
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vec mv = matvec(m, v);
    // v <- m^T (m v), normalized
    Vec w(m.cols, 0.0);
    for (int i = 0; i < m.rows; ++i) {
      const double* row = m.row(i);
      for (int j = 0; j < m.cols; ++j) w[j] += row[j] * mv[i];
    }
    double nw = vec_norm2(w);
    if (nw == 0.0) return 0.0;
    for (double& x : w) x /= nw;
    v = w;
    sigma = vec_norm2(matvec(m, v));
  }
  return sigma;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("uniform: need lo < hi");
  return lo + uniform01() * (hi - lo);
}

double Rng::normal(double mean, double stddev) {
  if (stddev < 0.0) throw std::invalid_argument("normal: need stddev >= 0");
  // Box-Muller; consumes two uniforms per call to keep the stream position
  // independent of any caching.
  double u1 = uniform01();
  double u2 = uniform01();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * M_PI * u2);
}

std::vector<int> Rng::perm(int n) {
  if (n < 1) throw std::invalid_argument("perm: need n >= 1");
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(next_u64() % static_cast<uint64_t>(i + 1));
    std::swap(p[i], p[j]);
  }
  return p;
}

Mat random_uniform_mat(int rows, int cols, double lo, double hi, Rng& rng) {
  Mat m(rows, cols);
  for (double& x : m.data) x = rng.uniform(lo, hi);
  return m;
}

Mat random_normal_mat(int rows, int cols, double mean, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (double& x : m.data) x = rng.normal(mean, stddev);
  return m;
}

Mat random_orthogonal(int n, Rng& rng) {
  Mat a = random_normal_mat(n, n, 0.0, 1.0, rng);
  // Householder QR; accumulate Q explicitly.
  Mat q = identity(n);
  for (int k = 0; k < n - 1; ++k) {
    double norm = 0.0;
    for (int i = k; i < n; ++i) norm += a(i, k) * a(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = a(k, k) > 0 ? -norm : norm;
    Vec v(n, 0.0);
    v[k] = a(k, k) - alpha;
    for (int i = k + 1; i < n; ++i) v[i] = a(i, k);
    double vtv = 0.0;
    for (int i = k; i < n; ++i) vtv += v[i] * v[i];
    if (vtv == 0.0) continue;
    const double beta = 2.0 / vtv;
    // a <- (I - beta v v^T) a
    for (int j = k; j < n; ++j) {
      double s = 0.0;
      for (int i = k; i < n; ++i) s += v[i] * a(i, j);
      s *= beta;
      for (int i = k; i < n; ++i) a(i, j) -= s * v[i];
    }
    // q <- q (I - beta v v^T)
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = k; j < n; ++j) s += q(i, j) * v[j];
      s *= beta;
      for (int j = k; j < n; ++j) q(i, j) -= s * v[j];
    }
  }
  // Make diag(R) positive so the factor is unique.
  for (int j = 0; j < n; ++j) {
    if (a(j, j) < 0.0)
      for (int i = 0; i < n; ++i) q(i, j) = -q(i, j);
  }
  return q;
}

void check_finite(const Vec& v, const std::string& what) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::runtime_error(what + ": non-finite value");
}

void check_finite(const Mat& m, const std::string& what) {
  for (double x : m.data)
    if (!std::isfinite(x)) throw std::runtime_error(what + ": non-finite value");
}

}  // namespace surnn
