// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Dense vector/matrix substrate and a counter-based PRNG. Everything on the
// learning path runs in doubles. Inner products accumulate in a fixed
// left-to-right order: the row-sparse executor and the augmented-input GRU
// both rely on prefix sums being bit-identical to the plain dense path.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace surnn {

using Vec = std::vector<double>;

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c) {
    if (r <= 0 || c <= 0) throw std::invalid_argument("Mat: dims must be positive");
    data.assign(static_cast<size_t>(r) * c, 0.0);
  }

  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
  double* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }
};

// Strict left-to-right inner product. Every matvec-style kernel in the
// project routes through this so that skipping rows (never columns) keeps
// results bit-identical to the dense computation.
inline double dot_strict(const double* w, const double* v, int n) {
  double acc = 0.0;
  for (int j = 0; j < n; ++j) acc += w[j] * v[j];
  return acc;
}

// Accumulating form: terms are added to the running value one by one, the
// exact op sequence the lane-batched kernels replay per lane.
inline void dot_strict_into(double& acc, const double* w, const double* v, int n) {
  for (int j = 0; j < n; ++j) acc += w[j] * v[j];
}

Vec matvec(const Mat& m, const Vec& v);
Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& m);
Mat identity(int n);

double vec_norm2(const Vec& v);
double frobenius_norm(const Mat& m);

// Largest singular value via power iteration on m^T m.
double spectral_norm(const Mat& m, int iters = 20);

// Numerically stable logistic; saturates instead of overflowing.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// tanh through the logistic curve. One exp call instead of libm tanh, and
// the derivative identity 1 - f^2 == 4 s (1 - s) holds exactly in this
// parameterization, so forward values and backward slopes stay consistent.
inline double tanh_fast(double x) { return 2.0 * sigmoid(2.0 * x) - 1.0; }

// Counter-based PRNG (splitmix64 over seed + golden-ratio strides).
// Stateless mixing of (seed, counter) gives identical streams on every
// platform and cheap independent substreams via split().
struct Rng {
  uint64_t seed = 0;
  uint64_t counter = 0;

  explicit Rng(uint64_t s) : seed(s) {}

  uint64_t next_u64() {
    uint64_t z = seed + 0x9E3779B97F4A7C15ULL * ++counter;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Derived generator with an independent stream; depends only on (seed, tag).
  Rng split(uint64_t tag) const {
    uint64_t z = seed ^ (0xD1B54A32D192ED03ULL * (tag + 1));
    z = (z ^ (z >> 29)) * 0xFF51AFD7ED558CCDULL;
    return Rng(z ^ (z >> 32));
  }

  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  std::vector<int> perm(int n);
};

// Random matrix helpers used by parameter initialization.
Mat random_uniform_mat(int rows, int cols, double lo, double hi, Rng& rng);
Mat random_normal_mat(int rows, int cols, double mean, double stddev, Rng& rng);

// Orthogonal matrix from the QR decomposition of a Gaussian draw, with the
// sign convention that makes R's diagonal positive (unique factor).
Mat random_orthogonal(int n, Rng& rng);

void check_finite(const Vec& v, const std::string& what);
void check_finite(const Mat& m, const std::string& what);

}  // namespace surnn
