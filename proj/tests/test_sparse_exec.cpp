// Copyright 2026 the surnn authors. Apache 2.0 License.

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "surnn/sparse_exec.hpp"

using namespace surnn;

TEST_CASE("dense_step matches gru_step bitwise and counts exact work") {
  Rng rng(1);
  GruParams p = GruParams::init(4, 2, rng);
  Vec h{0.1, -0.3, 0.5, 0.9}, x{0.2, -0.7};
  OpCounter c;
  Vec out = dense_step(p, h, x, &c);
  CHECK(out == gru_step(p, h, x));
  CHECK(c.macs_r == 4 * 6);
  CHECK(c.macs_z == 4 * 6);
  CHECK(c.macs_n == 4 * 6);
  CHECK(c.macs_combine == 4);
  OpCounter c2;
  dense_step(p, h, x, &c2);
  CHECK(c2.macs_r == c.macs_r);  // counts independent of data
}

TEST_CASE("sparse_step is bitwise dense-then-mask") {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const int hn = 1 + static_cast<int>(rng.next_u64() % 32);
    const int dn = 1 + static_cast<int>(rng.next_u64() % 5);
    GruParams p = GruParams::init(hn, dn, rng);
    Vec h(hn), x(dn);
    for (double& v : h) v = rng.normal(0.0, 1.0);
    for (double& v : x) v = rng.normal(0.0, 1.0);
    std::vector<uint8_t> g(hn);
    for (auto& gi : g) gi = rng.uniform01() < 0.4 ? 1 : 0;
    OpCounter c;
    Vec sparse = sparse_step(p, h, x, g, &c);
    Vec dense = dense_step(p, h, x);
    int active = 0;
    for (int i = 0; i < hn; ++i) {
      CHECK(sparse[i] == (g[i] ? dense[i] : h[i]));
      active += g[i];
    }
    CHECK(c.macs_r == static_cast<uint64_t>(active) * (dn + hn));
    CHECK(c.macs_combine == static_cast<uint64_t>(active));
  }

  // boundary masks
  Rng r2(3);
  GruParams p = GruParams::init(6, 2, r2);
  Vec h(6, 0.25), x{1.0, -1.0};
  std::vector<uint8_t> ones(6, 1), zeros(6, 0);
  OpCounter con, coff;
  CHECK(sparse_step(p, h, x, ones, &con) == dense_step(p, h, x));
  CHECK(con.macs_r == 6 * 8);
  CHECK(sparse_step(p, h, x, zeros, &coff) == h);
  CHECK(coff.total_macs() == 0);
}

TEST_CASE("mac count is monotone in the active set") {
  Rng rng(5);
  GruParams p = GruParams::init(10, 3, rng);
  Vec h(10, 0.1), x(3, 0.5);
  uint64_t prev = 0;
  std::vector<uint8_t> g(10, 0);
  for (int k = 0; k < 10; ++k) {
    g[k] = 1;
    OpCounter c;
    sparse_step(p, h, x, g, &c);
    CHECK(c.total_macs() > prev);
    prev = c.total_macs();
  }
}

TEST_CASE("block gating expansion") {
  BlockGating blocks{4};
  std::vector<uint8_t> bits{1, 0, 1};
  std::vector<uint8_t> g = blocks.expand(bits, 12);
  for (int i = 0; i < 12; ++i) CHECK(g[i] == bits[i / 4]);
  CHECK_THROWS_AS(blocks.expand(bits, 10), std::invalid_argument);
  std::vector<uint8_t> wrong{1};
  CHECK_THROWS_AS(blocks.expand(wrong, 12), std::invalid_argument);
}

TEST_CASE("83 percent sparsity gives the expected mac ratio") {
  // per-neuron Bernoulli masks over a 784-step stream
  Rng rng(7);
  const int hn = 256, dn = 1, steps = 784;
  GruParams p = GruParams::init(hn, dn, rng);
  Vec h(hn, 0.0), x{0.3};
  OpCounter cs, cd;
  for (int t = 0; t < steps; ++t) {
    std::vector<uint8_t> g(hn);
    for (auto& gi : g) gi = rng.uniform01() < 0.17 ? 1 : 0;
    h = sparse_step(p, h, x, g, &cs);
    dense_step(p, h, x, &cd);
  }
  const double ratio = static_cast<double>(cs.total_macs()) / cd.total_macs();
  CHECK(ratio > 0.15);
  CHECK(ratio < 0.19);
}

TEST_CASE("bench smoke: counters, csv, and the no-sparsity ratio") {
  BenchConfig cfg;
  cfg.hidden = 32;
  cfg.input_dim = 2;
  cfg.steps = 64;
  cfg.sparsity = 0.0;
  cfg.repeats = 7;
  cfg.block = 8;
  BenchResult r = bench(cfg);
  CHECK(r.measured_sparsity == 0.0);
  CHECK(r.mac_ratio() == 1.0);
  // same row lists on both sides: wall ratio within noise of 1
  CHECK(r.wall_ratio() > 0.7);
  CHECK(r.wall_ratio() < 1.4);

  BenchConfig cfg2 = cfg;
  cfg2.sparsity = 0.75;
  BenchResult r2 = bench(cfg2);
  CHECK(r2.mac_ratio() < 0.45);
  CHECK(r2.measured_sparsity > 0.5);

  const std::string path = "/tmp/surnn_bench_test.csv";
  write_bench_csv(r2, path, "test=1");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# test=1");
  std::getline(in, line);
  CHECK(line == "mode,H,D,T,sparsity,head,macs,median_us,iqr_us");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 8);  // 4 heads x dense/sparse
  std::filesystem::remove(path);

  CHECK_THROWS_AS(bench(BenchConfig{.repeats = 3}), std::invalid_argument);

  // f64 mode runs the same machinery
  BenchConfig cfg3 = cfg2;
  cfg3.mode = "f64";
  BenchResult r3 = bench(cfg3);
  CHECK(r3.mac_ratio() == r2.mac_ratio());
}
