// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/gates.hpp"

#include <cmath>
#include <cstdio>

#include "surnn/tensor_io.hpp"

namespace surnn {

void GateProgram::validate() const {
  const int h = hidden();
  const int k = num_freqs();
  if (h < 1 || k < 1) throw std::invalid_argument("GateProgram: need H >= 1, K >= 1");
  if (alpha.cols != k || phi.rows != h || phi.cols != k || static_cast<int>(bias.size()) != h)
    throw std::invalid_argument("GateProgram: shape mismatch");
  double prev = 0.0;
  for (double w : omega) {
    if (!(w > prev)) throw std::invalid_argument("GateProgram: omega must be positive and strictly increasing");
    prev = w;
  }
  if (!(surrogate_slope > 0.0)) throw std::invalid_argument("GateProgram: surrogate slope must be > 0");
}

GateProgram GateProgram::init(int hidden, int num_freqs, int max_seq_len, Rng& rng) {
  if (hidden < 1 || num_freqs < 1 || max_seq_len < 2)
    throw std::invalid_argument("GateProgram::init: bad sizes");
  GateProgram p;
  p.omega.resize(num_freqs);
  const double lo = 2.0 * M_PI / static_cast<double>(max_seq_len);
  const double hi = M_PI;
  if (num_freqs == 1) {
    p.omega[0] = lo;
  } else {
    const double llo = std::log(lo), lhi = std::log(hi);
    for (int k = 0; k < num_freqs; ++k)
      p.omega[k] = std::exp(llo + (lhi - llo) * k / (num_freqs - 1));
  }
  p.alpha = random_normal_mat(hidden, num_freqs, 0.0, 1.0 / std::sqrt(double(num_freqs)), rng);
  p.phi = Mat(hidden, num_freqs);
  for (double& x : p.phi.data) x = rng.uniform(0.0, 2.0 * M_PI);
  p.bias.assign(hidden, 0.0);
  p.validate();
  return p;
}

GateProgramGrads GateProgramGrads::zeros_like(const GateProgram& p) {
  GateProgramGrads g;
  g.d_omega.assign(p.omega.size(), 0.0);
  g.d_alpha = Mat(p.alpha.rows, p.alpha.cols);
  g.d_phi = Mat(p.phi.rows, p.phi.cols);
  g.d_bias.assign(p.bias.size(), 0.0);
  return g;
}

bool schedule_is_learnable(const GateSchedule& s) {
  return std::holds_alternative<RhythmicGate>(s) || std::holds_alternative<LearnableTableGate>(s);
}

const GateProgram* schedule_program(const GateSchedule& s) {
  if (const auto* r = std::get_if<RhythmicGate>(&s)) return &r->program;
  if (const auto* f = std::get_if<FixedRandomRhythmicGate>(&s)) return &f->program;
  return nullptr;
}

GateProgram* schedule_program(GateSchedule& s) {
  if (auto* r = std::get_if<RhythmicGate>(&s)) return &r->program;
  if (auto* f = std::get_if<FixedRandomRhythmicGate>(&s)) return &f->program;
  return nullptr;
}

namespace {

inline double rhythmic_preact(const GateProgram& p, int t, int i) {
  const int k_count = p.num_freqs();
  const double* arow = p.alpha.row(i);
  const double* prow = p.phi.row(i);
  double acc = p.bias[i];
  for (int k = 0; k < k_count; ++k)
    acc += arow[k] * std::sin(p.omega[k] * static_cast<double>(t) + prow[k]);
  return acc;
}

}  // namespace

Vec preactivation(const GateProgram& prog, int t) {
  if (t < 1) throw std::invalid_argument("preactivation: t is 1-based");
  const int h = prog.hidden();
  Vec a(h);
  for (int i = 0; i < h; ++i) a[i] = rhythmic_preact(prog, t, i);
  return a;
}

GateMask precompute_mask(const GateProgram& prog, int steps) {
  if (steps < 1) throw std::invalid_argument("precompute_mask: need T >= 1");
  const int h = prog.hidden();
  GateMask m;
  m.steps = steps;
  m.hidden = h;
  m.a.resize(static_cast<size_t>(steps) * h);
  m.g.resize(static_cast<size_t>(steps) * h);
  for (int t = 1; t <= steps; ++t) {
    double* arow = m.a.data() + static_cast<size_t>(t - 1) * h;
    uint8_t* grow = m.g.data() + static_cast<size_t>(t - 1) * h;
    for (int i = 0; i < h; ++i) {
      arow[i] = rhythmic_preact(prog, t, i);
      grow[i] = binarize_one(arow[i]);
    }
  }
  return m;
}

void RhythmTable::build(const Vec& omega_grid, int step_count) {
  steps = step_count;
  omega = omega_grid;
  const int kc = static_cast<int>(omega_grid.size());
  sin_wt.resize(static_cast<size_t>(step_count) * kc);
  cos_wt.resize(static_cast<size_t>(step_count) * kc);
  for (int t = 1; t <= step_count; ++t)
    for (int k = 0; k < kc; ++k) {
      const double angle = omega_grid[k] * static_cast<double>(t);
      sin_wt[static_cast<size_t>(t - 1) * kc + k] = std::sin(angle);
      cos_wt[static_cast<size_t>(t - 1) * kc + k] = std::cos(angle);
    }
}

bool RhythmTable::matches(const Vec& omega_grid, int step_count) const {
  return steps == step_count && omega == omega_grid;
}

GateMask precompute_mask_fast(const GateProgram& prog, int steps, RhythmTable& table) {
  if (steps < 1) throw std::invalid_argument("precompute_mask_fast: need T >= 1");
  if (!table.matches(prog.omega, steps)) table.build(prog.omega, steps);
  const int h = prog.hidden();
  const int kc = prog.num_freqs();
  std::vector<double> cphi(static_cast<size_t>(h) * kc), sphi(cphi.size());
  for (int i = 0; i < h; ++i)
    for (int k = 0; k < kc; ++k) {
      cphi[static_cast<size_t>(i) * kc + k] = std::cos(prog.phi(i, k));
      sphi[static_cast<size_t>(i) * kc + k] = std::sin(prog.phi(i, k));
    }
  GateMask m;
  m.steps = steps;
  m.hidden = h;
  m.a.resize(static_cast<size_t>(steps) * h);
  m.g.resize(static_cast<size_t>(steps) * h);
  for (int t = 0; t < steps; ++t) {
    const double* srow = &table.sin_wt[static_cast<size_t>(t) * kc];
    const double* crow = &table.cos_wt[static_cast<size_t>(t) * kc];
    double* arow = m.a.data() + static_cast<size_t>(t) * h;
    uint8_t* grow = m.g.data() + static_cast<size_t>(t) * h;
    for (int i = 0; i < h; ++i) {
      const double* arow_p = prog.alpha.row(i);
      const double* cp = &cphi[static_cast<size_t>(i) * kc];
      const double* sp = &sphi[static_cast<size_t>(i) * kc];
      double acc = prog.bias[i];
      for (int k = 0; k < kc; ++k) acc += arow_p[k] * (srow[k] * cp[k] + crow[k] * sp[k]);
      arow[i] = acc;
      grow[i] = binarize_one(acc);
    }
  }
  return m;
}

std::vector<uint8_t> binarize(const Vec& a) {
  std::vector<uint8_t> g(a.size());
  for (size_t i = 0; i < a.size(); ++i) g[i] = binarize_one(a[i]);
  return g;
}

GateMask generate_mask(const GateSchedule& schedule, int steps, int hidden, const Mat* inputs) {
  if (steps < 1 || hidden < 1) throw std::invalid_argument("generate_mask: need T,H >= 1");
  GateMask m;
  m.steps = steps;
  m.hidden = hidden;
  m.a.assign(static_cast<size_t>(steps) * hidden, 0.0);
  m.g.assign(static_cast<size_t>(steps) * hidden, 0);

  if (const auto* r = std::get_if<RhythmicGate>(&schedule)) {
    if (r->program.hidden() != hidden) throw std::invalid_argument("generate_mask: program H mismatch");
    return precompute_mask(r->program, steps);
  }
  if (const auto* f = std::get_if<FixedRandomRhythmicGate>(&schedule)) {
    if (f->program.hidden() != hidden) throw std::invalid_argument("generate_mask: program H mismatch");
    return precompute_mask(f->program, steps);
  }
  if (const auto* e = std::get_if<EveryKStepsGate>(&schedule)) {
    if (e->k < 1) throw std::invalid_argument("generate_mask: EveryKSteps needs k >= 1");
    for (int t = 1; t <= steps; ++t) {
      const bool open = (t % e->k) == 0;
      for (int i = 0; i < hidden; ++i) {
        m.a[static_cast<size_t>(t - 1) * hidden + i] = open ? 1.0 : -1.0;
        m.g[static_cast<size_t>(t - 1) * hidden + i] = open ? 1 : 0;
      }
    }
    return m;
  }
  if (const auto* b = std::get_if<FixedRandomBernoulliGate>(&schedule)) {
    if (b->p < 0.0 || b->p > 1.0) throw std::invalid_argument("generate_mask: Bernoulli p outside [0,1]");
    Rng rng(b->seed);
    for (size_t idx = 0; idx < m.g.size(); ++idx) {
      const double u = rng.uniform01();
      m.a[idx] = b->p - u;  // a > 0 <=> u < p
      m.g[idx] = binarize_one(m.a[idx]);
    }
    return m;
  }
  if (std::holds_alternative<InputThresholdGate>(schedule)) {
    if (!inputs) throw std::invalid_argument("generate_mask: InputThreshold requires the input stream");
    if (inputs->rows != steps) throw std::invalid_argument("generate_mask: input stream length mismatch");
    for (int t = 0; t < steps; ++t) {
      double mx = -1.0;
      for (int d = 0; d < inputs->cols; ++d) mx = std::max(mx, (*inputs)(t, d));
      const uint8_t open = binarize_one(mx);
      for (int i = 0; i < hidden; ++i) {
        m.a[static_cast<size_t>(t) * hidden + i] = mx;
        m.g[static_cast<size_t>(t) * hidden + i] = open;
      }
    }
    return m;
  }
  const auto& tbl = std::get<LearnableTableGate>(schedule);
  if (tbl.logits.rows != hidden || tbl.logits.cols < steps)
    throw std::invalid_argument("generate_mask: logits table must be H x (>=T)");
  for (int t = 0; t < steps; ++t)
    for (int i = 0; i < hidden; ++i) {
      const double a = tbl.logits(i, t);
      m.a[static_cast<size_t>(t) * hidden + i] = a;
      m.g[static_cast<size_t>(t) * hidden + i] = binarize_one(a);
    }
  return m;
}

double update_rate(const GateMask& mask) {
  if (mask.g.empty()) throw std::invalid_argument("update_rate: empty mask");
  uint64_t on = 0;
  for (uint8_t g : mask.g) on += g;
  return static_cast<double>(on) / static_cast<double>(mask.g.size());
}

void write_mask_csv(const GateMask& mask, const std::string& path, const std::string& provenance) {
  CsvWriter csv(path, "t,i,a,g", provenance);
  char buf[96];
  for (int t = 0; t < mask.steps; ++t)
    for (int i = 0; i < mask.hidden; ++i) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%d", t + 1, i, mask.preact(t, i),
                    static_cast<int>(mask.gate(t, i)));
      csv.row(buf);
    }
}

}  // namespace surnn
