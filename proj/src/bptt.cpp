// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/bptt.hpp"

#include <cmath>
#include <stdexcept>

namespace surnn {

namespace {

// Chains one step's local gate signals dA (H) into the rhythmic parameters.
void chain_program_grads(const GateProgram& p, int t, const double* d_a,
                         GateProgramGrads& g) {
  const int h = p.hidden();
  const int kc = p.num_freqs();
  const double td = static_cast<double>(t);
  for (int i = 0; i < h; ++i) {
    const double da = d_a[i];
    if (da == 0.0) continue;
    g.d_bias[i] += da;
    const double* arow = p.alpha.row(i);
    const double* prow = p.phi.row(i);
    double* garow = g.d_alpha.row(i);
    double* gprow = g.d_phi.row(i);
    for (int k = 0; k < kc; ++k) {
      const double angle = p.omega[k] * td + prow[k];
      const double s = std::sin(angle);
      const double c = std::cos(angle);
      garow[k] += da * s;
      gprow[k] += da * arow[k] * c;
      if (p.learn_omega) g.d_omega[k] += da * arow[k] * c * td;
    }
  }
}

void zero_frozen_groups(const GateProgram& p, GateProgramGrads& g) {
  if (!p.learn_alpha) std::fill(g.d_alpha.data.begin(), g.d_alpha.data.end(), 0.0);
  if (!p.learn_phi) std::fill(g.d_phi.data.begin(), g.d_phi.data.end(), 0.0);
  if (!p.learn_bias) std::fill(g.d_bias.begin(), g.d_bias.end(), 0.0);
  if (!p.learn_omega) std::fill(g.d_omega.begin(), g.d_omega.end(), 0.0);
}

}  // namespace

std::pair<std::vector<int>, double> nonidentity_count(const Tape& tape) {
  const int h = tape.hidden();
  std::vector<int> counts(h, 0);
  for (const StepRecord& rec : tape.steps) {
    if (rec.g.empty()) {
      for (int i = 0; i < h; ++i) counts[i] += 1;  // dense step updates everyone
    } else {
      for (int i = 0; i < h; ++i) counts[i] += rec.g[i];
    }
  }
  double rate = 0.0;
  for (int c : counts) rate += c;
  rate /= static_cast<double>(h) * tape.length();
  return {counts, rate};
}

GradReport backward(const Tape& tape, const Mat& dloss_dh, const RnnParams& p,
                    const BackwardOptions& opts) {
  if (tape.onepass) throw std::invalid_argument("backward: onepass tapes are GRU-based");
  if (tape.kind != CellKind::Rnn) throw std::invalid_argument("backward: tape/params kind mismatch");
  const int T = tape.length();
  const int H = p.hidden();
  const int D = p.input_dim();
  if (T < 1) throw std::invalid_argument("backward: empty tape");
  if (dloss_dh.rows != T || dloss_dh.cols != H)
    throw std::invalid_argument("backward: dloss shape mismatch");

  GradReport rep;
  rep.kind = CellKind::Rnn;
  rep.rnn.w_xh = Mat(H, D);
  rep.rnn.w_hh = Mat(H, H);
  rep.rnn.b.assign(H, 0.0);
  rep.adjoint_norms.assign(T, 0.0);
  rep.d_gate_preact = Mat(T, H);
  rep.d_inputs = Mat(T, D);
  if (opts.program) rep.gate_program = GateProgramGrads::zeros_like(*opts.program);
  Vec lam(H, 0.0), lam_next(H, 0.0);

  for (int t = T; t >= 1; --t) {
    const StepRecord& rec = tape.steps[t - 1];
    const double* dl = dloss_dh.row(t - 1);
    for (int i = 0; i < H; ++i) lam[i] += dl[i];
    rep.adjoint_norms[t - 1] = vec_norm2(lam);

    const bool soft = !rec.soft_g.empty();
    const bool learnable_gate = opts.gate_grads && !rec.gate_preact.empty() &&
                                (soft || !rec.g.empty());
    if (learnable_gate) {
      double* da_row = rep.d_gate_preact.row(t - 1);
      for (int i = 0; i < H; ++i)
        da_row[i] = lam[i] * rec.delta_h[i] *
                    surrogate_grad(rec.gate_preact[i], opts.surrogate_slope);
      if (opts.program) chain_program_grads(*opts.program, t, da_row, rep.gate_program);
      if (opts.table_grads)
        for (int i = 0; i < H; ++i) (*opts.table_grads)(i, t - 1) += da_row[i];
    }

    // lam_next starts from the carry route, then collects Jacobian rows of
    // active neurons only.
    for (int j = 0; j < H; ++j) {
      const double e = soft ? rec.soft_g[j] : (rec.g.empty() ? 1.0 : double(rec.g[j]));
      lam_next[j] = lam[j] * (1.0 - e);
    }
    double* dx = rep.d_inputs.row(t - 1);
    for (int i = 0; i < H; ++i) {
      const double e = soft ? rec.soft_g[i] : (rec.g.empty() ? 1.0 : double(rec.g[i]));
      if (e == 0.0) continue;
      const double tnh = tanh_fast(rec.pre[i]);
      const double u = lam[i] * e * (1.0 - tnh * tnh);
      if (u == 0.0) continue;
      const double* wx = p.w_xh.row(i);
      const double* wh = p.w_hh.row(i);
      double* gx = rep.rnn.w_xh.row(i);
      double* gh = rep.rnn.w_hh.row(i);
      for (int d = 0; d < D; ++d) {
        gx[d] += u * rec.x[d];
        dx[d] += u * wx[d];
      }
      for (int j = 0; j < H; ++j) {
        gh[j] += u * rec.h_prev[j];
        lam_next[j] += u * wh[j];
      }
      rep.rnn.b[i] += u;
    }
    lam.swap(lam_next);
  }
  rep.d_h0 = lam;
  auto [counts, rate] = nonidentity_count(tape);
  rep.nonidentity_counts = std::move(counts);
  rep.update_rate = rate;
  if (opts.program) zero_frozen_groups(*opts.program, rep.gate_program);
  return rep;
}

GradReport backward(const Tape& tape, const Mat& dloss_dh, const GruParams& p,
                    const BackwardOptions& opts) {
  if (tape.kind != CellKind::Gru) throw std::invalid_argument("backward: tape/params kind mismatch");
  const int T = tape.length();
  const int H = p.hidden();
  const int Din = p.input_dim();                      // augmented width when onepass
  const int Ddata = tape.onepass ? tape.data_dim : Din;
  if (T < 1) throw std::invalid_argument("backward: empty tape");
  if (dloss_dh.rows != T || dloss_dh.cols != H)
    throw std::invalid_argument("backward: dloss shape mismatch");
  if (tape.onepass && Din != Ddata + H)
    throw std::invalid_argument("backward: onepass dims inconsistent");

  GradReport rep;
  rep.kind = CellKind::Gru;
  rep.gru.w_ih = Mat(3 * H, Din);
  rep.gru.w_hh = Mat(3 * H, H);
  rep.gru.b_ih.assign(3 * H, 0.0);
  rep.gru.b_hh.assign(3 * H, 0.0);
  rep.adjoint_norms.assign(T, 0.0);
  rep.d_gate_preact = Mat(T, H);
  rep.d_inputs = Mat(T, Ddata);
  if (opts.program) rep.gate_program = GateProgramGrads::zeros_like(*opts.program);
  Vec lam(H, 0.0), lam_next(H, 0.0);
  Vec dxfull(Din, 0.0);

  for (int t = T; t >= 1; --t) {
    const StepRecord& rec = tape.steps[t - 1];
    const double* dl = dloss_dh.row(t - 1);
    for (int i = 0; i < H; ++i) lam[i] += dl[i];
    rep.adjoint_norms[t - 1] = vec_norm2(lam);

    const bool soft = !rec.soft_g.empty();
    // Stepwise selective tapes take the straight-through route here; onepass
    // tapes pick their gate signal out of the skip-drive channels below.
    const bool ste_gate = !tape.onepass && opts.gate_grads && !rec.gate_preact.empty() &&
                          (soft || !rec.g.empty());
    if (ste_gate) {
      double* da_row = rep.d_gate_preact.row(t - 1);
      for (int i = 0; i < H; ++i)
        da_row[i] = lam[i] * rec.delta_h[i] *
                    surrogate_grad(rec.gate_preact[i], opts.surrogate_slope);
      if (opts.program) chain_program_grads(*opts.program, t, da_row, rep.gate_program);
      if (opts.table_grads)
        for (int i = 0; i < H; ++i) (*opts.table_grads)(i, t - 1) += da_row[i];
    }

    const bool dense = tape.onepass || (rec.g.empty() && !soft);
    for (int j = 0; j < H; ++j) {
      const double e = dense ? 1.0 : (soft ? rec.soft_g[j] : double(rec.g[j]));
      lam_next[j] = lam[j] * (1.0 - e);
    }
    std::fill(dxfull.begin(), dxfull.end(), 0.0);

    for (int i = 0; i < H; ++i) {
      const double e = dense ? 1.0 : (soft ? rec.soft_g[i] : double(rec.g[i]));
      if (e == 0.0) continue;
      const double lf = lam[i] * e;
      if (lf == 0.0) continue;
      const double z = sigmoid(rec.pre_z[i]);
      const double cand = tanh_fast(rec.pre_n[i]);
      const double r = sigmoid(rec.pre_r[i]);

      const double dz = lf * (cand - rec.h_prev[i]);
      const double dcand = lf * z;
      lam_next[i] += lf * (1.0 - z);

      const double dnu = dcand * (1.0 - cand * cand);
      const double dr = dnu * rec.hpre_n[i];
      const double dhpre = dnu * r;
      const double dzeta = dz * z * (1.0 - z);
      const double drho = dr * r * (1.0 - r);

      const double* wx_r = p.w_ih.row(i);
      const double* wx_z = p.w_ih.row(H + i);
      const double* wx_n = p.w_ih.row(2 * H + i);
      const double* wh_r = p.w_hh.row(i);
      const double* wh_z = p.w_hh.row(H + i);
      const double* wh_n = p.w_hh.row(2 * H + i);
      double* gx_r = rep.gru.w_ih.row(i);
      double* gx_z = rep.gru.w_ih.row(H + i);
      double* gx_n = rep.gru.w_ih.row(2 * H + i);
      double* gh_r = rep.gru.w_hh.row(i);
      double* gh_z = rep.gru.w_hh.row(H + i);
      double* gh_n = rep.gru.w_hh.row(2 * H + i);

      for (int d = 0; d < Din; ++d) {
        const double xd = rec.x[d];
        gx_r[d] += drho * xd;
        gx_z[d] += dzeta * xd;
        gx_n[d] += dnu * xd;
        dxfull[d] += drho * wx_r[d] + dzeta * wx_z[d] + dnu * wx_n[d];
      }
      for (int j = 0; j < H; ++j) {
        const double hj = rec.h_prev[j];
        gh_r[j] += drho * hj;
        gh_z[j] += dzeta * hj;
        gh_n[j] += dhpre * hj;
        lam_next[j] += drho * wh_r[j] + dzeta * wh_z[j] + dhpre * wh_n[j];
      }
      rep.gru.b_ih[i] += drho;
      rep.gru.b_ih[H + i] += dzeta;
      rep.gru.b_ih[2 * H + i] += dnu;
      rep.gru.b_hh[i] += drho;
      rep.gru.b_hh[H + i] += dzeta;
      rep.gru.b_hh[2 * H + i] += dhpre;
    }

    double* dx = rep.d_inputs.row(t - 1);
    for (int d = 0; d < Ddata; ++d) dx[d] += dxfull[d];
    if (tape.onepass) {
      // Skip-drive channels carry the gate signal: suffix holds d/d(1-g) or
      // d/d(1-s), so the gate gradient is its negation.
      const bool want = opts.gate_grads && !rec.gate_preact.empty();
      if (want) {
        double* da_row = rep.d_gate_preact.row(t - 1);
        for (int i = 0; i < H; ++i)
          da_row[i] = -dxfull[Ddata + i] *
                      surrogate_grad(rec.gate_preact[i], opts.surrogate_slope);
        if (opts.program) chain_program_grads(*opts.program, t, da_row, rep.gate_program);
        if (opts.table_grads)
          for (int i = 0; i < H; ++i) (*opts.table_grads)(i, t - 1) += da_row[i];
      }
    }
    lam.swap(lam_next);
  }
  rep.d_h0 = lam;

  if (tape.onepass) {
    // Wired gate-channel blocks are projections, not free parameters.
    for (int head = 0; head < 3; ++head)
      for (int i = 0; i < H; ++i) {
        double* row = rep.gru.w_ih.row(head * H + i);
        for (int j = Ddata; j < Din; ++j) row[j] = 0.0;
      }
  }

  auto [counts, rate] = nonidentity_count(tape);
  rep.nonidentity_counts = std::move(counts);
  rep.update_rate = rate;
  if (opts.program) zero_frozen_groups(*opts.program, rep.gate_program);
  return rep;
}

GateProgramGrads gate_backward(const Tape& tape, const Mat& adjoints,
                               const GateProgram& program, double surrogate_slope) {
  const int T = tape.length();
  const int H = tape.hidden();
  if (adjoints.rows != T || adjoints.cols != H)
    throw std::invalid_argument("gate_backward: adjoint shape mismatch");
  GateProgramGrads grads = GateProgramGrads::zeros_like(program);
  Vec da(H);
  for (int t = 1; t <= T; ++t) {
    const StepRecord& rec = tape.steps[t - 1];
    if (rec.gate_preact.empty()) continue;
    const double* lam = adjoints.row(t - 1);
    for (int i = 0; i < H; ++i)
      da[i] = lam[i] * rec.delta_h[i] * surrogate_grad(rec.gate_preact[i], surrogate_slope);
    chain_program_grads(program, t, da.data(), grads);
  }
  return grads;
}

std::vector<std::pair<int, double>> grad_trace(const GradReport& report) {
  std::vector<std::pair<int, double>> out;
  out.reserve(report.adjoint_norms.size());
  for (size_t t = 0; t < report.adjoint_norms.size(); ++t)
    out.emplace_back(static_cast<int>(t + 1), report.adjoint_norms[t]);
  return out;
}

}  // namespace surnn
