// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Lane-batched kernels. The inner loops broadcast one weight across a block
// of lanes held in registers; per lane the accumulation order is identical
// to the reference path (bias, x terms ascending, h terms ascending), which
// keeps hidden states bit-identical between the two paths.

#include "surnn/engine.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace surnn {

namespace {

// Accumulator blocks sized to the vector width: fixed 8-lane chunks keep the
// compiler on clean packed mul/add sequences with the adds in independent
// chains.
template <int LB>
void accum_block(double* __restrict acc, const double* __restrict w,
                 const double* __restrict src, int n, int stride) {
  double a[LB];
  for (int l = 0; l < LB; ++l) a[l] = acc[l];
  for (int j = 0; j < n; ++j) {
    const double wj = w[j];
    const double* __restrict s = src + static_cast<size_t>(j) * stride;
    if constexpr (LB >= 8) {
      for (int c = 0; c < LB; c += 8)
        for (int l = 0; l < 8; ++l) a[c + l] += wj * s[c + l];
    } else {
      for (int l = 0; l < LB; ++l) a[l] += wj * s[l];
    }
  }
  for (int l = 0; l < LB; ++l) acc[l] = a[l];
}

// acc[b] += sum_j w[j] * src[j*stride + b], all lanes.
void accum_lanes(double* acc, const double* w, const double* src, int n, int lanes, int stride) {
  int b = 0;
  for (; b + 32 <= lanes; b += 32) accum_block<32>(acc + b, w, src + b, n, stride);
  for (; b + 16 <= lanes; b += 16) accum_block<16>(acc + b, w, src + b, n, stride);
  for (; b + 8 <= lanes; b += 8) accum_block<8>(acc + b, w, src + b, n, stride);
  for (; b + 4 <= lanes; b += 4) accum_block<4>(acc + b, w, src + b, n, stride);
  for (; b < lanes; ++b) accum_block<1>(acc + b, w, src + b, n, stride);
}

// Deterministic fixed-tree reduction over lanes (8 chains, then a pairwise
// fold), vector-friendly without reassociation license.
inline double reduce_lanes(const double* __restrict u, const double* __restrict x, int lanes) {
  double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int b = 0;
  for (; b + 8 <= lanes; b += 8)
    for (int l = 0; l < 8; ++l) s[l] += u[b + l] * x[b + l];
  for (; b < lanes; ++b) s[b & 7] += u[b] * x[b];
  return (((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7])));
}

// Gate-signal chain into rhythmic program gradients via shared tables.
struct ProgramChainer {
  const GateProgram* prog = nullptr;
  RhythmTable table;
  std::vector<double> cphi, sphi;  // [i][k]

  void prepare(const GateProgram& p, int steps) {
    prog = &p;
    if (!table.matches(p.omega, steps)) table.build(p.omega, steps);
    const int h = p.hidden(), kc = p.num_freqs();
    cphi.resize(static_cast<size_t>(h) * kc);
    sphi.resize(cphi.size());
    for (int i = 0; i < h; ++i)
      for (int k = 0; k < kc; ++k) {
        cphi[static_cast<size_t>(i) * kc + k] = std::cos(p.phi(i, k));
        sphi[static_cast<size_t>(i) * kc + k] = std::sin(p.phi(i, k));
      }
  }

  void chain(int t, const double* d_a, GateProgramGrads& g) const {
    const GateProgram& p = *prog;
    const int h = p.hidden(), kc = p.num_freqs();
    const double* srow = &table.sin_wt[static_cast<size_t>(t - 1) * kc];
    const double* crow = &table.cos_wt[static_cast<size_t>(t - 1) * kc];
    const double td = static_cast<double>(t);
    for (int i = 0; i < h; ++i) {
      const double da = d_a[i];
      if (da == 0.0) continue;
      g.d_bias[i] += da;
      const double* al = p.alpha.row(i);
      const double* cp = &cphi[static_cast<size_t>(i) * kc];
      const double* sp = &sphi[static_cast<size_t>(i) * kc];
      double* ga = g.d_alpha.row(i);
      double* gp = g.d_phi.row(i);
      for (int k = 0; k < kc; ++k) {
        const double sin_a = srow[k] * cp[k] + crow[k] * sp[k];
        const double cos_a = crow[k] * cp[k] - srow[k] * sp[k];
        ga[k] += da * sin_a;
        gp[k] += da * al[k] * cos_a;
        if (p.learn_omega) g.d_omega[k] += da * al[k] * cos_a * td;
      }
    }
  }
};

void alloc_tape(const LayerParams& layer, int steps, int lanes, LayerTape& tape) {
  tape.kind = layer.kind;
  tape.steps = steps;
  tape.hidden = layer.hidden;
  tape.lanes = lanes;
  tape.data_dim = layer.input_dim;
  const size_t cells = static_cast<size_t>(steps) * layer.hidden * lanes;
  tape.h.assign(cells + static_cast<size_t>(layer.hidden) * lanes, 0.0);
  if (layer.uses_gru()) {
    tape.r_v.resize(cells);
    tape.z_v.resize(cells);
    tape.cand_v.resize(cells);
    tape.hpre_n.resize(cells);
  } else {
    tape.f_v.resize(cells);
  }
}

}  // namespace

void layer_forward(const LayerParams& layer, const double* x, int steps, int lanes,
                   LayerTape& tape) {
  const int H = layer.hidden;
  const int D = layer.input_dim;
  const int B = lanes;
  alloc_tape(layer, steps, lanes, tape);
  const bool selective = layer.is_selective();
  const bool onepass = layer.is_onepass();
  if ((selective || onepass) && (tape.mask.steps != steps || tape.mask.hidden != H))
    throw std::invalid_argument("layer_forward: gate mask not prepared");

  std::vector<double> acc1(B), acc2(B), acc3(B), acc4(B);

  if (!layer.uses_gru()) {
    const RnnParams& p = layer.rnn;
    for (int t = 1; t <= steps; ++t) {
      const double* hp = tape.h_at(t - 1);
      double* hn = tape.h_at(t);
      const double* xt = x + static_cast<size_t>(t - 1) * D * B;
      double* fv = tape.f_v.data() + static_cast<size_t>(t - 1) * H * B;
      const uint8_t* grow = selective ? tape.mask.gate_row(t - 1) : nullptr;
      for (int i = 0; i < H; ++i) {
        for (int b = 0; b < B; ++b) acc1[b] = p.b[i];
        accum_lanes(acc1.data(), p.w_xh.row(i), xt, D, B, B);
        accum_lanes(acc1.data(), p.w_hh.row(i), hp, H, B, B);
        double* f_i = fv + static_cast<size_t>(i) * B;
        double* hn_i = hn + static_cast<size_t>(i) * B;
        const double* hp_i = hp + static_cast<size_t>(i) * B;
        if (selective && !grow[i]) {
          for (int b = 0; b < B; ++b) {
            f_i[b] = tanh_fast(acc1[b]);  // proposal kept for the gate signal
            hn_i[b] = hp_i[b];
          }
        } else {
          for (int b = 0; b < B; ++b) {
            f_i[b] = tanh_fast(acc1[b]);
            hn_i[b] = f_i[b];
          }
        }
      }
    }
    return;
  }

  const GruParams& p = layer.gru;
  if (onepass && p.input_dim() != D + H)
    throw std::invalid_argument("layer_forward: onepass cell dims inconsistent");
  if (!onepass && p.input_dim() != D)
    throw std::invalid_argument("layer_forward: cell input dim mismatch");

  for (int t = 1; t <= steps; ++t) {
    const double* hp = tape.h_at(t - 1);
    double* hn = tape.h_at(t);
    const double* xt = x + static_cast<size_t>(t - 1) * D * B;
    const size_t off = static_cast<size_t>(t - 1) * H * B;
    double* rv = tape.r_v.data() + off;
    double* zv = tape.z_v.data() + off;
    double* cv = tape.cand_v.data() + off;
    double* hv = tape.hpre_n.data() + off;
    const uint8_t* grow = (selective || onepass) ? tape.mask.gate_row(t - 1) : nullptr;
    for (int i = 0; i < H; ++i) {
      // r head
      for (int b = 0; b < B; ++b) acc1[b] = p.b_ih[i] + p.b_hh[i];
      accum_lanes(acc1.data(), p.w_ih.row(i), xt, D, B, B);
      accum_lanes(acc1.data(), p.w_hh.row(i), hp, H, B, B);
      // z head; onepass injects the skip-drive shift between x and h terms
      for (int b = 0; b < B; ++b) acc2[b] = p.b_ih[H + i] + p.b_hh[H + i];
      accum_lanes(acc2.data(), p.w_ih.row(H + i), xt, D, B, B);
      if (onepass) {
        const double shift = layer.wiring_c * (grow[i] ? 0.0 : 1.0);
        for (int b = 0; b < B; ++b) acc2[b] += shift;
      }
      accum_lanes(acc2.data(), p.w_hh.row(H + i), hp, H, B, B);
      // n head, x and h parts separate
      for (int b = 0; b < B; ++b) acc3[b] = p.b_ih[2 * H + i];
      accum_lanes(acc3.data(), p.w_ih.row(2 * H + i), xt, D, B, B);
      for (int b = 0; b < B; ++b) acc4[b] = p.b_hh[2 * H + i];
      accum_lanes(acc4.data(), p.w_hh.row(2 * H + i), hp, H, B, B);

      double* r_i = rv + static_cast<size_t>(i) * B;
      double* z_i = zv + static_cast<size_t>(i) * B;
      double* c_i = cv + static_cast<size_t>(i) * B;
      double* hv_i = hv + static_cast<size_t>(i) * B;
      double* hn_i = hn + static_cast<size_t>(i) * B;
      const double* hp_i = hp + static_cast<size_t>(i) * B;
      const bool carry = selective && !grow[i];
      for (int b = 0; b < B; ++b) {
        const double r = sigmoid(acc1[b]);
        const double z = sigmoid(acc2[b]);
        const double hpre = acc4[b];
        const double cand = tanh_fast(acc3[b] + r * hpre);
        r_i[b] = r;
        z_i[b] = z;
        c_i[b] = cand;
        hv_i[b] = hpre;
        hn_i[b] = carry ? hp_i[b] : hp_i[b] + z * (cand - hp_i[b]);
      }
    }
  }
}

void layer_backward(const LayerParams& layer, const LayerTape& tape, const double* x,
                    std::vector<double>& d_h, LayerGrads& grads, double* d_x,
                    Vec* adjoint_sumsq) {
  const int H = layer.hidden;
  const int D = layer.input_dim;
  const int B = tape.lanes;
  const int T = tape.steps;
  const bool selective = layer.is_selective();
  const bool onepass = layer.is_onepass();
  const GateProgram* prog = schedule_program(layer.schedule);
  const bool learnable = schedule_is_learnable(layer.schedule) && (selective || onepass);
  Mat* table_grads = nullptr;
  if (learnable && std::holds_alternative<LearnableTableGate>(layer.schedule))
    table_grads = &grads.table;
  ProgramChainer chainer;
  if (learnable && prog) chainer.prepare(*prog, T);
  if (adjoint_sumsq) adjoint_sumsq->assign(T, 0.0);

  std::vector<double> lam(static_cast<size_t>(H) * B, 0.0);
  std::vector<double> lam_next(static_cast<size_t>(H) * B, 0.0);
  std::vector<double> da_row(H, 0.0);
  std::vector<double> t1(B), t2(B), t3(B), t4(B);

  for (int t = T; t >= 1; --t) {
    const double* inj = d_h.data() + static_cast<size_t>(t - 1) * H * B;
    for (size_t idx = 0; idx < lam.size(); ++idx) lam[idx] += inj[idx];
    if (adjoint_sumsq) {
      double ss = 0;
      for (double v : lam) ss += v * v;
      (*adjoint_sumsq)[t - 1] = ss;
    }
    const double* hp = tape.h_at(t - 1);
    const double* xt = x + static_cast<size_t>(t - 1) * D * B;
    double* dxt = d_x + static_cast<size_t>(t - 1) * D * B;
    const uint8_t* grow = (selective || onepass) ? tape.mask.gate_row(t - 1) : nullptr;
    const double* arow = (selective || onepass) ? tape.mask.preact_row(t - 1) : nullptr;

    if (!layer.uses_gru()) {
      const RnnParams& p = layer.rnn;
      const double* fv = tape.f_v.data() + static_cast<size_t>(t - 1) * H * B;
      // Straight-through gate signal from the proposal deviation.
      if (learnable) {
        for (int i = 0; i < H; ++i) {
          const double* f_i = fv + static_cast<size_t>(i) * B;
          const double* hp_i = hp + static_cast<size_t>(i) * B;
          const double* lam_i = lam.data() + static_cast<size_t>(i) * B;
          double s = 0;
          for (int b = 0; b < B; ++b) s += lam_i[b] * (f_i[b] - hp_i[b]);
          da_row[i] = s * surrogate_grad(arow[i], layer.surrogate_slope);
        }
        if (prog) chainer.chain(t, da_row.data(), grads.program);
        if (table_grads)
          for (int i = 0; i < H; ++i) (*table_grads)(i, t - 1) += da_row[i];
      }
      for (int i = 0; i < H; ++i) {
        const bool open = !selective || grow[i];
        const double* lam_i = lam.data() + static_cast<size_t>(i) * B;
        double* ln_i = lam_next.data() + static_cast<size_t>(i) * B;
        for (int b = 0; b < B; ++b) ln_i[b] = open ? 0.0 : lam_i[b];
      }
      for (int i = 0; i < H; ++i) {
        if (selective && !grow[i]) continue;
        const double* f_i = fv + static_cast<size_t>(i) * B;
        const double* lam_i = lam.data() + static_cast<size_t>(i) * B;
        double* u = t1.data();
        bool any = false;
        for (int b = 0; b < B; ++b) {
          u[b] = lam_i[b] * (1.0 - f_i[b] * f_i[b]);
          any = any || (u[b] != 0.0);
        }
        if (!any) continue;
        double* gx = grads.rnn.w_xh.row(i);
        double* gh = grads.rnn.w_hh.row(i);
        const double* wx = p.w_xh.row(i);
        const double* wh = p.w_hh.row(i);
        for (int j = 0; j < D; ++j) {
          const double* xj = xt + static_cast<size_t>(j) * B;
          gx[j] += reduce_lanes(u, xj, B);
          double* __restrict dxj = dxt + static_cast<size_t>(j) * B;
          const double w = wx[j];
          for (int b = 0; b < B; ++b) dxj[b] += u[b] * w;
        }
        for (int j = 0; j < H; ++j) {
          const double* hj = hp + static_cast<size_t>(j) * B;
          gh[j] += reduce_lanes(u, hj, B);
          double* __restrict lnj = lam_next.data() + static_cast<size_t>(j) * B;
          const double w = wh[j];
          for (int b = 0; b < B; ++b) lnj[b] += u[b] * w;
        }
        double sb = 0;
        for (int b = 0; b < B; ++b) sb += u[b];
        grads.rnn.b[i] += sb;
      }
      lam.swap(lam_next);
      continue;
    }

    const GruParams& p = layer.gru;
    const size_t off = static_cast<size_t>(t - 1) * H * B;
    const double* rv = tape.r_v.data() + off;
    const double* zv = tape.z_v.data() + off;
    const double* cv = tape.cand_v.data() + off;
    const double* hv = tape.hpre_n.data() + off;

    if (learnable && !onepass) {
      for (int i = 0; i < H; ++i) {
        const double* z_i = zv + static_cast<size_t>(i) * B;
        const double* c_i = cv + static_cast<size_t>(i) * B;
        const double* hp_i = hp + static_cast<size_t>(i) * B;
        const double* lam_i = lam.data() + static_cast<size_t>(i) * B;
        double s = 0;
        for (int b = 0; b < B; ++b) s += lam_i[b] * z_i[b] * (c_i[b] - hp_i[b]);
        da_row[i] = s * surrogate_grad(arow[i], layer.surrogate_slope);
      }
      if (prog) chainer.chain(t, da_row.data(), grads.program);
      if (table_grads)
        for (int i = 0; i < H; ++i) (*table_grads)(i, t - 1) += da_row[i];
    }
    if (learnable && onepass) std::fill(da_row.begin(), da_row.end(), 0.0);

    for (int i = 0; i < H; ++i) {
      const bool open = !selective || grow[i];
      const double* lam_i = lam.data() + static_cast<size_t>(i) * B;
      double* ln_i = lam_next.data() + static_cast<size_t>(i) * B;
      for (int b = 0; b < B; ++b) ln_i[b] = open ? 0.0 : lam_i[b];
    }
    for (int i = 0; i < H; ++i) {
      if (selective && !grow[i]) continue;
      const double* lam_i = lam.data() + static_cast<size_t>(i) * B;
      const double* r_i = rv + static_cast<size_t>(i) * B;
      const double* z_i = zv + static_cast<size_t>(i) * B;
      const double* c_i = cv + static_cast<size_t>(i) * B;
      const double* hv_i = hv + static_cast<size_t>(i) * B;
      const double* hp_i = hp + static_cast<size_t>(i) * B;
      double* drho = t1.data();
      double* dzeta = t2.data();
      double* dnu = t3.data();
      double* dhpre = t4.data();
      double* ln_i = lam_next.data() + static_cast<size_t>(i) * B;
      bool any = false;
      for (int b = 0; b < B; ++b) {
        const double lf = lam_i[b];
        const double z = z_i[b];
        const double cand = c_i[b];
        const double r = r_i[b];
        const double dz = lf * (cand - hp_i[b]);
        const double dcand = lf * z;
        ln_i[b] += lf * (1.0 - z);
        const double dnu_b = dcand * (1.0 - cand * cand);
        const double dr = dnu_b * hv_i[b];
        dnu[b] = dnu_b;
        dhpre[b] = dnu_b * r;
        dzeta[b] = dz * z * (1.0 - z);
        drho[b] = dr * r * (1.0 - r);
        any = any || lf != 0.0;
      }
      if (!any) continue;
      if (learnable && onepass) {
        double s = 0;
        for (int b = 0; b < B; ++b) s += dzeta[b];
        da_row[i] = -layer.wiring_c * s * surrogate_grad(arow[i], layer.surrogate_slope);
      }
      const double* wx_r = p.w_ih.row(i);
      const double* wx_z = p.w_ih.row(H + i);
      const double* wx_n = p.w_ih.row(2 * H + i);
      const double* wh_r = p.w_hh.row(i);
      const double* wh_z = p.w_hh.row(H + i);
      const double* wh_n = p.w_hh.row(2 * H + i);
      double* gx_r = grads.gru.w_ih.row(i);
      double* gx_z = grads.gru.w_ih.row(H + i);
      double* gx_n = grads.gru.w_ih.row(2 * H + i);
      double* gh_r = grads.gru.w_hh.row(i);
      double* gh_z = grads.gru.w_hh.row(H + i);
      double* gh_n = grads.gru.w_hh.row(2 * H + i);
      for (int j = 0; j < D; ++j) {
        const double* xj = xt + static_cast<size_t>(j) * B;
        gx_r[j] += reduce_lanes(drho, xj, B);
        gx_z[j] += reduce_lanes(dzeta, xj, B);
        gx_n[j] += reduce_lanes(dnu, xj, B);
        double* __restrict dxj = dxt + static_cast<size_t>(j) * B;
        const double wr = wx_r[j], wz = wx_z[j], wn = wx_n[j];
        for (int b = 0; b < B; ++b) dxj[b] += drho[b] * wr + dzeta[b] * wz + dnu[b] * wn;
      }
      for (int j = 0; j < H; ++j) {
        const double* hj = hp + static_cast<size_t>(j) * B;
        gh_r[j] += reduce_lanes(drho, hj, B);
        gh_z[j] += reduce_lanes(dzeta, hj, B);
        gh_n[j] += reduce_lanes(dhpre, hj, B);
        double* __restrict lnj = lam_next.data() + static_cast<size_t>(j) * B;
        const double wr = wh_r[j], wz = wh_z[j], wn = wh_n[j];
        for (int b = 0; b < B; ++b) lnj[b] += drho[b] * wr + dzeta[b] * wz + dhpre[b] * wn;
      }
      double sr = 0, sz = 0, sn = 0, sh = 0;
      for (int b = 0; b < B; ++b) {
        sr += drho[b];
        sz += dzeta[b];
        sn += dnu[b];
        sh += dhpre[b];
      }
      grads.gru.b_ih[i] += sr;
      grads.gru.b_ih[H + i] += sz;
      grads.gru.b_ih[2 * H + i] += sn;
      grads.gru.b_hh[i] += sr;
      grads.gru.b_hh[H + i] += sz;
      grads.gru.b_hh[2 * H + i] += sh;
    }
    if (learnable && onepass) {
      if (prog) chainer.chain(t, da_row.data(), grads.program);
      if (table_grads)
        for (int i = 0; i < H; ++i) (*table_grads)(i, t - 1) += da_row[i];
    }
    lam.swap(lam_next);
  }
}

namespace {

std::vector<GateMask> make_layer_masks(const Model& m, int steps) {
  std::vector<GateMask> masks(m.layers.size());
  for (size_t l = 0; l < m.layers.size(); ++l) {
    const LayerParams& layer = m.layers[l];
    if (!(layer.is_selective() || layer.is_onepass())) continue;
    if (std::holds_alternative<InputThresholdGate>(layer.schedule))
      throw std::invalid_argument("batched engine: input-threshold gates are per-sequence; "
                                  "use the reference path");
    if (const GateProgram* prog = schedule_program(layer.schedule)) {
      RhythmTable table;
      masks[l] = precompute_mask_fast(*prog, steps, table);
    } else {
      masks[l] = generate_mask(layer.schedule, steps, layer.hidden);
    }
  }
  return masks;
}

}  // namespace

BatchedForward model_forward_batched(const Model& m, const TaskBatch& batch) {
  const int T = batch.steps;
  const int B = batch.batch;
  const int O = m.cfg.output_dim;
  if (batch.input_dim != m.cfg.input_dim)
    throw std::invalid_argument("model_forward_batched: input dim mismatch");
  if (m.cfg.dropout != 0.0)
    throw std::invalid_argument("model_forward_batched: dropout not supported on this path");

  BatchedForward out;
  // [b][t][d] -> [t][d][b]
  out.x0.resize(static_cast<size_t>(T) * batch.input_dim * B);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      const double* src = batch.input(b, t);
      for (int d = 0; d < batch.input_dim; ++d)
        out.x0[(static_cast<size_t>(t) * batch.input_dim + d) * B + b] = src[d];
    }

  std::vector<GateMask> masks = make_layer_masks(m, T);
  out.tapes.resize(m.layers.size());
  const double* x = out.x0.data();
  for (size_t l = 0; l < m.layers.size(); ++l) {
    out.tapes[l].mask = std::move(masks[l]);
    layer_forward(m.layers[l], x, T, B, out.tapes[l]);
    x = out.tapes[l].h_at(1);
  }

  // Readout at masked steps only.
  out.logits.assign(static_cast<size_t>(T) * O * B, 0.0);
  const LayerTape& top = out.tapes.back();
  const int Htop = top.hidden;
  for (int t = 0; t < T; ++t) {
    bool any = false;
    for (int b = 0; b < B; ++b) any = any || batch.mask(b, t);
    if (!any) continue;
    const double* ht = top.h_at(t + 1);
    for (int o = 0; o < O; ++o) {
      double* row = out.logits.data() + (static_cast<size_t>(t) * O + o) * B;
      for (int b = 0; b < B; ++b) row[b] = m.b_out[o];
      accum_lanes(row, m.w_out.row(o), ht, Htop, B, B);
    }
  }

  out.loss = batch.num_classes > 0 ? loss_ce(out.logits, T, O, batch)
                                   : loss_mse(out.logits, T, O, batch);
  return out;
}

void model_backward_batched(const Model& m, const TaskBatch& batch, BatchedForward& fwd,
                            ModelGrads& grads, Vec* adjoint_sumsq) {
  const int T = batch.steps;
  const int B = batch.batch;
  const int O = m.cfg.output_dim;
  const LayerTape& top = fwd.tapes.back();
  const int Htop = top.hidden;

  // Readout backward: d_h injections for the top layer.
  std::vector<double> d_h(static_cast<size_t>(T) * Htop * B, 0.0);
  const std::vector<double>& dlog = fwd.loss.dlogits;
  for (int t = 0; t < T; ++t) {
    const double* ht = top.h_at(t + 1);
    for (int o = 0; o < O; ++o) {
      const double* dl = dlog.data() + (static_cast<size_t>(t) * O + o) * B;
      bool any = false;
      for (int b = 0; b < B; ++b) any = any || dl[b] != 0.0;
      if (!any) continue;
      double s = 0;
      for (int b = 0; b < B; ++b) s += dl[b];
      grads.b_out[o] += s;
      const double* w = m.w_out.row(o);
      double* gw = grads.w_out.row(o);
      for (int i = 0; i < Htop; ++i) {
        const double* hi = ht + static_cast<size_t>(i) * B;
        gw[i] += reduce_lanes(dl, hi, B);
        double* dh = d_h.data() + (static_cast<size_t>(t) * Htop + i) * B;
        const double wi = w[i];
        for (int b = 0; b < B; ++b) dh[b] += dl[b] * wi;
      }
    }
  }

  // Walk layers top to bottom; d_x of one layer is d_h of the one below.
  for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
    const LayerParams& layer = m.layers[l];
    const double* x = l == 0 ? fwd.x0.data() : fwd.tapes[l - 1].h_at(1);
    std::vector<double> d_x(static_cast<size_t>(T) * layer.input_dim * B, 0.0);
    Vec* sumsq = (l == 0) ? adjoint_sumsq : nullptr;
    layer_backward(layer, fwd.tapes[l], x, d_h, grads.layers[l], d_x.data(), sumsq);
    d_h = std::move(d_x);
  }
}

}  // namespace surnn
