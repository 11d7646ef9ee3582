// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "surnn/engine.hpp"
#include "surnn/onepass.hpp"
#include "surnn/tensor_io.hpp"

namespace surnn {

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "rnn") return LayerKind::Rnn;
  if (s == "gru") return LayerKind::Gru;
  if (s == "su-rnn") return LayerKind::SuRnn;
  if (s == "su-gru") return LayerKind::SuGru;
  if (s == "onepass-su-gru") return LayerKind::OnePassSuGru;
  throw std::invalid_argument("unknown layer kind: " + s);
}

std::string layer_kind_to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Rnn: return "rnn";
    case LayerKind::Gru: return "gru";
    case LayerKind::SuRnn: return "su-rnn";
    case LayerKind::SuGru: return "su-gru";
    case LayerKind::OnePassSuGru: return "onepass-su-gru";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("ModelConfig: need at least one layer");
  if (input_dim < 1 || output_dim < 1 || max_seq_len < 2)
    throw std::invalid_argument("ModelConfig: bad dims");
  for (const LayerSpec& l : layers)
    if (l.hidden < 1) throw std::invalid_argument("ModelConfig: layer hidden must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("ModelConfig: bad dropout");
}

namespace {

GateSchedule build_schedule(const GateSpec& spec, int hidden, int max_seq_len, Rng& rng) {
  if (spec.schedule == "rhythmic" || spec.schedule == "fixed_random_rhythmic") {
    const int k = spec.num_freqs > 0 ? spec.num_freqs : hidden;
    GateProgram prog = GateProgram::init(hidden, k, max_seq_len, rng);
    prog.surrogate_slope = spec.surrogate_slope;
    prog.learn_omega = spec.learn_omega;
    if (spec.amp_init == "per_unit") {
      // One dominant rhythm per neuron, log-spaced across the grid, with
      // faint broadband noise left in so other timescales stay reachable.
      for (int i = 0; i < hidden; ++i) {
        const int dom = hidden > 1 ? static_cast<int>(
                            std::llround(static_cast<double>(i) * (k - 1) / (hidden - 1)))
                                   : 0;
        for (int f = 0; f < k; ++f) prog.alpha(i, f) = rng.normal(0.0, 0.02);
        prog.alpha(i, dom) = 1.0;
      }
    } else if (spec.amp_init != "dense") {
      throw std::invalid_argument("unknown amp_init: " + spec.amp_init);
    }
    if (spec.schedule == "rhythmic") return RhythmicGate{std::move(prog)};
    return FixedRandomRhythmicGate{std::move(prog)};
  }
  if (spec.schedule == "every_k") return EveryKStepsGate{spec.k};
  if (spec.schedule == "fixed_random_bernoulli")
    return FixedRandomBernoulliGate{spec.p, spec.seed ? spec.seed : rng.next_u64()};
  if (spec.schedule == "input_threshold") return InputThresholdGate{};
  if (spec.schedule == "learnable_table") {
    Mat logits = random_normal_mat(hidden, max_seq_len, 0.0, 0.5, rng);
    return LearnableTableGate{std::move(logits), spec.surrogate_slope};
  }
  throw std::invalid_argument("unknown gate schedule: " + spec.schedule);
}

}  // namespace

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng root(seed);
  int in_dim = cfg.input_dim;
  for (size_t l = 0; l < cfg.layers.size(); ++l) {
    const LayerSpec& spec = cfg.layers[l];
    Rng lr = root.split(l + 1);
    LayerParams layer;
    layer.kind = spec.kind;
    layer.hidden = spec.hidden;
    layer.input_dim = in_dim;
    layer.surrogate_slope = spec.gate.surrogate_slope;
    switch (spec.kind) {
      case LayerKind::Rnn:
      case LayerKind::SuRnn:
        layer.rnn = RnnParams::init(spec.hidden, in_dim, lr);
        break;
      case LayerKind::Gru:
      case LayerKind::SuGru:
        layer.gru = GruParams::init(spec.hidden, in_dim, lr);
        break;
      case LayerKind::OnePassSuGru: {
        double c = spec.wiring_c.value_or(
            retention_bound_c({cfg.max_seq_len, 0.01, 0.0}));
        OnePassGru op = OnePassGru::init(spec.hidden, in_dim, c, lr);
        layer.gru = std::move(op.gru);
        layer.wiring_c = c;
        break;
      }
    }
    if (layer.is_selective() || layer.is_onepass()) {
      Rng gr = lr.split(0x9a7e);
      layer.schedule = build_schedule(spec.gate, spec.hidden, cfg.max_seq_len, gr);
    }
    if (layer.uses_gru() && spec.z_bias_init != 0.0)
      for (int i = 0; i < spec.hidden; ++i) layer.gru.b_ih[spec.hidden + i] = spec.z_bias_init;
    m.layers.push_back(std::move(layer));
    in_dim = spec.hidden;
  }
  Rng rr = root.split(0xead0u);
  const int h_top = cfg.layers.back().hidden;
  const double s = 1.0 / std::sqrt(static_cast<double>(h_top));
  m.w_out = random_uniform_mat(cfg.output_dim, h_top, -s, s, rr);
  m.b_out.assign(cfg.output_dim, 0.0);
  return m;
}

void Model::enforce_wiring_all() {
  for (LayerParams& layer : layers) {
    if (!layer.is_onepass()) continue;
    OnePassGru view;
    view.gru = std::move(layer.gru);
    view.data_dim = layer.input_dim;
    view.wiring_c = layer.wiring_c;
    enforce_wiring(view);
    layer.gru = std::move(view.gru);
  }
}

ModelGrads ModelGrads::zeros_like(const Model& m) {
  ModelGrads g;
  g.layers.resize(m.layers.size());
  for (size_t l = 0; l < m.layers.size(); ++l) {
    const LayerParams& layer = m.layers[l];
    LayerGrads& lg = g.layers[l];
    if (layer.uses_gru()) {
      lg.gru.w_ih = Mat(layer.gru.w_ih.rows, layer.gru.w_ih.cols);
      lg.gru.w_hh = Mat(layer.gru.w_hh.rows, layer.gru.w_hh.cols);
      lg.gru.b_ih.assign(layer.gru.b_ih.size(), 0.0);
      lg.gru.b_hh.assign(layer.gru.b_hh.size(), 0.0);
    } else {
      lg.rnn.w_xh = Mat(layer.rnn.w_xh.rows, layer.rnn.w_xh.cols);
      lg.rnn.w_hh = Mat(layer.rnn.w_hh.rows, layer.rnn.w_hh.cols);
      lg.rnn.b.assign(layer.rnn.b.size(), 0.0);
    }
    if (const GateProgram* prog = schedule_program(layer.schedule))
      lg.program = GateProgramGrads::zeros_like(*prog);
    if (const auto* tbl = std::get_if<LearnableTableGate>(&layer.schedule))
      lg.table = Mat(tbl->logits.rows, tbl->logits.cols);
  }
  g.w_out = Mat(m.w_out.rows, m.w_out.cols);
  g.b_out.assign(m.b_out.size(), 0.0);
  return g;
}

namespace {

void zero_fill(Mat& m) { std::fill(m.data.begin(), m.data.end(), 0.0); }
void zero_fill(Vec& v) { std::fill(v.begin(), v.end(), 0.0); }

void axpy(Mat& dst, const Mat& src, double a) {
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += a * src.data[i];
}
void axpy(Vec& dst, const Vec& src, double a) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

}  // namespace

void ModelGrads::zero() {
  for (LayerGrads& lg : layers) {
    zero_fill(lg.rnn.w_xh);
    zero_fill(lg.rnn.w_hh);
    zero_fill(lg.rnn.b);
    zero_fill(lg.gru.w_ih);
    zero_fill(lg.gru.w_hh);
    zero_fill(lg.gru.b_ih);
    zero_fill(lg.gru.b_hh);
    zero_fill(lg.program.d_alpha);
    zero_fill(lg.program.d_phi);
    zero_fill(lg.program.d_bias);
    zero_fill(lg.program.d_omega);
    zero_fill(lg.table);
  }
  zero_fill(w_out);
  zero_fill(b_out);
}

void ModelGrads::add_scaled(const ModelGrads& other, double a) {
  for (size_t l = 0; l < layers.size(); ++l) {
    LayerGrads& d = layers[l];
    const LayerGrads& s = other.layers[l];
    axpy(d.rnn.w_xh, s.rnn.w_xh, a);
    axpy(d.rnn.w_hh, s.rnn.w_hh, a);
    axpy(d.rnn.b, s.rnn.b, a);
    axpy(d.gru.w_ih, s.gru.w_ih, a);
    axpy(d.gru.w_hh, s.gru.w_hh, a);
    axpy(d.gru.b_ih, s.gru.b_ih, a);
    axpy(d.gru.b_hh, s.gru.b_hh, a);
    axpy(d.program.d_alpha, s.program.d_alpha, a);
    axpy(d.program.d_phi, s.program.d_phi, a);
    axpy(d.program.d_bias, s.program.d_bias, a);
    axpy(d.program.d_omega, s.program.d_omega, a);
    axpy(d.table, s.table, a);
  }
  axpy(w_out, other.w_out, a);
  axpy(b_out, other.b_out, a);
}

// ---- losses ----------------------------------------------------------------

LossResult loss_ce(const std::vector<double>& logits, int steps, int outputs,
                   const TaskBatch& batch) {
  const int B = batch.batch;
  LossResult res;
  res.masked = batch.mask_count();
  if (res.masked == 0) throw std::invalid_argument("loss_ce: empty loss mask");
  res.dlogits.assign(logits.size(), 0.0);
  double total = 0.0;
  size_t correct = 0;
  const double inv = 1.0 / static_cast<double>(res.masked);
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < B; ++b) {
      if (!batch.mask(b, t)) continue;
      const int target = static_cast<int>(batch.target(b, t));
      double mx = -1e300;
      int argmax = 0;
      for (int o = 0; o < outputs; ++o) {
        const double v = logits[(static_cast<size_t>(t) * outputs + o) * B + b];
        if (v > mx) {
          mx = v;
          argmax = o;
        }
      }
      double sum = 0.0;
      for (int o = 0; o < outputs; ++o)
        sum += std::exp(logits[(static_cast<size_t>(t) * outputs + o) * B + b] - mx);
      const double lse = mx + std::log(sum);
      total += lse - logits[(static_cast<size_t>(t) * outputs + target) * B + b];
      if (argmax == target) ++correct;
      for (int o = 0; o < outputs; ++o) {
        const size_t idx = (static_cast<size_t>(t) * outputs + o) * B + b;
        const double p = std::exp(logits[idx] - lse);
        res.dlogits[idx] = (p - (o == target ? 1.0 : 0.0)) * inv;
      }
    }
  }
  res.value = total * inv;
  res.accuracy = static_cast<double>(correct) / static_cast<double>(res.masked);
  return res;
}

LossResult loss_mse(const std::vector<double>& logits, int steps, int outputs,
                    const TaskBatch& batch) {
  if (outputs != 1) throw std::invalid_argument("loss_mse: expected a single output");
  const int B = batch.batch;
  LossResult res;
  res.masked = batch.mask_count();
  if (res.masked == 0) throw std::invalid_argument("loss_mse: empty loss mask");
  res.dlogits.assign(logits.size(), 0.0);
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(res.masked);
  for (int t = 0; t < steps; ++t)
    for (int b = 0; b < B; ++b) {
      if (!batch.mask(b, t)) continue;
      const size_t idx = static_cast<size_t>(t) * B + b;
      const double e = logits[idx] - batch.target(b, t);
      total += e * e;
      res.dlogits[idx] = 2.0 * e * inv;
    }
  res.value = total * inv;
  return res;
}

// ---- shared mask construction ----------------------------------------------

namespace detail {

std::vector<GateMask> make_layer_masks_ref(const Model& m, int steps, const Mat* layer0_inputs) {
  std::vector<GateMask> masks(m.layers.size());
  for (size_t l = 0; l < m.layers.size(); ++l) {
    const LayerParams& layer = m.layers[l];
    if (!(layer.is_selective() || layer.is_onepass())) continue;
    if (const GateProgram* prog = schedule_program(layer.schedule)) {
      RhythmTable table;
      masks[l] = precompute_mask_fast(*prog, steps, table);
    } else if (std::holds_alternative<InputThresholdGate>(layer.schedule)) {
      if (l != 0 || !layer0_inputs)
        throw std::invalid_argument("input-threshold gates need the raw input stream (layer 0)");
      masks[l] = generate_mask(layer.schedule, steps, layer.hidden, layer0_inputs);
    } else {
      masks[l] = generate_mask(layer.schedule, steps, layer.hidden);
    }
  }
  return masks;
}

}  // namespace detail

// ---- reference path ----------------------------------------------------------

RefForward model_forward_reference(const Model& m, const TaskBatch& batch, int lane,
                                   GateMode mode) {
  if (m.cfg.dropout != 0.0)
    throw std::invalid_argument("reference path does not support dropout");
  const int T = batch.steps;
  const int O = m.cfg.output_dim;
  if (lane < 0 || lane >= batch.batch) throw std::invalid_argument("lane out of range");

  Mat x(T, batch.input_dim);
  for (int t = 0; t < T; ++t) {
    const double* src = batch.input(lane, t);
    for (int d = 0; d < batch.input_dim; ++d) x(t, d) = src[d];
  }

  RefForward out;
  out.masks = detail::make_layer_masks_ref(m, T, &x);
  out.tapes.resize(m.layers.size());

  Mat cur = x;
  for (size_t l = 0; l < m.layers.size(); ++l) {
    const LayerParams& layer = m.layers[l];
    const GateMask& mask = out.masks[l];
    Tape& tape = out.tapes[l];
    tape.kind = layer.uses_gru() ? CellKind::Gru : CellKind::Rnn;
    tape.onepass = layer.is_onepass();
    tape.data_dim = layer.input_dim;
    tape.steps.resize(T);
    Vec h(layer.hidden, 0.0);
    Mat next(T, layer.hidden);
    for (int t = 1; t <= T; ++t) {
      Vec xt(cur.row(t - 1), cur.row(t - 1) + cur.cols);
      StepRecord& rec = tape.steps[t - 1];
      switch (layer.kind) {
        case LayerKind::Rnn:
          h = rnn_step(layer.rnn, h, xt, &rec);
          break;
        case LayerKind::Gru:
          h = gru_step(layer.gru, h, xt, &rec);
          break;
        case LayerKind::SuRnn:
        case LayerKind::SuGru: {
          if (mode == GateMode::Hard) {
            std::span<const uint8_t> g(mask.gate_row(t - 1), layer.hidden);
            h = layer.kind == LayerKind::SuRnn ? selective_step(layer.rnn, h, xt, g, &rec)
                                               : selective_step(layer.gru, h, xt, g, &rec);
          } else {
            Vec s(layer.hidden);
            for (int i = 0; i < layer.hidden; ++i)
              s[i] = sigmoid(layer.surrogate_slope * mask.preact(t - 1, i));
            h = layer.kind == LayerKind::SuRnn ? soft_selective_step(layer.rnn, h, xt, s, &rec)
                                               : soft_selective_step(layer.gru, h, xt, s, &rec);
          }
          rec.gate_preact.assign(mask.preact_row(t - 1), mask.preact_row(t - 1) + layer.hidden);
          break;
        }
        case LayerKind::OnePassSuGru: {
          Vec xin;
          if (mode == GateMode::Hard) {
            std::span<const uint8_t> g(mask.gate_row(t - 1), layer.hidden);
            xin = augment_input(xt, g);
            h = gru_step(layer.gru, h, xin, &rec);
            rec.g.assign(g.begin(), g.end());
          } else {
            Vec s(layer.hidden);
            for (int i = 0; i < layer.hidden; ++i)
              s[i] = sigmoid(layer.surrogate_slope * mask.preact(t - 1, i));
            xin = augment_input_soft(xt, s);
            h = gru_step(layer.gru, h, xin, &rec);
          }
          rec.gate_preact.assign(mask.preact_row(t - 1), mask.preact_row(t - 1) + layer.hidden);
          break;
        }
      }
      for (int i = 0; i < layer.hidden; ++i) next(t - 1, i) = h[i];
    }
    cur = std::move(next);
  }

  // Readout at masked steps; logits layout [t][o][1] so the loss helpers work
  // on a single-lane slice directly.
  out.logits.assign(static_cast<size_t>(T) * O, 0.0);
  TaskBatch slice;
  slice.batch = 1;
  slice.steps = T;
  slice.input_dim = batch.input_dim;
  slice.num_classes = batch.num_classes;
  slice.inputs.assign(batch.inputs.begin() + static_cast<size_t>(lane) * T * batch.input_dim,
                      batch.inputs.begin() + static_cast<size_t>(lane + 1) * T * batch.input_dim);
  slice.targets.assign(batch.targets.begin() + static_cast<size_t>(lane) * T,
                       batch.targets.begin() + static_cast<size_t>(lane + 1) * T);
  slice.loss_mask.assign(batch.loss_mask.begin() + static_cast<size_t>(lane) * T,
                         batch.loss_mask.begin() + static_cast<size_t>(lane + 1) * T);
  for (int t = 0; t < T; ++t) {
    if (!slice.mask(0, t)) continue;
    for (int o = 0; o < O; ++o) {
      double acc = m.b_out[o];
      dot_strict_into(acc, m.w_out.row(o), cur.row(t), cur.cols);
      out.logits[static_cast<size_t>(t) * O + o] = acc;
    }
  }
  out.loss = slice.num_classes > 0 ? loss_ce(out.logits, T, O, slice)
                                   : loss_mse(out.logits, T, O, slice);
  return out;
}

RefBackward model_backward_reference(const Model& m, const TaskBatch& batch, int lane,
                                     const RefForward& fwd) {
  (void)batch;
  (void)lane;
  const int T = fwd.tapes.front().length();
  const int O = m.cfg.output_dim;
  RefBackward out;
  out.grads = ModelGrads::zeros_like(m);

  // Readout backward.
  const LayerParams& top = m.layers.back();
  const int Htop = top.hidden;
  Mat dlh(T, Htop);
  for (int t = 0; t < T; ++t) {
    const StepRecord& rec = fwd.tapes.back().steps[t];
    for (int o = 0; o < O; ++o) {
      const double dl = fwd.loss.dlogits[static_cast<size_t>(t) * O + o];
      if (dl == 0.0) continue;
      out.grads.b_out[o] += dl;
      const double* w = m.w_out.row(o);
      double* gw = out.grads.w_out.row(o);
      for (int i = 0; i < Htop; ++i) {
        gw[i] += dl * rec.h_next[i];
        dlh(t, i) += dl * w[i];
      }
    }
  }

  for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
    const LayerParams& layer = m.layers[l];
    const bool learnable = schedule_is_learnable(layer.schedule) &&
                           (layer.is_selective() || layer.is_onepass());
    BackwardOptions opts;
    opts.surrogate_slope = layer.surrogate_slope;
    opts.gate_grads = learnable;
    if (learnable) {
      opts.program = schedule_program(layer.schedule);
      if (std::holds_alternative<LearnableTableGate>(layer.schedule))
        opts.table_grads = &out.grads.layers[l].table;
    }
    GradReport rep = layer.uses_gru() ? backward(fwd.tapes[l], dlh, layer.gru, opts)
                                      : backward(fwd.tapes[l], dlh, layer.rnn, opts);
    if (layer.uses_gru())
      out.grads.layers[l].gru = rep.gru;
    else
      out.grads.layers[l].rnn = rep.rnn;
    if (learnable && opts.program) out.grads.layers[l].program = rep.gate_program;
    if (l == 0) out.adjoint_norms = rep.adjoint_norms;
    dlh = rep.d_inputs;
    out.reports.push_back(std::move(rep));
  }
  std::reverse(out.reports.begin(), out.reports.end());
  return out;
}

// ---- optimizer ---------------------------------------------------------------

namespace {

struct BlockRef {
  double* p;
  double* g;
  size_t n;
  bool gate = false;  // gate-generator block (program / logits table)
};

std::vector<BlockRef> collect_blocks(Model& m, ModelGrads& g) {
  std::vector<BlockRef> blocks;
  auto add_mat = [&](Mat& p, Mat& gm, bool gate = false) {
    if (!p.data.empty()) blocks.push_back({p.data.data(), gm.data.data(), p.data.size(), gate});
  };
  auto add_vec = [&](Vec& p, Vec& gv, bool gate = false) {
    if (!p.empty()) blocks.push_back({p.data(), gv.data(), p.size(), gate});
  };
  for (size_t l = 0; l < m.layers.size(); ++l) {
    LayerParams& layer = m.layers[l];
    LayerGrads& lg = g.layers[l];
    if (layer.uses_gru()) {
      add_mat(layer.gru.w_ih, lg.gru.w_ih);
      add_mat(layer.gru.w_hh, lg.gru.w_hh);
      add_vec(layer.gru.b_ih, lg.gru.b_ih);
      add_vec(layer.gru.b_hh, lg.gru.b_hh);
    } else {
      add_mat(layer.rnn.w_xh, lg.rnn.w_xh);
      add_mat(layer.rnn.w_hh, lg.rnn.w_hh);
      add_vec(layer.rnn.b, lg.rnn.b);
    }
    // Only the plain rhythmic schedule learns; the fixed-random variant stays
    // frozen by never being collected.
    if (auto* r = std::get_if<RhythmicGate>(&layer.schedule)) {
      GateProgram& prog = r->program;
      if (prog.learn_alpha) add_mat(prog.alpha, lg.program.d_alpha, true);
      if (prog.learn_phi) add_mat(prog.phi, lg.program.d_phi, true);
      if (prog.learn_bias) add_vec(prog.bias, lg.program.d_bias, true);
      if (prog.learn_omega) add_vec(prog.omega, lg.program.d_omega, true);
    }
    if (auto* tbl = std::get_if<LearnableTableGate>(&layer.schedule))
      add_mat(tbl->logits, lg.table, true);
  }
  add_mat(m.w_out, g.w_out);
  add_vec(m.b_out, g.b_out);
  return blocks;
}

}  // namespace

bool Adam::step(Model& model, ModelGrads& grads) {
  std::vector<BlockRef> blocks = collect_blocks(model, grads);
  double norm_sq = 0.0;
  for (const BlockRef& blk : blocks)
    for (size_t i = 0; i < blk.n; ++i) norm_sq += blk.g[i] * blk.g[i];
  if (!std::isfinite(norm_sq)) return false;
  const double norm = std::sqrt(norm_sq);
  double scale = 1.0;
  if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) scale = cfg.clip_norm / norm;

  if (cfg.gate_clip_norm > 0.0) {
    double gate_sq = 0.0;
    for (const BlockRef& blk : blocks)
      if (blk.gate)
        for (size_t i = 0; i < blk.n; ++i) gate_sq += blk.g[i] * blk.g[i];
    const double gnorm = std::sqrt(gate_sq);
    if (gnorm > cfg.gate_clip_norm) {
      const double gs = cfg.gate_clip_norm / gnorm;
      for (const BlockRef& blk : blocks)
        if (blk.gate)
          for (size_t i = 0; i < blk.n; ++i) blk.g[i] *= gs;
    }
  }

  if (m.size() != blocks.size()) {
    m.clear();
    v.clear();
    for (const BlockRef& blk : blocks) {
      m.emplace_back(blk.n, 0.0);
      v.emplace_back(blk.n, 0.0);
    }
  }
  ++step_count;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
  for (size_t k = 0; k < blocks.size(); ++k) {
    const BlockRef& blk = blocks[k];
    Vec& mk = m[k];
    Vec& vk = v[k];
    for (size_t i = 0; i < blk.n; ++i) {
      const double gi = blk.g[i] * scale;
      mk[i] = cfg.beta1 * mk[i] + (1.0 - cfg.beta1) * gi;
      vk[i] = cfg.beta2 * vk[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mk[i] / bc1;
      const double vhat = vk[i] / bc2;
      blk.p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (blk.gate && cfg.gate_weight_decay > 0.0)
        blk.p[i] -= cfg.lr * cfg.gate_weight_decay * blk.p[i];
    }
  }
  model.enforce_wiring_all();
  return true;
}

// ---- training -------------------------------------------------------------

namespace {

TaskBatch slice_lanes(const TaskBatch& tb, int b0, int b1) {
  TaskBatch s;
  s.batch = b1 - b0;
  s.steps = tb.steps;
  s.input_dim = tb.input_dim;
  s.num_classes = tb.num_classes;
  s.inputs.assign(tb.inputs.begin() + static_cast<size_t>(b0) * tb.steps * tb.input_dim,
                  tb.inputs.begin() + static_cast<size_t>(b1) * tb.steps * tb.input_dim);
  s.targets.assign(tb.targets.begin() + static_cast<size_t>(b0) * tb.steps,
                   tb.targets.begin() + static_cast<size_t>(b1) * tb.steps);
  s.loss_mask.assign(tb.loss_mask.begin() + static_cast<size_t>(b0) * tb.steps,
                     tb.loss_mask.begin() + static_cast<size_t>(b1) * tb.steps);
  return s;
}

// Forward+backward over a batch, sharded across workers with an ordered
// reduction; returns the mean masked loss.
double train_step_grads(const Model& model, const TaskBatch& tb, int workers,
                        ModelGrads& grads, double* update_rate_out) {
  const int B = tb.batch;
  workers = std::max(1, std::min(workers, B));
  if (workers == 1) {
    BatchedForward fwd = model_forward_batched(model, tb);
    model_backward_batched(model, tb, fwd, grads);
    if (update_rate_out) {
      double acc = 0;
      int cnt = 0;
      for (const LayerTape& tape : fwd.tapes)
        if (tape.mask.steps > 0) {
          acc += update_rate(tape.mask);
          ++cnt;
        }
      *update_rate_out = cnt ? acc / cnt : 1.0;
    }
    return fwd.loss.value;
  }

  std::vector<TaskBatch> shards;
  std::vector<ModelGrads> shard_grads;
  std::vector<double> shard_loss(workers, 0.0);
  std::vector<size_t> shard_masked(workers, 0);
  std::vector<double> shard_rate(workers, 1.0);
  const int per = (B + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int b0 = w * per;
    const int b1 = std::min(B, b0 + per);
    if (b0 >= b1) break;
    shards.push_back(slice_lanes(tb, b0, b1));
    shard_grads.push_back(ModelGrads::zeros_like(model));
  }
  std::vector<std::thread> pool;
  for (size_t w = 0; w < shards.size(); ++w) {
    pool.emplace_back([&, w]() {
      BatchedForward fwd = model_forward_batched(model, shards[w]);
      model_backward_batched(model, shards[w], fwd, shard_grads[w]);
      shard_loss[w] = fwd.loss.value;
      shard_masked[w] = fwd.loss.masked;
      double acc = 0;
      int cnt = 0;
      for (const LayerTape& tape : fwd.tapes)
        if (tape.mask.steps > 0) {
          acc += update_rate(tape.mask);
          ++cnt;
        }
      shard_rate[w] = cnt ? acc / cnt : 1.0;
    });
  }
  for (std::thread& th : pool) th.join();

  size_t total_masked = 0;
  for (size_t w = 0; w < shards.size(); ++w) total_masked += shard_masked[w];
  double loss = 0;
  for (size_t w = 0; w < shards.size(); ++w) {
    const double frac = static_cast<double>(shard_masked[w]) / static_cast<double>(total_masked);
    grads.add_scaled(shard_grads[w], frac);
    loss += shard_loss[w] * frac;
  }
  if (update_rate_out) *update_rate_out = shard_rate[0];
  return loss;
}

double metric_value(const LossResult& res, const std::string& metric) {
  if (metric == "acc") return res.accuracy;
  return res.value;  // ce / mse
}

bool metric_improved(double value, double best, const std::string& metric) {
  return metric == "acc" ? value > best : value < best;
}

}  // namespace

LossResult evaluate(const Model& m, const TaskBatch& batch, int workers) {
  (void)workers;
  // Chunked to bound tape memory on large eval sets.
  const int chunk = 32;
  double total = 0.0;
  double correct = 0.0;
  size_t masked = 0;
  for (int b0 = 0; b0 < batch.batch; b0 += chunk) {
    const int b1 = std::min(batch.batch, b0 + chunk);
    TaskBatch s = slice_lanes(batch, b0, b1);
    BatchedForward fwd = model_forward_batched(m, s);
    total += fwd.loss.value * fwd.loss.masked;
    correct += fwd.loss.accuracy * fwd.loss.masked;
    masked += fwd.loss.masked;
  }
  LossResult out;
  out.value = total / static_cast<double>(masked);
  out.accuracy = correct / static_cast<double>(masked);
  out.masked = masked;
  return out;
}

TrainResult train(Model& model, const TaskSource& task, const TrainOptions& opts) {
  Adam adam(opts.adam);
  ModelGrads grads = ModelGrads::zeros_like(model);
  TrainResult result;
  int consecutive_nan = 0;

  const TaskBatch eval_tb = task.eval_batch();
  LossResult ev = evaluate(model, eval_tb, opts.workers);
  double best = metric_value(ev, task.metric);
  result.best_eval = best;
  result.best_step = 0;
  result.log.push_back({0, 0.0, best, 0.0, 0.0});
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    save_checkpoint(opts.out_dir + "/best", model, opts.config_hash);
  }

  for (int step = 1; step <= opts.steps; ++step) {
    TaskBatch tb = task.train_batch(static_cast<uint64_t>(step));
    grads.zero();
    double p_bar = 1.0;
    double loss = train_step_grads(model, tb, opts.workers, grads, &p_bar);

    if (!std::isfinite(loss)) {
      ++consecutive_nan;
      if (consecutive_nan >= 2) {
        if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir + "/abort", model, opts.config_hash);
        throw NumericAbort("train: non-finite loss at step " + std::to_string(step));
      }
      continue;
    }
    consecutive_nan = 0;

    double norm_sq = 0.0;
    {
      // grad norm for the log (pre-clip)
      std::vector<BlockRef> blocks = collect_blocks(model, grads);
      for (const BlockRef& blk : blocks)
        for (size_t i = 0; i < blk.n; ++i) norm_sq += blk.g[i] * blk.g[i];
    }
    if (!adam.step(model, grads)) {
      std::fprintf(stderr, "warning: skipping step %d (non-finite gradients)\n", step);
      continue;
    }

    result.steps_run = step;
    const bool eval_now = (opts.eval_every > 0 && step % opts.eval_every == 0) || step == opts.steps;
    if (eval_now) {
      ev = evaluate(model, eval_tb, opts.workers);
      const double value = metric_value(ev, task.metric);
      result.log.push_back({step, loss, value, p_bar, std::sqrt(norm_sq)});
      if (opts.verbose)
        std::fprintf(stderr, "step %6d  loss %.5f  eval %.5f  p %.3f\n", step, loss, value, p_bar);
      if (metric_improved(value, best, task.metric) || result.best_step < 0) {
        best = value;
        result.best_eval = value;
        result.best_step = step;
        if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir + "/best", model, opts.config_hash);
      }
      if (opts.early_stop) {
        const bool hit = task.metric == "acc" ? value >= *opts.early_stop : value <= *opts.early_stop;
        if (hit) {
          result.early_stopped = true;
          break;
        }
      }
    }
  }

  if (!opts.out_dir.empty()) {
    CsvWriter csv(opts.out_dir + "/metrics.csv", "step,train_loss,eval_value,update_rate,grad_norm",
                  opts.config_hash.empty() ? "" : "config_hash=" + opts.config_hash);
    char buf[160];
    for (const MetricsRow& row : result.log) {
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.6g,%.6g", row.step, row.train_loss,
                    row.eval_value, row.update_rate, row.grad_norm);
      csv.row(buf);
    }
  }
  return result;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

nlohmann::json gate_spec_to_json(const GateSpec& g) {
  nlohmann::json j;
  j["schedule"] = g.schedule;
  j["num_freqs"] = g.num_freqs;
  j["amp_init"] = g.amp_init;
  j["surrogate_slope"] = g.surrogate_slope;
  j["learn_omega"] = g.learn_omega;
  j["k"] = g.k;
  j["p"] = g.p;
  j["seed"] = g.seed;
  return j;
}

GateSpec gate_spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"schedule", "num_freqs", "amp_init",
                                                 "surrogate_slope", "learn_omega", "k", "p",
                                                 "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("unknown gate key: " + it.key());
  GateSpec g;
  if (j.contains("schedule")) g.schedule = j["schedule"].get<std::string>();
  if (j.contains("num_freqs")) g.num_freqs = j["num_freqs"].get<int>();
  if (j.contains("amp_init")) g.amp_init = j["amp_init"].get<std::string>();
  if (j.contains("surrogate_slope")) g.surrogate_slope = j["surrogate_slope"].get<double>();
  if (j.contains("learn_omega")) g.learn_omega = j["learn_omega"].get<bool>();
  if (j.contains("k")) g.k = j["k"].get<int>();
  if (j.contains("p")) g.p = j["p"].get<double>();
  if (j.contains("seed")) g.seed = j["seed"].get<uint64_t>();
  return g;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["input_dim"] = cfg.input_dim;
  j["output_dim"] = cfg.output_dim;
  j["readout"] = cfg.readout == ReadoutMode::PerStep ? "per_step" : "last_masked";
  j["max_seq_len"] = cfg.max_seq_len;
  j["dropout"] = cfg.dropout;
  j["layers"] = nlohmann::json::array();
  for (const LayerSpec& l : cfg.layers) {
    nlohmann::json jl;
    jl["kind"] = layer_kind_to_string(l.kind);
    jl["hidden"] = l.hidden;
    jl["gate"] = gate_spec_to_json(l.gate);
    if (l.wiring_c) jl["wiring_c"] = *l.wiring_c;
    if (l.z_bias_init != 0.0) jl["z_bias_init"] = l.z_bias_init;
    j["layers"].push_back(jl);
  }
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  static const std::vector<std::string> known = {"input_dim", "output_dim", "readout",
                                                 "max_seq_len", "dropout", "layers"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("unknown model key: " + it.key());
  ModelConfig cfg;
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.output_dim = j.at("output_dim").get<int>();
  if (j.contains("readout")) {
    const std::string r = j["readout"].get<std::string>();
    if (r == "per_step") cfg.readout = ReadoutMode::PerStep;
    else if (r == "last_masked") cfg.readout = ReadoutMode::LastMasked;
    else throw std::invalid_argument("unknown readout: " + r);
  }
  if (j.contains("max_seq_len")) cfg.max_seq_len = j["max_seq_len"].get<int>();
  if (j.contains("dropout")) cfg.dropout = j["dropout"].get<double>();
  for (const auto& jl : j.at("layers")) {
    static const std::vector<std::string> lknown = {"kind", "hidden", "gate", "wiring_c",
                                                    "z_bias_init"};
    for (auto it = jl.begin(); it != jl.end(); ++it)
      if (std::find(lknown.begin(), lknown.end(), it.key()) == lknown.end())
        throw std::invalid_argument("unknown layer key: " + it.key());
    LayerSpec l;
    l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
    l.hidden = jl.at("hidden").get<int>();
    if (jl.contains("gate")) l.gate = gate_spec_from_json(jl["gate"]);
    if (jl.contains("wiring_c")) l.wiring_c = jl["wiring_c"].get<double>();
    if (jl.contains("z_bias_init")) l.z_bias_init = jl["z_bias_init"].get<double>();
    cfg.layers.push_back(l);
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& dir, const Model& m, const std::string& config_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["config"] = nlohmann::json::parse(model_config_to_json(m.cfg));
  if (!config_hash.empty()) manifest["config_hash"] = config_hash;
  manifest["params"] = nlohmann::json::array();
  auto dump = [&](const std::string& name, const std::vector<int64_t>& shape, const double* data,
                  size_t count) {
    const std::string file = name + ".bin";
    write_tensor(dir + "/" + file, shape, data, count, config_hash);
    nlohmann::json p;
    p["name"] = name;
    p["file"] = file;
    p["shape"] = shape;
    manifest["params"].push_back(p);
  };
  for (size_t l = 0; l < m.layers.size(); ++l) {
    const LayerParams& layer = m.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    if (layer.uses_gru()) {
      dump(pre + "w_ih", {layer.gru.w_ih.rows, layer.gru.w_ih.cols}, layer.gru.w_ih.data.data(),
           layer.gru.w_ih.data.size());
      dump(pre + "w_hh", {layer.gru.w_hh.rows, layer.gru.w_hh.cols}, layer.gru.w_hh.data.data(),
           layer.gru.w_hh.data.size());
      dump(pre + "b_ih", {static_cast<int64_t>(layer.gru.b_ih.size())}, layer.gru.b_ih.data(),
           layer.gru.b_ih.size());
      dump(pre + "b_hh", {static_cast<int64_t>(layer.gru.b_hh.size())}, layer.gru.b_hh.data(),
           layer.gru.b_hh.size());
    } else {
      dump(pre + "w_xh", {layer.rnn.w_xh.rows, layer.rnn.w_xh.cols}, layer.rnn.w_xh.data.data(),
           layer.rnn.w_xh.data.size());
      dump(pre + "w_hh", {layer.rnn.w_hh.rows, layer.rnn.w_hh.cols}, layer.rnn.w_hh.data.data(),
           layer.rnn.w_hh.data.size());
      dump(pre + "b", {static_cast<int64_t>(layer.rnn.b.size())}, layer.rnn.b.data(),
           layer.rnn.b.size());
    }
    if (const GateProgram* prog = schedule_program(layer.schedule)) {
      dump(pre + "gate.omega", {static_cast<int64_t>(prog->omega.size())}, prog->omega.data(),
           prog->omega.size());
      dump(pre + "gate.alpha", {prog->alpha.rows, prog->alpha.cols}, prog->alpha.data.data(),
           prog->alpha.data.size());
      dump(pre + "gate.phi", {prog->phi.rows, prog->phi.cols}, prog->phi.data.data(),
           prog->phi.data.size());
      dump(pre + "gate.bias", {static_cast<int64_t>(prog->bias.size())}, prog->bias.data(),
           prog->bias.size());
    }
    if (const auto* tbl = std::get_if<LearnableTableGate>(&layer.schedule))
      dump(pre + "gate.table", {tbl->logits.rows, tbl->logits.cols}, tbl->logits.data.data(),
           tbl->logits.data.size());
  }
  dump("readout.w", {m.w_out.rows, m.w_out.cols}, m.w_out.data.data(), m.w_out.data.size());
  dump("readout.b", {static_cast<int64_t>(m.b_out.size())}, m.b_out.data(), m.b_out.size());
  std::ofstream out(dir + "/manifest.json");
  out << manifest.dump(2) << "\n";
}

Model load_checkpoint(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("load_checkpoint: missing manifest in " + dir);
  nlohmann::json manifest;
  in >> manifest;
  ModelConfig cfg = model_config_from_json(manifest.at("config").dump());
  Model m = Model::init(cfg, 0);
  auto load = [&](const std::string& name, double* dst, size_t count) {
    TensorFile t = read_tensor(dir + "/" + name + ".bin");
    if (t.values.size() != count)
      throw std::runtime_error("load_checkpoint: size mismatch for " + name);
    std::copy(t.values.begin(), t.values.end(), dst);
  };
  for (size_t l = 0; l < m.layers.size(); ++l) {
    LayerParams& layer = m.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    if (layer.uses_gru()) {
      load(pre + "w_ih", layer.gru.w_ih.data.data(), layer.gru.w_ih.data.size());
      load(pre + "w_hh", layer.gru.w_hh.data.data(), layer.gru.w_hh.data.size());
      load(pre + "b_ih", layer.gru.b_ih.data(), layer.gru.b_ih.size());
      load(pre + "b_hh", layer.gru.b_hh.data(), layer.gru.b_hh.size());
    } else {
      load(pre + "w_xh", layer.rnn.w_xh.data.data(), layer.rnn.w_xh.data.size());
      load(pre + "w_hh", layer.rnn.w_hh.data.data(), layer.rnn.w_hh.data.size());
      load(pre + "b", layer.rnn.b.data(), layer.rnn.b.size());
    }
    if (GateProgram* prog = schedule_program(layer.schedule)) {
      load(pre + "gate.omega", prog->omega.data(), prog->omega.size());
      load(pre + "gate.alpha", prog->alpha.data.data(), prog->alpha.data.size());
      load(pre + "gate.phi", prog->phi.data.data(), prog->phi.data.size());
      load(pre + "gate.bias", prog->bias.data(), prog->bias.size());
    }
    if (auto* tbl = std::get_if<LearnableTableGate>(&layer.schedule))
      load(pre + "gate.table", tbl->logits.data.data(), tbl->logits.data.size());
  }
  load("readout.w", m.w_out.data.data(), m.w_out.data.size());
  load("readout.b", m.b_out.data(), m.b_out.size());
  return m;
}

}  // namespace surnn
