// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/gradcheck.hpp"

#include <cmath>
#include <functional>

namespace surnn {

namespace {

double rel_err(double got, double want, double floor) {
  const double denom = std::max({std::abs(got), std::abs(want), floor});
  return std::abs(got - want) / denom;
}

TaskBatch gradcheck_batch(const GradCheckOptions& o, uint64_t salt) {
  Rng rng(o.seed ^ salt);
  TaskBatch tb;
  tb.batch = 1;
  tb.steps = o.steps;
  tb.input_dim = o.input_dim;
  tb.num_classes = 2;
  tb.inputs.resize(static_cast<size_t>(o.steps) * o.input_dim);
  for (double& v : tb.inputs) v = rng.normal(0.0, 1.0);
  tb.targets.resize(o.steps);
  tb.loss_mask.assign(o.steps, 0);
  for (int t = 0; t < o.steps; ++t) {
    tb.targets[t] = static_cast<double>(rng.next_u64() % 2);
    tb.loss_mask[t] = (t >= o.steps - 3) ? 1 : 0;  // losses on the tail
  }
  return tb;
}

double loss_of(const Model& m, const TaskBatch& tb, GateMode mode) {
  return model_forward_reference(m, tb, 0, mode).loss.value;
}

// Central differences over one parameter array.
void fd_block(Model& m, double* data, size_t count, const TaskBatch& tb, GateMode mode,
              const double* analytic, double eps, double floor, double& worst,
              const std::function<void(Model&)>& after_perturb = nullptr) {
  for (size_t i = 0; i < count; ++i) {
    const double keep = data[i];
    data[i] = keep + eps;
    if (after_perturb) after_perturb(m);
    const double up = loss_of(m, tb, mode);
    data[i] = keep - eps;
    if (after_perturb) after_perturb(m);
    const double dn = loss_of(m, tb, mode);
    data[i] = keep;
    if (after_perturb) after_perturb(m);
    const double fd = (up - dn) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic[i], fd, floor));
  }
}

Vec flat_program(const GateProgramGrads& g) {
  Vec out;
  out.insert(out.end(), g.d_alpha.data.begin(), g.d_alpha.data.end());
  out.insert(out.end(), g.d_phi.data.begin(), g.d_phi.data.end());
  out.insert(out.end(), g.d_bias.begin(), g.d_bias.end());
  return out;
}

GradCheckCase check_kind(LayerKind kind, const GradCheckOptions& o) {
  GradCheckCase result;
  result.tag = layer_kind_to_string(kind);

  ModelConfig cfg;
  cfg.input_dim = o.input_dim;
  cfg.output_dim = 2;
  cfg.max_seq_len = o.steps + 2;
  LayerSpec spec;
  spec.kind = kind;
  spec.hidden = o.hidden;
  spec.gate.schedule = "rhythmic";
  spec.gate.num_freqs = 4;
  cfg.layers.push_back(spec);
  Model m = Model::init(cfg, o.seed * 131 + static_cast<uint64_t>(kind));
  if (GateProgram* prog = schedule_program(m.layers[0].schedule)) {
    Rng brng(o.seed ^ 0xb1a5);
    for (double& a : prog->alpha.data) a *= o.alpha_scale;
    for (double& b : prog->bias)
      b = (brng.uniform01() < 0.5 ? -1.0 : 1.0) * o.bias_magnitude;
  }
  TaskBatch tb = gradcheck_batch(o, 0x17);

  RefForward fwd = model_forward_reference(m, tb, 0, GateMode::Hard);
  RefBackward bwd = model_backward_reference(m, tb, 0, fwd);
  const LayerParams& layer = m.layers[0];
  LayerGrads& lg = bwd.grads.layers[0];

  // Central differences cancel ~10 digits at this epsilon; below the floor
  // the comparison would measure rounding noise, not gradients.
  const double floor = 3e-5;
  double worst = 0.0;
  // Cell parameters under the hard gates (the mask is a constant there).
  if (layer.uses_gru()) {
    const int d_free = layer.is_onepass() ? layer.input_dim : layer.gru.input_dim();
    // wired gate-channel columns are projections, not parameters
    for (int r = 0; r < layer.gru.w_ih.rows; ++r)
      fd_block(m, m.layers[0].gru.w_ih.row(r), d_free, tb, GateMode::Hard,
               lg.gru.w_ih.row(r), o.fd_eps, floor, worst);
    fd_block(m, m.layers[0].gru.w_hh.data.data(), m.layers[0].gru.w_hh.data.size(), tb,
             GateMode::Hard, lg.gru.w_hh.data.data(), o.fd_eps, floor, worst);
    fd_block(m, m.layers[0].gru.b_ih.data(), m.layers[0].gru.b_ih.size(), tb, GateMode::Hard,
             lg.gru.b_ih.data(), o.fd_eps, floor, worst);
    fd_block(m, m.layers[0].gru.b_hh.data(), m.layers[0].gru.b_hh.size(), tb, GateMode::Hard,
             lg.gru.b_hh.data(), o.fd_eps, floor, worst);
  } else {
    fd_block(m, m.layers[0].rnn.w_xh.data.data(), m.layers[0].rnn.w_xh.data.size(), tb,
             GateMode::Hard, lg.rnn.w_xh.data.data(), o.fd_eps, floor, worst);
    fd_block(m, m.layers[0].rnn.w_hh.data.data(), m.layers[0].rnn.w_hh.data.size(), tb,
             GateMode::Hard, lg.rnn.w_hh.data.data(), o.fd_eps, floor, worst);
    fd_block(m, m.layers[0].rnn.b.data(), m.layers[0].rnn.b.size(), tb, GateMode::Hard,
             lg.rnn.b.data(), o.fd_eps, floor, worst);
  }
  fd_block(m, m.w_out.data.data(), m.w_out.data.size(), tb, GateMode::Hard,
           bwd.grads.w_out.data.data(), o.fd_eps, floor, worst);
  fd_block(m, m.b_out.data(), m.b_out.size(), tb, GateMode::Hard, bwd.grads.b_out.data(),
           o.fd_eps, floor, worst);
  result.max_rel_err = worst;

  // Gate generator through the relaxed mode (exact derivative there), then
  // the straight-through estimate against the relaxed truth.
  const bool gated = layer.is_selective() || layer.is_onepass();
  if (gated) {
    RefForward sfwd = model_forward_reference(m, tb, 0, GateMode::Soft);
    RefBackward sbwd = model_backward_reference(m, tb, 0, sfwd);
    GateProgram* prog = schedule_program(m.layers[0].schedule);
    double gate_worst = 0.0;
    const GateProgramGrads& sprog = sbwd.grads.layers[0].program;
    fd_block(m, prog->alpha.data.data(), prog->alpha.data.size(), tb, GateMode::Soft,
             sprog.d_alpha.data.data(), o.fd_eps, floor, gate_worst);
    fd_block(m, prog->phi.data.data(), prog->phi.data.size(), tb, GateMode::Soft,
             sprog.d_phi.data.data(), o.fd_eps, floor, gate_worst);
    fd_block(m, prog->bias.data(), prog->bias.size(), tb, GateMode::Soft, sprog.d_bias.data(),
             o.fd_eps, floor, gate_worst);
    result.gate_rel_err = gate_worst;

    const Vec hard = flat_program(bwd.grads.layers[0].program);
    const Vec soft = flat_program(sprog);
    double num = 0, den = 0;
    for (size_t i = 0; i < hard.size(); ++i) {
      num += (hard[i] - soft[i]) * (hard[i] - soft[i]);
      den += soft[i] * soft[i];
    }
    result.ste_rel_err = den > 0 ? std::sqrt(num / den) : 0.0;
  }

  result.pass = result.max_rel_err < o.tol && result.gate_rel_err < o.tol &&
                (!gated || result.ste_rel_err < o.ste_tol);
  return result;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck(const GradCheckOptions& opts) {
  std::vector<GradCheckCase> out;
  for (LayerKind kind : {LayerKind::Rnn, LayerKind::Gru, LayerKind::SuRnn, LayerKind::SuGru,
                         LayerKind::OnePassSuGru})
    out.push_back(check_kind(kind, opts));
  return out;
}

bool all_pass(const std::vector<GradCheckCase>& cases) {
  for (const GradCheckCase& c : cases)
    if (!c.pass) return false;
  return true;
}

}  // namespace surnn
