// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/onepass.hpp"

#include <cmath>
#include <stdexcept>

namespace surnn {

OnePassGru OnePassGru::init(int hidden, int data_dim, double wiring_c, Rng& rng) {
  if (!(wiring_c < 0.0)) throw std::invalid_argument("OnePassGru: wiring constant must be negative");
  OnePassGru p;
  p.gru = GruParams::init(hidden, data_dim + hidden, rng);
  p.data_dim = data_dim;
  p.wiring_c = wiring_c;
  enforce_wiring(p);
  return p;
}

void enforce_wiring(OnePassGru& p) {
  const int h = p.hidden();
  const int d = p.data_dim;
  for (int i = 0; i < h; ++i) {
    double* r_row = p.gru.w_ih.row(i);
    double* z_row = p.gru.w_ih.row(h + i);
    double* n_row = p.gru.w_ih.row(2 * h + i);
    for (int j = 0; j < h; ++j) {
      r_row[d + j] = 0.0;
      z_row[d + j] = (j == i) ? p.wiring_c : 0.0;
      n_row[d + j] = 0.0;
    }
  }
}

bool wiring_ok(const OnePassGru& p) {
  const int h = p.hidden();
  const int d = p.data_dim;
  for (int i = 0; i < h; ++i) {
    const double* r_row = p.gru.w_ih.row(i);
    const double* z_row = p.gru.w_ih.row(h + i);
    const double* n_row = p.gru.w_ih.row(2 * h + i);
    for (int j = 0; j < h; ++j) {
      if (r_row[d + j] != 0.0) return false;
      if (n_row[d + j] != 0.0) return false;
      if (z_row[d + j] != ((j == i) ? p.wiring_c : 0.0)) return false;
    }
  }
  return true;
}

Vec augment_input(const Vec& x, std::span<const uint8_t> g) {
  Vec out;
  out.reserve(x.size() + g.size());
  out.insert(out.end(), x.begin(), x.end());
  for (uint8_t gi : g) {
    if (gi > 1) throw std::invalid_argument("augment_input: gate must be binary");
    out.push_back(gi ? 0.0 : 1.0);
  }
  return out;
}

Vec augment_input_soft(const Vec& x, const Vec& s) {
  Vec out;
  out.reserve(x.size() + s.size());
  out.insert(out.end(), x.begin(), x.end());
  for (double si : s) out.push_back(1.0 - si);
  return out;
}

OnePassForward onepass_forward(const OnePassGru& p, const std::vector<Vec>& xs,
                               const std::vector<std::vector<uint8_t>>& gates, const Vec& h0,
                               bool want_tape) {
  if (!wiring_ok(p)) throw std::runtime_error("onepass_forward: wiring invariant violated");
  if (xs.size() != gates.size()) throw std::invalid_argument("onepass_forward: stream length mismatch");
  OnePassForward out;
  out.states.reserve(xs.size());
  if (want_tape) out.tape.resize(xs.size());
  Vec h = h0;
  for (size_t t = 0; t < xs.size(); ++t) {
    const Vec xin = augment_input(xs[t], gates[t]);
    h = gru_step(p.gru, h, xin, want_tape ? &out.tape[t] : nullptr);
    if (want_tape) out.tape[t].g = gates[t];
    out.states.push_back(h);
  }
  return out;
}

double retention_bound_c(const RetentionSpec& spec) {
  if (spec.carry_len < 1) throw std::invalid_argument("retention_bound_c: need L >= 1");
  if (!(spec.loss > 0.0 && spec.loss < 1.0))
    throw std::invalid_argument("retention_bound_c: need rho in (0,1)");
  // p = (1-rho)^(1/L); logit(p) via expm1/log1p to keep precision when p ~ 1.
  const double log_p = std::log1p(-spec.loss) / static_cast<double>(spec.carry_len);
  const double one_minus_p = -std::expm1(log_p);
  const double bound = spec.margin - (log_p - std::log(one_minus_p));
  return std::max(bound, -15.0);
}

}  // namespace surnn
