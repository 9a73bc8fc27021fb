#include "qtsad/layers.hpp"

#include <cmath>
#include <numbers>

#include "qtsad/errors.hpp"

namespace qtsad::layers {

using qsim::AngleSource;
using qsim::GateOp;

void HqlConfig::validate() const {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("HQL dimensions must be positive");
  if (n_qubits < 1 || n_qubits > qsim::kMaxQubits) throw BudgetError("HQL qubit count outside simulator budget");
  if (n_blocks < 1) throw ConfigError("HQL needs at least one block");
  if (injection_blocks < 1) throw ConfigError("HQL needs at least one injection block");
  if (injection_blocks > n_blocks) {
    throw ConfigError("injection_blocks (" + std::to_string(injection_blocks) + ") exceeds n_blocks (" +
                      std::to_string(n_blocks) + ")");
  }
}

std::vector<int> injection_blocks(const HqlConfig& cfg) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(cfg.injection_blocks));
  for (int i = 0; i < cfg.injection_blocks; ++i) out.push_back(i * cfg.n_blocks / cfg.injection_blocks);
  return out;
}

qsim::CircuitProgram build_hql_program(const HqlConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_qubits;
  qsim::CircuitProgram prog;
  prog.n_qubits = n;
  prog.n_param_slots = cfg.param_slots();
  prog.n_input_slots = cfg.hidden_width();
  const std::vector<int> inject = injection_blocks(cfg);
  std::size_t next_injection = 0;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    if (next_injection < inject.size() && inject[next_injection] == b) {
      for (int q = 0; q < n; ++q) {
        prog.ops.push_back(GateOp::ry(q, AngleSource::input(static_cast<int>(next_injection) * n + q, cfg.encoding)));
      }
      ++next_injection;
    }
    for (int q = 0; q < n; ++q) {
      prog.ops.push_back(GateOp::rz(q, AngleSource::param(2 * (b * n + q))));
      prog.ops.push_back(GateOp::rx(q, AngleSource::param(2 * (b * n + q) + 1)));
    }
    for (int q = 0; q + 1 < n; ++q) prog.ops.push_back(GateOp::cnot(q, q + 1));
  }
  prog.validate();
  return prog;
}

HqlParams HqlParams::zeros(const HqlConfig& cfg) {
  const auto m = static_cast<std::size_t>(cfg.hidden_width());
  HqlParams p;
  p.w_in = Matrix(m, static_cast<std::size_t>(cfg.in_dim));
  p.b_in.assign(m, 0.0);
  p.theta.assign(static_cast<std::size_t>(cfg.param_slots()), 0.0);
  p.w_out = Matrix(static_cast<std::size_t>(cfg.out_dim), static_cast<std::size_t>(cfg.n_qubits));
  p.b_out.assign(static_cast<std::size_t>(cfg.out_dim), 0.0);
  return p;
}

HqlParams HqlParams::random(const HqlConfig& cfg, Rng& rng) {
  HqlParams p = zeros(cfg);
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(cfg.in_dim));
  const double out_bound = 1.0 / std::sqrt(static_cast<double>(cfg.n_qubits));
  for (double& w : p.w_in.data) w = uniform(rng, -in_bound, in_bound);
  for (double& b : p.b_in) b = uniform(rng, -in_bound, in_bound);
  for (double& t : p.theta) t = uniform(rng, -std::numbers::pi, std::numbers::pi);
  for (double& w : p.w_out.data) w = uniform(rng, -out_bound, out_bound);
  for (double& b : p.b_out) b = uniform(rng, -out_bound, out_bound);
  return p;
}

// ---------------------------------------------------------------------------
// HybridQuantumLayer
// ---------------------------------------------------------------------------

HybridQuantumLayer::HybridQuantumLayer(const HqlConfig& cfg) : cfg_(cfg), program_(build_hql_program(cfg)) {}

Vec HybridQuantumLayer::forward(const HqlParams& p, std::span<const double> x, const qsim::NoiseSpec& noise,
                                Rng& rng, HqlCache* cache) const {
  if (x.size() != static_cast<std::size_t>(cfg_.in_dim)) {
    throw ShapeError("HQL input has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(cfg_.in_dim));
  }
  Vec h(static_cast<std::size_t>(cfg_.hidden_width()));
  affine(p.w_in, x, p.b_in, h);

  std::optional<qsim::CircuitProgram> sampled;
  if (noise.enabled) sampled = qsim::sample_noisy_program(program_, noise, rng);
  const qsim::CircuitProgram& prog = sampled ? *sampled : program_;

  Vec angles = qsim::resolve_angles(prog, p.theta, h);
  qsim::QubitState state = qsim::QubitState::zero(prog.n_qubits);
  for (std::size_t i = 0; i < prog.ops.size(); ++i) qsim::apply_gate(state, prog.ops[i], angles[i]);
  Vec z = qsim::expect_z_all(state);

  Vec y(static_cast<std::size_t>(cfg_.out_dim));
  affine(p.w_out, z, p.b_out, y);

  if (cache != nullptr) {
    cache->x.assign(x.begin(), x.end());
    cache->h = std::move(h);
    cache->angles = std::move(angles);
    cache->z = std::move(z);
    cache->sampled = std::move(sampled);
    cache->state = std::move(state);
  }
  return y;
}

Vec HybridQuantumLayer::backward(const HqlParams& p, const HqlCache& cache, std::span<const double> upstream,
                                 HqlParams& grads) const {
  if (upstream.size() != static_cast<std::size_t>(cfg_.out_dim)) throw ShapeError("HQL upstream length mismatch");
  Vec dx(static_cast<std::size_t>(cfg_.in_dim), 0.0);
  bool any = false;
  for (double u : upstream) any = any || u != 0.0;
  if (!any) return dx;

  add_outer(grads.w_out, upstream, cache.z);
  for (std::size_t i = 0; i < upstream.size(); ++i) grads.b_out[i] += upstream[i];

  Vec obs(static_cast<std::size_t>(cfg_.n_qubits), 0.0);
  add_transposed_product(p.w_out, upstream, obs);

  Vec dh(cache.h.size(), 0.0);
  const qsim::CircuitProgram& prog = cache.sampled ? *cache.sampled : program_;
  qsim::adjoint_sweep(prog, cache.angles, *cache.state, obs, cache.h, grads.theta, dh);

  add_outer(grads.w_in, dh, cache.x);
  for (std::size_t i = 0; i < dh.size(); ++i) grads.b_in[i] += dh[i];
  add_transposed_product(p.w_in, dh, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// QuantumGru
// ---------------------------------------------------------------------------

GruParams GruParams::zeros(const GruConfig& cfg) {
  const HqlConfig g = cfg.gate_config();
  return {HqlParams::zeros(g), HqlParams::zeros(g), HqlParams::zeros(g), cfg.hidden_dim};
}

GruParams GruParams::random(const GruConfig& cfg, Rng& rng) {
  const HqlConfig g = cfg.gate_config();
  GruParams p;
  p.update = HqlParams::random(g, rng);
  p.reset = HqlParams::random(g, rng);
  p.candidate = HqlParams::random(g, rng);
  p.hidden_dim = cfg.hidden_dim;
  return p;
}

QuantumGru::QuantumGru(const GruConfig& cfg) : cfg_(cfg), gate_(cfg.gate_config()) {
  if (cfg.input_dim < 1 || cfg.hidden_dim < 1) throw ConfigError("GRU dimensions must be positive");
}

Vec QuantumGru::step(const GruParams& p, std::span<const double> x, std::span<const double> h_prev,
                     const qsim::NoiseSpec& noise, Rng& rng, GruStepCache* cache) const {
  const auto in = static_cast<std::size_t>(cfg_.input_dim);
  const auto hid = static_cast<std::size_t>(cfg_.hidden_dim);
  if (x.size() != in || h_prev.size() != hid) throw ShapeError("GRU step dimension mismatch");

  Vec xh(in + hid);
  std::copy(x.begin(), x.end(), xh.begin());
  std::copy(h_prev.begin(), h_prev.end(), xh.begin() + static_cast<std::ptrdiff_t>(in));

  HqlCache* cu = cache ? &cache->update : nullptr;
  HqlCache* cr = cache ? &cache->reset : nullptr;
  HqlCache* cc = cache ? &cache->candidate : nullptr;

  Vec z = gate_.forward(p.update, xh, noise, rng, cu);
  Vec r = gate_.forward(p.reset, xh, noise, rng, cr);
  for (double& v : z) v = sigmoid(v);
  for (double& v : r) v = sigmoid(v);

  for (std::size_t j = 0; j < hid; ++j) xh[in + j] = r[j] * h_prev[j];
  Vec c = gate_.forward(p.candidate, xh, noise, rng, cc);
  for (double& v : c) v = std::tanh(v);

  Vec h(hid);
  for (std::size_t j = 0; j < hid; ++j) h[j] = (1.0 - z[j]) * h_prev[j] + z[j] * c[j];

  if (cache != nullptr) {
    cache->x.assign(x.begin(), x.end());
    cache->h_prev.assign(h_prev.begin(), h_prev.end());
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->h_tilde = std::move(c);
  }
  return h;
}

Vec QuantumGru::forward(const GruParams& p, const Matrix& seq, std::size_t steps, std::span<const double> h0,
                        const qsim::NoiseSpec& noise, Rng& rng, std::vector<GruStepCache>* caches) const {
  if (steps == 0 || steps > seq.rows) throw InputError("GRU needs a nonempty input sequence");
  if (seq.cols != static_cast<std::size_t>(cfg_.input_dim)) throw ShapeError("GRU sequence width mismatch");
  Vec h = h0.empty() ? Vec(static_cast<std::size_t>(cfg_.hidden_dim), 0.0) : Vec(h0.begin(), h0.end());
  if (caches != nullptr) caches->assign(steps, {});
  for (std::size_t t = 0; t < steps; ++t) {
    h = step(p, seq.row(t), h, noise, rng, caches ? &(*caches)[t] : nullptr);
  }
  return h;
}

GruBackward QuantumGru::backward(const GruParams& p, const std::vector<GruStepCache>& caches,
                                 std::span<const double> upstream, GruParams& grads) const {
  const auto in = static_cast<std::size_t>(cfg_.input_dim);
  const auto hid = static_cast<std::size_t>(cfg_.hidden_dim);
  if (upstream.size() != hid) throw ShapeError("GRU upstream length mismatch");

  GruBackward out;
  out.dx.assign(caches.size(), Vec(in, 0.0));
  Vec dh(upstream.begin(), upstream.end());
  Vec da_z(hid), da_r(hid), da_c(hid), dr(hid);

  for (std::size_t t = caches.size(); t-- > 0;) {
    const GruStepCache& c = caches[t];
    Vec dh_prev(hid);
    for (std::size_t j = 0; j < hid; ++j) {
      const double dz = dh[j] * (c.h_tilde[j] - c.h_prev[j]);
      const double dc = dh[j] * c.z[j];
      dh_prev[j] = dh[j] * (1.0 - c.z[j]);
      da_z[j] = dz * c.z[j] * (1.0 - c.z[j]);
      da_c[j] = dc * (1.0 - c.h_tilde[j] * c.h_tilde[j]);
    }

    Vec& dx = out.dx[t];
    const Vec g_c = gate_.backward(p.candidate, c.candidate, da_c, grads.candidate);
    for (std::size_t k = 0; k < in; ++k) dx[k] += g_c[k];
    for (std::size_t j = 0; j < hid; ++j) {
      dr[j] = g_c[in + j] * c.h_prev[j];
      dh_prev[j] += g_c[in + j] * c.r[j];
      da_r[j] = dr[j] * c.r[j] * (1.0 - c.r[j]);
    }

    const Vec g_r = gate_.backward(p.reset, c.reset, da_r, grads.reset);
    const Vec g_z = gate_.backward(p.update, c.update, da_z, grads.update);
    for (std::size_t k = 0; k < in; ++k) dx[k] += g_r[k] + g_z[k];
    for (std::size_t j = 0; j < hid; ++j) dh_prev[j] += g_r[in + j] + g_z[in + j];
    dh = std::move(dh_prev);
  }
  out.dh0 = std::move(dh);
  return out;
}

}  // namespace qtsad::layers
