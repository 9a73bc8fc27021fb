#include "qtsad/qsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "qtsad/errors.hpp"

namespace qtsad::qsim {

namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

std::size_t wire_stride(int n_qubits, int wire) {
  return std::size_t{1} << static_cast<unsigned>(n_qubits - 1 - wire);
}

// Visits every amplitude pair (bit clear, bit set) for one wire.
template <class Fn>
void for_each_pair(std::span<Amplitude> amps, std::size_t stride, Fn&& fn) {
  const std::size_t dim = amps.size();
  for (std::size_t base = 0; base < dim; base += 2 * stride) {
    for (std::size_t i = base; i < base + stride; ++i) fn(amps[i], amps[i + stride]);
  }
}

void apply_rotation(std::span<Amplitude> amps, int n_qubits, GateKind kind, int wire, double angle) {
  const double c = std::cos(angle / 2.0);
  const double s = std::sin(angle / 2.0);
  const std::size_t stride = wire_stride(n_qubits, wire);
  switch (kind) {
    case GateKind::RX:
      for_each_pair(amps, stride, [c, s](Amplitude& a0, Amplitude& a1) {
        const Amplitude b0 = a0;
        const Amplitude b1 = a1;
        // -i*s*z = (s*im, -s*re)
        a0 = {c * b0.real() + s * b1.imag(), c * b0.imag() - s * b1.real()};
        a1 = {c * b1.real() + s * b0.imag(), c * b1.imag() - s * b0.real()};
      });
      break;
    case GateKind::RY:
      for_each_pair(amps, stride, [c, s](Amplitude& a0, Amplitude& a1) {
        const Amplitude b0 = a0;
        a0 = c * b0 - s * a1;
        a1 = s * b0 + c * a1;
      });
      break;
    case GateKind::RZ: {
      const Amplitude lo{c, -s};
      const Amplitude hi{c, s};
      for_each_pair(amps, stride, [lo, hi](Amplitude& a0, Amplitude& a1) {
        a0 *= lo;
        a1 *= hi;
      });
      break;
    }
    case GateKind::CNOT:
      break;
  }
}

void apply_cnot(std::span<Amplitude> amps, int n_qubits, int control, int target) {
  const std::size_t cbit = wire_stride(n_qubits, control);
  const std::size_t tbit = wire_stride(n_qubits, target);
  for (std::size_t i = 0; i < amps.size(); ++i) {
    if ((i & cbit) != 0 && (i & tbit) == 0) std::swap(amps[i], amps[i | tbit]);
  }
}

void apply_resolved(std::span<Amplitude> amps, int n_qubits, const GateOp& op, double angle) {
  if (op.kind == GateKind::CNOT) {
    apply_cnot(amps, n_qubits, op.wire, op.target);
  } else {
    apply_rotation(amps, n_qubits, op.kind, op.wire, angle);
  }
}

QubitState run_with_angles(const CircuitProgram& program, std::span<const double> angles) {
  QubitState state = QubitState::zero(program.n_qubits);
  auto amps = state.amplitudes();
  for (std::size_t i = 0; i < program.ops.size(); ++i) {
    apply_resolved(amps, program.n_qubits, program.ops[i], angles[i]);
  }
  return state;
}

double weighted_z(const QubitState& state, std::span<const double> weights) {
  const Vec z = expect_z_all(state);
  double acc = 0.0;
  for (std::size_t q = 0; q < z.size(); ++q) acc += weights[q] * z[q];
  return acc;
}

void check_lengths(const CircuitProgram& program, std::span<const double> params,
                   std::span<const double> inputs) {
  if (params.size() != static_cast<std::size_t>(program.n_param_slots) ||
      inputs.size() != static_cast<std::size_t>(program.n_input_slots)) {
    throw ShapeError("circuit expects " + std::to_string(program.n_param_slots) + " params and " +
                     std::to_string(program.n_input_slots) + " inputs, got " +
                     std::to_string(params.size()) + " and " + std::to_string(inputs.size()));
  }
}

void require_noiseless(const NoiseSpec& noise) {
  if (noise.enabled) {
    throw UnsupportedError("gradients are defined on noise-free programs; sample a noisy program first");
  }
}

// Im <lambda| P |psi> restricted to one wire, P the generator of the rotation.
double generator_overlap(std::span<const Amplitude> lambda, std::span<const Amplitude> psi,
                         std::size_t stride, GateKind kind) {
  double im = 0.0;
  const std::size_t dim = psi.size();
  for (std::size_t base = 0; base < dim; base += 2 * stride) {
    for (std::size_t i = base; i < base + stride; ++i) {
      const Amplitude l0 = std::conj(lambda[i]);
      const Amplitude l1 = std::conj(lambda[i + stride]);
      const Amplitude p0 = psi[i];
      const Amplitude p1 = psi[i + stride];
      Amplitude z;
      switch (kind) {
        case GateKind::RX: z = l0 * p1 + l1 * p0; break;
        case GateKind::RY: z = l0 * Amplitude{p1.imag(), -p1.real()} + l1 * Amplitude{-p0.imag(), p0.real()}; break;
        case GateKind::RZ: z = l0 * p0 - l1 * p1; break;
        case GateKind::CNOT: break;
      }
      im += z.imag();
    }
  }
  return im;
}

}  // namespace

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

QubitState QubitState::zero(int n_qubits) {
  if (n_qubits < 1 || n_qubits > kMaxQubits) {
    throw BudgetError("qubit count " + std::to_string(n_qubits) + " outside simulator budget [1, " +
                      std::to_string(kMaxQubits) + "]");
  }
  std::vector<Amplitude> amps(std::size_t{1} << static_cast<unsigned>(n_qubits));
  amps[0] = 1.0;
  return QubitState(n_qubits, std::move(amps));
}

double QubitState::norm_squared() const {
  double acc = 0.0;
  for (const auto& a : amps_) acc += std::norm(a);
  return acc;
}

QubitState init_zero_state(int n_qubits) { return QubitState::zero(n_qubits); }

// ---------------------------------------------------------------------------
// Encodings
// ---------------------------------------------------------------------------

double encode_angle(Encoding enc, double h) {
  switch (enc) {
    case Encoding::Identity: return h;
    case Encoding::ArcTan: return std::atan(h);
    case Encoding::ArcCos: return std::acos(std::clamp(h, -kArcCosClamp, kArcCosClamp));
  }
  return h;
}

double encode_derivative(Encoding enc, double h) {
  switch (enc) {
    case Encoding::Identity: return 1.0;
    case Encoding::ArcTan: return 1.0 / (1.0 + h * h);
    case Encoding::ArcCos:
      if (h <= -kArcCosClamp || h >= kArcCosClamp) return 0.0;
      return -1.0 / std::sqrt(1.0 - h * h);
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// Program checks
// ---------------------------------------------------------------------------

void CircuitProgram::validate() const {
  if (n_qubits < 1 || n_qubits > kMaxQubits) {
    throw BudgetError("program qubit count " + std::to_string(n_qubits) + " outside simulator budget");
  }
  if (n_param_slots < 0 || n_input_slots < 0) throw ConfigError("negative slot count");
  std::vector<int> param_uses(static_cast<std::size_t>(n_param_slots), 0);
  std::vector<int> input_uses(static_cast<std::size_t>(n_input_slots), 0);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const GateOp& op = ops[i];
    const std::string where = "op " + std::to_string(i);
    if (op.wire < 0 || op.wire >= n_qubits) throw ConfigError(where + ": wire out of range");
    if (op.kind == GateKind::CNOT) {
      if (op.target < 0 || op.target >= n_qubits) throw ConfigError(where + ": CNOT target out of range");
      if (op.target == op.wire) throw ConfigError(where + ": CNOT control equals target");
      continue;
    }
    switch (op.angle.kind) {
      case AngleSource::Kind::Constant:
        if (!std::isfinite(op.angle.value)) throw ConfigError(where + ": non-finite constant angle");
        break;
      case AngleSource::Kind::Param:
        if (op.angle.slot < 0 || op.angle.slot >= n_param_slots) throw ConfigError(where + ": param slot out of range");
        ++param_uses[static_cast<std::size_t>(op.angle.slot)];
        break;
      case AngleSource::Kind::Input:
        if (op.angle.slot < 0 || op.angle.slot >= n_input_slots) throw ConfigError(where + ": input slot out of range");
        ++input_uses[static_cast<std::size_t>(op.angle.slot)];
        break;
    }
  }
  for (std::size_t s = 0; s < param_uses.size(); ++s) {
    if (param_uses[s] == 0) throw ConfigError("param slot " + std::to_string(s) + " is never used");
  }
  for (std::size_t s = 0; s < input_uses.size(); ++s) {
    if (input_uses[s] != 1) {
      throw ConfigError("input slot " + std::to_string(s) + " used " + std::to_string(input_uses[s]) +
                        " times; each input must be injected exactly once");
    }
  }
}

void NoiseSpec::validate() const {
  auto ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!ok(p_single) || !ok(p_cnot)) throw ConfigError("noise probabilities must lie in [0, 1]");
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

void apply_gate(QubitState& state, const GateOp& gate, double resolved_angle) {
  const int n = state.n_qubits();
  if (gate.wire < 0 || gate.wire >= n) throw ConfigError("gate wire out of range");
  if (gate.kind == GateKind::CNOT) {
    if (gate.target < 0 || gate.target >= n || gate.target == gate.wire) {
      throw ConfigError("invalid CNOT wires");
    }
  } else if (!std::isfinite(resolved_angle)) {
    throw NumericError("non-finite rotation angle");
  }
  apply_resolved(state.amplitudes(), n, gate, resolved_angle);
}

Vec resolve_angles(const CircuitProgram& program, std::span<const double> params,
                   std::span<const double> inputs) {
  check_lengths(program, params, inputs);
  Vec angles(program.ops.size(), 0.0);
  for (std::size_t i = 0; i < program.ops.size(); ++i) {
    const GateOp& op = program.ops[i];
    if (!op.is_rotation()) continue;
    double a = 0.0;
    switch (op.angle.kind) {
      case AngleSource::Kind::Constant: a = op.angle.value; break;
      case AngleSource::Kind::Param: a = params[static_cast<std::size_t>(op.angle.slot)]; break;
      case AngleSource::Kind::Input:
        a = encode_angle(op.angle.encoding, inputs[static_cast<std::size_t>(op.angle.slot)]);
        break;
    }
    if (!std::isfinite(a)) throw NumericError("non-finite rotation angle at op " + std::to_string(i));
    angles[i] = a;
  }
  return angles;
}

QubitState run_circuit(const CircuitProgram& program, std::span<const double> params,
                       std::span<const double> inputs) {
  const Vec angles = resolve_angles(program, params, inputs);
  return run_with_angles(program, angles);
}

QubitState run_circuit(const CircuitProgram& program, std::span<const double> params,
                       std::span<const double> inputs, const NoiseSpec& noise, Rng& rng) {
  if (!noise.enabled) return run_circuit(program, params, inputs);
  const CircuitProgram noisy = sample_noisy_program(program, noise, rng);
  return run_circuit(noisy, params, inputs);
}

Vec expect_z_all(const QubitState& state) {
  const int n = state.n_qubits();
  Vec z(static_cast<std::size_t>(n), 0.0);
  const auto amps = state.amplitudes();
  for (std::size_t i = 0; i < amps.size(); ++i) {
    const double p = std::norm(amps[i]);
    for (int q = 0; q < n; ++q) {
      z[static_cast<std::size_t>(q)] += (i & wire_stride(n, q)) ? -p : p;
    }
  }
  return z;
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

Vec grad_parameter_shift(const CircuitProgram& program, std::span<const double> params,
                         std::span<const double> inputs, std::span<const double> obs_weights,
                         const NoiseSpec& noise) {
  require_noiseless(noise);
  if (obs_weights.size() != static_cast<std::size_t>(program.n_qubits)) {
    throw ShapeError("observable weights must have one entry per qubit");
  }
  Vec angles = resolve_angles(program, params, inputs);
  Vec grad(params.size(), 0.0);
  for (std::size_t i = 0; i < program.ops.size(); ++i) {
    const GateOp& op = program.ops[i];
    if (!op.is_rotation() || op.angle.kind != AngleSource::Kind::Param) continue;
    const double a = angles[i];
    angles[i] = a + kHalfPi;
    const double plus = weighted_z(run_with_angles(program, angles), obs_weights);
    angles[i] = a - kHalfPi;
    const double minus = weighted_z(run_with_angles(program, angles), obs_weights);
    angles[i] = a;
    grad[static_cast<std::size_t>(op.angle.slot)] += 0.5 * (plus - minus);
  }
  return grad;
}

void adjoint_sweep(const CircuitProgram& program, std::span<const double> angles,
                   const QubitState& final_state, std::span<const double> obs_weights,
                   std::span<const double> inputs, std::span<double> param_grad,
                   std::span<double> input_grad) {
  const int n = program.n_qubits;
  std::vector<Amplitude> psi(final_state.amplitudes().begin(), final_state.amplitudes().end());
  std::vector<Amplitude> lambda(psi.size());
  for (std::size_t i = 0; i < psi.size(); ++i) {
    double w = 0.0;
    for (int q = 0; q < n; ++q) {
      w += (i & wire_stride(n, q)) ? -obs_weights[static_cast<std::size_t>(q)]
                                   : obs_weights[static_cast<std::size_t>(q)];
    }
    lambda[i] = w * psi[i];
  }
  for (std::size_t k = program.ops.size(); k-- > 0;) {
    const GateOp& op = program.ops[k];
    if (op.is_trainable_site()) {
      const double g = generator_overlap(lambda, psi, wire_stride(n, op.wire), op.kind);
      const auto slot = static_cast<std::size_t>(op.angle.slot);
      if (op.angle.kind == AngleSource::Kind::Param) {
        param_grad[slot] += g;
      } else {
        input_grad[slot] += g * encode_derivative(op.angle.encoding, inputs[slot]);
      }
    }
    apply_resolved(psi, n, op, -angles[k]);
    apply_resolved(lambda, n, op, -angles[k]);
  }
}

AdjointResult grad_adjoint(const CircuitProgram& program, std::span<const double> params,
                           std::span<const double> inputs, std::span<const double> obs_weights,
                           const NoiseSpec& noise) {
  require_noiseless(noise);
  if (obs_weights.size() != static_cast<std::size_t>(program.n_qubits)) {
    throw ShapeError("observable weights must have one entry per qubit");
  }
  const Vec angles = resolve_angles(program, params, inputs);
  const QubitState state = run_with_angles(program, angles);
  AdjointResult out;
  out.expectations = expect_z_all(state);
  out.param_grad.assign(params.size(), 0.0);
  out.input_grad.assign(inputs.size(), 0.0);
  adjoint_sweep(program, angles, state, obs_weights, inputs, out.param_grad, out.input_grad);
  return out;
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

CircuitProgram sample_noisy_program(const CircuitProgram& program, const NoiseSpec& noise, Rng& rng) {
  noise.validate();
  CircuitProgram out;
  out.n_qubits = program.n_qubits;
  out.n_param_slots = program.n_param_slots;
  out.n_input_slots = program.n_input_slots;
  out.ops.reserve(program.ops.size() * 2);
  static constexpr GateKind kPaulis[3] = {GateKind::RX, GateKind::RY, GateKind::RZ};
  for (const GateOp& op : program.ops) {
    if (op.kind == GateKind::CNOT) {
      if (uniform01(rng) < noise.p_cnot) {
        out.ops.push_back(GateOp::cnot(op.target, op.wire));
      } else {
        out.ops.push_back(op);
      }
      continue;
    }
    out.ops.push_back(op);
    if (op.is_trainable_site() && uniform01(rng) < noise.p_single) {
      const GateKind pauli = kPaulis[uniform_index(rng, 3)];
      out.ops.push_back({pauli, op.wire, -1, AngleSource::constant(std::numbers::pi)});
    }
  }
  return out;
}

const char* to_string(GateKind kind) {
  switch (kind) {
    case GateKind::RX: return "RX";
    case GateKind::RY: return "RY";
    case GateKind::RZ: return "RZ";
    case GateKind::CNOT: return "CNOT";
  }
  return "?";
}

const char* to_string(Encoding enc) {
  switch (enc) {
    case Encoding::Identity: return "identity";
    case Encoding::ArcTan: return "arctan";
    case Encoding::ArcCos: return "arccos";
  }
  return "?";
}

Encoding encoding_from_string(const std::string& name) {
  if (name == "identity") return Encoding::Identity;
  if (name == "arctan") return Encoding::ArcTan;
  if (name == "arccos") return Encoding::ArcCos;
  throw ConfigError("unknown encoding '" + name + "' (expected identity, arctan or arccos)");
}

}  // namespace qtsad::qsim
