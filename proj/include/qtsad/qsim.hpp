// ============================================================================
// qsim.hpp - statevector simulator for small variational circuits
//
// Conventions (fixed, tests depend on them):
//   * qubit 0 is the most significant bit of the basis index, so for two
//     qubits |01> is basis index 1 and has qubit 1 set.
//   * R_P(theta) = exp(-i * theta * P / 2) for P in {X, Y, Z}.
//   * Pauli noise is expressed as a Constant(pi) rotation about the same
//     axis, which equals the Pauli up to a global phase of -i.
// ============================================================================
#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qtsad/random.hpp"
#include "qtsad/tensor.hpp"

namespace qtsad::qsim {

using Amplitude = std::complex<double>;

inline constexpr int kMaxQubits = 12;

class QubitState {
 public:
  // |0...0> on n_qubits; throws BudgetError outside [1, kMaxQubits].
  static QubitState zero(int n_qubits);

  int n_qubits() const { return n_qubits_; }
  std::size_t dimension() const { return amps_.size(); }
  std::span<const Amplitude> amplitudes() const { return amps_; }
  std::span<Amplitude> amplitudes() { return amps_; }
  double norm_squared() const;

 private:
  QubitState(int n, std::vector<Amplitude> amps) : n_qubits_(n), amps_(std::move(amps)) {}
  int n_qubits_;
  std::vector<Amplitude> amps_;
};

QubitState init_zero_state(int n_qubits);

enum class GateKind { RX, RY, RZ, CNOT };

// How an Input slot value h becomes a rotation angle.
enum class Encoding { Identity, ArcTan, ArcCos };

inline constexpr double kArcCosClamp = 1.0 - 1e-6;

double encode_angle(Encoding enc, double h);
// d(angle)/dh; zero where ArcCos clamps its argument.
double encode_derivative(Encoding enc, double h);

struct AngleSource {
  enum class Kind { Constant, Param, Input };
  Kind kind = Kind::Constant;
  double value = 0.0;  // Constant only
  int slot = -1;       // Param / Input
  Encoding encoding = Encoding::Identity;  // Input only

  static AngleSource constant(double radians) { return {Kind::Constant, radians, -1, Encoding::Identity}; }
  static AngleSource param(int slot) { return {Kind::Param, 0.0, slot, Encoding::Identity}; }
  static AngleSource input(int slot, Encoding enc) { return {Kind::Input, 0.0, slot, enc}; }

  bool operator==(const AngleSource&) const = default;
};

struct GateOp {
  GateKind kind = GateKind::RY;
  int wire = 0;     // rotation wire, or CNOT control
  int target = -1;  // CNOT target
  AngleSource angle;

  static GateOp rx(int wire, AngleSource a) { return {GateKind::RX, wire, -1, a}; }
  static GateOp ry(int wire, AngleSource a) { return {GateKind::RY, wire, -1, a}; }
  static GateOp rz(int wire, AngleSource a) { return {GateKind::RZ, wire, -1, a}; }
  static GateOp cnot(int control, int target) { return {GateKind::CNOT, control, target, {}}; }

  bool is_rotation() const { return kind != GateKind::CNOT; }
  bool is_trainable_site() const {
    return is_rotation() && angle.kind != AngleSource::Kind::Constant;
  }
  bool operator==(const GateOp&) const = default;
};

struct CircuitProgram {
  int n_qubits = 1;
  std::vector<GateOp> ops;
  int n_param_slots = 0;
  int n_input_slots = 0;

  // Checks wire ranges, slot ranges, that every param slot is used, and that
  // every input slot is used exactly once. Throws ConfigError.
  void validate() const;

  bool operator==(const CircuitProgram&) const = default;
};

struct NoiseSpec {
  bool enabled = false;
  double p_single = 0.1;
  double p_cnot = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

// In-place gate application. The angle is ignored for CNOT.
void apply_gate(QubitState& state, const GateOp& gate, double resolved_angle);

// Angle of every op after slot binding and input encoding (0 for CNOT).
Vec resolve_angles(const CircuitProgram& program, std::span<const double> params,
                   std::span<const double> inputs);

QubitState run_circuit(const CircuitProgram& program, std::span<const double> params,
                       std::span<const double> inputs);
// With noise enabled a noisy program is sampled from rng first.
QubitState run_circuit(const CircuitProgram& program, std::span<const double> params,
                       std::span<const double> inputs, const NoiseSpec& noise, Rng& rng);

Vec expect_z_all(const QubitState& state);

// Gradient of sum_q w_q <Z_q> with respect to the param slots, two shifted
// evaluations per trainable occurrence.
Vec grad_parameter_shift(const CircuitProgram& program, std::span<const double> params,
                         std::span<const double> inputs, std::span<const double> obs_weights,
                         const NoiseSpec& noise = {});

struct AdjointResult {
  Vec expectations;  // <Z_q> per qubit
  Vec param_grad;    // d(w . <Z>)/d params
  Vec input_grad;    // d(w . <Z>)/d inputs, encoding chain factor included
};

AdjointResult grad_adjoint(const CircuitProgram& program, std::span<const double> params,
                           std::span<const double> inputs, std::span<const double> obs_weights,
                           const NoiseSpec& noise = {});

// Reverse sweep starting from an already computed final state, used by
// layers that keep the forward state in their cache. Writes into the
// provided gradient buffers (accumulating).
void adjoint_sweep(const CircuitProgram& program, std::span<const double> angles,
                   const QubitState& final_state, std::span<const double> obs_weights,
                   std::span<const double> inputs, std::span<double> param_grad,
                   std::span<double> input_grad);

CircuitProgram sample_noisy_program(const CircuitProgram& program, const NoiseSpec& noise, Rng& rng);

// Versioned JSON text document; layout documented in docs/formats.md.
inline constexpr int kCircuitFormatVersion = 1;
std::string program_to_text(const CircuitProgram& program);
CircuitProgram program_from_text(const std::string& text);

const char* to_string(GateKind kind);
const char* to_string(Encoding enc);
Encoding encoding_from_string(const std::string& name);

}  // namespace qtsad::qsim
