// Hybrid quantum layer (dense-in -> data-injected circuit -> dense-out) and
// the recurrent cell whose three gates are hybrid quantum layers.
#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qtsad/params.hpp"
#include "qtsad/qsim.hpp"
#include "qtsad/random.hpp"
#include "qtsad/tensor.hpp"

namespace qtsad::layers {

// Circuit geometry shared by every layer of one network.
struct QuantumShape {
  int n_qubits = 6;
  int n_blocks = 12;
  int injection_blocks = 6;
  qsim::Encoding encoding = qsim::Encoding::ArcTan;
};

struct HqlConfig {
  int in_dim = 1;
  int n_qubits = 6;
  int n_blocks = 12;
  int injection_blocks = 6;
  int out_dim = 1;
  qsim::Encoding encoding = qsim::Encoding::ArcTan;

  static HqlConfig make(int in_dim, int out_dim, const QuantumShape& shape) {
    return {in_dim, shape.n_qubits, shape.n_blocks, shape.injection_blocks, out_dim, shape.encoding};
  }
  // Width of the dense-in layer: one value per injected rotation.
  int hidden_width() const { return injection_blocks * n_qubits; }
  int param_slots() const { return 2 * n_qubits * n_blocks; }
  void validate() const;
};

struct HqlParams {
  Matrix w_in;   // hidden_width x in_dim
  Vec b_in;      // hidden_width
  Vec theta;     // 2 * n_qubits * n_blocks
  Matrix w_out;  // out_dim x n_qubits
  Vec b_out;     // out_dim

  static HqlParams zeros(const HqlConfig& cfg);
  // Dense weights uniform in +-1/sqrt(fan_in); circuit angles uniform in [-pi, pi].
  static HqlParams random(const HqlConfig& cfg, Rng& rng);

  template <class Fn>
  void for_each_tensor(Fn&& fn) { visit(*this, fn); }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const { visit(*this, fn); }

  bool operator==(const HqlParams&) const = default;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    detail::visit_matrix("w_in", self.w_in, fn);
    detail::visit_vector("b_in", self.b_in, fn);
    detail::visit_vector("theta", self.theta, fn);
    detail::visit_matrix("w_out", self.w_out, fn);
    detail::visit_vector("b_out", self.b_out, fn);
  }
};

// Block indices (ascending) that start with a data-injection column. The
// injection blocks are spread evenly over the depth, which alternates
// injection and pure-variational blocks when n_blocks = 2 * injection_blocks.
std::vector<int> injection_blocks(const HqlConfig& cfg);

// Each block: [RY(input) per qubit, if injection block], RZ(param) and
// RX(param) per qubit, then CNOT q -> q+1 for q = 0..n-2. Input slots are
// numbered (injection index, qubit) -> index * n_qubits + qubit; param slots
// (block, qubit) -> 2 * (block * n_qubits + qubit) for RZ and +1 for RX.
qsim::CircuitProgram build_hql_program(const HqlConfig& cfg);

struct HqlCache {
  Vec x;
  Vec h;       // dense-in output, the circuit inputs
  Vec angles;  // resolved angles of the executed program
  Vec z;       // <Z_q>
  std::optional<qsim::CircuitProgram> sampled;  // set when noise was applied
  std::optional<qsim::QubitState> state;
};

class HybridQuantumLayer {
 public:
  explicit HybridQuantumLayer(const HqlConfig& cfg);

  const HqlConfig& config() const { return cfg_; }
  const qsim::CircuitProgram& program() const { return program_; }

  // y = W_out <Z>(circuit(W_in x + b_in)) + b_out. The cache is filled when
  // non-null and is required by backward().
  Vec forward(const HqlParams& p, std::span<const double> x, const qsim::NoiseSpec& noise, Rng& rng,
              HqlCache* cache) const;

  // Accumulates parameter gradients into grads and returns dL/dx.
  Vec backward(const HqlParams& p, const HqlCache& cache, std::span<const double> upstream,
               HqlParams& grads) const;

 private:
  HqlConfig cfg_;
  qsim::CircuitProgram program_;
};

// ---------------------------------------------------------------------------
// Quantum-gated recurrent unit
// ---------------------------------------------------------------------------

struct GruConfig {
  int input_dim = 1;
  int hidden_dim = 1;
  QuantumShape shape;

  HqlConfig gate_config() const { return HqlConfig::make(input_dim + hidden_dim, hidden_dim, shape); }
};

struct GruParams {
  HqlParams update;
  HqlParams reset;
  HqlParams candidate;
  int hidden_dim = 0;

  static GruParams zeros(const GruConfig& cfg);
  static GruParams random(const GruConfig& cfg, Rng& rng);

  template <class Fn>
  void for_each_tensor(Fn&& fn) { visit(*this, fn); }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const { visit(*this, fn); }

  bool operator==(const GruParams&) const = default;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    auto prefixed = [&fn](const std::string& pre) {
      return [&fn, pre](const std::string& name, const auto& shape, auto values) { fn(pre + name, shape, values); };
    };
    self.update.for_each_tensor(prefixed("update."));
    self.reset.for_each_tensor(prefixed("reset."));
    self.candidate.for_each_tensor(prefixed("candidate."));
  }
};

struct GruStepCache {
  Vec x;
  Vec h_prev;
  Vec z;        // update gate
  Vec r;        // reset gate
  Vec h_tilde;  // candidate
  HqlCache update;
  HqlCache reset;
  HqlCache candidate;
};

struct GruBackward {
  Vec dh0;                     // gradient with respect to the initial state
  std::vector<Vec> dx;         // gradient with respect to every input step
};

class QuantumGru {
 public:
  explicit QuantumGru(const GruConfig& cfg);

  const GruConfig& config() const { return cfg_; }
  const HybridQuantumLayer& gate_layer() const { return gate_; }

  // z = sigmoid(U[x; h]), r = sigmoid(R[x; h]), c = tanh(C[x; r*h]),
  // h' = (1 - z) * h + z * c.
  Vec step(const GruParams& p, std::span<const double> x, std::span<const double> h_prev,
           const qsim::NoiseSpec& noise, Rng& rng, GruStepCache* cache) const;

  // Folds step() over the first `steps` rows of seq starting from h0 (zero
  // vector when empty). Throws InputError on an empty sequence.
  Vec forward(const GruParams& p, const Matrix& seq, std::size_t steps, std::span<const double> h0,
              const qsim::NoiseSpec& noise, Rng& rng, std::vector<GruStepCache>* caches) const;

  // Backpropagation through time from dL/dh_final.
  GruBackward backward(const GruParams& p, const std::vector<GruStepCache>& caches,
                       std::span<const double> upstream, GruParams& grads) const;

 private:
  GruConfig cfg_;
  HybridQuantumLayer gate_;
};

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace qtsad::layers
