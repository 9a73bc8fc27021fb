// ============================================================================
// trainer.hpp - adversarial training schedule, optimizers, training history
// ============================================================================
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qtsad/data.hpp"
#include "qtsad/model.hpp"

namespace qtsad::trainer {

using model::CriticParams;
using model::GeneratorParams;

enum class OptimizerKind { Adam, SGD };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 10;
  int batch_size = 32;
  int n_critic = 5;
  double lambda_gp = 10.0;
  double lambda_kl = 0.1;
  std::uint64_t seed = 0;
  qsim::NoiseSpec noise;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// Optimizer state over one flattened parameter bundle.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  Vec m;  // Adam first moment
  Vec v;  // Adam second moment

  static OptimizerState make(const TrainConfig& cfg, std::size_t n_params);
};

// In-place update of a flat parameter vector.
void optimizer_step(OptimizerState& state, std::span<double> params, std::span<const double> grads, double lr);

template <TensorBundle B>
void optimizer_step(OptimizerState& state, B& params, const B& grads, double lr) {
  Vec flat = flatten(params);
  const Vec g = flatten(grads);
  optimizer_step(state, flat, g, lr);
  unflatten(flat, params);
}

struct EpochRecord {
  int epoch = 0;          // 1-based
  double critic_loss = 0;  // mean(fake) - mean(real), averaged over critic steps
  double gp = 0;           // gradient penalty, averaged over critic steps
  double gen_loss = 0;
  double kl = 0;
  double var = 0;
};

std::string history_csv(const std::vector<EpochRecord>& history);

// Loss values and gradients of one critic step on a batch.
struct CriticStepResult {
  double critic_loss = 0;
  double gp = 0;
  CriticParams grads;
};

struct GeneratorStepResult {
  double gen_loss = 0;
  double kl = 0;
  double var = 0;
  double mean_fake_score = 0;
  GeneratorParams grads;
};

// The per-sample random streams are derived from stream_seed and the
// sample position, so a step is a pure function of its arguments.
CriticStepResult critic_step_gradients(const model::Generator& gen, const model::Critic& critic,
                                       const GeneratorParams& gp, const CriticParams& cp,
                                       const std::vector<const Matrix*>& batch, const TrainConfig& cfg,
                                       std::uint64_t stream_seed);

GeneratorStepResult generator_step_gradients(const model::Generator& gen, const model::Critic& critic,
                                             const GeneratorParams& gp, const CriticParams& cp,
                                             const std::vector<const Matrix*>& batch, const TrainConfig& cfg,
                                             std::uint64_t stream_seed);

struct TrainState {
  GeneratorParams generator;
  CriticParams critic;
  OptimizerState generator_opt;
  OptimizerState critic_opt;
  int epoch = 0;  // completed epochs
  std::vector<EpochRecord> history;
};

// Fresh parameters drawn from the config seed.
TrainState initial_state(const model::ModelConfig& mcfg, const TrainConfig& cfg);

using EpochCallback = std::function<void(const TrainState&)>;

// Runs epochs (state.epoch, cfg.epochs] in place. Windows are (w+1) x d.
void train(const model::ModelConfig& mcfg, const TrainConfig& cfg, const data::WindowSet& windows, TrainState& state,
           const EpochCallback& on_epoch = {});

// Convenience wrapper starting from initial_state().
TrainState train(const model::ModelConfig& mcfg, const TrainConfig& cfg, const data::WindowSet& windows);

// Mean ||dD/dx|| at interpolants between real targets and generated samples.
double mean_critic_gradient_norm(const model::Generator& gen, const model::Critic& critic, const GeneratorParams& gp,
                                 const CriticParams& cp, const data::WindowSet& windows, std::uint64_t seed);

}  // namespace qtsad::trainer
