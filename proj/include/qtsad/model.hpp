// ============================================================================
// model.hpp - generator and critic of the recurrent quantum Wasserstein GAN
//
// The generator reads a window of w observations and emits a diagonal
// Gaussian forecast (mu, logvar) for the next observation plus a
// reparameterized sample. The critic reads the same window with a candidate
// next observation appended as step w+1 and returns a scalar score.
// ============================================================================
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qtsad/layers.hpp"
#include "qtsad/params.hpp"

namespace qtsad::model {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

struct ModelConfig {
  int features = 1;  // d
  int window = 3;    // w
  int generator_hidden = 6;
  int critic_hidden = 6;
  layers::QuantumShape generator_shape;
  layers::QuantumShape critic_shape;

  layers::GruConfig generator_gru() const { return {features, generator_hidden, generator_shape}; }
  layers::GruConfig critic_gru() const { return {features, critic_hidden, critic_shape}; }
  void validate() const;
};

struct GeneratorParams {
  layers::GruParams backbone;
  layers::HqlParams head_mu;
  layers::HqlParams head_logvar;

  static GeneratorParams zeros(const ModelConfig& cfg);
  static GeneratorParams random(const ModelConfig& cfg, Rng& rng);

  template <class Fn>
  void for_each_tensor(Fn&& fn) { visit(*this, fn); }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const { visit(*this, fn); }
  bool operator==(const GeneratorParams&) const = default;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    auto prefixed = [&fn](const std::string& pre) {
      return [&fn, pre](const std::string& name, const auto& shape, auto values) { fn(pre + name, shape, values); };
    };
    self.backbone.for_each_tensor(prefixed("generator.gru."));
    self.head_mu.for_each_tensor(prefixed("generator.mu."));
    self.head_logvar.for_each_tensor(prefixed("generator.logvar."));
  }
};

struct CriticParams {
  layers::GruParams backbone;
  layers::HqlParams head_score;

  static CriticParams zeros(const ModelConfig& cfg);
  static CriticParams random(const ModelConfig& cfg, Rng& rng);

  template <class Fn>
  void for_each_tensor(Fn&& fn) { visit(*this, fn); }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const { visit(*this, fn); }
  bool operator==(const CriticParams&) const = default;

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    auto prefixed = [&fn](const std::string& pre) {
      return [&fn, pre](const std::string& name, const auto& shape, auto values) { fn(pre + name, shape, values); };
    };
    self.backbone.for_each_tensor(prefixed("critic.gru."));
    self.head_score.for_each_tensor(prefixed("critic.score."));
  }
};

struct GaussianOut {
  Vec mu;
  Vec logvar;  // clamped to [kLogvarMin, kLogvarMax]
};

struct GeneratorOutput {
  GaussianOut gaussian;
  Vec x_hat;
};

struct GeneratorCache {
  std::vector<layers::GruStepCache> gru;
  layers::HqlCache mu;
  layers::HqlCache logvar;
  Vec logvar_raw;
  Vec eps;
};

// mu + exp(logvar / 2) * eps
Vec reparameterize(std::span<const double> mu, std::span<const double> logvar, std::span<const double> eps);

class Generator {
 public:
  explicit Generator(const ModelConfig& cfg);
  const ModelConfig& config() const { return cfg_; }

  // Uses the first `window` rows of context. eps is supplied by the caller.
  GeneratorOutput forward(const GeneratorParams& p, const Matrix& context, std::span<const double> eps,
                          const qsim::NoiseSpec& noise, Rng& rng, GeneratorCache* cache) const;

  // Upstream gradients with respect to mu, the clamped logvar and x_hat.
  void backward(const GeneratorParams& p, const GeneratorCache& cache, const GeneratorOutput& out,
                std::span<const double> d_mu, std::span<const double> d_logvar, std::span<const double> d_xhat,
                GeneratorParams& grads) const;

 private:
  ModelConfig cfg_;
  layers::QuantumGru gru_;
  layers::HybridQuantumLayer head_;
};

struct CriticCache {
  std::vector<layers::GruStepCache> gru;
  layers::HqlCache head;
};

class Critic {
 public:
  explicit Critic(const ModelConfig& cfg);
  const ModelConfig& config() const { return cfg_; }

  // D(context[0..w), candidate): the candidate is fed as step w+1.
  double score(const CriticParams& p, const Matrix& context, std::span<const double> candidate,
               const qsim::NoiseSpec& noise, Rng& rng, CriticCache* cache) const;

  // Accumulates upstream * dD/dparams into grads and returns upstream * dD/dcandidate.
  Vec backward(const CriticParams& p, const CriticCache& cache, double upstream, CriticParams& grads) const;

  // dD/dcandidate without touching parameter gradients.
  Vec input_gradient(const CriticParams& p, const Matrix& context, std::span<const double> candidate,
                     const qsim::NoiseSpec& noise, Rng& rng, double* score_out = nullptr) const;

 private:
  ModelConfig cfg_;
  layers::QuantumGru gru_;
  layers::HybridQuantumLayer head_;
};

// ---------------------------------------------------------------------------
// Losses. Batches are flattened (batch x features) row-major.
// ---------------------------------------------------------------------------

// 0.5 * mean(exp(lv) + mu^2 - 1 - lv)
double kl_loss(std::span<const double> mu, std::span<const double> logvar);
// mean(exp(lv))
double var_penalty(std::span<const double> logvar);
// -mean(fake_scores) + var_penalty + lambda_kl * kl_loss
double generator_loss(std::span<const double> fake_scores, std::span<const double> mu,
                      std::span<const double> logvar, double lambda_kl);
// mean(fake) - mean(real)
double critic_loss(std::span<const double> real_scores, std::span<const double> fake_scores);

// Per-element gradients of kl_loss and var_penalty (same layout as inputs).
void kl_loss_grad(std::span<const double> mu, std::span<const double> logvar, std::span<double> d_mu,
                  std::span<double> d_logvar);
void var_penalty_grad(std::span<const double> logvar, std::span<double> d_logvar);

// (||g|| - 1)^2
double penalty_from_gradient(std::span<const double> g);

// Generic form used with any differentiable score map:
//   interp_i = u_i * real_i + (1 - u_i) * fake_i,
//   result   = mean_i (||grad_fn(i, interp_i)|| - 1)^2
double gradient_penalty(const std::vector<Vec>& x_real, const std::vector<Vec>& x_fake, std::span<const double> u,
                        const std::function<Vec(std::size_t, std::span<const double>)>& grad_fn);

struct PenaltySample {
  double penalty = 0.0;
  double grad_norm = 0.0;
};

// Penalty at one interpolated candidate. When grads is non-null, adds
// scale * d(penalty)/d(params): the mixed second derivative is taken as a
// central difference of parameter gradients along the unit input-gradient
// direction. Every pass re-seeds the noise stream from noise_seed so all
// passes see the same sampled circuits.
PenaltySample critic_gradient_penalty(const Critic& critic, const CriticParams& p, const Matrix& context,
                                      std::span<const double> interp, const qsim::NoiseSpec& noise,
                                      std::uint64_t noise_seed, CriticParams* grads = nullptr, double scale = 1.0);

// Batch form: draws u_i ~ U(0,1) from rng per element and averages.
double gradient_penalty(const Critic& critic, const CriticParams& p, const std::vector<Matrix>& contexts,
                        const std::vector<Vec>& x_real, const std::vector<Vec>& x_fake, Rng& rng,
                        const qsim::NoiseSpec& noise = {});

}  // namespace qtsad::model
