#include "qtsad/model.hpp"

#include <algorithm>
#include <cmath>

#include "qtsad/errors.hpp"

namespace qtsad::model {

namespace {

// Step for the directional difference in the penalty's parameter gradient.
constexpr double kPenaltyDirectionStep = 1e-4;

Matrix with_candidate(const Matrix& context, std::size_t w, std::span<const double> candidate) {
  Matrix seq(w + 1, context.cols);
  std::copy_n(context.data.begin(), w * context.cols, seq.data.begin());
  std::copy(candidate.begin(), candidate.end(), seq.row(w).begin());
  return seq;
}

double mean(std::span<const double> v) {
  if (v.empty()) throw InputError("mean of an empty batch");
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace

void ModelConfig::validate() const {
  if (features < 1) throw ConfigError("model needs at least one feature");
  if (window < 1) throw ConfigError("window size must be positive");
  if (generator_hidden < 1 || critic_hidden < 1) throw ConfigError("hidden dimensions must be positive");
  layers::HqlConfig::make(features + generator_hidden, generator_hidden, generator_shape).validate();
  layers::HqlConfig::make(features + critic_hidden, critic_hidden, critic_shape).validate();
}

GeneratorParams GeneratorParams::zeros(const ModelConfig& cfg) {
  const auto head = layers::HqlConfig::make(cfg.generator_hidden, cfg.features, cfg.generator_shape);
  return {layers::GruParams::zeros(cfg.generator_gru()), layers::HqlParams::zeros(head),
          layers::HqlParams::zeros(head)};
}

GeneratorParams GeneratorParams::random(const ModelConfig& cfg, Rng& rng) {
  const auto head = layers::HqlConfig::make(cfg.generator_hidden, cfg.features, cfg.generator_shape);
  GeneratorParams p;
  p.backbone = layers::GruParams::random(cfg.generator_gru(), rng);
  p.head_mu = layers::HqlParams::random(head, rng);
  p.head_logvar = layers::HqlParams::random(head, rng);
  return p;
}

CriticParams CriticParams::zeros(const ModelConfig& cfg) {
  const auto head = layers::HqlConfig::make(cfg.critic_hidden, 1, cfg.critic_shape);
  return {layers::GruParams::zeros(cfg.critic_gru()), layers::HqlParams::zeros(head)};
}

CriticParams CriticParams::random(const ModelConfig& cfg, Rng& rng) {
  const auto head = layers::HqlConfig::make(cfg.critic_hidden, 1, cfg.critic_shape);
  CriticParams p;
  p.backbone = layers::GruParams::random(cfg.critic_gru(), rng);
  p.head_score = layers::HqlParams::random(head, rng);
  return p;
}

Vec reparameterize(std::span<const double> mu, std::span<const double> logvar, std::span<const double> eps) {
  if (mu.size() != logvar.size() || mu.size() != eps.size()) throw ShapeError("reparameterize: length mismatch");
  Vec out(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] + std::exp(0.5 * logvar[i]) * eps[i];
  return out;
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Generator::Generator(const ModelConfig& cfg)
    : cfg_(cfg),
      gru_(cfg.generator_gru()),
      head_(layers::HqlConfig::make(cfg.generator_hidden, cfg.features, cfg.generator_shape)) {
  cfg_.validate();
}

GeneratorOutput Generator::forward(const GeneratorParams& p, const Matrix& context, std::span<const double> eps,
                                   const qsim::NoiseSpec& noise, Rng& rng, GeneratorCache* cache) const {
  const auto d = static_cast<std::size_t>(cfg_.features);
  const auto w = static_cast<std::size_t>(cfg_.window);
  if (context.cols != d || context.rows < w) throw ShapeError("generator context must be at least w x d");
  if (eps.size() != d) throw ShapeError("generator eps must have d entries");

  const Vec h = gru_.forward(p.backbone, context, w, {}, noise, rng, cache ? &cache->gru : nullptr);
  GeneratorOutput out;
  out.gaussian.mu = head_.forward(p.head_mu, h, noise, rng, cache ? &cache->mu : nullptr);
  Vec raw = head_.forward(p.head_logvar, h, noise, rng, cache ? &cache->logvar : nullptr);
  out.gaussian.logvar.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.gaussian.logvar[j] = std::clamp(raw[j], kLogvarMin, kLogvarMax);
  out.x_hat = reparameterize(out.gaussian.mu, out.gaussian.logvar, eps);
  if (cache != nullptr) {
    cache->logvar_raw = std::move(raw);
    cache->eps.assign(eps.begin(), eps.end());
  }
  return out;
}

void Generator::backward(const GeneratorParams& p, const GeneratorCache& cache, const GeneratorOutput& out,
                         std::span<const double> d_mu, std::span<const double> d_logvar,
                         std::span<const double> d_xhat, GeneratorParams& grads) const {
  const auto d = static_cast<std::size_t>(cfg_.features);
  Vec g_mu(d), g_lv(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double lv = out.gaussian.logvar[j];
    g_mu[j] = d_mu[j] + d_xhat[j];
    double g = d_logvar[j] + d_xhat[j] * 0.5 * std::exp(0.5 * lv) * cache.eps[j];
    if (cache.logvar_raw[j] < kLogvarMin || cache.logvar_raw[j] > kLogvarMax) g = 0.0;
    g_lv[j] = g;
  }
  Vec dh = head_.backward(p.head_mu, cache.mu, g_mu, grads.head_mu);
  const Vec dh_lv = head_.backward(p.head_logvar, cache.logvar, g_lv, grads.head_logvar);
  for (std::size_t k = 0; k < dh.size(); ++k) dh[k] += dh_lv[k];
  gru_.backward(p.backbone, cache.gru, dh, grads.backbone);
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

Critic::Critic(const ModelConfig& cfg)
    : cfg_(cfg), gru_(cfg.critic_gru()), head_(layers::HqlConfig::make(cfg.critic_hidden, 1, cfg.critic_shape)) {
  cfg_.validate();
}

double Critic::score(const CriticParams& p, const Matrix& context, std::span<const double> candidate,
                     const qsim::NoiseSpec& noise, Rng& rng, CriticCache* cache) const {
  const auto d = static_cast<std::size_t>(cfg_.features);
  const auto w = static_cast<std::size_t>(cfg_.window);
  if (context.cols != d || context.rows < w) throw ShapeError("critic context must be at least w x d");
  if (candidate.size() != d) throw ShapeError("critic candidate must have d entries");
  const Matrix seq = with_candidate(context, w, candidate);
  const Vec h = gru_.forward(p.backbone, seq, w + 1, {}, noise, rng, cache ? &cache->gru : nullptr);
  return head_.forward(p.head_score, h, noise, rng, cache ? &cache->head : nullptr)[0];
}

Vec Critic::backward(const CriticParams& p, const CriticCache& cache, double upstream, CriticParams& grads) const {
  const double up[1] = {upstream};
  const Vec dh = head_.backward(p.head_score, cache.head, up, grads.head_score);
  layers::GruBackward b = gru_.backward(p.backbone, cache.gru, dh, grads.backbone);
  return std::move(b.dx.back());
}

Vec Critic::input_gradient(const CriticParams& p, const Matrix& context, std::span<const double> candidate,
                           const qsim::NoiseSpec& noise, Rng& rng, double* score_out) const {
  CriticCache cache;
  const double s = score(p, context, candidate, noise, rng, &cache);
  if (score_out != nullptr) *score_out = s;
  CriticParams scratch = zeros_like(p);
  return backward(p, cache, 1.0, scratch);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double kl_loss(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("kl_loss: length mismatch");
  if (mu.empty()) throw InputError("kl_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) acc += std::exp(logvar[i]) + mu[i] * mu[i] - 1.0 - logvar[i];
  return 0.5 * acc / static_cast<double>(mu.size());
}

double var_penalty(std::span<const double> logvar) {
  if (logvar.empty()) throw InputError("var_penalty: empty batch");
  double acc = 0.0;
  for (double lv : logvar) acc += std::exp(lv);
  return acc / static_cast<double>(logvar.size());
}

double generator_loss(std::span<const double> fake_scores, std::span<const double> mu,
                      std::span<const double> logvar, double lambda_kl) {
  return -mean(fake_scores) + var_penalty(logvar) + lambda_kl * kl_loss(mu, logvar);
}

double critic_loss(std::span<const double> real_scores, std::span<const double> fake_scores) {
  return mean(fake_scores) - mean(real_scores);
}

void kl_loss_grad(std::span<const double> mu, std::span<const double> logvar, std::span<double> d_mu,
                  std::span<double> d_logvar) {
  const double n = static_cast<double>(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    d_mu[i] = mu[i] / n;
    d_logvar[i] = 0.5 * (std::exp(logvar[i]) - 1.0) / n;
  }
}

void var_penalty_grad(std::span<const double> logvar, std::span<double> d_logvar) {
  const double n = static_cast<double>(logvar.size());
  for (std::size_t i = 0; i < logvar.size(); ++i) d_logvar[i] = std::exp(logvar[i]) / n;
}

double penalty_from_gradient(std::span<const double> g) {
  double sq = 0.0;
  for (double v : g) sq += v * v;
  const double dev = std::sqrt(sq) - 1.0;
  return dev * dev;
}

double gradient_penalty(const std::vector<Vec>& x_real, const std::vector<Vec>& x_fake, std::span<const double> u,
                        const std::function<Vec(std::size_t, std::span<const double>)>& grad_fn) {
  if (x_real.size() != x_fake.size() || x_real.size() != u.size()) throw ShapeError("gradient_penalty: batch mismatch");
  if (x_real.empty()) throw InputError("gradient_penalty: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x_real.size(); ++i) {
    if (x_real[i].size() != x_fake[i].size()) throw ShapeError("gradient_penalty: candidate length mismatch");
    Vec interp(x_real[i].size());
    for (std::size_t j = 0; j < interp.size(); ++j) interp[j] = u[i] * x_real[i][j] + (1.0 - u[i]) * x_fake[i][j];
    acc += penalty_from_gradient(grad_fn(i, interp));
  }
  return acc / static_cast<double>(x_real.size());
}

PenaltySample critic_gradient_penalty(const Critic& critic, const CriticParams& p, const Matrix& context,
                                      std::span<const double> interp, const qsim::NoiseSpec& noise,
                                      std::uint64_t noise_seed, CriticParams* grads, double scale) {
  Rng rng(noise_seed);
  const Vec g = critic.input_gradient(p, context, interp, noise, rng);
  double sq = 0.0;
  for (double v : g) sq += v * v;
  PenaltySample out;
  out.grad_norm = std::sqrt(sq);
  out.penalty = (out.grad_norm - 1.0) * (out.grad_norm - 1.0);
  if (grads == nullptr || out.grad_norm == 0.0) return out;

  // d/dtheta ||g|| = d/ds [dD/dtheta (x + s v)] at s = 0, v = g / ||g||.
  const double up = scale * 2.0 * (out.grad_norm - 1.0) / (2.0 * kPenaltyDirectionStep);
  Vec shifted(interp.begin(), interp.end());
  for (int sign : {1, -1}) {
    for (std::size_t j = 0; j < shifted.size(); ++j) {
      shifted[j] = interp[j] + sign * kPenaltyDirectionStep * g[j] / out.grad_norm;
    }
    Rng pass_rng(noise_seed);
    CriticCache cache;
    critic.score(p, context, shifted, noise, pass_rng, &cache);
    critic.backward(p, cache, sign * up, *grads);
  }
  return out;
}

double gradient_penalty(const Critic& critic, const CriticParams& p, const std::vector<Matrix>& contexts,
                        const std::vector<Vec>& x_real, const std::vector<Vec>& x_fake, Rng& rng,
                        const qsim::NoiseSpec& noise) {
  if (contexts.size() != x_real.size()) throw ShapeError("gradient_penalty: context batch mismatch");
  Vec u(x_real.size());
  for (double& v : u) v = uniform01(rng);
  const std::uint64_t base = rng();
  return gradient_penalty(x_real, x_fake, u, [&](std::size_t i, std::span<const double> interp) {
    Rng pass_rng(derive_seed(base, i));
    return critic.input_gradient(p, contexts[i], interp, noise, pass_rng);
  });
}

}  // namespace qtsad::model
