#include "qtsad/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "qtsad/errors.hpp"

namespace qtsad::trainer {

namespace {

// Stream tags keep the derived seeds of different purposes apart.
constexpr std::uint64_t kInitStream = 0x1;
constexpr std::uint64_t kShuffleStream = 0x2;
constexpr std::uint64_t kCriticStream = 0x3;
constexpr std::uint64_t kGeneratorStream = 0x4;

Vec sample_eps(std::size_t d, Rng& rng) {
  Vec eps(d);
  for (double& e : eps) e = standard_normal(rng);
  return eps;
}

Matrix context_of(const Matrix& window, std::size_t w) {
  Matrix ctx(w, window.cols);
  std::copy_n(window.data.begin(), w * window.cols, ctx.data.begin());
  return ctx;
}

template <TensorBundle B>
void require_finite(const B& grads, const char* what) {
  bool ok = true;
  grads.for_each_tensor([&](const std::string&, const std::vector<std::size_t>&, std::span<const double> v) {
    for (double x : v) ok = ok && std::isfinite(x);
  });
  if (!ok) throw NumericError(std::string("non-finite ") + what);
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::SGD;
  throw ConfigError("unknown optimizer '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (n_critic < 1) throw ConfigError("n_critic must be positive");
  if (!(lambda_gp >= 0.0)) throw ConfigError("lambda_gp must be non-negative");
  if (!(lambda_kl >= 0.0)) throw ConfigError("lambda_kl must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("invalid Adam coefficients");
  }
  noise.validate();
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

OptimizerState OptimizerState::make(const TrainConfig& cfg, std::size_t n_params) {
  OptimizerState s;
  s.kind = cfg.optimizer;
  s.beta1 = cfg.adam_beta1;
  s.beta2 = cfg.adam_beta2;
  s.eps = cfg.adam_eps;
  if (s.kind == OptimizerKind::Adam) {
    s.m.assign(n_params, 0.0);
    s.v.assign(n_params, 0.0);
  }
  return s;
}

void optimizer_step(OptimizerState& state, std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: gradient length mismatch");
  ++state.step;
  if (state.kind == OptimizerKind::SGD) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    return;
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("optimizer: moment length mismatch");
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,critic_loss,gp,gen_loss,kl,var\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fmt(r.critic_loss) + "," + fmt(r.gp) + "," + fmt(r.gen_loss) + "," +
           fmt(r.kl) + "," + fmt(r.var) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step gradients
// ---------------------------------------------------------------------------

CriticStepResult critic_step_gradients(const model::Generator& gen, const model::Critic& critic,
                                       const GeneratorParams& gp, const CriticParams& cp,
                                       const std::vector<const Matrix*>& batch, const TrainConfig& cfg,
                                       std::uint64_t stream_seed) {
  if (batch.empty()) throw InputError("empty training batch");
  const auto w = static_cast<std::size_t>(gen.config().window);
  const auto d = static_cast<std::size_t>(gen.config().features);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  CriticStepResult res;
  res.grads = zeros_like(cp);
  double sum_real = 0.0, sum_fake = 0.0, sum_gp = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng(derive_seed(stream_seed, i));
    const Matrix& window = *batch[i];
    const Matrix ctx = context_of(window, w);
    const auto real = window.row(w);
    const Vec eps = sample_eps(d, rng);
    const Vec fake = gen.forward(gp, ctx, eps, cfg.noise, rng, nullptr).x_hat;

    model::CriticCache real_cache, fake_cache;
    sum_real += critic.score(cp, ctx, real, cfg.noise, rng, &real_cache);
    critic.backward(cp, real_cache, -inv_b, res.grads);
    sum_fake += critic.score(cp, ctx, fake, cfg.noise, rng, &fake_cache);
    critic.backward(cp, fake_cache, inv_b, res.grads);

    if (cfg.lambda_gp > 0.0) {
      const double u = uniform01(rng);
      Vec interp(d);
      for (std::size_t j = 0; j < d; ++j) interp[j] = u * real[j] + (1.0 - u) * fake[j];
      const auto pen = model::critic_gradient_penalty(critic, cp, ctx, interp, cfg.noise, rng(), &res.grads,
                                                      cfg.lambda_gp * inv_b);
      sum_gp += pen.penalty;
    }
  }
  res.critic_loss = (sum_fake - sum_real) * inv_b;
  res.gp = sum_gp * inv_b;
  require_finite(res.critic_loss, "critic loss (mean fake score - mean real score)");
  require_finite(res.gp, "gradient penalty");
  require_finite(res.grads, "critic gradients");
  return res;
}

GeneratorStepResult generator_step_gradients(const model::Generator& gen, const model::Critic& critic,
                                             const GeneratorParams& gp, const CriticParams& cp,
                                             const std::vector<const Matrix*>& batch, const TrainConfig& cfg,
                                             std::uint64_t stream_seed) {
  if (batch.empty()) throw InputError("empty training batch");
  const auto w = static_cast<std::size_t>(gen.config().window);
  const auto d = static_cast<std::size_t>(gen.config().features);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double inv_n = inv_b / static_cast<double>(d);

  GeneratorStepResult res;
  res.grads = zeros_like(gp);
  CriticParams scratch = zeros_like(cp);
  Vec mus, lvs, scores;
  Vec d_mu(d), d_lv(d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng(derive_seed(stream_seed, i));
    const Matrix ctx = context_of(*batch[i], w);
    const Vec eps = sample_eps(d, rng);
    model::GeneratorCache gcache;
    const auto out = gen.forward(gp, ctx, eps, cfg.noise, rng, &gcache);
    model::CriticCache ccache;
    scores.push_back(critic.score(cp, ctx, out.x_hat, cfg.noise, rng, &ccache));
    const Vec d_xhat = critic.backward(cp, ccache, -inv_b, scratch);
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = out.gaussian.mu[j], lv = out.gaussian.logvar[j];
      d_mu[j] = cfg.lambda_kl * mu * inv_n;
      d_lv[j] = std::exp(lv) * inv_n + cfg.lambda_kl * 0.5 * (std::exp(lv) - 1.0) * inv_n;
    }
    gen.backward(gp, gcache, out, d_mu, d_lv, d_xhat, res.grads);
    mus.insert(mus.end(), out.gaussian.mu.begin(), out.gaussian.mu.end());
    lvs.insert(lvs.end(), out.gaussian.logvar.begin(), out.gaussian.logvar.end());
  }
  res.kl = model::kl_loss(mus, lvs);
  res.var = model::var_penalty(lvs);
  res.mean_fake_score = std::accumulate(scores.begin(), scores.end(), 0.0) * inv_b;
  res.gen_loss = model::generator_loss(scores, mus, lvs, cfg.lambda_kl);
  require_finite(res.mean_fake_score, "adversarial term (mean critic score of generated samples)");
  require_finite(res.var, "variance penalty");
  require_finite(res.kl, "KL divergence");
  require_finite(res.grads, "generator gradients");
  return res;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainState initial_state(const model::ModelConfig& mcfg, const TrainConfig& cfg) {
  mcfg.validate();
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, kInitStream));
  TrainState s;
  s.generator = GeneratorParams::random(mcfg, rng);
  s.critic = CriticParams::random(mcfg, rng);
  s.generator_opt = OptimizerState::make(cfg, parameter_count(s.generator));
  s.critic_opt = OptimizerState::make(cfg, parameter_count(s.critic));
  return s;
}

void train(const model::ModelConfig& mcfg, const TrainConfig& cfg, const data::WindowSet& windows, TrainState& state,
           const EpochCallback& on_epoch) {
  cfg.validate();
  const model::Generator gen(mcfg);
  const model::Critic critic(mcfg);
  if (windows.size() == 0) throw InputError("training set has no windows");
  for (const auto& m : windows.windows) {
    if (m.rows != static_cast<std::size_t>(mcfg.window) + 1 || m.cols != static_cast<std::size_t>(mcfg.features)) {
      throw ShapeError("training windows must be (w+1) x d for the model configuration");
    }
  }

  const std::size_t n = windows.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(cfg.seed, kShuffleStream, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle, i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t critic_steps = 0, gen_steps = 0;
    for (std::size_t b = 0, start = 0; start < n; ++b, start += bs) {
      std::vector<const Matrix*> batch;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) batch.push_back(&windows.windows[order[i]]);

      for (int k = 0; k < cfg.n_critic; ++k) {
        auto cs = critic_step_gradients(gen, critic, state.generator, state.critic, batch, cfg,
                                        derive_seed(cfg.seed, kCriticStream, epoch, b, k));
        optimizer_step(state.critic_opt, state.critic, cs.grads, cfg.learning_rate);
        rec.critic_loss += cs.critic_loss;
        rec.gp += cs.gp;
        ++critic_steps;
      }
      auto gs = generator_step_gradients(gen, critic, state.generator, state.critic, batch, cfg,
                                         derive_seed(cfg.seed, kGeneratorStream, epoch, b));
      optimizer_step(state.generator_opt, state.generator, gs.grads, cfg.learning_rate);
      rec.gen_loss += gs.gen_loss;
      rec.kl += gs.kl;
      rec.var += gs.var;
      ++gen_steps;
    }
    rec.critic_loss /= static_cast<double>(critic_steps);
    rec.gp /= static_cast<double>(critic_steps);
    rec.gen_loss /= static_cast<double>(gen_steps);
    rec.kl /= static_cast<double>(gen_steps);
    rec.var /= static_cast<double>(gen_steps);
    state.epoch = epoch;
    state.history.push_back(rec);
    if (on_epoch) on_epoch(state);
  }
}

TrainState train(const model::ModelConfig& mcfg, const TrainConfig& cfg, const data::WindowSet& windows) {
  TrainState s = initial_state(mcfg, cfg);
  train(mcfg, cfg, windows, s);
  return s;
}

double mean_critic_gradient_norm(const model::Generator& gen, const model::Critic& critic, const GeneratorParams& gp,
                                 const CriticParams& cp, const data::WindowSet& windows, std::uint64_t seed) {
  if (windows.size() == 0) throw InputError("no windows to evaluate");
  const auto w = static_cast<std::size_t>(gen.config().window);
  const auto d = static_cast<std::size_t>(gen.config().features);
  const qsim::NoiseSpec noiseless;
  double acc = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const Matrix ctx = context_of(windows.windows[i], w);
    const auto real = windows.windows[i].row(w);
    const Vec fake = gen.forward(gp, ctx, sample_eps(d, rng), noiseless, rng, nullptr).x_hat;
    const double u = uniform01(rng);
    Vec interp(d);
    for (std::size_t j = 0; j < d; ++j) interp[j] = u * real[j] + (1.0 - u) * fake[j];
    const Vec g = critic.input_gradient(cp, ctx, interp, noiseless, rng);
    double sq = 0.0;
    for (double v : g) sq += v * v;
    acc += std::sqrt(sq);
  }
  return acc / static_cast<double>(windows.size());
}

}  // namespace qtsad::trainer
