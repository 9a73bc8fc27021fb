#include "qtsad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "qtsad/errors.hpp"
#include "qtsad/json_reader.hpp"

namespace qtsad::checkpoint {

using nlohmann::json;
using qtsad::json_io::ObjectReader;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

qsim::Encoding encoding_field(ObjectReader& r, qsim::Encoding def) {
  std::string s = qsim::to_string(def);
  r.get("encoding", s);
  return qsim::encoding_from_string(s);
}

// ---------------------------------------------------------------------------
// Byte I/O
// ---------------------------------------------------------------------------

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : b_(bytes) {}

  void section(const char* name) { section_ = name; }

  template <class T>
  T take() {
    T v;
    std::memcpy(&v, need(sizeof(T)), sizeof(T));
    return v;
  }

  std::string take_string(std::size_t n) { return std::string(need(n), n); }

  const char* need(std::size_t n) {
    if (n > b_.size() - pos_) throw ParseError(std::string("checkpoint truncated in section '") + section_ + "'");
    const char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool at_end() const { return pos_ == b_.size(); }
  const char* current_section() const { return section_; }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
  const char* section_ = "header";
};

struct TensorEntry {
  std::vector<std::size_t> shape;
  std::span<double> values;
};

// Every tensor of the state under a stable name.
template <class Fn>
void for_each_state_tensor(trainer::TrainState& s, Fn&& fn) {
  auto plain = [&fn](const std::string& name, const std::vector<std::size_t>& shape, std::span<double> v) {
    fn(name, shape, v);
  };
  s.generator.for_each_tensor(plain);
  s.critic.for_each_tensor(plain);
  auto opt = [&fn](const std::string& pre, trainer::OptimizerState& o) {
    if (o.kind != trainer::OptimizerKind::Adam) return;
    fn(pre + ".m", std::vector<std::size_t>{o.m.size()}, std::span<double>(o.m));
    fn(pre + ".v", std::vector<std::size_t>{o.v.size()}, std::span<double>(o.v));
  };
  opt("optimizer.generator", s.generator_opt);
  opt("optimizer.critic", s.critic_opt);
}

json optimizer_meta(const trainer::OptimizerState& o) {
  return {{"kind", trainer::to_string(o.kind)}, {"step", o.step}, {"beta1", o.beta1}, {"beta2", o.beta2},
          {"eps", o.eps}};
}

trainer::OptimizerState optimizer_from_meta(const json& j, std::size_t n_params) {
  trainer::OptimizerState o;
  o.kind = trainer::optimizer_from_string(j.at("kind").get<std::string>());
  o.step = j.at("step").get<std::uint64_t>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.eps = j.at("eps").get<double>();
  if (o.kind == trainer::OptimizerKind::Adam) {
    o.m.assign(n_params, 0.0);
    o.v.assign(n_params, 0.0);
  }
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

json to_json(const layers::QuantumShape& s) {
  return {{"n_qubits", s.n_qubits},
          {"n_blocks", s.n_blocks},
          {"injection_blocks", s.injection_blocks},
          {"encoding", qsim::to_string(s.encoding)}};
}

layers::QuantumShape quantum_shape_from_json(const json& j) {
  layers::QuantumShape s;
  ObjectReader r(j, "quantum shape");
  r.get("n_qubits", s.n_qubits);
  r.get("n_blocks", s.n_blocks);
  r.get("injection_blocks", s.injection_blocks);
  s.encoding = encoding_field(r, s.encoding);
  r.finish();
  return s;
}

json to_json(const model::ModelConfig& c) {
  return {{"features", c.features},
          {"window", c.window},
          {"generator_hidden", c.generator_hidden},
          {"critic_hidden", c.critic_hidden},
          {"generator_shape", to_json(c.generator_shape)},
          {"critic_shape", to_json(c.critic_shape)}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  ObjectReader r(j, "model");
  r.get("features", c.features);
  r.get("window", c.window);
  r.get("generator_hidden", c.generator_hidden);
  r.get("critic_hidden", c.critic_hidden);
  if (const json* g = r.child("generator_shape")) c.generator_shape = quantum_shape_from_json(*g);
  if (const json* g = r.child("critic_shape")) c.critic_shape = quantum_shape_from_json(*g);
  r.finish();
  return c;
}

json to_json(const qsim::NoiseSpec& n) {
  return {{"enabled", n.enabled}, {"p_single", n.p_single}, {"p_cnot", n.p_cnot}, {"seed", n.seed}};
}

qsim::NoiseSpec noise_from_json(const json& j) {
  qsim::NoiseSpec n;
  ObjectReader r(j, "noise");
  r.get("enabled", n.enabled);
  r.get("p_single", n.p_single);
  r.get("p_cnot", n.p_cnot);
  r.get("seed", n.seed);
  r.finish();
  return n;
}

json to_json(const trainer::TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"n_critic", c.n_critic},
          {"lambda_gp", c.lambda_gp},
          {"lambda_kl", c.lambda_kl},
          {"seed", c.seed},
          {"noise", to_json(c.noise)},
          {"optimizer", trainer::to_string(c.optimizer)},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps}};
}

trainer::TrainConfig train_config_from_json(const json& j) {
  trainer::TrainConfig c;
  ObjectReader r(j, "train");
  r.get("learning_rate", c.learning_rate);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("n_critic", c.n_critic);
  r.get("lambda_gp", c.lambda_gp);
  r.get("lambda_kl", c.lambda_kl);
  r.get("seed", c.seed);
  if (const json* n = r.child("noise")) c.noise = noise_from_json(*n);
  std::string opt = trainer::to_string(c.optimizer);
  r.get("optimizer", opt);
  c.optimizer = trainer::optimizer_from_string(opt);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("adam_eps", c.adam_eps);
  r.finish();
  return c;
}

// ---------------------------------------------------------------------------
// Binary container
// ---------------------------------------------------------------------------

std::string serialize(const Checkpoint& ckpt) {
  trainer::TrainState state = ckpt.state;
  json meta;
  meta["model"] = to_json(ckpt.model);
  meta["train"] = to_json(ckpt.train);
  meta["epoch"] = state.epoch;
  meta["optimizer"] = {{"generator", optimizer_meta(state.generator_opt)},
                       {"critic", optimizer_meta(state.critic_opt)}};
  json hist = json::array();
  for (const auto& h : state.history) {
    hist.push_back({{"epoch", h.epoch},
                    {"critic_loss", h.critic_loss},
                    {"gp", h.gp},
                    {"gen_loss", h.gen_loss},
                    {"kl", h.kl},
                    {"var", h.var}});
  }
  meta["history"] = hist;
  meta["extra"] = ckpt.extra;
  const std::string meta_text = meta.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;

  std::string directory;
  std::vector<double> payload;
  std::uint32_t count = 0;
  for_each_state_tensor(state, [&](const std::string& name, const std::vector<std::size_t>& shape,
                                   std::span<double> v) {
    put<std::uint32_t>(directory, static_cast<std::uint32_t>(name.size()));
    directory += name;
    put<std::uint32_t>(directory, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t s : shape) put<std::uint64_t>(directory, s);
    put<std::uint64_t>(directory, payload.size());
    put<std::uint64_t>(directory, v.size());
    payload.insert(payload.end(), v.begin(), v.end());
    ++count;
  });
  put<std::uint32_t>(out, count);
  out += directory;
  put<std::uint64_t>(out, payload.size());
  out.append(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(double));
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  ByteReader in(bytes);
  in.section("header");
  if (std::memcmp(in.need(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("not a checkpoint file (bad magic bytes)");
  }
  Checkpoint ck;
  ck.version = in.take<std::uint32_t>();
  if (ck.version != kVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(ck.version) + " (expected " +
                     std::to_string(kVersion) + ")");
  }

  in.section("metadata");
  const auto meta_len = in.take<std::uint64_t>();
  json meta;
  try {
    meta = json::parse(in.take_string(static_cast<std::size_t>(meta_len)));
    ck.model = model_config_from_json(meta.at("model"));
    ck.train = train_config_from_json(meta.at("train"));
    ck.model.validate();
    ck.state.generator = model::GeneratorParams::zeros(ck.model);
    ck.state.critic = model::CriticParams::zeros(ck.model);
    ck.state.epoch = meta.at("epoch").get<int>();
    ck.state.generator_opt = optimizer_from_meta(meta.at("optimizer").at("generator"),
                                                 parameter_count(ck.state.generator));
    ck.state.critic_opt = optimizer_from_meta(meta.at("optimizer").at("critic"), parameter_count(ck.state.critic));
    for (const auto& h : meta.at("history")) {
      ck.state.history.push_back({h.at("epoch").get<int>(), h.at("critic_loss").get<double>(),
                                  h.at("gp").get<double>(), h.at("gen_loss").get<double>(), h.at("kl").get<double>(),
                                  h.at("var").get<double>()});
    }
    ck.extra = meta.at("extra");
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("checkpoint section 'metadata' is invalid: ") + e.what());
  }

  in.section("tensor directory");
  std::map<std::string, TensorEntry> expected;
  for_each_state_tensor(ck.state, [&](const std::string& name, const std::vector<std::size_t>& shape,
                                      std::span<double> v) { expected[name] = {shape, v}; });
  const auto count = in.take<std::uint32_t>();
  struct Dir {
    std::string name;
    std::uint64_t offset, count;
  };
  std::vector<Dir> dir;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = in.take<std::uint32_t>();
    std::string name = in.take_string(name_len);
    const auto rank = in.take<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& s : shape) s = static_cast<std::size_t>(in.take<std::uint64_t>());
    const auto offset = in.take<std::uint64_t>();
    const auto n = in.take<std::uint64_t>();
    const auto it = expected.find(name);
    if (it == expected.end()) throw ParseError("checkpoint section 'tensor directory': unexpected tensor '" + name + "'");
    if (it->second.shape != shape || it->second.values.size() != n) {
      throw ParseError("checkpoint section 'tensor directory': tensor '" + name + "' has the wrong shape");
    }
    dir.push_back({std::move(name), offset, n});
  }
  if (dir.size() != expected.size()) throw ParseError("checkpoint section 'tensor directory': missing tensors");

  in.section("payload");
  const auto total = in.take<std::uint64_t>();
  if (total > (bytes.size() / sizeof(double))) throw ParseError("checkpoint truncated in section 'payload'");
  std::vector<double> payload(static_cast<std::size_t>(total));
  std::memcpy(payload.data(), in.need(payload.size() * sizeof(double)), payload.size() * sizeof(double));
  if (!in.at_end()) throw ParseError("checkpoint section 'payload': trailing bytes");
  for (const auto& e : dir) {
    if (e.offset + e.count > payload.size()) {
      throw ParseError("checkpoint section 'payload': tensor '" + e.name + "' out of range");
    }
    std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(e.offset), e.count, expected[e.name].values.begin());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write checkpoint '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace qtsad::checkpoint
