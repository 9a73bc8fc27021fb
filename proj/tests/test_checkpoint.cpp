#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>

#include "qtsad/checkpoint.hpp"
#include "qtsad/errors.hpp"

using namespace qtsad;
using namespace qtsad::checkpoint;

namespace {

model::ModelConfig toy_model() {
  model::ModelConfig m;
  m.features = 2;
  m.window = 2;
  m.generator_hidden = 2;
  m.critic_hidden = 3;
  m.generator_shape = {2, 2, 1, qsim::Encoding::ArcTan};
  m.critic_shape = {3, 2, 2, qsim::Encoding::ArcCos};
  return m;
}

Checkpoint trained_checkpoint(trainer::OptimizerKind kind = trainer::OptimizerKind::Adam) {
  Checkpoint c;
  c.model = toy_model();
  c.train.epochs = 1;
  c.train.batch_size = 3;
  c.train.n_critic = 1;
  c.train.seed = 21;
  c.train.optimizer = kind;
  c.train.noise.enabled = true;
  c.train.noise.p_single = 0.05;
  c.train.noise.seed = 4;
  data::WindowSet ws;
  ws.window = 2;
  ws.features = 2;
  Rng rng(2);
  for (int i = 0; i < 4; ++i) {
    Matrix m(3, 2);
    for (double& v : m.data) v = uniform01(rng);
    ws.windows.push_back(m);
  }
  c.state = trainer::initial_state(c.model, c.train);
  trainer::train(c.model, c.train, ws, c.state);
  c.extra = {{"note", "unit"}, {"values", {0.25, 1e-300}}};
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("qtsad_" + name)).string();
}

}  // namespace

TEST_CASE("serialize and deserialize round-trip bit-exactly") {
  for (auto kind : {trainer::OptimizerKind::Adam, trainer::OptimizerKind::SGD}) {
    const Checkpoint c = trained_checkpoint(kind);
    const std::string bytes = serialize(c);
    const Checkpoint back = deserialize(bytes);
    CHECK(serialize(back) == bytes);
    CHECK(flatten(back.state.generator) == flatten(c.state.generator));
    CHECK(flatten(back.state.critic) == flatten(c.state.critic));
    CHECK(back.state.epoch == 1);
    CHECK(back.state.history.size() == 1);
    CHECK(back.state.generator_opt.step == c.state.generator_opt.step);
    CHECK(back.state.critic_opt.m == c.state.critic_opt.m);
    CHECK(back.state.critic_opt.v == c.state.critic_opt.v);
    CHECK(back.train.optimizer == kind);
    CHECK(back.train.noise.p_single == 0.05);
    CHECK(back.model.critic_shape.encoding == qsim::Encoding::ArcCos);
    CHECK(back.extra == c.extra);
  }
}

TEST_CASE("save and load through a file") {
  const Checkpoint c = trained_checkpoint();
  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(c, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(serialize(back) == serialize(c));
  const std::string path2 = temp_path("roundtrip2.ckpt");
  save_checkpoint(back, path2);
  CHECK(serialize(load_checkpoint(path2)) == serialize(c));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("header starts with the magic bytes and version") {
  const std::string bytes = serialize(trained_checkpoint());
  REQUIRE(bytes.size() > 12);
  CHECK(std::memcmp(bytes.data(), kMagic, 8) == 0);
  CHECK(static_cast<unsigned char>(bytes[8]) == kVersion);
  CHECK(bytes[9] == 0);
}

TEST_CASE("truncation anywhere is a parse error naming the section") {
  const std::string bytes = serialize(trained_checkpoint());
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{14}, std::size_t{40}, bytes.size() / 2,
                          bytes.size() - 1}) {
    try {
      deserialize(bytes.substr(0, cut));
      FAIL("truncated checkpoint accepted at " << cut);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("checkpoint truncated in section") != std::string::npos);
    }
  }
}

TEST_CASE("a bumped version is rejected") {
  std::string bytes = serialize(trained_checkpoint());
  bytes[8] = static_cast<char>(kVersion + 1);
  try {
    deserialize(bytes);
    FAIL("version accepted");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("unsupported checkpoint version 2") != std::string::npos);
  }
}

TEST_CASE("corrupt files are rejected") {
  std::string bytes = serialize(trained_checkpoint());
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize(bad_magic), ParseError);
  CHECK_THROWS_AS(deserialize(bytes + "x"), ParseError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ckpt")), InputError);
}

TEST_CASE("config json readers reject unknown keys and wrong types") {
  auto j = to_json(toy_model());
  CHECK(model_config_from_json(j).critic_hidden == 3);
  j["bogus"] = 1;
  CHECK_THROWS_AS(model_config_from_json(j), ConfigError);

  auto t = to_json(trainer::TrainConfig{});
  t["learning_rate"] = "fast";
  CHECK_THROWS_AS(train_config_from_json(t), ConfigError);

  auto q = to_json(layers::QuantumShape{});
  q["encoding"] = "sqrt";
  CHECK_THROWS_AS(quantum_shape_from_json(q), ConfigError);
}

TEST_CASE("config json round-trips") {
  trainer::TrainConfig t;
  t.learning_rate = 0.0025;
  t.lambda_gp = 3.5;
  t.seed = 0xFFFFFFFFFFFFFFFFull;
  t.optimizer = trainer::OptimizerKind::SGD;
  const auto back = train_config_from_json(to_json(t));
  CHECK(back.learning_rate == t.learning_rate);
  CHECK(back.lambda_gp == t.lambda_gp);
  CHECK(back.seed == t.seed);
  CHECK(back.optimizer == t.optimizer);
  qsim::NoiseSpec n{true, 0.1, 0.2, 9};
  CHECK(noise_from_json(to_json(n)).p_cnot == 0.2);
}
