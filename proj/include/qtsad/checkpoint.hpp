// ============================================================================
// checkpoint.hpp - versioned binary checkpoint container
//
// Layout (all integers little-endian):
//   magic    8 bytes  "QTSADCKP"
//   version  u32
//   metadata u64 byte length, then UTF-8 JSON text
//   tensors  u32 count, then per tensor:
//              u32 name length, name bytes, u32 rank, rank x u64 dims,
//              u64 offset (in values from the payload start), u64 count
//   payload  u64 value count, then IEEE-754 binary64 values
// ============================================================================
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "qtsad/model.hpp"
#include "qtsad/trainer.hpp"

namespace qtsad::checkpoint {

inline constexpr char kMagic[8] = {'Q', 'T', 'S', 'A', 'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  std::uint32_t version = kVersion;
  model::ModelConfig model;
  trainer::TrainConfig train;
  trainer::TrainState state;
  // Free-form pipeline metadata (normalization stats, calibration, ...).
  nlohmann::json extra = nlohmann::json::object();
};

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// JSON forms of the configuration structs, shared with the pipeline config.
nlohmann::json to_json(const layers::QuantumShape& s);
layers::QuantumShape quantum_shape_from_json(const nlohmann::json& j);
nlohmann::json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const qsim::NoiseSpec& n);
qsim::NoiseSpec noise_from_json(const nlohmann::json& j);
nlohmann::json to_json(const trainer::TrainConfig& c);
trainer::TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace qtsad::checkpoint
