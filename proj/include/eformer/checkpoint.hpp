#pragma once

// Binary checkpoint: 8-byte magic, u32 version, u64 manifest length, a text
// manifest, then little-endian float64 payloads at the manifest's offsets.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "eformer/model.hpp"
#include "eformer/train.hpp"

namespace eformer::train {

inline constexpr char kCheckpointMagic[8] = {'E', 'F', 'M', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ParamStore params;
  TrainState state;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

Checkpoint make_checkpoint(const EFormer& model, const TrainConfig& train, const TrainState& state);
// Rebuilds the model; ArchitectureMismatch when config and tensors disagree.
EFormer restore_model(const Checkpoint& ckpt);

}  // namespace eformer::train
