#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moext/model.hpp"

namespace moext::train {

enum class Phase { Pretrain, Finetune };
std::string to_string(Phase p);
Phase parse_phase(const std::string& s);

// One row of the loss history. Pretrain rows fill l_re..total, finetune rows
// fill ce and train_acc.
struct EpochRecord {
  int epoch = 0;
  double l_re = 0, l_st = 0, l_ss = 0, total = 0;
  double ce = 0, train_acc = 0;
  bool operator==(const EpochRecord&) const = default;
};

struct Checkpoint {
  Phase phase = Phase::Pretrain;
  nn::ModelConfig model;
  nlohmann::json train_config = nlohmann::json::object();
  std::uint64_t seed = 0;
  int epoch = 0;
  std::vector<EpochRecord> history;
  nn::StateDict state;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: 8-byte magic "MOEXTCKP", u32 version, u64 header length, JSON
// header, the float32 arrays in header order, u64 FNV-1a checksum of all
// preceding bytes. Integers are little-endian.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace moext::train
