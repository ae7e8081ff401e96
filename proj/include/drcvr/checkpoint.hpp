#pragma once
// Checkpoint file: an 8-byte little-endian header length, a JSON header
// (format tag, version, seed, free-form hyperparameter object, ordered block
// descriptors), then one flat blob of little-endian IEEE-754 float64 values.
// Round-trips are bit-exact; equality of two checkpoints can be checked by
// comparing file bytes.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace drcvr {

struct CheckpointBlock {
  std::string name;
  std::vector<double> values;
};

struct Checkpoint {
  uint64_t seed = 0;
  nlohmann::json hyper = nlohmann::json::object();
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock* find(const std::string& name) const;
  CheckpointBlock& add(const std::string& name, std::vector<double> values);
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace drcvr
