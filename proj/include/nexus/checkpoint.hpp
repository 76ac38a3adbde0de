#pragma once

#include "nexus/corpus.hpp"
#include "nexus/model.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

namespace nexus {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointManifest {
  int version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::uint64_t vocab_hash = 0;
  long step = 0;
  std::map<std::string, double> metrics;
};

// A checkpoint is a directory: manifest.txt, config.txt, vocab.txt, params.bin.
// Parameters are stored as little-endian 64-bit floats in manifest order.
void save_checkpoint(const std::string& dir, const NexusModel& model, const Vocabulary& vocab,
                     long step, const std::map<std::string, double>& metrics = {});

struct LoadedCheckpoint {
  std::unique_ptr<NexusModel> model;
  Vocabulary vocab;
  CheckpointManifest manifest;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// Copies stored values into an existing model of identical layout.
CheckpointManifest load_parameters_into(const std::string& dir, NexusModel& model);

}  // namespace nexus
