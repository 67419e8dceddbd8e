#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "archopt/config.hpp"
#include "archopt/encoder.hpp"
#include "archopt/optim.hpp"
#include "archopt/scoring.hpp"

namespace archopt {

/// Everything besides the weights that a resumed run needs to continue
/// bit-identically.
struct TrainingState {
  long step = 0;
  AdamState adam;
  ScoreState scores;
  std::mt19937_64 data_rng;
  std::mt19937_64 surgery_rng;
};

/// Parsed `manifest.txt`: ordered key=value pairs plus the tensor table.
struct CheckpointManifest {
  struct Entry {
    std::string name;  // e.g. "L0/FFN1/2/g1/w1"
    Shape shape;
  };

  int version = 0;
  ModelConfig model;
  std::vector<Entry> entries;
  std::vector<std::pair<std::string, std::string>> fields;  // in file order

  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;

  /// Group parameter count per (layer, module kind), read off the tensor table.
  std::map<std::pair<int, ModuleKind>, Index> module_params() const;
};

struct Checkpoint {
  TrainConfig config;
  PartitionedEncoder<float> model;
  TrainingState state;
};

inline constexpr int kCheckpointVersion = 1;

/// Writes `<dir>/manifest.txt` (UTF-8 key=value) and `<dir>/weights.bin`
/// (little-endian binary32; value, first moment, second moment per entry in
/// manifest order).
void save_checkpoint(const std::filesystem::path& dir, const PartitionedEncoder<float>& model,
                     const TrainingState& state, const TrainConfig& config);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

CheckpointManifest read_manifest(const std::filesystem::path& dir);

}  // namespace archopt
