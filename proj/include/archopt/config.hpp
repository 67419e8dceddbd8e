#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "archopt/data.hpp"
#include "archopt/encoder.hpp"
#include "archopt/optim.hpp"
#include "archopt/scoring.hpp"
#include "archopt/surgery.hpp"

namespace archopt {

struct TrainConfig {
  ModelConfig model;
  ScoreConfig score;
  AdaptationPlan plan;
  long total_steps = 3000;
  int batch_size = 8;
  double lr_start = 4e-6;
  double lr_peak = 4e-4;
  double lr_final = 1e-7;
  AdamConfig adam;
  DataConfig data;
  std::string out_dir = "run";
  long checkpoint_every = 0;  // 0: only initial and final checkpoints
  int eval_sequences = 100;

  OneCycle schedule() const { return {total_steps, lr_start, lr_peak, lr_final}; }
  void validate() const;
};

/// Sectioned key=value text: [model] [score] [plan] [train] [data].
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig parse_config(std::istream& in);
TrainConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const TrainConfig& cfg);

}  // namespace archopt
