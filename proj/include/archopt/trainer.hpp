#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "archopt/checkpoint.hpp"
#include "archopt/gradcheck.hpp"
#include "archopt/report.hpp"

namespace archopt {

struct StepRecord {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool event = false;
};

/// Owns the model and every piece of mutable training state. Steps are
/// numbered 1..total_steps; step 0 is the freshly built model.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);
  explicit Trainer(Checkpoint checkpoint);

  bool done() const { return state_.step >= config_.total_steps; }

  /// Batch, forward, CTC, backward, score refresh, Adam, and surgery when the
  /// step is an adaptation event.
  StepRecord step();

  const TrainConfig& config() const { return config_; }
  const PartitionedEncoder<float>& model() const { return model_; }
  PartitionedEncoder<float>& model() { return model_; }
  const TrainingState& state() const { return state_; }
  const std::vector<SurgeryReport>& surgeries() const { return surgeries_; }

  void save(const std::filesystem::path& dir) const { save_checkpoint(dir, model_, state_, config_); }

 private:
  TrainConfig config_;
  SyntheticTask task_;
  PartitionedEncoder<float> model_;
  TrainingState state_;
  std::vector<long> events_;
  std::vector<SurgeryReport> surgeries_;
};

struct RunOptions {
  std::optional<std::filesystem::path> resume;  // continue from this checkpoint
  std::ostream* progress = nullptr;             // one line every `progress_every` steps
  long progress_every = 100;
};

struct RunResult {
  std::vector<StepRecord> log;
  std::vector<SurgeryReport> surgeries;
  PartitionedEncoder<float> model;
  DistributionReport distribution;
  double eval_ler = 0.0;
};

/// Trains to completion and writes into `config.out_dir`: config.ini,
/// loss.csv, surgery.log, scores.tsv, distribution.tsv, eval.txt and the
/// initial/, step_<N>/ and final/ checkpoints.
RunResult run_training(const TrainConfig& config, const RunOptions& options = {});

/// Mean label error rate of greedy decoding on `n` held-out utterances drawn
/// from the evaluation stream of `data.seed`.
double evaluate(const PartitionedEncoder<float>& model, int n, const DataConfig& data);

struct EncoderGradCheck {
  GradCheckReport report;
  std::vector<std::string> names;  // parameter names, indexed by Probe::first
  std::vector<Probe> probes;
};

/// Central-difference check of encoder + mean CTC loss in double precision on
/// one training utterance, probing `probe_count` weights spread over the
/// parameter list. Group scales take part when the metric is learnable.
EncoderGradCheck check_encoder_gradients(const TrainConfig& config, int probe_count = 10, double h = 1e-6,
                                         double tol = 1e-4);

void write_loss_csv(std::ostream& os, const std::vector<StepRecord>& log);

}  // namespace archopt
