#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "archopt/ctc.hpp"
#include "archopt/tensor.hpp"

namespace archopt {

struct DataConfig {
  int vocab = 8;
  int min_len = 3;  // seq_len_range
  int max_len = 8;
  int frames_per_symbol = 8;
  double noise_std = 0.0;
  int feature_dim = 16;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Utterance {
  Mat<float> features;  // [labels.size() * frames_per_symbol, feature_dim]
  LabelSeq labels;
};

/// Each symbol owns a fixed random feature vector; an utterance repeats the
/// vectors of its labels `frames_per_symbol` times and adds Gaussian noise.
/// Neighbouring labels always differ, so symbol boundaries stay visible in
/// noise-free features.
class SyntheticTask {
 public:
  explicit SyntheticTask(const DataConfig& cfg);

  const DataConfig& config() const { return cfg_; }
  const Mat<float>& embeddings() const { return embeddings_; }

  Utterance sample(std::mt19937_64& rng) const;
  Utterance render(const LabelSeq& labels, std::mt19937_64& rng) const;
  std::vector<Utterance> batch(int size, std::mt19937_64& rng) const;

 private:
  DataConfig cfg_;
  Mat<float> embeddings_;  // row k is symbol k; row 0 (blank) unused
};

/// Independent generator streams derived from one seed.
enum class Stream : std::uint64_t { embeddings = 0, training = 1, evaluation = 2, surgery = 3, scores = 4 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream);

}  // namespace archopt
