#include "archopt/data.hpp"

#include <string>

namespace archopt {

void DataConfig::validate() const {
  if (vocab < 2) throw Error(ErrorKind::invalid_config, "vocab must be >= 2");
  if (min_len < 1 || max_len < min_len)
    throw Error(ErrorKind::invalid_config, "seq_len_range must satisfy 1 <= min <= max");
  if (frames_per_symbol < 4)
    throw Error(ErrorKind::invalid_config,
                "frames_per_symbol=" + std::to_string(frames_per_symbol) + " does not survive the stride-4 frontend");
  if (!(noise_std >= 0.0)) throw Error(ErrorKind::invalid_config, "noise_std must be >= 0");
  if (feature_dim < 1) throw Error(ErrorKind::invalid_config, "feature_dim must be >= 1");
}

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

SyntheticTask::SyntheticTask(const DataConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  auto rng = make_rng(cfg_.seed, Stream::embeddings);
  std::normal_distribution<double> unit(0.0, 1.0);
  embeddings_ = Mat<float>::Zero(cfg_.vocab + 1, cfg_.feature_dim);
  for (Index k = 1; k <= cfg_.vocab; ++k)
    for (Index j = 0; j < cfg_.feature_dim; ++j) embeddings_(k, j) = static_cast<float>(unit(rng));
}

Utterance SyntheticTask::render(const LabelSeq& labels, std::mt19937_64& rng) const {
  const Index fps = cfg_.frames_per_symbol;
  Utterance u;
  u.labels = labels;
  u.features.resize(static_cast<Index>(labels.size()) * fps, cfg_.feature_dim);
  std::normal_distribution<double> noise(0.0, cfg_.noise_std > 0 ? cfg_.noise_std : 1.0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (Index f = 0; f < fps; ++f) {
      auto row = u.features.row(static_cast<Index>(i) * fps + f);
      row = embeddings_.row(labels[i]);
      if (cfg_.noise_std > 0)
        for (Index j = 0; j < row.size(); ++j) row(j) += static_cast<float>(noise(rng));
    }
  return u;
}

Utterance SyntheticTask::sample(std::mt19937_64& rng) const {
  std::uniform_int_distribution<int> length(cfg_.min_len, cfg_.max_len);
  std::uniform_int_distribution<int> symbol(1, cfg_.vocab);
  std::uniform_int_distribution<int> other(1, cfg_.vocab - 1);
  LabelSeq labels(length(rng));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i == 0) {
      labels[i] = symbol(rng);
    } else {
      // uniform over the vocab minus the previous symbol
      const int draw = other(rng);
      labels[i] = draw >= labels[i - 1] ? draw + 1 : draw;
    }
  }
  return render(labels, rng);
}

std::vector<Utterance> SyntheticTask::batch(int size, std::mt19937_64& rng) const {
  std::vector<Utterance> out;
  out.reserve(size);
  for (int i = 0; i < size; ++i) out.push_back(sample(rng));
  return out;
}

}  // namespace archopt
