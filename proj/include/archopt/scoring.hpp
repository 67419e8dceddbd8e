#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "archopt/encoder.hpp"

namespace archopt {

enum class Metric { magnitude, gradient, taylor, learnable };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::magnitude: return "magnitude";
    case Metric::gradient: return "gradient";
    case Metric::taylor: return "taylor";
    case Metric::learnable: return "learnable";
  }
  return "?";
}

inline Metric parse_metric(std::string_view s) {
  for (auto m : {Metric::magnitude, Metric::gradient, Metric::taylor, Metric::learnable})
    if (to_string(m) == s) return m;
  throw Error(ErrorKind::invalid_config, "unknown metric '" + std::string(s) + "'");
}

struct ScoreConfig {
  Metric metric = Metric::taylor;
  double alpha = 0.9;       // smoothing factor
  int update_interval = 50;  // steps between refreshes
  double scale_prob = 0.5;   // chance a step runs with scaled weights (learnable only)

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::invalid_config, "alpha must be in (0, 1]");
    if (update_interval < 1) throw Error(ErrorKind::invalid_config, "update_interval must be >= 1");
    if (metric == Metric::learnable && scale_prob != 0.5)
      throw Error(ErrorKind::invalid_config, "learnable scores require scale_prob == 0.5");
  }
};

/// Refresh cadence and the coin for scaled/unscaled steps. The smoothed
/// scores themselves live on the groups, so they follow every surgery.
struct ScoreState {
  long steps_since_update = 0;
  std::mt19937_64 rng{0};

  /// Advances one step; true when a refresh is due.
  bool tick(const ScoreConfig& cfg) {
    if (++steps_since_update < cfg.update_interval) return false;
    steps_since_update = 0;
    return true;
  }
};

/// Per-group statistic before smoothing: mean |w|, or the L2 norm of the
/// gradient (or of gradient * weight) divided by the element count.
template <typename Scalar>
double instantaneous_score(const ParameterGroup<Scalar>& g, Metric metric) {
  const double n = static_cast<double>(g.param_count());
  double acc = 0.0;
  for (const auto& s : g.slices) {
    const auto& w = s.param.value;
    if (metric == Metric::magnitude) {
      acc += w.matrix().template cast<double>().cwiseAbs().sum();
      continue;
    }
    if (!w.has_grad())
      throw Error(ErrorKind::invalid_state, "group " + to_string(g.id) + " has no gradient for slice " + s.name);
    const Eigen::MatrixXd grad = w.grad().template cast<double>();
    if (metric == Metric::gradient)
      acc += grad.squaredNorm();
    else
      acc += grad.cwiseProduct(w.matrix().template cast<double>()).squaredNorm();
  }
  return metric == Metric::magnitude ? acc / n : std::sqrt(acc) / n;
}

/// s_t = (1 - alpha) * s_{t-1} + alpha * instantaneous. No-op for the
/// learnable metric, whose scores are the group scales.
template <typename Scalar>
void update_scores(PartitionedEncoder<Scalar>& model, const ScoreConfig& cfg) {
  if (cfg.metric == Metric::learnable) return;
  for (auto& layer : model.layers)
    for (auto& m : layer)
      for (auto& g : m.groups) g.score = (1.0 - cfg.alpha) * g.score + cfg.alpha * instantaneous_score(g, cfg.metric);
}

template <typename Scalar>
double effective_score(const ParameterGroup<Scalar>& g, Metric metric) {
  return metric == Metric::learnable ? static_cast<double>(g.scale.value.matrix()(0, 0)) : g.score;
}

enum class ScaleMode { unscaled, scaled };

/// One coin flip per step for the whole model. The returned mode is handed to
/// ForwardContext, which multiplies each group's weights by its scale.
inline ScaleMode apply_learnable_scales(ScoreState& state, const ScoreConfig& cfg) {
  if (cfg.metric != Metric::learnable) return ScaleMode::unscaled;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  return coin(state.rng) < cfg.scale_prob ? ScaleMode::scaled : ScaleMode::unscaled;
}

template <typename Scalar>
void reset_learnable_scores(PartitionedEncoder<Scalar>& model) {
  for (auto& layer : model.layers)
    for (auto& m : layer)
      for (auto& g : m.groups) {
        g.scale.value.matrix().setOnes();
        g.scale.clear_moments();
        g.scale.value.zero_grad();
      }
}

/// Live groups by descending importance; ties keep GroupId order.
template <typename Scalar>
std::vector<GroupId> rank_groups(const PartitionedEncoder<Scalar>& model, Metric metric) {
  std::vector<std::pair<double, GroupId>> scored;
  for (const auto& layer : model.layers)
    for (const auto& m : layer)
      for (const auto& g : m.groups) {
        const double s = effective_score(g, metric);
        if (!std::isfinite(s))
          throw Error(ErrorKind::invalid_state, "group " + to_string(g.id) + " has no valid score");
        scored.emplace_back(s, g.id);
      }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<GroupId> out;
  out.reserve(scored.size());
  for (const auto& [s, id] : scored) out.push_back(id);
  return out;
}

/// `group_id<TAB>param_count<TAB>score`, one line per group.
template <typename Scalar>
void write_score_table(std::ostream& os, const PartitionedEncoder<Scalar>& model, Metric metric) {
  for (const auto& layer : model.layers)
    for (const auto& m : layer)
      for (const auto& g : m.groups)
        os << to_string(g.id) << '\t' << g.param_count() << '\t' << effective_score(g, metric) << '\n';
}

}  // namespace archopt
