#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "archopt/encoder.hpp"
#include "archopt/scoring.hpp"

namespace archopt {

enum class InitStrategy { copy, copy_noise, random };

inline std::string_view to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::copy: return "copy";
    case InitStrategy::copy_noise: return "copy_noise";
    case InitStrategy::random: return "random";
  }
  return "?";
}

inline InitStrategy parse_init_strategy(std::string_view s) {
  for (auto v : {InitStrategy::copy, InitStrategy::copy_noise, InitStrategy::random})
    if (to_string(v) == s) return v;
  throw Error(ErrorKind::invalid_config, "unknown init strategy '" + std::string(s) + "'");
}

struct AdaptationPlan {
  double delta = 0.15;           // fraction dropped (and grown) over all events
  int iterations = 1;            // I
  double t_end_fraction = 0.2;   // T_end / T_total
  InitStrategy init = InitStrategy::copy;
  double noise_std = 0.01;       // copy_noise only

  void validate() const {
    if (!(delta >= 0.0 && delta <= 0.5)) throw Error(ErrorKind::invalid_config, "delta must lie in [0, 0.5]");
    if (iterations < 1) throw Error(ErrorKind::invalid_config, "iterations must be >= 1");
    if (!(t_end_fraction > 0.0 && t_end_fraction < 1.0))
      throw Error(ErrorKind::invalid_config, "t_end_fraction must lie in (0, 1)");
    if (!(noise_std >= 0.0)) throw Error(ErrorKind::invalid_config, "noise_std must be >= 0");
  }
};

namespace detail {
/// floor() that treats values within rounding noise of an integer as that integer.
inline long stable_floor(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<long>(r);
  return static_cast<long>(std::floor(x));
}
}  // namespace detail

/// Steps floor(i * T_end / I) for i = 1..I. Empty for a zero budget, which
/// makes a delta = 0 plan indistinguishable from no plan at all.
inline std::vector<long> event_steps(const AdaptationPlan& plan, long total_steps) {
  plan.validate();
  std::vector<long> steps;
  if (plan.delta == 0.0) return steps;
  const double t_end = plan.t_end_fraction * static_cast<double>(total_steps);
  for (int i = 1; i <= plan.iterations; ++i) {
    const long s = detail::stable_floor(i * t_end / plan.iterations);
    if (s < 1 || (!steps.empty() && s <= steps.back()))
      throw Error(ErrorKind::invalid_config, "adaptation events are closer than one step");
    steps.push_back(s);
  }
  return steps;
}

struct SurgeryReport {
  struct Dropped {
    GroupId id;
    Index params;
  };
  struct Grown {
    GroupId source;
    GroupId created;
    Index params;
  };

  long step = 0;
  Index budget = 0;
  std::vector<Dropped> dropped;
  std::vector<Grown> grown;
  Index params_before = 0;
  Index params_after = 0;

  Index dropped_params() const {
    Index n = 0;
    for (const auto& d : dropped) n += d.params;
    return n;
  }
  Index grown_params() const {
    Index n = 0;
    for (const auto& g : grown) n += g.params;
    return n;
  }
};

inline std::ostream& operator<<(std::ostream& os, const SurgeryReport& r) {
  os << "event step=" << r.step << " budget=" << r.budget << " params_before=" << r.params_before
     << " params_after=" << r.params_after << '\n';
  for (const auto& d : r.dropped) os << "  drop " << to_string(d.id) << ' ' << d.params << '\n';
  for (const auto& g : r.grown)
    os << "  grow " << to_string(g.source) << " -> " << to_string(g.created) << ' ' << g.params << '\n';
  os << "  total dropped=" << r.dropped_params() << " grown=" << r.grown_params() << '\n';
  return os;
}

struct AdaptationSets {
  std::vector<GroupId> grow;
  std::vector<GroupId> drop;
  Index budget = 0;
};

/// Greedy budgeted selection. `sizes[i]` is the parameter count of
/// `ranking[i]` (descending importance). Each set is the longest prefix of its
/// order whose cumulative size stays within floor(delta / I * total); growth
/// stops before reaching a group already chosen for dropping.
inline AdaptationSets select_adaptation_sets(std::span<const GroupId> ranking, std::span<const Index> sizes,
                                             double delta, int iterations) {
  if (!(delta >= 0.0 && delta <= 0.5)) throw Error(ErrorKind::invalid_config, "delta must lie in [0, 0.5]");
  if (iterations < 1) throw Error(ErrorKind::invalid_config, "iterations must be >= 1");
  if (ranking.size() != sizes.size()) throw Error(ErrorKind::invalid_input, "ranking and sizes differ in length");
  Index total = 0;
  for (Index s : sizes) total += s;

  AdaptationSets sets;
  sets.budget = detail::stable_floor(delta / iterations * static_cast<double>(total));
  const std::size_t n = ranking.size();
  std::size_t first_dropped = n;
  Index used = 0;
  for (std::size_t i = n; i-- > 0;) {
    if (used + sizes[i] > sets.budget) break;
    used += sizes[i];
    sets.drop.push_back(ranking[i]);
    first_dropped = i;
  }
  used = 0;
  for (std::size_t i = 0; i < first_dropped; ++i) {
    if (used + sizes[i] > sets.budget) break;
    used += sizes[i];
    sets.grow.push_back(ranking[i]);
  }
  return sets;
}

/// Appends a structural duplicate of `source` to its module and returns the
/// new id. The newcomer inherits the smoothed score and starts with scale 1.
template <typename Scalar>
GroupId grow_group(PartitionedEncoder<Scalar>& model, const GroupId& source, InitStrategy init, std::mt19937_64& rng,
                   double noise_std = 0.01) {
  const ParameterGroup<Scalar>& src = model.group(source);
  ParameterGroup<Scalar> g;
  if (init == InitStrategy::random) {
    g = make_group<Scalar>(model.config, source.kind, rng);
  } else {
    g.slices = src.slices;
    for (auto& s : g.slices) {
      s.param.value.zero_grad();
      if (init == InitStrategy::copy_noise && noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, noise_std);
        auto& w = s.param.value.matrix();
        for (Index i = 0; i < w.size(); ++i) w.data()[i] += static_cast<Scalar>(noise(rng));
      }
    }
  }
  g.id = source;
  g.id.generation = source.generation + 1;
  g.score = src.score;
  g.serial = model.next_serial++;
  auto& m = model.module(source.layer, source.kind);
  m.groups.push_back(std::move(g));
  model.renumber();
  return m.groups.back().id;
}

/// Deletes the group; the module shrinks and later slots shift down.
template <typename Scalar>
void drop_group(PartitionedEncoder<Scalar>& model, const GroupId& id) {
  model.group(id);
  auto& groups = model.module(id.layer, id.kind).groups;
  groups.erase(groups.begin() + id.slot);
  model.renumber();
}

/// Rank, select, drop, then grow; finally resets all learnable scales to 1.
template <typename Scalar>
SurgeryReport apply_adaptation(PartitionedEncoder<Scalar>& model, const AdaptationPlan& plan, Metric metric,
                               long step, long total_steps, std::mt19937_64& rng) {
  const auto events = event_steps(plan, total_steps);
  if (std::find(events.begin(), events.end(), step) == events.end())
    throw Error(ErrorKind::invalid_state, "step " + std::to_string(step) + " is not an adaptation event");

  const std::vector<GroupId> ranking = rank_groups(model, metric);
  std::vector<Index> sizes;
  sizes.reserve(ranking.size());
  for (const auto& id : ranking) sizes.push_back(model.group(id).param_count());
  const AdaptationSets sets = select_adaptation_sets(ranking, sizes, plan.delta, plan.iterations);

  SurgeryReport report;
  report.step = step;
  report.budget = sets.budget;
  report.params_before = count_params(model, ParamScope::encoder_groups);

  // Slots move while groups are removed, so resolve everything to serials first.
  auto serials_of = [&](const std::vector<GroupId>& ids) {
    std::vector<std::pair<std::uint64_t, GroupId>> out;
    for (const auto& id : ids) out.emplace_back(model.group(id).serial, id);
    return out;
  };
  const auto drops = serials_of(sets.drop);
  const auto grows = serials_of(sets.grow);
  for (const auto& [serial, original] : drops) {
    auto* g = model.find_serial(serial);
    report.dropped.push_back({original, g->param_count()});
    drop_group(model, g->id);
  }
  for (const auto& [serial, original] : grows) {
    const GroupId current = model.find_serial(serial)->id;
    const GroupId created = grow_group(model, current, plan.init, rng, plan.noise_std);
    report.grown.push_back({original, created, model.group(created).param_count()});
  }
  reset_learnable_scores(model);
  report.params_after = count_params(model, ParamScope::encoder_groups);
  return report;
}

}  // namespace archopt
