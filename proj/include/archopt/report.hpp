#pragma once

#include <iosfwd>
#include <map>
#include <vector>

#include "archopt/checkpoint.hpp"

namespace archopt {

struct DistributionRow {
  int layer = 0;
  ModuleKind kind = ModuleKind::ffn1;
  double ratio = 1.0;  // params now / params at build; 0 for a fully dropped module
};

struct DistributionReport {
  std::vector<DistributionRow> rows;  // ordered by (layer, kind)

  double ratio(int layer, ModuleKind kind) const;
  /// Header `layer<TAB>module_kind<TAB>ratio`, then one row per module.
  void write_tsv(std::ostream& os) const;
};

using ModuleParams = std::map<std::pair<int, ModuleKind>, Index>;

/// Group parameters per (layer, module kind).
template <typename Scalar>
ModuleParams module_params(const PartitionedEncoder<Scalar>& model) {
  ModuleParams out;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    for (const auto& m : model.layers[l]) out[{static_cast<int>(l), m.kind}] = m.param_count();
  return out;
}

DistributionReport report_distribution(const ModuleParams& before, const ModuleParams& after);
DistributionReport report_distribution(const CheckpointManifest& before, const CheckpointManifest& after);

}  // namespace archopt
