#include "archopt/report.hpp"

#include <ostream>

namespace archopt {

double DistributionReport::ratio(int layer, ModuleKind kind) const {
  for (const auto& r : rows)
    if (r.layer == layer && r.kind == kind) return r.ratio;
  throw Error(ErrorKind::not_found, "no row for layer " + std::to_string(layer) + " " + std::string(to_string(kind)));
}

void DistributionReport::write_tsv(std::ostream& os) const {
  os << "layer\tmodule_kind\tratio\n";
  for (const auto& r : rows) os << r.layer << '\t' << to_string(r.kind) << '\t' << r.ratio << '\n';
}

DistributionReport report_distribution(const ModuleParams& before, const ModuleParams& after) {
  DistributionReport report;
  for (const auto& [key, was] : before) {
    const auto it = after.find(key);
    if (it == after.end())
      throw Error(ErrorKind::invalid_input, "layer " + std::to_string(key.first) + " " +
                                                std::string(to_string(key.second)) + " is missing after adaptation");
    if (was == 0) throw Error(ErrorKind::invalid_input, "reference model has an empty module");
    report.rows.push_back({key.first, key.second, static_cast<double>(it->second) / static_cast<double>(was)});
  }
  if (after.size() != before.size()) throw Error(ErrorKind::invalid_input, "models have different module sets");
  return report;
}

DistributionReport report_distribution(const CheckpointManifest& before, const CheckpointManifest& after) {
  if (before.model.architecture != after.model.architecture)
    throw Error(ErrorKind::invalid_input, "architectures differ: " + std::string(to_string(before.model.architecture)) +
                                              " vs " + std::string(to_string(after.model.architecture)));
  if (before.model.layers != after.model.layers) throw Error(ErrorKind::invalid_input, "layer counts differ");
  return report_distribution(before.module_params(), after.module_params());
}

}  // namespace archopt
