#include "archopt/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace archopt {
namespace {

namespace fs = std::filesystem;

constexpr const char* kFormat = "archopt-checkpoint";
constexpr const char* kManifest = "manifest.txt";
constexpr const char* kWeights = "weights.bin";

[[noreturn]] void corrupt(const fs::path& dir, const std::string& msg) {
  throw Error(ErrorKind::corrupt_checkpoint, dir.string() + ": " + msg);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

template <typename T>
T number_field(const CheckpointManifest& m, const fs::path& dir, const std::string& key) {
  if (!m.has(key)) corrupt(dir, "missing field '" + key + "'");
  T value{};
  if (!parse_number(m.get(key), value)) corrupt(dir, "field '" + key + "' is not a number");
  return value;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const std::string& in, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

template <typename Engine>
std::string engine_text(const Engine& e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

template <typename Engine>
Engine engine_field(const CheckpointManifest& m, const fs::path& dir, const std::string& key) {
  if (!m.has(key)) corrupt(dir, "missing field '" + key + "'");
  std::istringstream is(m.get(key));
  Engine e;
  is >> e;
  if (is.fail()) corrupt(dir, "field '" + key + "' is not a generator state");
  return e;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) return parts;
    start = pos + 1;
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Prefixes every key of the INI rendering with `config.<section>.`.
std::vector<std::pair<std::string, std::string>> config_fields(const TrainConfig& cfg) {
  std::ostringstream os;
  write_config(os, cfg);
  std::istringstream is(os.str());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line, section;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    out.emplace_back("config." + section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

TrainConfig config_from(const CheckpointManifest& m, const fs::path& dir) {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, value] : m.fields) {
    if (key.rfind("config.", 0) != 0) continue;
    const auto rest = key.substr(7);
    const auto dot = rest.find('.');
    if (dot == std::string::npos) corrupt(dir, "malformed config key '" + key + "'");
    sections[rest.substr(0, dot)].emplace_back(rest.substr(dot + 1), value);
  }
  std::ostringstream ini;
  for (const auto& [section, kv] : sections) {
    ini << '[' << section << "]\n";
    for (const auto& [k, v] : kv) ini << k << " = " << v << '\n';
  }
  std::istringstream in(ini.str());
  try {
    return parse_config(in);
  } catch (const Error& e) {
    corrupt(dir, std::string("stored config is invalid: ") + e.what());
  }
}

}  // namespace

const std::string& CheckpointManifest::get(const std::string& key) const {
  for (const auto& [k, v] : fields)
    if (k == key) return v;
  throw Error(ErrorKind::not_found, "manifest has no field '" + key + "'");
}

bool CheckpointManifest::has(const std::string& key) const {
  for (const auto& [k, v] : fields)
    if (k == key) return true;
  return false;
}

std::map<std::pair<int, ModuleKind>, Index> CheckpointManifest::module_params() const {
  std::map<std::pair<int, ModuleKind>, Index> out;
  for (int l = 0; l < model.layers; ++l)
    for (ModuleKind k : module_kinds(model.architecture)) out[{l, k}] = 0;
  for (const auto& e : entries) {
    const auto parts = split(e.name, '/');
    if (parts.size() != 5 || parts[4] == "scale") continue;
    const int layer = std::stoi(parts[0].substr(1));
    Index n = 1;
    for (Index d : e.shape) n *= d;
    out[{layer, parse_module_kind(parts[1])}] += n;
  }
  return out;
}

void save_checkpoint(const fs::path& dir, const PartitionedEncoder<float>& model, const TrainingState& state,
                     const TrainConfig& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::invalid_input, "cannot create " + dir.string() + ": " + ec.message());

  std::string weights;
  std::vector<std::pair<std::string, Shape>> entries;
  model.visit_parameters([&](const std::string& name, const Parameter<float>& p) {
    entries.emplace_back(name, p.value.shape());
    for (const Mat<float>* m : {&p.value.matrix(), &p.first_moment, &p.second_moment})
      for (Index i = 0; i < m->size(); ++i) put_f32(weights, m->data()[i]);
  });

  std::ostringstream os;
  os << "format = " << kFormat << '\n';
  os << "version = " << kCheckpointVersion << '\n';
  for (const auto& [k, v] : config_fields(config)) os << k << " = " << v << '\n';
  os << "state.step = " << state.step << '\n';
  os << "state.adam_step = " << state.adam.step << '\n';
  os << "state.score_steps_since_update = " << state.scores.steps_since_update << '\n';
  os << "state.rng.scores = " << engine_text(state.scores.rng) << '\n';
  os << "state.rng.data = " << engine_text(state.data_rng) << '\n';
  os << "state.rng.surgery = " << engine_text(state.surgery_rng) << '\n';
  for (const auto& layer : model.layers)
    for (const auto& m : layer)
      for (const auto& g : m.groups) os << "score." << to_string(g.id) << " = " << format_double(g.score) << '\n';
  os << "entries = " << entries.size() << '\n';
  for (std::size_t i = 0; i < entries.size(); ++i)
    os << "entry." << i << " = " << entries[i].first << ' ' << shape_text(entries[i].second) << '\n';
  os << "weights.bytes = " << weights.size() << '\n';
  os << "weights.fnv1a = " << fnv1a(weights) << '\n';

  std::ofstream wf(dir / kWeights, std::ios::binary | std::ios::trunc);
  wf.write(weights.data(), static_cast<std::streamsize>(weights.size()));
  std::ofstream mf(dir / kManifest, std::ios::trunc);
  mf << os.str();
  if (!wf || !mf) throw Error(ErrorKind::invalid_input, "cannot write checkpoint to " + dir.string());
}

CheckpointManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) corrupt(dir, "missing manifest");
  CheckpointManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) corrupt(dir, "malformed manifest line '" + line + "'");
    m.fields.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  if (!m.has("format") || m.get("format") != kFormat) corrupt(dir, "not an archopt checkpoint");
  m.version = number_field<int>(m, dir, "version");
  if (m.version != kCheckpointVersion)
    corrupt(dir, "unsupported version " + std::to_string(m.version) + " (expected " +
                     std::to_string(kCheckpointVersion) + ")");
  m.model = config_from(m, dir).model;

  const auto count = number_field<std::size_t>(m, dir, "entries");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string key = "entry." + std::to_string(i);
    if (!m.has(key)) corrupt(dir, "missing field '" + key + "'");
    const auto& text = m.get(key);
    const auto space = text.rfind(' ');
    if (space == std::string::npos) corrupt(dir, "malformed entry '" + text + "'");
    CheckpointManifest::Entry e{text.substr(0, space), {}};
    for (const auto& d : split(text.substr(space + 1), 'x')) {
      Index v = 0;
      if (!parse_number(d, v) || v < 1) corrupt(dir, "bad shape in entry '" + text + "'");
      e.shape.push_back(v);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const CheckpointManifest manifest = read_manifest(dir);
  Checkpoint ck;
  ck.config = config_from(manifest, dir);
  const ModelConfig& cfg = ck.config.model;

  std::ifstream wf(dir / kWeights, std::ios::binary);
  if (!wf) corrupt(dir, "missing weights");
  std::string weights((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());
  if (weights.size() != number_field<std::size_t>(manifest, dir, "weights.bytes"))
    corrupt(dir, "weights size " + std::to_string(weights.size()) + " does not match the manifest");
  if (fnv1a(weights) != number_field<std::uint64_t>(manifest, dir, "weights.fnv1a"))
    corrupt(dir, "weights checksum mismatch");

  // Skeleton with every module present and empty; groups appear as entries are read.
  auto& model = ck.model;
  model.config = cfg;
  for (int l = 0; l < cfg.layers; ++l) {
    auto& layer = model.layers.emplace_back();
    for (ModuleKind k : module_kinds(cfg.architecture)) layer.emplace_back().kind = k;
    std::sort(layer.begin(), layer.end(), [](const auto& a, const auto& b) { return a.kind < b.kind; });
  }

  std::size_t offset = 0;
  auto take = [&](const Shape& shape) {
    Parameter<float> p(Tensor<float>{shape});
    for (Mat<float>* m : {&p.value.matrix(), &p.first_moment, &p.second_moment})
      for (Index i = 0; i < m->size(); ++i) {
        if (offset + 4 > weights.size()) corrupt(dir, "weights are truncated");
        m->data()[i] = get_f32(weights, offset);
        offset += 4;
      }
    return p;
  };

  for (const auto& e : manifest.entries) {
    Parameter<float> p = take(e.shape);
    if (!p.value.all_finite()) corrupt(dir, "entry '" + e.name + "' holds non-finite values");
    const auto parts = split(e.name, '/');
    try {
      if (parts.size() == 1) {
        if (e.name == "frontend") model.frontend = std::move(p);
        else if (e.name == "final_gamma") model.final_gamma = std::move(p);
        else if (e.name == "final_beta") model.final_beta = std::move(p);
        else if (e.name == "head") model.head = std::move(p);
        else corrupt(dir, "unknown entry '" + e.name + "'");
        continue;
      }
      if (parts.size() < 3 || parts[0].size() < 2 || parts[0][0] != 'L') corrupt(dir, "unknown entry '" + e.name + "'");
      auto& m = model.module(std::stoi(parts[0].substr(1)), parse_module_kind(parts[1]));
      if (parts.size() == 3) {
        if (parts[2] == "norm_gamma") m.norm_gamma = std::move(p);
        else if (parts[2] == "norm_beta") m.norm_beta = std::move(p);
        else corrupt(dir, "unknown entry '" + e.name + "'");
        continue;
      }
      if (parts.size() != 5 || parts[3].size() < 2 || parts[3][0] != 'g')
        corrupt(dir, "unknown entry '" + e.name + "'");
      const int slot = std::stoi(parts[2]);
      const int generation = std::stoi(parts[3].substr(1));
      if (m.groups.empty() || m.groups.back().id.slot != slot) {
        if (slot != static_cast<int>(m.groups.size()))
          corrupt(dir, "group slots are not contiguous at '" + e.name + "'");
        auto& g = m.groups.emplace_back();
        g.id = {std::stoi(parts[0].substr(1)), m.kind, slot, generation};
        g.serial = model.next_serial++;
        g.score = number_field<double>(manifest, dir, "score." + to_string(g.id));
      }
      auto& g = m.groups.back();
      if (g.id.generation != generation) corrupt(dir, "generation changes inside group at '" + e.name + "'");
      if (parts[4] == "scale") g.scale = std::move(p);
      else g.slices.push_back({parts[4], std::move(p)});
    } catch (const std::invalid_argument&) {
      corrupt(dir, "unparsable entry name '" + e.name + "'");
    } catch (const Error& err) {
      if (err.kind() == ErrorKind::corrupt_checkpoint) throw;
      corrupt(dir, "entry '" + e.name + "': " + err.what());
    }
  }
  if (offset != weights.size()) corrupt(dir, "weights hold trailing bytes");

  // Every tensor must sit where a freshly built model of this config would put it.
  std::vector<std::string> names;
  model.visit_parameters([&](const std::string& name, const Parameter<float>&) { names.push_back(name); });
  if (names.size() != manifest.entries.size()) corrupt(dir, "tensor table is incomplete");
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] != manifest.entries[i].name) corrupt(dir, "tensor table out of order at '" + names[i] + "'");
  const Index d = cfg.d_model;
  auto expect = [&](const Parameter<float>& p, Index rows, Index cols, const std::string& what) {
    if (p.value.rows() != rows || p.value.cols() != cols)
      corrupt(dir, what + " has shape " + shape_string(p.value.shape()));
  };
  expect(model.frontend, ModelConfig::kStride * cfg.features, d, "frontend");
  expect(model.head, d, cfg.outputs(), "head");
  expect(model.final_gamma, 1, d, "final_gamma");
  expect(model.final_beta, 1, d, "final_beta");
  for (const auto& layer : model.layers)
    for (const auto& m : layer) {
      expect(m.norm_gamma, 1, d, "norm_gamma");
      expect(m.norm_beta, 1, d, "norm_beta");
      const auto specs = slice_specs(cfg, m.kind);
      for (const auto& g : m.groups) {
        if (g.slices.size() != specs.size()) corrupt(dir, "group " + to_string(g.id) + " has the wrong slices");
        for (std::size_t s = 0; s < specs.size(); ++s) {
          if (g.slices[s].name != specs[s].name) corrupt(dir, "group " + to_string(g.id) + " has the wrong slices");
          expect(g.slices[s].param, specs[s].shape[0], specs[s].shape[1], to_string(g.id) + "/" + specs[s].name);
        }
        expect(g.scale, 1, 1, to_string(g.id) + "/scale");
      }
    }

  auto& st = ck.state;
  st.step = number_field<long>(manifest, dir, "state.step");
  st.adam.step = number_field<long>(manifest, dir, "state.adam_step");
  st.scores.steps_since_update = number_field<long>(manifest, dir, "state.score_steps_since_update");
  st.scores.rng = engine_field<std::mt19937_64>(manifest, dir, "state.rng.scores");
  st.data_rng = engine_field<std::mt19937_64>(manifest, dir, "state.rng.data");
  st.surgery_rng = engine_field<std::mt19937_64>(manifest, dir, "state.rng.surgery");
  return ck;
}

}  // namespace archopt
