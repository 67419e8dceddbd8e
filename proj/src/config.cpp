#include "archopt/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace archopt {
namespace {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw Error(ErrorKind::invalid_config, "key '" + key + "': cannot parse '" + text + "'");
  return value;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field number(const char* section, const char* key, T TrainConfig::*outer) {
  const std::string full = std::string(section) + "." + key;
  return {section, key, [=](TrainConfig& c, const std::string& v) { c.*outer = parse_number<T>(full, v); },
          [=](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(c.*outer);
            else
              return std::to_string(c.*outer);
          }};
}

template <typename Outer, typename T>
Field nested(const char* section, const char* key, Outer TrainConfig::*outer, T Outer::*inner) {
  const std::string full = std::string(section) + "." + key;
  return {section, key, [=](TrainConfig& c, const std::string& v) { (c.*outer).*inner = parse_number<T>(full, v); },
          [=](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double((c.*outer).*inner);
            else
              return std::to_string((c.*outer).*inner);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = TrainConfig;
    std::vector<Field> f;
    f.push_back({"model", "architecture",
                 [](C& c, const std::string& v) { c.model.architecture = parse_architecture(v); },
                 [](const C& c) { return std::string(to_string(c.model.architecture)); }});
    f.push_back(nested("model", "d_model", &C::model, &ModelConfig::d_model));
    f.push_back(nested("model", "layers", &C::model, &ModelConfig::layers));
    f.push_back(nested("model", "kernel", &C::model, &ModelConfig::kernel));
    f.push_back(nested("model", "ffn_groups", &C::model, &ModelConfig::ffn_groups));
    f.push_back(nested("model", "conv_groups", &C::model, &ModelConfig::conv_groups));
    f.push_back(nested("model", "vocab", &C::model, &ModelConfig::vocab));
    f.push_back(nested("model", "features", &C::model, &ModelConfig::features));
    f.push_back(nested("model", "heads", &C::model, &ModelConfig::heads));
    f.push_back(nested("model", "d_ff", &C::model, &ModelConfig::d_ff));
    f.push_back(nested("model", "d_inter", &C::model, &ModelConfig::d_inter));
    f.push_back(nested("model", "seed", &C::model, &ModelConfig::seed));

    f.push_back({"score", "metric", [](C& c, const std::string& v) { c.score.metric = parse_metric(v); },
                 [](const C& c) { return std::string(to_string(c.score.metric)); }});
    f.push_back(nested("score", "alpha", &C::score, &ScoreConfig::alpha));
    f.push_back(nested("score", "update_interval", &C::score, &ScoreConfig::update_interval));
    f.push_back(nested("score", "scale_prob", &C::score, &ScoreConfig::scale_prob));

    f.push_back(nested("plan", "delta", &C::plan, &AdaptationPlan::delta));
    f.push_back(nested("plan", "iterations", &C::plan, &AdaptationPlan::iterations));
    f.push_back(nested("plan", "t_end_fraction", &C::plan, &AdaptationPlan::t_end_fraction));
    f.push_back({"plan", "init", [](C& c, const std::string& v) { c.plan.init = parse_init_strategy(v); },
                 [](const C& c) { return std::string(to_string(c.plan.init)); }});
    f.push_back(nested("plan", "noise_std", &C::plan, &AdaptationPlan::noise_std));

    f.push_back(number("train", "total_steps", &C::total_steps));
    f.push_back(number("train", "batch_size", &C::batch_size));
    f.push_back(number("train", "lr_start", &C::lr_start));
    f.push_back(number("train", "lr_peak", &C::lr_peak));
    f.push_back(number("train", "lr_final", &C::lr_final));
    f.push_back(nested("train", "adam_beta1", &C::adam, &AdamConfig::beta1));
    f.push_back(nested("train", "adam_beta2", &C::adam, &AdamConfig::beta2));
    f.push_back(nested("train", "adam_eps", &C::adam, &AdamConfig::eps));
    f.push_back({"train", "out_dir", [](C& c, const std::string& v) { c.out_dir = v; },
                 [](const C& c) { return c.out_dir; }});
    f.push_back(number("train", "checkpoint_every", &C::checkpoint_every));
    f.push_back(number("train", "eval_sequences", &C::eval_sequences));

    f.push_back(nested("data", "vocab", &C::data, &DataConfig::vocab));
    f.push_back({"data", "seq_len_range",
                 [](C& c, const std::string& v) {
                   const auto comma = v.find(',');
                   if (comma == std::string::npos)
                     throw Error(ErrorKind::invalid_config, "data.seq_len_range must be 'min,max'");
                   c.data.min_len = parse_number<int>("data.seq_len_range", v.substr(0, comma));
                   c.data.max_len = parse_number<int>("data.seq_len_range", v.substr(comma + 1));
                 },
                 [](const C& c) { return std::to_string(c.data.min_len) + "," + std::to_string(c.data.max_len); }});
    f.push_back(nested("data", "frames_per_symbol", &C::data, &DataConfig::frames_per_symbol));
    f.push_back(nested("data", "noise_std", &C::data, &DataConfig::noise_std));
    f.push_back(nested("data", "seed", &C::data, &DataConfig::seed));
    return f;
  }();
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  score.validate();
  plan.validate();
  data.validate();
  if (model.vocab != data.vocab) throw Error(ErrorKind::invalid_config, "model.vocab and data.vocab differ");
  if (total_steps < 1) throw Error(ErrorKind::invalid_config, "total_steps must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::invalid_config, "batch_size must be >= 1");
  if (!(lr_start < lr_peak) || !(lr_final < lr_start))
    throw Error(ErrorKind::invalid_config, "learning rates must satisfy final < start < peak");
  if (checkpoint_every < 0) throw Error(ErrorKind::invalid_config, "checkpoint_every must be >= 0");
  if (plan.t_end_fraction * static_cast<double>(total_steps) >= static_cast<double>(total_steps))
    throw Error(ErrorKind::invalid_config, "T_end must precede the last step");
}

TrainConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorKind::invalid_config, e.what());
  }
  TrainConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw Error(ErrorKind::invalid_config, "key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      const Field* match = nullptr;
      for (const auto& f : fields())
        if (section == f.section && key == f.key) match = &f;
      if (!match) throw Error(ErrorKind::invalid_config, "unknown key '" + section + "." + key + "'");
      match->set(cfg, value.data());
    }
  }
  cfg.data.feature_dim = cfg.model.features;
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::invalid_config, "cannot open config " + path.string());
  return parse_config(in);
}

void write_config(std::ostream& out, const TrainConfig& cfg) {
  std::string current;
  for (const auto& f : fields()) {
    if (current != f.section) {
      if (!current.empty()) out << '\n';
      current = f.section;
      out << '[' << current << "]\n";
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
}

}  // namespace archopt
