#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "archopt/autodiff.hpp"

namespace archopt {

enum class Architecture { conformer, ebranchformer_lite };

/// Declaration order is the enumeration order of groups within a layer.
enum class ModuleKind { ffn1 = 0, mhsa = 1, conv = 2, ffn2 = 3, cgmlp = 4 };

inline constexpr std::string_view to_string(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::ffn1: return "FFN1";
    case ModuleKind::mhsa: return "MHSA";
    case ModuleKind::conv: return "CONV";
    case ModuleKind::ffn2: return "FFN2";
    case ModuleKind::cgmlp: return "CGMLP";
  }
  return "?";
}

inline ModuleKind parse_module_kind(std::string_view s) {
  for (auto k : {ModuleKind::ffn1, ModuleKind::mhsa, ModuleKind::conv, ModuleKind::ffn2, ModuleKind::cgmlp})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::invalid_input, "unknown module kind '" + std::string(s) + "'");
}

inline constexpr std::string_view to_string(Architecture a) {
  return a == Architecture::conformer ? "conformer" : "ebranchformer_lite";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "conformer") return Architecture::conformer;
  if (s == "ebranchformer_lite") return Architecture::ebranchformer_lite;
  throw Error(ErrorKind::invalid_config, "unknown architecture '" + std::string(s) + "'");
}

struct GroupId {
  int layer = 0;
  ModuleKind kind = ModuleKind::ffn1;
  int slot = 0;
  int generation = 0;

  friend auto operator<=>(const GroupId&, const GroupId&) = default;
};

inline std::string to_string(const GroupId& id) {
  return "L" + std::to_string(id.layer) + "/" + std::string(to_string(id.kind)) + "/" + std::to_string(id.slot) +
         "/g" + std::to_string(id.generation);
}

struct ModelConfig {
  static constexpr int kStride = 4;
  static constexpr double kNormEps = 1e-5;

  Architecture architecture = Architecture::conformer;
  int d_model = 64;
  int layers = 2;
  int kernel = 9;
  int ffn_groups = 4;   // C
  int conv_groups = 4;  // M
  int vocab = 8;
  int features = 16;
  int heads = 0;    // 0: max(1, d_model / 64)
  int d_ff = 0;     // 0: 4 * d_model
  int d_inter = 0;  // 0: 6 * d_model
  std::uint64_t seed = 1;

  int head_count() const { return heads > 0 ? heads : std::max(1, d_model / 64); }
  int head_dim() const { return d_model / head_count(); }
  int ffn_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  int inter_dim() const { return d_inter > 0 ? d_inter : 6 * d_model; }
  int outputs() const { return vocab + 1; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::invalid_config, msg); };
    if (d_model < 1 || layers < 1 || vocab < 1 || features < 1) fail("dimensions must be positive");
    if (ffn_groups < 1 || conv_groups < 1) fail("group counts must be positive");
    if (kernel < 1 || kernel % 2 == 0) fail("kernel size must be odd");
    if (d_model % head_count() != 0) fail("d_model is not divisible by the head count");
    if (ffn_dim() % ffn_groups != 0)
      fail("d_ff=" + std::to_string(ffn_dim()) + " is not divisible into " + std::to_string(ffn_groups) + " groups");
    if (architecture == Architecture::conformer && (2 * d_model) % conv_groups != 0)
      fail("conv channels are not divisible into " + std::to_string(conv_groups) + " GLU-aligned groups");
    if (architecture == Architecture::ebranchformer_lite && inter_dim() % (2 * conv_groups) != 0)
      fail("d_inter is not divisible into " + std::to_string(conv_groups) + " gated groups");
  }
};

/// A trainable tensor plus its Adam moments.
template <typename Scalar>
struct Parameter {
  Tensor<Scalar> value;
  Mat<Scalar> first_moment;
  Mat<Scalar> second_moment;

  Parameter() = default;
  explicit Parameter(Tensor<Scalar> v) : value(std::move(v)) {
    value.set_requires_grad(true);
    clear_moments();
  }

  void clear_moments() {
    first_moment = Mat<Scalar>::Zero(value.rows(), value.cols());
    second_moment = Mat<Scalar>::Zero(value.rows(), value.cols());
  }

  template <typename Other>
  Parameter<Other> cast() const {
    Parameter<Other> p;
    p.value = value.template cast<Other>();
    p.first_moment = first_moment.template cast<Other>();
    p.second_moment = second_moment.template cast<Other>();
    return p;
  }
};

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Parameter<Scalar> param;
};

/// One independently growable/droppable slice of a module.
template <typename Scalar>
struct ParameterGroup {
  GroupId id;
  std::vector<NamedParameter<Scalar>> slices;
  double score = 0.0;
  Parameter<Scalar> scale{alloc<Scalar>({1, 1}, init::Constant{1.0})};
  std::uint64_t serial = 0;  // stable handle within one process; not persisted

  Index param_count() const {
    Index n = 0;
    for (const auto& s : slices) n += s.param.value.size();
    return n;
  }

  Parameter<Scalar>& slice(std::string_view name) {
    for (auto& s : slices)
      if (s.name == name) return s.param;
    throw Error(ErrorKind::not_found, "group " + to_string(id) + " has no slice '" + std::string(name) + "'");
  }
  const Parameter<Scalar>& slice(std::string_view name) const {
    return const_cast<ParameterGroup*>(this)->slice(name);
  }
};

template <typename Scalar>
struct Module {
  ModuleKind kind = ModuleKind::ffn1;
  Parameter<Scalar> norm_gamma;
  Parameter<Scalar> norm_beta;
  std::vector<ParameterGroup<Scalar>> groups;

  Index param_count() const {
    Index n = 0;
    for (const auto& g : groups) n += g.param_count();
    return n;
  }

  /// Hidden width the module currently exposes (FFN hidden units, heads * d_h,
  /// post-GLU conv channels, gated cgMLP channels).
  Index hidden_width() const {
    Index w = 0;
    for (const auto& g : groups) {
      switch (kind) {
        case ModuleKind::ffn1:
        case ModuleKind::ffn2: w += g.slices[0].param.value.cols(); break;
        case ModuleKind::mhsa: w += g.slices[0].param.value.cols(); break;
        case ModuleKind::conv:
        case ModuleKind::cgmlp: w += g.slices[1].param.value.cols(); break;
      }
    }
    return w;
  }
};

template <typename Scalar>
struct PartitionedEncoder {
  ModelConfig config;
  Parameter<Scalar> frontend;                       // [kStride * features, d_model]
  std::vector<std::vector<Module<Scalar>>> layers;  // modules sorted by kind
  Parameter<Scalar> final_gamma;
  Parameter<Scalar> final_beta;
  Parameter<Scalar> head;  // [d_model, vocab + 1]
  std::uint64_t next_serial = 0;

  Module<Scalar>& module(int layer, ModuleKind kind) {
    if (layer < 0 || layer >= static_cast<int>(layers.size()))
      throw Error(ErrorKind::not_found, "no layer " + std::to_string(layer));
    for (auto& m : layers[layer])
      if (m.kind == kind) return m;
    throw Error(ErrorKind::not_found,
                "layer " + std::to_string(layer) + " has no " + std::string(to_string(kind)) + " module");
  }
  const Module<Scalar>& module(int layer, ModuleKind kind) const {
    return const_cast<PartitionedEncoder*>(this)->module(layer, kind);
  }

  ParameterGroup<Scalar>& group(const GroupId& id) {
    auto& m = module(id.layer, id.kind);
    if (id.slot >= 0 && id.slot < static_cast<int>(m.groups.size()) && m.groups[id.slot].id == id)
      return m.groups[id.slot];
    throw Error(ErrorKind::not_found, "no group " + to_string(id));
  }

  ParameterGroup<Scalar>* find_serial(std::uint64_t serial) {
    for (auto& layer : layers)
      for (auto& m : layer)
        for (auto& g : m.groups)
          if (g.serial == serial) return &g;
    return nullptr;
  }

  /// Restores contiguous slot numbering after groups were inserted/removed.
  void renumber() {
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (auto& m : layers[l])
        for (std::size_t s = 0; s < m.groups.size(); ++s) {
          m.groups[s].id.layer = static_cast<int>(l);
          m.groups[s].id.kind = m.kind;
          m.groups[s].id.slot = static_cast<int>(s);
        }
  }

  /// Visits every parameter in canonical (checkpoint) order with a stable name.
  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit_parameters(Fn&& fn) const {
    visit_impl(*this, fn);
  }

  template <typename Other>
  PartitionedEncoder<Other> cast() const {
    PartitionedEncoder<Other> out;
    out.config = config;
    out.frontend = frontend.template cast<Other>();
    out.final_gamma = final_gamma.template cast<Other>();
    out.final_beta = final_beta.template cast<Other>();
    out.head = head.template cast<Other>();
    out.next_serial = next_serial;
    for (const auto& layer : layers) {
      auto& dst_layer = out.layers.emplace_back();
      for (const auto& m : layer) {
        Module<Other> dm;
        dm.kind = m.kind;
        dm.norm_gamma = m.norm_gamma.template cast<Other>();
        dm.norm_beta = m.norm_beta.template cast<Other>();
        for (const auto& g : m.groups) {
          ParameterGroup<Other> dg;
          dg.id = g.id;
          dg.score = g.score;
          dg.serial = g.serial;
          dg.scale = g.scale.template cast<Other>();
          for (const auto& s : g.slices) dg.slices.push_back({s.name, s.param.template cast<Other>()});
          dm.groups.push_back(std::move(dg));
        }
        dst_layer.push_back(std::move(dm));
      }
    }
    return out;
  }

 private:
  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn& fn) {
    fn(std::string("frontend"), self.frontend);
    for (std::size_t l = 0; l < self.layers.size(); ++l)
      for (auto& m : self.layers[l]) {
        const std::string prefix = "L" + std::to_string(l) + "/" + std::string(to_string(m.kind));
        fn(prefix + "/norm_gamma", m.norm_gamma);
        fn(prefix + "/norm_beta", m.norm_beta);
        for (auto& g : m.groups) {
          const std::string gp = to_string(g.id);
          for (auto& s : g.slices) fn(gp + "/" + s.name, s.param);
          fn(gp + "/scale", g.scale);
        }
      }
    fn(std::string("final_gamma"), self.final_gamma);
    fn(std::string("final_beta"), self.final_beta);
    fn(std::string("head"), self.head);
  }
};

inline std::vector<ModuleKind> module_kinds(Architecture a) {
  if (a == Architecture::conformer) return {ModuleKind::ffn1, ModuleKind::mhsa, ModuleKind::conv, ModuleKind::ffn2};
  return {ModuleKind::ffn1, ModuleKind::mhsa, ModuleKind::ffn2, ModuleKind::cgmlp};
}

/// Slice names with their shapes and init standard deviations for a fresh
/// group of `kind`. The list order is the slice order inside the group.
struct SliceSpec {
  std::string name;
  Shape shape;
  double init_std;
};

inline std::vector<SliceSpec> slice_specs(const ModelConfig& cfg, ModuleKind kind) {
  const Index d = cfg.d_model;
  const auto inv_sqrt = [](Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  switch (kind) {
    case ModuleKind::ffn1:
    case ModuleKind::ffn2: {
      const Index w = cfg.ffn_dim() / cfg.ffn_groups;
      return {{"w1", {d, w}, inv_sqrt(d)}, {"w2", {w, d}, inv_sqrt(cfg.ffn_dim())}};
    }
    case ModuleKind::mhsa: {
      const Index dh = cfg.head_dim();
      return {{"wq", {d, dh}, inv_sqrt(d)},
              {"wk", {d, dh}, inv_sqrt(d)},
              {"wv", {d, dh}, inv_sqrt(d)},
              {"wo", {dh, d}, inv_sqrt(d)}};
    }
    case ModuleKind::conv: {
      const Index in = 4 * d / cfg.conv_groups;
      const Index ch = 2 * d / cfg.conv_groups;
      return {{"w_in", {d, in}, inv_sqrt(d)},
              {"w_conv", {cfg.kernel, ch}, inv_sqrt(cfg.kernel)},
              {"w_out", {ch, d}, inv_sqrt(2 * d)}};
    }
    case ModuleKind::cgmlp: {
      const Index up = cfg.inter_dim() / cfg.conv_groups;
      const Index ch = up / 2;
      return {{"w_up", {d, up}, inv_sqrt(d)},
              {"w_conv", {cfg.kernel, ch}, inv_sqrt(cfg.kernel)},
              {"w_down", {ch, d}, inv_sqrt(cfg.inter_dim() / 2)}};
    }
  }
  return {};
}

/// A group drawn from the module's fresh-init distribution.
template <typename Scalar>
ParameterGroup<Scalar> make_group(const ModelConfig& cfg, ModuleKind kind, std::mt19937_64& rng) {
  ParameterGroup<Scalar> g;
  g.id.kind = kind;
  for (const auto& spec : slice_specs(cfg, kind))
    g.slices.push_back(
        {spec.name, Parameter<Scalar>(alloc<Scalar>(spec.shape, init::Normal{0.0, spec.init_std, rng()}))});
  return g;
}

template <typename Scalar>
PartitionedEncoder<Scalar> build_model(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const Index d = cfg.d_model;
  auto ones = [d] { return Parameter<Scalar>(alloc<Scalar>({d}, init::Constant{1.0})); };
  auto zeros = [d] { return Parameter<Scalar>(alloc<Scalar>({d}, init::Zeros{})); };

  PartitionedEncoder<Scalar> model;
  model.config = cfg;
  const Index in = ModelConfig::kStride * cfg.features;
  model.frontend = Parameter<Scalar>(alloc<Scalar>({in, d}, init::Normal{0.0, 1.0 / std::sqrt(double(in)), rng()}));
  for (int l = 0; l < cfg.layers; ++l) {
    auto& layer = model.layers.emplace_back();
    for (ModuleKind kind : module_kinds(cfg.architecture)) {
      Module<Scalar> m;
      m.kind = kind;
      m.norm_gamma = ones();
      m.norm_beta = zeros();
      const int count = kind == ModuleKind::mhsa                                 ? cfg.head_count()
                        : (kind == ModuleKind::ffn1 || kind == ModuleKind::ffn2) ? cfg.ffn_groups
                                                                                 : cfg.conv_groups;
      for (int s = 0; s < count; ++s) {
        auto g = make_group<Scalar>(cfg, kind, rng);
        g.serial = model.next_serial++;
        m.groups.push_back(std::move(g));
      }
      layer.push_back(std::move(m));
    }
    std::sort(layer.begin(), layer.end(), [](const auto& a, const auto& b) { return a.kind < b.kind; });
  }
  model.final_gamma = ones();
  model.final_beta = zeros();
  model.head = Parameter<Scalar>(
      alloc<Scalar>({d, Index(cfg.outputs())}, init::Normal{0.0, 1.0 / std::sqrt(double(d)), rng()}));
  model.renumber();
  return model;
}

/// Binds model parameters onto a tape for one evaluation. In scaled mode each
/// group weight is multiplied by the group's learnable scale.
template <typename Scalar>
class ForwardContext {
 public:
  explicit ForwardContext(Tape<Scalar>& tape, bool scaled = false) : tape_(tape), scaled_(scaled) {}

  Tape<Scalar>& tape() const { return tape_; }
  bool scaled() const { return scaled_; }

  Var<Scalar> bind(Parameter<Scalar>& p) { return tape_.leaf(p.value); }

  Var<Scalar> weight(ParameterGroup<Scalar>& g, std::size_t slice) {
    Parameter<Scalar>& p = g.slices[slice].param;
    if (!scaled_) return bind(p);
    if (auto it = scaled_cache_.find(&p); it != scaled_cache_.end()) return it->second;
    Var<Scalar> w = scale_by(bind(p), bind(g.scale));
    scaled_cache_.emplace(&p, w);
    return w;
  }

 private:
  Tape<Scalar>& tape_;
  bool scaled_;
  std::unordered_map<const Parameter<Scalar>*, Var<Scalar>> scaled_cache_;
};

/// The additive term one group contributes to its module's output.
template <typename Scalar>
Var<Scalar> group_forward(ForwardContext<Scalar>& ctx, ModuleKind kind, ParameterGroup<Scalar>& g, Var<Scalar> x) {
  switch (kind) {
    case ModuleKind::ffn1:
    case ModuleKind::ffn2:
      return matmul(swish(matmul(x, ctx.weight(g, 0))), ctx.weight(g, 1));
    case ModuleKind::mhsa: {
      Var<Scalar> q = matmul(x, ctx.weight(g, 0));
      Var<Scalar> k = matmul(x, ctx.weight(g, 1));
      Var<Scalar> v = matmul(x, ctx.weight(g, 2));
      const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
      Var<Scalar> attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt_dh), 1);
      return matmul(matmul(attn, v), ctx.weight(g, 3));
    }
    case ModuleKind::conv: {
      Var<Scalar> h = glu(matmul(x, ctx.weight(g, 0)), 1);
      h = swish(depthwise_conv1d(h, ctx.weight(g, 1)));
      return matmul(h, ctx.weight(g, 2));
    }
    case ModuleKind::cgmlp: {
      Var<Scalar> u = swish(matmul(x, ctx.weight(g, 0)));
      const Index half = u.cols() / 2;
      Var<Scalar> gate = depthwise_conv1d(slice_cols(u, half, half), ctx.weight(g, 1));
      return matmul(mul(slice_cols(u, 0, half), gate), ctx.weight(g, 2));
    }
  }
  throw Error(ErrorKind::invalid_state, "unhandled module kind");
}

/// Sum of all group contributions; the zero matrix for an empty module.
template <typename Scalar>
Var<Scalar> module_forward(ForwardContext<Scalar>& ctx, Module<Scalar>& m, Var<Scalar> x) {
  if (m.groups.empty()) return ctx.tape().constant(Mat<Scalar>::Zero(x.rows(), x.cols()));
  Var<Scalar> out = group_forward(ctx, m.kind, m.groups.front(), x);
  for (std::size_t i = 1; i < m.groups.size(); ++i) out = add(out, group_forward(ctx, m.kind, m.groups[i], x));
  return out;
}

namespace detail {

template <typename Scalar>
Var<Scalar> pre_norm(ForwardContext<Scalar>& ctx, Module<Scalar>& m, Var<Scalar> h) {
  return layer_norm(h, ctx.bind(m.norm_gamma), ctx.bind(m.norm_beta), static_cast<Scalar>(ModelConfig::kNormEps));
}

/// Residual branch of one module, or nothing when the module has no groups.
template <typename Scalar>
std::optional<Var<Scalar>> branch(ForwardContext<Scalar>& ctx, Module<Scalar>& m, Var<Scalar> h) {
  if (m.groups.empty()) return std::nullopt;
  return module_forward(ctx, m, pre_norm(ctx, m, h));
}

}  // namespace detail

/// Full encoder on one sequence: [T, features] -> log-probabilities [T / 4, vocab + 1].
template <typename Scalar>
Var<Scalar> encode(ForwardContext<Scalar>& ctx, PartitionedEncoder<Scalar>& model, Var<Scalar> features) {
  const auto& cfg = model.config;
  if (features.rows() < ModelConfig::kStride || features.cols() != cfg.features)
    throw Error(ErrorKind::invalid_shape, "encoder input must be [T >= 4, " + std::to_string(cfg.features) + "]");
  const Scalar half = Scalar(0.5);
  Var<Scalar> h = matmul(frame_stack(features, ModelConfig::kStride), ctx.bind(model.frontend));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const int layer = static_cast<int>(l);
    if (auto b = detail::branch(ctx, model.module(layer, ModuleKind::ffn1), h)) h = add(h, scale(*b, half));
    if (cfg.architecture == Architecture::conformer) {
      if (auto b = detail::branch(ctx, model.module(layer, ModuleKind::mhsa), h)) h = add(h, *b);
      if (auto b = detail::branch(ctx, model.module(layer, ModuleKind::conv), h)) h = add(h, *b);
    } else {
      auto attn = detail::branch(ctx, model.module(layer, ModuleKind::mhsa), h);
      auto local = detail::branch(ctx, model.module(layer, ModuleKind::cgmlp), h);
      if (attn) h = add(h, *attn);
      if (local) h = add(h, *local);
    }
    if (auto b = detail::branch(ctx, model.module(layer, ModuleKind::ffn2), h)) h = add(h, scale(*b, half));
  }
  h = layer_norm(h, ctx.bind(model.final_gamma), ctx.bind(model.final_beta),
                 static_cast<Scalar>(ModelConfig::kNormEps));
  return log_softmax(matmul(h, ctx.bind(model.head)), 1);
}

template <typename Scalar>
Mat<Scalar> forward(PartitionedEncoder<Scalar>& model, const Mat<Scalar>& features) {
  Tape<Scalar> tape;
  ForwardContext<Scalar> ctx(tape);
  return encode(ctx, model, tape.constant(features)).value();
}

/// Output of one module on an already-normalized input `x` ([T, d_model]).
template <typename Scalar>
Mat<Scalar> module_output(PartitionedEncoder<Scalar>& model, int layer, ModuleKind kind, const Mat<Scalar>& x) {
  Tape<Scalar> tape;
  ForwardContext<Scalar> ctx(tape);
  return module_forward(ctx, model.module(layer, kind), tape.constant(x)).value();
}

template <typename Scalar>
Mat<Scalar> group_contribution(PartitionedEncoder<Scalar>& model, const GroupId& id, const Mat<Scalar>& x) {
  auto& g = model.group(id);
  Tape<Scalar> tape;
  ForwardContext<Scalar> ctx(tape);
  return group_forward(ctx, id.kind, g, tape.constant(x)).value();
}

/// Concatenated first FFN matrix [d_model, hidden_width] of a module.
template <typename Scalar>
Mat<Scalar> ffn_input_matrix(const Module<Scalar>& m) {
  Mat<Scalar> out(m.groups.empty() ? 0 : m.groups.front().slices[0].param.value.rows(), m.hidden_width());
  Index col = 0;
  for (const auto& g : m.groups) {
    const auto& w = g.slices[0].param.value.matrix();
    out.middleCols(col, w.cols()) = w;
    col += w.cols();
  }
  return out;
}

/// Concatenated second FFN matrix [hidden_width, d_model] of a module.
template <typename Scalar>
Mat<Scalar> ffn_output_matrix(const Module<Scalar>& m) {
  Mat<Scalar> out(m.hidden_width(), m.groups.empty() ? 0 : m.groups.front().slices[1].param.value.cols());
  Index row = 0;
  for (const auto& g : m.groups) {
    const auto& w = g.slices[1].param.value.matrix();
    out.middleRows(row, w.rows()) = w;
    row += w.rows();
  }
  return out;
}

struct GroupInfo {
  GroupId id;
  Index param_count = 0;
  double score = 0.0;
};

/// All live groups ordered by (layer, module kind, slot).
template <typename Scalar>
std::vector<GroupInfo> enumerate_groups(const PartitionedEncoder<Scalar>& model) {
  std::vector<GroupInfo> out;
  for (const auto& layer : model.layers)
    for (const auto& m : layer)
      for (const auto& g : m.groups) out.push_back({g.id, g.param_count(), g.score});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

/// `all` also counts the layer-norm affine parameters, which belong to no
/// other scope. Learnable group scales are never counted.
enum class ParamScope { all, encoder_groups, frontend, head };

template <typename Scalar>
Index count_params(const PartitionedEncoder<Scalar>& model, ParamScope scope) {
  Index groups = 0, norms = model.final_gamma.value.size() + model.final_beta.value.size();
  for (const auto& layer : model.layers)
    for (const auto& m : layer) {
      groups += m.param_count();
      norms += m.norm_gamma.value.size() + m.norm_beta.value.size();
    }
  switch (scope) {
    case ParamScope::encoder_groups: return groups;
    case ParamScope::frontend: return model.frontend.value.size();
    case ParamScope::head: return model.head.value.size();
    case ParamScope::all: return groups + norms + model.frontend.value.size() + model.head.value.size();
  }
  return 0;
}

}  // namespace archopt
