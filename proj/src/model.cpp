#include "gar/model.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "gar/error.hpp"
#include "gar/io.hpp"

namespace gar {

namespace {

constexpr std::string_view kCheckpointMagic = "gar-checkpoint";
constexpr int kCheckpointVersion = 1;

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& f : split(s, ',')) out.push_back(parse_uint(f));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& f : split(s, ',')) out.push_back(parse_double(f));
  return out;
}

bool parse_flag(const std::string& s) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

}  // namespace

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kNone: return "none";
    case FusionMode::kEarlySum: return "early-sum";
    case FusionMode::kEarlyConcat: return "early-concat";
    case FusionMode::kLate: return "late";
  }
  return "?";
}

std::string to_string(Aggregation a) { return a == Aggregation::kTransformer ? "transformer" : "none"; }

std::string to_string(PePlacement p) {
  switch (p) {
    case PePlacement::kAfterFusion: return "after-fusion";
    case PePlacement::kPerBranch: return "per-branch";
    case PePlacement::kRawFeatures: return "raw-features";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "none") return FusionMode::kNone;
  if (s == "early-sum") return FusionMode::kEarlySum;
  if (s == "early-concat") return FusionMode::kEarlyConcat;
  if (s == "late") return FusionMode::kLate;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "'");
}

Aggregation parse_aggregation(std::string_view s) {
  if (s == "transformer") return Aggregation::kTransformer;
  if (s == "none") return Aggregation::kNone;
  throw ConfigError("unknown aggregation '" + std::string(s) + "'");
}

PePlacement parse_pe_placement(std::string_view s) {
  if (s == "after-fusion") return PePlacement::kAfterFusion;
  if (s == "per-branch") return PePlacement::kPerBranch;
  if (s == "raw-features") return PePlacement::kRawFeatures;
  throw ConfigError("unknown pe_placement '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (input_branches.empty()) throw ConfigError("model needs at least one input branch");
  if (input_dims.size() != input_branches.size()) throw ConfigError("input_dims must list one width per input branch");
  for (auto f : input_dims) {
    if (f == 0) throw ConfigError("input feature width must be positive");
  }
  if (num_actions < 2 || num_activities < 2) throw ConfigError("need at least two actions and two activities");
  encoder.validate();
  if (fusion == FusionMode::kNone && input_branches.size() != 1) {
    throw ConfigError("fusion 'none' takes exactly one input branch");
  }
  if (fusion != FusionMode::kNone && input_branches.size() < 2) {
    throw ConfigError("fusion '" + to_string(fusion) + "' needs at least two input branches");
  }
  if (fusion == FusionMode::kLate) {
    if (late_weights.size() != input_branches.size()) throw ConfigError("late_weights must list one weight per branch");
    for (double w : late_weights) {
      if (!(w > 0.0)) throw ConfigError("late fusion weights must be positive");
    }
  }
  if (use_pe) {
    if (pe_placement == PePlacement::kRawFeatures) {
      for (auto f : input_dims) {
        if (f % 4 != 0) throw ConfigError("raw-feature positional encoding needs widths divisible by 4");
      }
    } else if (d_model() % 4 != 0) {
      throw ConfigError("positional encoding needs d_model divisible by 4");
    }
    if (!(pe_scale > 0.0)) throw ConfigError("pe_scale must be positive");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"input_branches", join(input_branches)},
      {"input_dims", join(input_dims)},
      {"num_actions", std::to_string(num_actions)},
      {"num_activities", std::to_string(num_activities)},
      {"d_model", std::to_string(encoder.attention.d_model)},
      {"num_heads", std::to_string(encoder.attention.num_heads)},
      {"num_layers", std::to_string(encoder.num_layers)},
      {"d_ff", std::to_string(encoder.d_ff)},
      {"dropout", format_double(encoder.dropout)},
      {"aggregation", to_string(aggregation)},
      {"use_pe", use_pe ? "1" : "0"},
      {"pe_scale", format_double(pe_scale)},
      {"pe_placement", to_string(pe_placement)},
      {"fusion", to_string(fusion)},
      {"late_weights", join(late_weights)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("model config is missing '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.input_branches = parse_size_list(get("input_branches"));
    c.input_dims = parse_size_list(get("input_dims"));
    c.num_actions = parse_uint(get("num_actions"));
    c.num_activities = parse_uint(get("num_activities"));
    c.encoder.attention.d_model = parse_uint(get("d_model"));
    c.encoder.attention.num_heads = parse_uint(get("num_heads"));
    c.encoder.num_layers = parse_uint(get("num_layers"));
    c.encoder.d_ff = parse_uint(get("d_ff"));
    c.encoder.dropout = parse_double(get("dropout"));
    c.aggregation = parse_aggregation(get("aggregation"));
    c.use_pe = parse_flag(get("use_pe"));
    c.pe_scale = parse_double(get("pe_scale"));
    c.pe_placement = parse_pe_placement(get("pe_placement"));
    c.fusion = parse_fusion_mode(get("fusion"));
    c.late_weights = parse_double_list(get("late_weights"));
  } catch (const ParseError& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void BranchWeights::for_each_parameter(const std::function<void(Parameter&)>& fn) {
  for (std::size_t k = 0; k < embed_weight.size(); ++k) {
    fn(embed_weight[k]);
    fn(embed_bias[k]);
  }
  if (concat_projection.value.size() != 0) fn(concat_projection);
  for (auto& layer : layers) layer.for_each_parameter(fn);
  fn(action_weight);
  fn(action_bias);
  fn(activity_weight);
  fn(activity_bias);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DataError("argmax of an empty sequence");
  // max_element returns the first maximum.
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

Decision predict(const Tensor& action_logits, const Tensor& activity_logits) {
  Decision d;
  d.activity = argmax(activity_logits.data());
  for (std::size_t i = 0; i < action_logits.rows(); ++i) d.actions.push_back(argmax(action_logits.row(i)));
  return d;
}

Decision predict(const Prediction& pred) {
  return predict(pred.action_logits.value(), pred.activity_logits.value());
}

Var embed(Var features, Var weight, Var bias) { return add_row(matmul(features, weight), bias); }

GarModel::GarModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(init_seed);
  const std::size_t d = cfg_.d_model();
  for (std::size_t m = 0; m < cfg_.num_submodels(); ++m) {
    const std::string prefix = "sub" + std::to_string(m);
    BranchWeights w;
    std::vector<std::size_t> inputs;
    if (cfg_.fusion == FusionMode::kLate) {
      inputs.push_back(m);
    } else {
      inputs.resize(cfg_.input_branches.size());
      std::iota(inputs.begin(), inputs.end(), 0);
    }
    for (auto k : inputs) {
      const std::string name = prefix + ".embed" + std::to_string(k);
      w.embed_weight.emplace_back(name + ".weight", xavier_uniform(cfg_.input_dims[k], d, rng));
      w.embed_bias.emplace_back(name + ".bias", Tensor({d}));
    }
    if (cfg_.fusion == FusionMode::kEarlyConcat) {
      w.concat_projection = Parameter(prefix + ".concat_projection", xavier_uniform(inputs.size() * d, d, rng));
    }
    if (cfg_.aggregation == Aggregation::kTransformer) {
      for (std::size_t l = 0; l < cfg_.encoder.num_layers; ++l) {
        w.layers.push_back(EncoderLayerWeights::init(cfg_.encoder, rng, prefix + ".layer" + std::to_string(l)));
      }
    }
    w.action_weight = Parameter(prefix + ".action.weight", xavier_uniform(d, cfg_.num_actions, rng));
    w.action_bias = Parameter(prefix + ".action.bias", Tensor({cfg_.num_actions}));
    w.activity_weight = Parameter(prefix + ".activity.weight", xavier_uniform(d, cfg_.num_activities, rng));
    w.activity_bias = Parameter(prefix + ".activity.bias", Tensor({cfg_.num_activities}));
    submodels_.push_back(std::move(w));
  }
}

Prediction GarModel::run(Graph& g, BranchWeights& w, std::span<const Tensor* const> inputs,
                         std::span<const BoxCenter> centers, bool record_attention) {
  const bool pe = cfg_.use_pe;
  std::vector<Var> embedded;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Var x = g.constant(*inputs[k]);
    if (pe && cfg_.pe_placement == PePlacement::kRawFeatures) x = apply_pe(x, centers, cfg_.pe_scale);
    Var e = embed(x, g.param(w.embed_weight[k]), g.param(w.embed_bias[k]));
    if (pe && cfg_.pe_placement == PePlacement::kPerBranch) e = apply_pe(e, centers, cfg_.pe_scale);
    embedded.push_back(e);
  }

  Var fused = embedded.front();
  if (embedded.size() > 1) {
    if (cfg_.fusion == FusionMode::kEarlyConcat) {
      fused = matmul(concat_cols(embedded), g.param(w.concat_projection));
    } else {
      const std::vector<double> ones(embedded.size(), 1.0);
      fused = weighted_sum(embedded, ones);
    }
  }
  if (pe && cfg_.pe_placement == PePlacement::kAfterFusion) fused = apply_pe(fused, centers, cfg_.pe_scale);

  Prediction p;
  Var encoded = fused;
  if (cfg_.aggregation == Aggregation::kTransformer) {
    AttentionRecord rec;
    encoded = encode(fused, w.layers, cfg_.encoder.dropout, record_attention ? &rec : nullptr);
    if (record_attention) p.attention.push_back(std::move(rec));
  }
  p.action_logits = add_row(matmul(encoded, g.param(w.action_weight)), g.param(w.action_bias));
  p.activity_logits = add_row(matmul(max_over_set(encoded), g.param(w.activity_weight)), g.param(w.activity_bias));
  return p;
}

Prediction GarModel::forward_submodel(Graph& g, const ActorScene& scene, std::size_t index, bool record_attention) {
  if (index >= submodels_.size()) throw UsageError("sub-model index out of range");
  std::vector<const Tensor*> inputs;
  auto input = [&](std::size_t k) -> const Tensor* {
    const std::size_t b = cfg_.input_branches[k];
    if (b >= scene.features.size()) {
      throw DataError("scene " + std::to_string(scene.id) + " lacks branch " + std::to_string(b));
    }
    const Tensor& f = scene.features[b];
    if (f.cols() != cfg_.input_dims[k]) {
      throw DimensionError("branch " + std::to_string(b) + " has width " + std::to_string(f.cols()) +
                           ", model expects " + std::to_string(cfg_.input_dims[k]));
    }
    if (f.rows() != scene.centers.size()) throw DataError("feature rows and centers disagree");
    return &f;
  };
  if (cfg_.fusion == FusionMode::kLate) {
    inputs.push_back(input(index));
  } else {
    for (std::size_t k = 0; k < cfg_.input_branches.size(); ++k) inputs.push_back(input(k));
  }
  return run(g, submodels_[index], inputs, scene.centers, record_attention);
}

Prediction GarModel::forward(Graph& g, const ActorScene& scene, bool record_attention) {
  if (cfg_.fusion != FusionMode::kLate) return forward_submodel(g, scene, 0, record_attention);

  const double total = std::accumulate(cfg_.late_weights.begin(), cfg_.late_weights.end(), 0.0);
  std::vector<double> weights;
  for (double w : cfg_.late_weights) weights.push_back(w / total);
  std::vector<Var> action_probs, activity_probs;
  Prediction fused;
  for (std::size_t m = 0; m < submodels_.size(); ++m) {
    Prediction p = forward_submodel(g, scene, m, record_attention);
    action_probs.push_back(softmax_rows(p.action_logits));
    activity_probs.push_back(softmax_rows(p.activity_logits));
    for (auto& rec : p.attention) fused.attention.push_back(std::move(rec));
  }
  fused.action_logits = log(weighted_sum(action_probs, weights));
  fused.activity_logits = log(weighted_sum(activity_probs, weights));
  return fused;
}

void GarModel::for_each_parameter(const std::function<void(Parameter&)>& fn) {
  for (auto& w : submodels_) w.for_each_parameter(fn);
}

void GarModel::for_each_parameter(std::size_t submodel, const std::function<void(Parameter&)>& fn) {
  submodels_.at(submodel).for_each_parameter(fn);
}

std::vector<Parameter*> GarModel::parameters() {
  std::vector<Parameter*> out;
  for_each_parameter([&](Parameter& p) { out.push_back(&p); });
  return out;
}

void GarModel::zero_grad() {
  for_each_parameter([](Parameter& p) { p.zero_grad(); });
}

// ---- checkpoints -----------------------------------------------------------

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  std::ostringstream out;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config " << ckpt.config.size() << '\n';
  for (const auto& [k, v] : ckpt.config) {
    if (k.find_first_of(" \t\n=") != std::string::npos || v.find_first_of(" \t\n") != std::string::npos) {
      throw ConfigError("checkpoint config entries may not contain whitespace: '" + k + "'");
    }
    out << k << '=' << v << '\n';
  }
  out << "iteration " << ckpt.iteration << '\n';
  out << "tensors " << ckpt.tensors.size() << '\n';
  for (const auto& [name, t] : ckpt.tensors) {
    out << "tensor " << name << ' ' << t.rank();
    for (auto e : t.shape()) out << ' ' << e;
    out << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << format_double(t[i]);
    out << '\n';
  }
  out << "end\n";
  return out.str();
}

Checkpoint checkpoint_from_string(const std::string& text, const std::string& source) {
  LineReader r(text, source);
  Checkpoint ckpt;
  auto header = r.next_fields("header");
  if (header.size() != 2 || header[0] != kCheckpointMagic) r.fail("not a gar-checkpoint file");
  if (r.to_int(header[1]) != kCheckpointVersion) r.fail("unsupported checkpoint version");
  const std::size_t entries = r.to_uint(r.expect("config", 1)[0]);
  for (std::size_t i = 0; i < entries; ++i) {
    const std::string_view line = trim(r.next("config entry"));
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) r.fail("expected key=value");
    ckpt.config.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  ckpt.iteration = r.to_uint(r.expect("iteration", 1)[0]);
  const std::size_t count = r.to_uint(r.expect("tensors", 1)[0]);
  for (std::size_t k = 0; k < count; ++k) {
    auto head = r.next_fields("tensor header");
    if (head.size() < 3 || head[0] != "tensor") r.fail("expected 'tensor <name> <rank> <dims...>'");
    const std::size_t rank = r.to_uint(head[2]);
    if (head.size() != 3 + rank) r.fail("tensor rank does not match listed extents");
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) {
      shape.push_back(r.to_uint(head[3 + i]));
      if (shape.back() == 0) r.fail("zero tensor extent");
    }
    auto vals = r.next_fields("tensor values");
    if (vals.size() != shape_size(shape)) {
      r.fail("tensor '" + std::string(head[1]) + "' has " + std::to_string(vals.size()) + " values, expected " +
             std::to_string(shape_size(shape)));
    }
    std::vector<double> data;
    data.reserve(vals.size());
    for (auto v : vals) data.push_back(r.to_double(v));
    ckpt.tensors.emplace_back(std::string(head[1]), Tensor(std::move(shape), std::move(data)));
  }
  auto tail = r.next_fields("end");
  if (tail.size() != 1 || tail[0] != "end") r.fail("expected 'end'");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_string(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_string(read_file(path), path.string());
}

void store_weights(GarModel& model, Checkpoint& ckpt) {
  for (const auto& [k, v] : model.config().to_map()) ckpt.config[k] = v;
  model.for_each_parameter([&](Parameter& p) { ckpt.tensors.emplace_back(p.name, p.value); });
}

GarModel restore_model(const Checkpoint& ckpt) {
  GarModel model(ModelConfig::from_map(ckpt.config), 0);
  model.for_each_parameter([&](Parameter& p) {
    const Tensor* t = ckpt.find(p.name);
    if (!t) throw DataError("checkpoint lacks tensor '" + p.name + "'");
    if (t->shape() != p.value.shape()) {
      throw DimensionError("checkpoint tensor '" + p.name + "' has shape " + shape_string(t->shape()) +
                           ", model expects " + shape_string(p.value.shape()));
    }
    p.value = *t;
  });
  return model;
}

}  // namespace gar
