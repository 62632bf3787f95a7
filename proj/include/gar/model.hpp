#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gar/autodiff.hpp"
#include "gar/posenc.hpp"
#include "gar/scenes.hpp"
#include "gar/transformer.hpp"

namespace gar {

enum class FusionMode { kNone, kEarlySum, kEarlyConcat, kLate };
// kNone skips the encoder: embed -> max-pool -> classifiers.
enum class Aggregation { kTransformer, kNone };
// Where positional encoding enters: after the (fused) embedding, after each
// branch embedding but before early fusion, or on the raw features.
enum class PePlacement { kAfterFusion, kPerBranch, kRawFeatures };

std::string to_string(FusionMode m);
std::string to_string(Aggregation a);
std::string to_string(PePlacement p);
FusionMode parse_fusion_mode(std::string_view s);
Aggregation parse_aggregation(std::string_view s);
PePlacement parse_pe_placement(std::string_view s);

struct ModelConfig {
  // Dataset branches consumed by the model and their feature widths.
  std::vector<std::size_t> input_branches{0};
  std::vector<std::size_t> input_dims{16};
  std::size_t num_actions = 9;
  std::size_t num_activities = 8;
  EncoderConfig encoder;
  Aggregation aggregation = Aggregation::kTransformer;
  bool use_pe = true;
  double pe_scale = kDefaultPositionScale;
  PePlacement pe_placement = PePlacement::kAfterFusion;
  FusionMode fusion = FusionMode::kNone;
  // Late-fusion class-probability weights, one per input branch.
  std::vector<double> late_weights{2.0, 1.0};

  std::size_t d_model() const { return encoder.attention.d_model; }
  // Number of independently weighted sub-models (input count for late fusion).
  std::size_t num_submodels() const { return fusion == FusionMode::kLate ? input_branches.size() : 1; }
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Parameters of one embed -> encode -> classify stack. Holds one embedding
// per fused input; early-concat adds a projection back to d_model.
struct BranchWeights {
  std::vector<Parameter> embed_weight;
  std::vector<Parameter> embed_bias;
  Parameter concat_projection;  // early-concat only
  std::vector<EncoderLayerWeights> layers;
  Parameter action_weight, action_bias;
  Parameter activity_weight, activity_bias;

  void for_each_parameter(const std::function<void(Parameter&)>& fn);
};

// Graph-level output. Logits of late fusion are log class probabilities of
// the weighted mixture, so cross_entropy and argmax apply unchanged.
struct Prediction {
  Var action_logits;    // N x num_actions
  Var activity_logits;  // 1 x num_activities
  std::vector<AttentionRecord> attention;  // one per sub-model, when requested
};

struct Decision {
  std::size_t activity = 0;
  std::vector<std::size_t> actions;
};

// Argmax per head; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);
Decision predict(const Prediction& pred);
Decision predict(const Tensor& action_logits, const Tensor& activity_logits);

// Linear projection of N x f features to N x d.
Var embed(Var features, Var weight, Var bias);

class GarModel {
 public:
  GarModel() = default;
  GarModel(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<BranchWeights>& submodels() { return submodels_; }

  // Full model, fusing inputs as configured.
  Prediction forward(Graph& g, const ActorScene& scene, bool record_attention = false);
  // One late-fusion sub-model on its own input (sub-model 0 otherwise).
  Prediction forward_submodel(Graph& g, const ActorScene& scene, std::size_t index,
                              bool record_attention = false);

  void for_each_parameter(const std::function<void(Parameter&)>& fn);
  void for_each_parameter(std::size_t submodel, const std::function<void(Parameter&)>& fn);
  std::vector<Parameter*> parameters();
  void zero_grad();

 private:
  // Embedded-and-encoded forward through one sub-model over the given inputs.
  Prediction run(Graph& g, BranchWeights& w, std::span<const Tensor* const> inputs,
                 std::span<const BoxCenter> centers, bool record_attention);

  ModelConfig cfg_;
  std::vector<BranchWeights> submodels_;
};

// Named tensors plus string metadata; written as text with shortest
// round-trip number formatting so values reload bit-exactly.
struct Checkpoint {
  std::map<std::string, std::string> config;
  std::uint64_t iteration = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text, const std::string& source = "<checkpoint>");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every parameter value into ckpt.tensors under its name.
void store_weights(GarModel& model, Checkpoint& ckpt);
// Rebuilds a model from the config entries and tensors of ckpt.
GarModel restore_model(const Checkpoint& ckpt);

}  // namespace gar
