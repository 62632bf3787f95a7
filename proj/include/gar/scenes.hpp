#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gar/posenc.hpp"
#include "gar/random.hpp"
#include "gar/tensor.hpp"

namespace gar {

enum class LabelRule {
  // Group activity = (action of one key actor) x (side of the key actor).
  kKeyActorSide,
  // Group activity = the action most actors perform.
  kMajorityAction,
};

std::string to_string(LabelRule rule);
LabelRule parse_label_rule(std::string_view text);

struct SceneConfig {
  LabelRule rule = LabelRule::kKeyActorSide;
  std::size_t min_actors = 12;
  std::size_t max_actors = 12;
  std::size_t num_actions = 9;
  std::size_t num_activities = 8;
  // Feature width per branch: static, dynamic-rgb, dynamic-flow.
  std::vector<std::size_t> branch_dims{16, 16};
  double noise = 0.5;
  // How far each branch's confusable action pair collapses onto one
  // prototype: 0 keeps them distinct, 1 makes them identical in that branch.
  double branch_overlap = 0.0;
  // Leading feature dimensions that carry label signal in every branch; 0
  // means all of them. The remaining dimensions hold nuisance only.
  std::size_t signal_dims = 0;
  // Per-branch stdev of the nuisance dimensions; empty means none.
  std::vector<double> nuisance_noise;
  // Clip length; carried as metadata only.
  std::size_t frames = 10;
  std::uint64_t seed = 0;

  static SceneConfig volleyball_like();
  static SceneConfig collective_like();

  // Actions that can determine the group label.
  std::size_t num_key_actions() const;
  void validate() const;

  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

struct ActorScene {
  std::uint64_t id = 0;
  std::vector<Tensor> features;  // one N x f_b matrix per branch
  std::vector<BoxCenter> centers;
  std::vector<std::size_t> actions;
  std::size_t activity = 0;
  // Generator metadata used for analysis only; -1 when the rule has none.
  std::int64_t key_actor = -1;

  std::size_t num_actors() const { return actions.size(); }

  friend bool operator==(const ActorScene&, const ActorScene&) = default;
};

struct Dataset {
  SceneConfig config;
  std::vector<ActorScene> scenes;

  std::size_t size() const { return scenes.size(); }
  bool empty() const { return scenes.empty(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Group label of a key-actor scene: side * K + action of the key actor, with
// side 0 for x < 0.5 and K the number of key actions.
std::size_t key_actor_side_label(std::span<const std::size_t> actions, std::span<const BoxCenter> centers,
                                 std::size_t key_actor, std::size_t num_key_actions);

// Unique most frequent action; -1 when the top count is shared.
std::int64_t majority_action(std::span<const std::size_t> actions, std::size_t num_actions);

// The pair of key actions whose prototypes are pulled together in a branch.
std::pair<std::size_t, std::size_t> confusable_pair(std::size_t branch, std::size_t num_key_actions);

// Deterministic scene source. Prototypes are drawn once per branch from the
// config seed; each scene draws from a separate stream.
class SceneGenerator {
 public:
  explicit SceneGenerator(SceneConfig cfg);

  const SceneConfig& config() const { return cfg_; }
  // num_actions x f_b prototype matrix of one branch.
  const Tensor& prototypes(std::size_t branch) const { return prototypes_.at(branch); }

  ActorScene next(std::uint64_t id);
  Dataset generate(std::size_t count, std::uint64_t first_id = 0);

 private:
  void fill_features(ActorScene& scene);
  ActorScene next_key_actor(std::uint64_t id);
  ActorScene next_majority(std::uint64_t id);

  SceneConfig cfg_;
  std::vector<Tensor> prototypes_;
  Rng rng_;
};

Dataset generate_volleyball_like(const SceneConfig& cfg, std::size_t count);
Dataset generate_collective_like(const SceneConfig& cfg, std::size_t count);

void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(const std::string& text, const std::string& source = "<dataset>");
std::string dataset_to_string(const Dataset& data);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace gar
