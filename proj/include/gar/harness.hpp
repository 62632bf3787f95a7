#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gar/model.hpp"
#include "gar/scenes.hpp"
#include "gar/training.hpp"

namespace gar {

// Flat key=value configuration, one entry per line, '#' starts a comment.
// Unknown keys are rejected; keys of the form grid.<key> list alternatives
// separated by '|' for the ablation runner.
class RunConfig {
 public:
  RunConfig() = default;

  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);
  static const std::vector<std::string>& known_keys();

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }
  const std::map<std::string, std::vector<std::string>>& grid() const { return grid_; }

  std::uint64_t seed() const;
  SceneConfig scene_config() const;
  // Input widths and class counts come from the dataset the model will see.
  ModelConfig model_config(const SceneConfig& data) const;
  TrainConfig train_config() const;
  std::size_t count() const;
  double train_fraction() const;

  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::vector<std::string>> grid_;
};

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  void add(std::size_t truth, std::size_t predicted);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  double accuracy() const;

  std::string to_csv() const;
  static ConfusionMatrix from_csv(const std::string& text);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct SceneAttention {
  std::uint64_t scene_id = 0;
  std::int64_t key_actor = -1;
  // [sub-model][layer][head] N x N.
  std::vector<AttentionRecord> records;
};

struct EvalReport {
  std::size_t scenes = 0;
  std::size_t actors = 0;
  double group_accuracy = 0.0;
  double action_accuracy = 0.0;
  ConfusionMatrix group;
  ConfusionMatrix action;
  std::vector<SceneAttention> attention;

  std::string summary_csv() const;
};

struct Summary {
  std::size_t scenes = 0;
  std::size_t actors = 0;
  double group_accuracy = 0.0;
  double action_accuracy = 0.0;
};
Summary parse_summary_csv(const std::string& text);

// Inference-mode evaluation. keep_attention stores the attention of every scene.
EvalReport evaluate(GarModel& model, const Dataset& data, bool keep_attention = false);

// Column (actor) receiving the largest mean attention across query rows,
// averaged over the matrices given.
std::size_t top_attended_actor(const std::vector<Tensor>& matrices);
// All layer/head matrices of one scene, flattened.
std::vector<Tensor> attention_matrices(const SceneAttention& a);

std::string matrix_csv(const Tensor& m);
Tensor parse_matrix_csv(const std::string& text);

// ---- commands --------------------------------------------------------------

struct GenerateOutput {
  Dataset train;
  Dataset test;
};

// Generates count scenes with ids 0..count-1 and splits them by id into a
// train prefix of round(count * train_fraction) scenes and a test remainder.
GenerateOutput make_splits(const RunConfig& cfg);
GenerateOutput cmd_generate(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainOutput {
  Checkpoint checkpoint;
  std::vector<LossRecord> curve;
};

// Trains on cfg's train_data (or freshly generated splits) and writes
// checkpoint.txt and loss.csv. A resume checkpoint continues its iteration
// counter and optimizer state.
TrainOutput cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                      const std::optional<std::filesystem::path>& resume = std::nullopt);

// Writes summary.csv, confusion_group.csv and confusion_action.csv.
EvalReport cmd_evaluate(const std::filesystem::path& checkpoint, const Dataset& data,
                        const std::filesystem::path& out_dir);

struct AblationRow {
  std::string key;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> settings;
  double group_accuracy = 0.0;
  double action_accuracy = 0.0;
};

// Cartesian product over the grid.* entries; each cell trains on the shared
// train split and reports test accuracy. Rows are sorted by config key and
// written to ablation.csv.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out_dir);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct AttentionSummaryRow {
  std::uint64_t scene_id = 0;
  std::size_t actors = 0;
  std::int64_t key_actor = -1;
  std::size_t top_actor = 0;
};

// Writes attention/scene<id>_sub<m>_layer<l>_head<h>.csv per requested scene
// (all scenes when ids is empty) and attention_summary.csv.
std::vector<AttentionSummaryRow> cmd_attention_dump(const std::filesystem::path& checkpoint, const Dataset& data,
                                                    const std::vector<std::uint64_t>& scene_ids,
                                                    const std::filesystem::path& out_dir);

}  // namespace gar
