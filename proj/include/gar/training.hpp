#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gar/autodiff.hpp"
#include "gar/model.hpp"
#include "gar/scenes.hpp"

namespace gar {

enum class OptimizerKind { kSgdMomentum, kAdam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

// Piecewise-constant learning rate: entry (i, lr) applies from iteration i
// until the next entry. The first entry must start at iteration 0.
struct LrSchedule {
  struct Step {
    std::uint64_t iteration = 0;
    double lr = 0.0;
    friend bool operator==(const Step&, const Step&) = default;
  };
  std::vector<Step> steps{{0, 0.01}};

  double at(std::uint64_t iteration) const;
  void validate() const;
  // "0:0.01,10000:0.001"
  static LrSchedule parse(std::string_view text);
  std::string to_string() const;

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

double lr_at(const LrSchedule& schedule, std::uint64_t iteration);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-10;
  LrSchedule schedule{{{0, 0.01}, {10000, 0.001}}};
  // Batch size per sub-model; a single entry applies to all.
  std::vector<std::size_t> batch_sizes{16};
  std::uint64_t iterations = 20000;
  double lambda_group = 1.0;
  double lambda_action = 1.0;
  std::uint64_t seed = 0;

  // SGD with momentum 0.9, lr 0.01 then 0.001 after 10k of 20k iterations.
  static TrainConfig volleyball_protocol();
  // Adam (0.9, 0.999), lr 1e-4 divided by ten after 5k and 10k iterations.
  static TrainConfig collective_protocol();

  std::size_t batch_size(std::size_t submodel) const;
  void validate() const;
};

struct LossTerms {
  Var total;
  Var activity;
  Var action;
};

// lambda_g * CE(activity) + lambda_a * mean over actors of CE(action).
LossTerms joint_loss(const Prediction& pred, std::size_t group_label, std::span<const std::size_t> action_labels,
                     double lambda_group, double lambda_action);

// v <- momentum * v + g; w <- w - lr * v.
void sgd_momentum_step(std::span<Parameter* const> params, std::vector<Tensor>& velocity, double lr,
                       double momentum);

struct AdamSlots {
  std::vector<Tensor> first;
  std::vector<Tensor> second;
  std::uint64_t step = 0;
};

// Bias-corrected Adam update.
void adam_step(std::span<Parameter* const> params, AdamSlots& slots, double lr, double beta1, double beta2,
               double eps);

struct LossRecord {
  std::uint64_t iteration = 0;
  double lr = 0.0;
  double total = 0.0;
  double activity = 0.0;
  double action = 0.0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

std::string loss_curve_csv(std::span<const LossRecord> curve);
std::vector<LossRecord> parse_loss_curve_csv(const std::string& text);

// Mini-batch optimisation of the joint loss. Late-fusion sub-models are
// optimised independently, each with its own batch size and sampler. Sample
// order and dropout masks are functions of (seed, iteration), so a run
// resumed from a checkpoint continues exactly where it stopped.
class Trainer {
 public:
  Trainer(GarModel& model, TrainConfig cfg);

  std::uint64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }

  // One optimisation step on every sub-model; the record averages sub-models.
  LossRecord step(const Dataset& data);
  // Runs until config().iterations steps have been taken in total.
  std::vector<LossRecord> run(const Dataset& data);

  void save_state(Checkpoint& ckpt) const;
  void load_state(const Checkpoint& ckpt);

 private:
  struct Slots {
    std::vector<Parameter*> params;
    std::vector<Tensor> first;   // velocity or first moment
    std::vector<Tensor> second;  // Adam only
    std::uint64_t adam_step = 0;
  };

  std::size_t sample_index(std::size_t submodel, std::uint64_t k, std::size_t n);

  GarModel& model_;
  TrainConfig cfg_;
  std::vector<Slots> slots_;
  std::uint64_t iteration_ = 0;
  // Cached epoch permutation per sub-model.
  std::vector<std::uint64_t> cached_epoch_;
  std::vector<std::vector<std::size_t>> cached_order_;
};

struct TrainResult {
  std::vector<LossRecord> curve;
};

TrainResult train(GarModel& model, const Dataset& data, const TrainConfig& cfg);

}  // namespace gar
