#include "gar/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gar/error.hpp"
#include "gar/io.hpp"

namespace gar {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd-momentum"; }

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd-momentum" || s == "sgd") return OptimizerKind::kSgdMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

double LrSchedule::at(std::uint64_t iteration) const {
  if (steps.empty()) throw ConfigError("empty learning-rate schedule");
  double lr = steps.front().lr;
  for (const auto& s : steps) {
    if (s.iteration > iteration) break;
    lr = s.lr;
  }
  return lr;
}

void LrSchedule::validate() const {
  if (steps.empty()) throw ConfigError("empty learning-rate schedule");
  if (steps.front().iteration != 0) throw ConfigError("learning-rate schedule must start at iteration 0");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!(steps[i].lr >= 0.0) || !std::isfinite(steps[i].lr)) {
      throw ConfigError("learning rates must be finite and non-negative");
    }
    if (i && steps[i].iteration <= steps[i - 1].iteration) {
      throw ConfigError("learning-rate schedule iterations must be strictly increasing");
    }
  }
}

LrSchedule LrSchedule::parse(std::string_view text) {
  LrSchedule s;
  s.steps.clear();
  for (const auto& entry : split(text, ',')) {
    const auto colon = entry.find(':');
    if (colon == std::string::npos) throw ConfigError("schedule entry '" + entry + "' is not <iteration>:<lr>");
    try {
      s.steps.push_back({parse_uint(trim(std::string_view(entry).substr(0, colon))),
                         parse_double(trim(std::string_view(entry).substr(colon + 1)))});
    } catch (const ParseError& e) {
      throw ConfigError(std::string("schedule: ") + e.what());
    }
  }
  s.validate();
  return s;
}

std::string LrSchedule::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(steps[i].iteration) + ":" + format_double(steps[i].lr);
  }
  return out;
}

double lr_at(const LrSchedule& schedule, std::uint64_t iteration) { return schedule.at(iteration); }

TrainConfig TrainConfig::volleyball_protocol() {
  TrainConfig c;
  c.optimizer = OptimizerKind::kSgdMomentum;
  c.momentum = 0.9;
  c.schedule.steps = {{0, 0.01}, {10000, 0.001}};
  c.iterations = 20000;
  return c;
}

TrainConfig TrainConfig::collective_protocol() {
  TrainConfig c;
  c.optimizer = OptimizerKind::kAdam;
  c.schedule.steps = {{0, 1e-4}, {5000, 1e-5}, {10000, 1e-6}};
  c.iterations = 20000;
  return c;
}

std::size_t TrainConfig::batch_size(std::size_t submodel) const {
  return batch_sizes.size() == 1 ? batch_sizes[0] : batch_sizes.at(submodel);
}

void TrainConfig::validate() const {
  schedule.validate();
  if (batch_sizes.empty()) throw ConfigError("batch size missing");
  for (auto b : batch_sizes) {
    if (b == 0) throw ConfigError("batch size must be positive");
  }
  if (!(lambda_group >= 0.0 && lambda_action >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

LossTerms joint_loss(const Prediction& pred, std::size_t group_label, std::span<const std::size_t> action_labels,
                     double lambda_group, double lambda_action) {
  const std::size_t group[] = {group_label};
  Var activity = cross_entropy(pred.activity_logits, group);
  Var action = cross_entropy(pred.action_logits, action_labels);
  const Var terms[] = {activity, action};
  const double weights[] = {lambda_group, lambda_action};
  return {weighted_sum(terms, weights), activity, action};
}

namespace {

void check_grads(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->grad.shape() != p->value.shape()) throw UsageError("parameter '" + p->name + "' has no gradient");
  }
}

void ensure_slots(std::span<Parameter* const> params, std::vector<Tensor>& slots) {
  if (slots.size() == params.size()) return;
  if (!slots.empty()) throw UsageError("optimizer slot count does not match parameters");
  for (const Parameter* p : params) slots.emplace_back(p->value.shape());
}

}  // namespace

void sgd_momentum_step(std::span<Parameter* const> params, std::vector<Tensor>& velocity, double lr,
                       double momentum) {
  check_grads(params);
  ensure_slots(params, velocity);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& v = velocity[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum * v[i] + p.grad[i];
      p.value[i] -= lr * v[i];
    }
  }
}

void adam_step(std::span<Parameter* const> params, AdamSlots& slots, double lr, double beta1, double beta2,
               double eps) {
  check_grads(params);
  ensure_slots(params, slots.first);
  ensure_slots(params, slots.second);
  ++slots.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(slots.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(slots.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = slots.first[k];
    Tensor& v = slots.second[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

std::string loss_curve_csv(std::span<const LossRecord> curve) {
  std::string out = "iteration,lr,total_loss,activity_loss,action_loss\n";
  for (const auto& r : curve) {
    out += std::to_string(r.iteration) + "," + format_double(r.lr) + "," + format_double(r.total) + "," +
           format_double(r.activity) + "," + format_double(r.action) + "\n";
  }
  return out;
}

std::vector<LossRecord> parse_loss_curve_csv(const std::string& text) {
  LineReader r(text, "<loss-curve>");
  if (trim(r.next("header")) != "iteration,lr,total_loss,activity_loss,action_loss") r.fail("unexpected header");
  std::vector<LossRecord> out;
  while (!r.at_end()) {
    const auto line = trim(r.next("row"));
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) r.fail("expected 5 columns");
    out.push_back({r.to_uint(f[0]), r.to_double(f[1]), r.to_double(f[2]), r.to_double(f[3]), r.to_double(f[4])});
  }
  return out;
}

Trainer::Trainer(GarModel& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t subs = model_.config().num_submodels();
  if (cfg_.batch_sizes.size() != 1 && cfg_.batch_sizes.size() != subs) {
    throw ConfigError("batch_size must list one value or one per sub-model");
  }
  slots_.resize(subs);
  for (std::size_t m = 0; m < subs; ++m) {
    model_.for_each_parameter(m, [&](Parameter& p) { slots_[m].params.push_back(&p); });
    for (Parameter* p : slots_[m].params) {
      slots_[m].first.emplace_back(p->value.shape());
      if (cfg_.optimizer == OptimizerKind::kAdam) slots_[m].second.emplace_back(p->value.shape());
    }
  }
  cached_epoch_.assign(subs, UINT64_MAX);
  cached_order_.resize(subs);
}

std::size_t Trainer::sample_index(std::size_t submodel, std::uint64_t k, std::size_t n) {
  const std::uint64_t epoch = k / n;
  if (cached_epoch_[submodel] != epoch || cached_order_[submodel].size() != n) {
    auto& order = cached_order_[submodel];
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg_.seed, "shuffle/" + std::to_string(submodel) + "/" + std::to_string(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    cached_epoch_[submodel] = epoch;
  }
  return cached_order_[submodel][k % n];
}

LossRecord Trainer::step(const Dataset& data) {
  if (data.empty()) throw DataError("training dataset is empty");
  const double lr = cfg_.schedule.at(iteration_);
  LossRecord rec{iteration_, lr, 0.0, 0.0, 0.0};
  const std::size_t subs = slots_.size();
  const bool late = model_.config().fusion == FusionMode::kLate;
  for (std::size_t m = 0; m < subs; ++m) {
    const std::size_t batch = cfg_.batch_size(m);
    Rng dropout_rng(derive_seed(cfg_.seed, "dropout/" + std::to_string(m) + "/" + std::to_string(iteration_)));
    Graph g(Mode::kTraining, &dropout_rng);
    std::vector<Var> totals, activities, actions;
    try {
      for (std::size_t b = 0; b < batch; ++b) {
        const ActorScene& s = data.scenes[sample_index(m, iteration_ * batch + b, data.size())];
        Prediction p = late ? model_.forward_submodel(g, s, m) : model_.forward(g, s);
        LossTerms t = joint_loss(p, s.activity, s.actions, cfg_.lambda_group, cfg_.lambda_action);
        totals.push_back(t.total);
        activities.push_back(t.activity);
        actions.push_back(t.action);
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(iteration_) + ": " + e.what());
    }
    const std::vector<double> mean(batch, 1.0 / static_cast<double>(batch));
    Var loss = weighted_sum(totals, mean);
    const double total = loss.value()[0];
    if (!std::isfinite(total)) {
      throw NumericError("training diverged at iteration " + std::to_string(iteration_) + ": non-finite loss");
    }
    for (Parameter* p : slots_[m].params) p->zero_grad();
    try {
      g.backward(loss);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(iteration_) + ": " + e.what());
    }
    auto& sl = slots_[m];
    if (cfg_.optimizer == OptimizerKind::kSgdMomentum) {
      sgd_momentum_step(sl.params, sl.first, lr, cfg_.momentum);
    } else {
      AdamSlots adam{std::move(sl.first), std::move(sl.second), sl.adam_step};
      adam_step(sl.params, adam, lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);
      sl.first = std::move(adam.first);
      sl.second = std::move(adam.second);
      sl.adam_step = adam.step;
    }
    for (const Parameter* p : sl.params) {
      if (!p->value.all_finite()) {
        throw NumericError("training diverged at iteration " + std::to_string(iteration_) + ": parameter '" +
                           p->name + "' became non-finite");
      }
    }
    rec.total += total;
    rec.activity += weighted_sum(activities, mean).value()[0];
    rec.action += weighted_sum(actions, mean).value()[0];
  }
  rec.total /= static_cast<double>(subs);
  rec.activity /= static_cast<double>(subs);
  rec.action /= static_cast<double>(subs);
  ++iteration_;
  return rec;
}

std::vector<LossRecord> Trainer::run(const Dataset& data) {
  if (data.empty()) throw DataError("training dataset is empty");
  std::vector<LossRecord> curve;
  while (iteration_ < cfg_.iterations) curve.push_back(step(data));
  return curve;
}

void Trainer::save_state(Checkpoint& ckpt) const {
  ckpt.iteration = iteration_;
  for (std::size_t m = 0; m < slots_.size(); ++m) {
    const auto& sl = slots_[m];
    const std::string prefix = "optim" + std::to_string(m) + ".";
    ckpt.tensors.emplace_back(prefix + "adam_step",
                              Tensor({1}, std::vector<double>{static_cast<double>(sl.adam_step)}));
    for (std::size_t k = 0; k < sl.params.size(); ++k) {
      ckpt.tensors.emplace_back(prefix + "first." + sl.params[k]->name, sl.first[k]);
      if (!sl.second.empty()) ckpt.tensors.emplace_back(prefix + "second." + sl.params[k]->name, sl.second[k]);
    }
  }
}

void Trainer::load_state(const Checkpoint& ckpt) {
  iteration_ = ckpt.iteration;
  for (std::size_t m = 0; m < slots_.size(); ++m) {
    auto& sl = slots_[m];
    const std::string prefix = "optim" + std::to_string(m) + ".";
    auto fetch = [&](const std::string& name, Tensor& into) {
      const Tensor* t = ckpt.find(name);
      if (!t) throw DataError("checkpoint lacks optimizer slot '" + name + "'");
      if (t->shape() != into.shape()) throw DimensionError("optimizer slot '" + name + "' has the wrong shape");
      into = *t;
    };
    Tensor step({1});
    fetch(prefix + "adam_step", step);
    sl.adam_step = static_cast<std::uint64_t>(step[0]);
    for (std::size_t k = 0; k < sl.params.size(); ++k) {
      fetch(prefix + "first." + sl.params[k]->name, sl.first[k]);
      if (!sl.second.empty()) fetch(prefix + "second." + sl.params[k]->name, sl.second[k]);
    }
  }
}

TrainResult train(GarModel& model, const Dataset& data, const TrainConfig& cfg) {
  Trainer trainer(model, cfg);
  return {trainer.run(data)};
}

}  // namespace gar
