// Command-line front end: generate, train, evaluate, ablate, attention-dump.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gar/error.hpp"
#include "gar/harness.hpp"
#include "gar/io.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string data;
  std::string scenes;
};

gar::RunConfig load_config(const Options& o) {
  gar::RunConfig cfg = o.config.empty() ? gar::RunConfig() : gar::RunConfig::load(o.config);
  if (o.seed) cfg.set("seed", std::to_string(*o.seed));
  return cfg;
}

gar::Dataset eval_data(const Options& o, const gar::RunConfig& cfg) {
  if (!o.data.empty()) return gar::load_dataset(o.data);
  if (cfg.has("test_data")) return gar::load_dataset(cfg.get("test_data"));
  throw gar::ConfigError("no dataset: pass --data or set test_data in the config");
}

std::vector<std::uint64_t> scene_ids(const Options& o, const gar::RunConfig& cfg) {
  std::string text = o.scenes.empty() && cfg.has("scene_ids") ? cfg.get("scene_ids") : o.scenes;
  std::vector<std::uint64_t> ids;
  if (text.empty()) return ids;
  for (const auto& f : gar::split(text, ',')) ids.push_back(gar::parse_uint(f));
  return ids;
}

void require_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw gar::ConfigError("--checkpoint is required");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Actor-transformer group activity recognition on synthetic multi-actor scenes"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value configuration file");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "root seed (overrides the config)");
  };

  auto* generate = app.add_subcommand("generate", "write train.txt and test.txt");
  add_common(generate);

  auto* train = app.add_subcommand("train", "train a model, write checkpoint.txt and loss.csv");
  add_common(train);
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "accuracy summary and confusion matrices");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", o.checkpoint, "trained checkpoint");
  evaluate->add_option("--data", o.data, "dataset file (default: test_data from the config)");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate every grid.<key> combination");
  add_common(ablate);

  auto* dump = app.add_subcommand("attention-dump", "write per-scene attention matrices");
  add_common(dump);
  dump->add_option("--checkpoint", o.checkpoint, "trained checkpoint");
  dump->add_option("--data", o.data, "dataset file (default: test_data from the config)");
  dump->add_option("--scenes", o.scenes, "comma-separated scene ids (default: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    const gar::RunConfig cfg = load_config(o);
    const fs::path out(o.out);
    if (generate->parsed()) {
      const auto splits = gar::cmd_generate(cfg, out);
      std::printf("wrote %zu train and %zu test scenes to %s\n", splits.train.size(), splits.test.size(),
                  out.string().c_str());
    } else if (train->parsed()) {
      std::optional<fs::path> resume;
      if (!o.checkpoint.empty()) resume = o.checkpoint;
      const auto result = gar::cmd_train(cfg, out, resume);
      if (!result.curve.empty()) {
        std::printf("trained to iteration %llu, final loss %.6f\n",
                    static_cast<unsigned long long>(result.checkpoint.iteration), result.curve.back().total);
      } else {
        std::printf("checkpoint already at iteration %llu\n",
                    static_cast<unsigned long long>(result.checkpoint.iteration));
      }
    } else if (evaluate->parsed()) {
      require_checkpoint(o);
      const auto rep = gar::cmd_evaluate(o.checkpoint, eval_data(o, cfg), out);
      std::printf("group_accuracy %.6f action_accuracy %.6f over %zu scenes\n", rep.group_accuracy,
                  rep.action_accuracy, rep.scenes);
    } else if (ablate->parsed()) {
      for (const auto& row : gar::cmd_ablate(cfg, out)) {
        std::printf("%-60s seed %llu group %.4f action %.4f\n", row.key.c_str(),
                    static_cast<unsigned long long>(row.seed), row.group_accuracy, row.action_accuracy);
      }
    } else if (dump->parsed()) {
      require_checkpoint(o);
      const auto rows = gar::cmd_attention_dump(o.checkpoint, eval_data(o, cfg), scene_ids(o, cfg), out);
      std::size_t hits = 0, known = 0;
      for (const auto& r : rows) {
        if (r.key_actor < 0) continue;
        ++known;
        hits += static_cast<std::size_t>(r.key_actor) == r.top_actor;
      }
      std::printf("dumped attention for %zu scenes", rows.size());
      if (known) std::printf("; key actor most attended in %zu/%zu", hits, known);
      std::printf("\n");
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
