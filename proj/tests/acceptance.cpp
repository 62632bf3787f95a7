// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria unless --report-only is given.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gar/harness.hpp"
#include "gar/io.hpp"
#include "gradcheck.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace gar;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Width used by the multi-seed trend experiments; the learnability check
// runs at the default width of 128.
constexpr std::size_t kTrendWidth = 32;
constexpr std::uint64_t kTrendIterations = 1500;

ModelConfig model_config(std::size_t d) {
  ModelConfig m;
  m.encoder.attention.d_model = d;
  m.encoder.d_ff = 2 * d;
  return m;
}

TrainConfig adam(std::uint64_t iterations, std::uint64_t seed) {
  TrainConfig t;
  t.optimizer = OptimizerKind::kAdam;
  t.schedule = LrSchedule::parse("0:0.001");
  t.batch_sizes = {16};
  t.iterations = iterations;
  t.seed = seed;
  return t;
}

struct Split {
  Dataset train, test;
};

Split volleyball_split(SceneConfig sc) {
  SceneGenerator gen(sc);
  return {gen.generate(4000), gen.generate(1000, 4000)};
}

double train_and_score(const ModelConfig& mc, const Split& data, std::uint64_t seed) {
  GarModel m(mc, derive_seed(seed, "init"));
  train(m, data.train, adam(kTrendIterations, seed));
  return evaluate(m, data.test).group_accuracy;
}

// ---- 1 ---------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig mc = model_config(8);
  mc.encoder.num_layers = 1;
  mc.encoder.attention.num_heads = 2;
  mc.encoder.dropout = 0.0;
  mc.input_branches = {0, 1};
  mc.input_dims = {16, 16};
  mc.fusion = FusionMode::kLate;
  SceneConfig sc;
  sc.min_actors = sc.max_actors = 3;
  sc.seed = 17;
  SceneGenerator gen(sc);
  double worst = 0.0;
  std::size_t checked = 0, failures = 0;
  std::string where;
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    GarModel model(mc, 100 + trial);
    const ActorScene scene = gen.next(trial);
    auto loss = [&](Graph& g) {
      return joint_loss(model.forward(g, scene), scene.activity, scene.actions, 1.0, 1.0).total;
    };
    const auto r = testing::grad_check(loss, model.parameters());
    checked += r.checked;
    failures += r.failures;
    if (r.max_rel_error > worst) worst = r.max_rel_error, where = r.worst;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0,
          fmt("%zu gradient entries over 3 scenes, max rel err %.3g (<= 1e-4), %zu over tolerance, %.1f s (< 60 s)%s%s",
              checked, worst, failures, secs, failures ? "; worst " : "", failures ? where.c_str() : "")};
}

// ---- 2 ---------------------------------------------------------------------

Verdict equation_fidelity() {
  Graph g;
  const Tensor id = Tensor::identity(2);
  const Tensor out = attention(g.constant(id), g.constant(id), g.constant(id)).value();
  const double e = std::exp(1.0 / std::sqrt(2.0));
  const double w0 = e / (e + 1.0), w1 = 1.0 / (e + 1.0);
  const double att_err = std::max({std::abs(out.at(0, 0) - w0), std::abs(out.at(0, 1) - w1),
                                   std::abs(out.at(1, 0) - w1), std::abs(out.at(1, 1) - w0)});

  Rng rng(5);
  double enc_err = 0.0;
  for (std::size_t heads : {1, 2, 4}) {
    EncoderConfig ec;
    ec.attention.d_model = 8;
    ec.attention.num_heads = heads;
    ec.d_ff = 16;
    auto w = EncoderLayerWeights::init(ec, rng, "l");
    testing::randomize(w, rng);
    const Tensor s = testing::random_tensor({5, 8}, rng);
    Graph h;
    const Tensor got = encoder_layer(h.constant(s), w, 0.1).value();
    enc_err = std::max(enc_err, max_abs_diff(got, oracle::to_tensor(oracle::encoder_layer(oracle::to_mat(s), w))));
  }

  Graph k;
  Prediction p{k.constant(Tensor({12, 9})), k.constant(Tensor({1, 8})), {}};
  const std::vector<std::size_t> actions(12, 0);
  const double loss = joint_loss(p, 0, actions, 1.0, 1.0).total.value()[0];
  const double loss_err = std::abs(loss - (std::log(8.0) + std::log(9.0)));

  return {att_err <= 1e-4 && enc_err <= 1e-10 && loss_err <= 1e-4,
          fmt("attention row0 [%.6f, %.6f] vs scalar evaluation [%.6f, %.6f] err %.2g (<= 1e-4); "
              "encoder layer vs straight-line oracle err %.2g (<= 1e-10); joint loss %.6f vs log 8 + log 9 err %.2g",
              out.at(0, 0), out.at(0, 1), w0, w1, att_err, enc_err, loss, loss_err)};
}

// ---- 3 ---------------------------------------------------------------------

Verdict invariance_suite() {
  Rng rng(2024);
  int group_ok = 0, stochastic_ok = 0, pool_ok = 0, equiv_ok = 0;
  double group_worst = 0.0, stoch_worst = 0.0, equiv_worst = 0.0;
  const FusionMode fusions[] = {FusionMode::kNone, FusionMode::kEarlySum, FusionMode::kEarlyConcat,
                                FusionMode::kLate};
  for (int t = 0; t < 100; ++t) {
    ModelConfig mc = model_config(8);
    mc.encoder.attention.num_heads = 1 + rng.below(2);
    mc.encoder.num_layers = 1 + rng.below(2);
    mc.fusion = fusions[t % 4];
    if (mc.fusion != FusionMode::kNone) {
      mc.input_branches = {0, 1};
      mc.input_dims = {6, 6};
    } else {
      mc.input_dims = {6};
    }
    GarModel m(mc, 1000 + t);
    const std::size_t n = 1 + rng.below(12);
    ActorScene s;
    for (std::size_t b = 0; b < mc.input_branches.size(); ++b) s.features.push_back(testing::random_tensor({n, 6}, rng));
    for (std::size_t i = 0; i < n; ++i) s.centers.push_back({rng.uniform(), rng.uniform()});
    const auto perm = testing::random_permutation(n, rng);
    ActorScene q = s;
    for (std::size_t b = 0; b < s.features.size(); ++b) q.features[b] = testing::permute_rows(s.features[b], perm);
    for (std::size_t i = 0; i < n; ++i) q.centers[i] = s.centers[perm[i]];
    Graph g;
    Prediction a = m.forward(g, s, true), c = m.forward(g, q);
    const double d = max_abs_diff(a.activity_logits.value(), c.activity_logits.value());
    group_worst = std::max(group_worst, d);
    group_ok += d <= 1e-9;

    double row_err = 0.0;
    for (const auto& rec : a.attention)
      for (const auto& layer : rec.layers)
        for (const auto& mat : layer)
          for (std::size_t i = 0; i < mat.rows(); ++i) {
            double sum = 0.0;
            bool nonneg = true;
            for (double v : mat.row(i)) sum += v, nonneg &= v >= 0.0;
            row_err = std::max(row_err, nonneg ? std::abs(sum - 1.0) : 1.0);
          }
    stoch_worst = std::max(stoch_worst, row_err);
    stochastic_ok += row_err <= 1e-9;

    const Tensor x = testing::random_tensor({n, 5}, rng);
    Graph h;
    pool_ok += max_over_set(h.constant(x)).value() == max_over_set(h.constant(testing::permute_rows(x, perm))).value();

    EncoderConfig ec = mc.encoder;
    std::vector<EncoderLayerWeights> layers;
    for (std::size_t l = 0; l < ec.num_layers; ++l) layers.push_back(EncoderLayerWeights::init(ec, rng, "l"));
    const Tensor e = testing::random_tensor({n, 8}, rng);
    const double ed = max_abs_diff(testing::permute_rows(encode(h.constant(e), layers, 0.1).value(), perm),
                                   encode(h.constant(testing::permute_rows(e, perm)), layers, 0.1).value());
    equiv_worst = std::max(equiv_worst, ed);
    equiv_ok += ed <= 1e-9;
  }
  return {group_ok == 100 && stochastic_ok == 100 && pool_ok == 100 && equiv_ok == 100,
          fmt("group logits %d/100 (worst %.2g), attention rows %d/100 (worst %.2g), max-pool exact %d/100, "
              "PE-off equivariance %d/100 (worst %.2g)",
              group_ok, group_worst, stochastic_ok, stoch_worst, pool_ok, equiv_ok, equiv_worst)};
}

// ---- 4 ---------------------------------------------------------------------

Verdict learnability() {
  const auto t0 = std::chrono::steady_clock::now();
  SceneConfig sc = SceneConfig::volleyball_like();
  sc.seed = 41;
  const Split data = volleyball_split(sc);
  GarModel m(model_config(128), derive_seed(1, "init"));
  Trainer trainer(m, adam(5000, 1));
  double acc = 0.0;
  while (trainer.iteration() < 5000 && seconds_since(t0) < 300.0) {
    for (int k = 0; k < 250; ++k) trainer.step(data.train);
    acc = evaluate(m, data.test).group_accuracy;
    if (acc >= 0.90) break;
  }
  const double secs = seconds_since(t0);
  return {acc >= 0.90 && secs < 300.0,
          fmt("d_model 128, 12 actors, 8 activities, noise 0.5, 4000/1000 scenes: group accuracy %.3f (>= 0.90) "
              "at iteration %llu (<= 5000), %.1f s (< 300 s)",
              acc, static_cast<unsigned long long>(trainer.iteration()), secs)};
}

// ---- 5, 6 --------------------------------------------------------------------

Verdict paired_trend(const char* what, const std::function<void(ModelConfig&)>& weaken) {
  double better = 0.0, worse = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    SceneConfig sc = SceneConfig::volleyball_like();
    sc.seed = derive_seed(seed, "data");
    const Split data = volleyball_split(sc);
    ModelConfig full = model_config(kTrendWidth), reduced = full;
    weaken(reduced);
    const double a = train_and_score(full, data, seed), b = train_and_score(reduced, data, seed);
    better += a / 3.0;
    worse += b / 3.0;
    per_seed += fmt("%s%.3f/%.3f", seed == 1 ? "" : " ", a, b);
  }
  const double gap = 100.0 * (better - worse);
  return {gap >= 5.0, fmt("%s: %.1f%% vs %.1f%%, gap %.1f points (>= 5) over 3 seeds [%s]", what, 100.0 * better,
                          100.0 * worse, gap, per_seed.c_str())};
}

// ---- 7 ---------------------------------------------------------------------

Verdict fusion_trend() {
  const char* names[] = {"static", "dynamic", "early-sum", "early-concat", "late"};
  double acc[5] = {};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    SceneConfig sc = SceneConfig::volleyball_like();
    sc.branch_overlap = 1.0;
    sc.seed = derive_seed(seed, "data");
    const Split data = volleyball_split(sc);
    for (int v = 0; v < 5; ++v) {
      ModelConfig mc = model_config(kTrendWidth);
      if (v < 2) {
        mc.input_branches = {static_cast<std::size_t>(v)};
      } else {
        mc.input_branches = {0, 1};
        mc.input_dims = {16, 16};
        mc.fusion = v == 2 ? FusionMode::kEarlySum : v == 3 ? FusionMode::kEarlyConcat : FusionMode::kLate;
      }
      acc[v] += train_and_score(mc, data, seed) / 3.0;
    }
  }
  const double late = 100.0 * acc[4];
  const double best_single = 100.0 * std::max(acc[0], acc[1]);
  const double best_early = 100.0 * std::max(acc[2], acc[3]);
  std::string table;
  for (int v = 0; v < 5; ++v) table += fmt("%s%s %.1f%%", v ? ", " : "", names[v], 100.0 * acc[v]);
  return {late - best_single >= 2.0 && late - best_early >= 2.0,
          fmt("%s; late - best single %+.1f points (>= 2), late - best early %+.1f points (>= 2)", table.c_str(),
              late - best_single, late - best_early)};
}

// ---- 8 ---------------------------------------------------------------------

Verdict attention_on_key_actor() {
  SceneConfig sc = SceneConfig::volleyball_like();
  sc.noise = 0.0;
  sc.seed = 77;
  const Split data = volleyball_split(sc);
  GarModel m(model_config(kTrendWidth), derive_seed(1, "init"));
  train(m, data.train, adam(kTrendIterations, 1));
  const EvalReport rep = evaluate(m, data.test, true);
  std::size_t hits = 0;
  for (const auto& a : rep.attention) hits += top_attended_actor(attention_matrices(a)) == static_cast<std::size_t>(a.key_actor);
  const double frac = static_cast<double>(hits) / static_cast<double>(rep.attention.size());
  return {frac >= 0.80, fmt("key actor has the largest mean attention in %zu/%zu noiseless test scenes = %.1f%% (>= 80%%), "
                            "group accuracy %.3f",
                            hits, rep.attention.size(), 100.0 * frac, rep.group_accuracy)};
}

// ---- 9 ---------------------------------------------------------------------

Verdict determinism() {
#ifdef GAR_CLI_PATH
  const fs::path root = fs::temp_directory_path() / "gar_acceptance_determinism";
  fs::remove_all(root);
  const std::string cfg_text =
      "num_actors=6\ncount=200\nd_model=16\nd_ff=32\nnum_heads=2\niterations=150\nbatch_size=8\nseed=12\n";
  write_file_atomic(root / "run.cfg", cfg_text);
  const char* files[] = {"checkpoint.txt", "loss.csv", "summary.csv", "confusion_group.csv", "confusion_action.csv"};
  std::vector<std::string> contents[2];
  bool ran = true;
  for (int run = 0; run < 2; ++run) {
    const fs::path out = root / ("run" + std::to_string(run));
    fs::create_directories(out);
    const std::string base = std::string(GAR_CLI_PATH) + " %s --config \"" + (root / "run.cfg").string() +
                             "\" --out \"" + out.string() + "\"";
    const std::string gen = fmt(base.c_str(), "generate") + " > /dev/null";
    const std::string tr = fmt(base.c_str(), "train") + " > /dev/null";
    const std::string ev = fmt(base.c_str(), "evaluate") + " --checkpoint \"" + (out / "checkpoint.txt").string() +
                           "\" --data \"" + (out / "test.txt").string() + "\" > /dev/null";
    ran &= std::system(gen.c_str()) == 0 && std::system(tr.c_str()) == 0 && std::system(ev.c_str()) == 0;
    for (const char* f : files) contents[run].push_back(ran ? read_file(out / f) : std::string());
  }
  fs::remove_all(root);
  std::size_t same = 0;
  for (std::size_t i = 0; i < contents[0].size(); ++i) same += ran && contents[0][i] == contents[1][i];
  return {ran && same == contents[0].size(),
          fmt("two CLI train+evaluate runs: %zu/%zu artifacts byte-identical (checkpoint, loss curve, summary, "
              "both confusion matrices)%s",
              same, contents[0].size(), ran ? "" : "; a command failed")};
#else
  return {false, "command-line tool not built"};
#endif
}

}  // namespace

int main(int argc, char** argv) {
  bool report_only = false;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--report-only") == 0) {
      report_only = true;
    } else {
      only.push_back(std::atoi(argv[i]));
    }
  }
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "equation fidelity", equation_fidelity},
      {3, "invariance suite", invariance_suite},
      {4, "learnability", learnability},
      {5, "positional encoding trend",
       [] { return paired_trend("PE on vs off", [](ModelConfig& m) { m.use_pe = false; }); }},
      {6, "aggregation trend",
       [] {
         return paired_trend("transformer vs no-encoder baseline",
                             [](ModelConfig& m) { m.aggregation = Aggregation::kNone; });
       }},
      {7, "fusion trend", fusion_trend},
      {8, "attention on key actor", attention_on_key_actor},
      {9, "determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s  criterion %d (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return report_only ? 0 : failed;
}
