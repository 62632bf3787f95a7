#include "gar/scenes.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

#include "gar/error.hpp"
#include "gar/io.hpp"

namespace gar {

namespace {

constexpr std::string_view kDatasetMagic = "gar-dataset";
constexpr int kDatasetVersion = 1;

constexpr double kMargin = 0.02;

}  // namespace

std::string to_string(LabelRule rule) {
  return rule == LabelRule::kKeyActorSide ? "key-actor-side" : "majority-action";
}

LabelRule parse_label_rule(std::string_view text) {
  if (text == "key-actor-side") return LabelRule::kKeyActorSide;
  if (text == "majority-action") return LabelRule::kMajorityAction;
  throw ConfigError("unknown label rule '" + std::string(text) + "'");
}

SceneConfig SceneConfig::volleyball_like() { return SceneConfig{}; }

SceneConfig SceneConfig::collective_like() {
  SceneConfig cfg;
  cfg.rule = LabelRule::kMajorityAction;
  cfg.min_actors = 2;
  cfg.max_actors = 12;
  cfg.num_actions = 5;
  cfg.num_activities = 5;
  return cfg;
}

std::size_t SceneConfig::num_key_actions() const {
  return rule == LabelRule::kKeyActorSide ? num_activities / 2 : num_actions;
}

void SceneConfig::validate() const {
  if (min_actors < 1 || max_actors < min_actors) throw ConfigError("actor count range must satisfy 1 <= min <= max");
  if (num_actions < 2 || num_activities < 2) throw ConfigError("need at least two actions and two activities");
  if (branch_dims.empty() || branch_dims.size() > 3) throw ConfigError("between one and three branches are supported");
  for (auto d : branch_dims) {
    if (d < 4) throw ConfigError("branch feature dimension must be at least 4");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (!(branch_overlap >= 0.0 && branch_overlap <= 1.0)) throw ConfigError("branch_overlap must lie in [0, 1]");
  for (auto d : branch_dims) {
    if (signal_dims > d) throw ConfigError("signal_dims exceeds a branch feature dimension");
  }
  if (!nuisance_noise.empty() && nuisance_noise.size() != branch_dims.size()) {
    throw ConfigError("nuisance_noise must list one value per branch");
  }
  for (double v : nuisance_noise) {
    if (!(v >= 0.0)) throw ConfigError("nuisance_noise must be non-negative");
  }
  if (rule == LabelRule::kKeyActorSide) {
    if (num_activities % 2 != 0) throw ConfigError("key-actor-side rule needs an even number of activities");
    if (num_actions <= num_activities / 2) {
      throw ConfigError("key-actor-side rule needs more actions than activities/2 (background actions)");
    }
  } else if (num_activities != num_actions) {
    throw ConfigError("majority-action rule needs num_activities == num_actions");
  }
}

std::size_t key_actor_side_label(std::span<const std::size_t> actions, std::span<const BoxCenter> centers,
                                 std::size_t key_actor, std::size_t num_key_actions) {
  if (key_actor >= actions.size() || centers.size() != actions.size()) throw DataError("invalid key actor");
  const std::size_t side = centers[key_actor].x < 0.5 ? 0 : 1;
  return side * num_key_actions + actions[key_actor];
}

std::int64_t majority_action(std::span<const std::size_t> actions, std::size_t num_actions) {
  std::vector<std::size_t> counts(num_actions, 0);
  for (auto a : actions) ++counts.at(a);
  const auto best = std::max_element(counts.begin(), counts.end());
  if (std::count(counts.begin(), counts.end(), *best) != 1) return -1;
  return best - counts.begin();
}

std::pair<std::size_t, std::size_t> confusable_pair(std::size_t branch, std::size_t num_key_actions) {
  const std::size_t first = (2 * branch + branch / 2) % num_key_actions;
  return {first, (first + 1) % num_key_actions};
}

SceneGenerator::SceneGenerator(SceneConfig cfg) : cfg_(std::move(cfg)), rng_(derive_seed(cfg_.seed, "scenes")) {
  cfg_.validate();
  Rng proto_rng(derive_seed(cfg_.seed, "prototypes"));
  for (std::size_t b = 0; b < cfg_.branch_dims.size(); ++b) {
    const std::size_t f = cfg_.branch_dims[b];
    const std::size_t signal = cfg_.signal_dims == 0 ? f : cfg_.signal_dims;
    Tensor p({cfg_.num_actions, f});
    for (std::size_t a = 0; a < cfg_.num_actions; ++a)
      for (std::size_t j = 0; j < signal; ++j) p.at(a, j) = proto_rng.normal();
    const auto [anchor, moved] = confusable_pair(b, cfg_.num_key_actions());
    if (anchor != moved) {
      for (std::size_t j = 0; j < p.cols(); ++j) {
        p.at(moved, j) = (1.0 - cfg_.branch_overlap) * p.at(moved, j) + cfg_.branch_overlap * p.at(anchor, j);
      }
    }
    prototypes_.push_back(std::move(p));
  }
}

void SceneGenerator::fill_features(ActorScene& scene) {
  const std::size_t n = scene.num_actors();
  scene.features.clear();
  for (std::size_t b = 0; b < cfg_.branch_dims.size(); ++b) {
    const std::size_t f = cfg_.branch_dims[b];
    const std::size_t signal = cfg_.signal_dims == 0 ? f : cfg_.signal_dims;
    const double nuisance = cfg_.nuisance_noise.empty() ? 0.0 : cfg_.nuisance_noise[b];
    Tensor x({n, f});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) {
        const double sd = j < signal ? cfg_.noise : nuisance;
        x.at(i, j) = prototypes_[b].at(scene.actions[i], j) + sd * rng_.normal();
      }
    scene.features.push_back(std::move(x));
  }
}

ActorScene SceneGenerator::next_key_actor(std::uint64_t id) {
  const std::size_t k = cfg_.num_key_actions();
  const std::size_t n = cfg_.min_actors + rng_.below(cfg_.max_actors - cfg_.min_actors + 1);
  const std::size_t base = rng_.below(k);
  const std::size_t side = rng_.below(2);
  const std::size_t key = rng_.below(n);

  ActorScene s;
  s.id = id;
  s.key_actor = static_cast<std::int64_t>(key);
  s.actions.resize(n);
  s.centers.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == key) {
      s.actions[i] = base;
      const double lo = side == 0 ? kMargin : 0.5 + kMargin;
      s.centers[i] = {rng_.uniform(lo, lo + 0.5 - 2 * kMargin), rng_.uniform(kMargin, 1.0 - kMargin)};
    } else {
      s.actions[i] = k + rng_.below(cfg_.num_actions - k);
      s.centers[i] = {rng_.uniform(kMargin, 1.0 - kMargin), rng_.uniform(kMargin, 1.0 - kMargin)};
    }
  }
  s.activity = key_actor_side_label(s.actions, s.centers, key, k);
  fill_features(s);
  return s;
}

ActorScene SceneGenerator::next_majority(std::uint64_t id) {
  const std::size_t n = cfg_.min_actors + rng_.below(cfg_.max_actors - cfg_.min_actors + 1);
  ActorScene s;
  s.id = id;
  s.actions.resize(n);
  s.centers.resize(n);
  std::int64_t label = -1;
  while (label < 0) {
    const std::size_t dominant = rng_.below(cfg_.num_actions);
    for (auto& a : s.actions) a = rng_.uniform() < 0.5 ? dominant : rng_.below(cfg_.num_actions);
    label = majority_action(s.actions, cfg_.num_actions);
  }
  for (auto& c : s.centers) c = {rng_.uniform(kMargin, 1.0 - kMargin), rng_.uniform(kMargin, 1.0 - kMargin)};
  s.activity = static_cast<std::size_t>(label);
  fill_features(s);
  return s;
}

ActorScene SceneGenerator::next(std::uint64_t id) {
  return cfg_.rule == LabelRule::kKeyActorSide ? next_key_actor(id) : next_majority(id);
}

Dataset SceneGenerator::generate(std::size_t count, std::uint64_t first_id) {
  Dataset d{cfg_, {}};
  d.scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) d.scenes.push_back(next(first_id + i));
  return d;
}

Dataset generate_volleyball_like(const SceneConfig& cfg, std::size_t count) {
  if (cfg.rule != LabelRule::kKeyActorSide) throw ConfigError("volleyball-like scenes use the key-actor-side rule");
  return SceneGenerator(cfg).generate(count);
}

Dataset generate_collective_like(const SceneConfig& cfg, std::size_t count) {
  if (cfg.rule != LabelRule::kMajorityAction) throw ConfigError("collective-like scenes use the majority-action rule");
  return SceneGenerator(cfg).generate(count);
}

// ---- serialization -------------------------------------------------------

void write_dataset(std::ostream& out, const Dataset& data) {
  const SceneConfig& c = data.config;
  out << kDatasetMagic << ' ' << kDatasetVersion << '\n';
  out << "rule " << to_string(c.rule) << '\n';
  out << "count " << data.scenes.size() << '\n';
  out << "actors " << c.min_actors << ' ' << c.max_actors << '\n';
  out << "num_actions " << c.num_actions << '\n';
  out << "num_activities " << c.num_activities << '\n';
  out << "branches " << c.branch_dims.size() << '\n';
  out << "dims";
  for (auto d : c.branch_dims) out << ' ' << d;
  out << '\n';
  out << "noise " << format_double(c.noise) << '\n';
  out << "branch_overlap " << format_double(c.branch_overlap) << '\n';
  out << "signal_dims " << c.signal_dims << '\n';
  out << "nuisance_noise " << c.nuisance_noise.size();
  for (double v : c.nuisance_noise) out << ' ' << format_double(v);
  out << '\n';
  out << "frames " << c.frames << '\n';
  out << "seed " << c.seed << '\n';
  for (const auto& s : data.scenes) {
    out << "scene " << s.id << ' ' << s.num_actors() << ' ' << s.activity << ' ' << s.key_actor << '\n';
    out << "actions";
    for (auto a : s.actions) out << ' ' << a;
    out << '\n';
    out << "centers";
    for (const auto& ctr : s.centers) out << ' ' << format_double(ctr.x) << ' ' << format_double(ctr.y);
    out << '\n';
    for (const auto& f : s.features) {
      for (std::size_t i = 0; i < f.rows(); ++i) {
        for (std::size_t j = 0; j < f.cols(); ++j) out << (j ? " " : "") << format_double(f.at(i, j));
        out << '\n';
      }
    }
  }
  out << "end\n";
}

std::string dataset_to_string(const Dataset& data) {
  std::ostringstream ss;
  write_dataset(ss, data);
  return ss.str();
}

Dataset read_dataset(const std::string& text, const std::string& source) {
  LineReader r(text, source);
  Dataset d;
  SceneConfig& c = d.config;
  auto header = r.next_fields("header");
  if (header.size() != 2 || header[0] != kDatasetMagic) r.fail("not a gar-dataset file");
  if (r.to_int(header[1]) != kDatasetVersion) r.fail("unsupported dataset version " + std::string(header[1]));
  try {
    c.rule = parse_label_rule(r.expect("rule", 1)[0]);
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  const std::size_t count = r.to_uint(r.expect("count", 1)[0]);
  auto actors = r.expect("actors", 2);
  c.min_actors = r.to_uint(actors[0]);
  c.max_actors = r.to_uint(actors[1]);
  c.num_actions = r.to_uint(r.expect("num_actions", 1)[0]);
  c.num_activities = r.to_uint(r.expect("num_activities", 1)[0]);
  const std::size_t branches = r.to_uint(r.expect("branches", 1)[0]);
  auto dims = r.expect("dims", branches);
  c.branch_dims.clear();
  for (auto f : dims) c.branch_dims.push_back(r.to_uint(f));
  c.noise = r.to_double(r.expect("noise", 1)[0]);
  c.branch_overlap = r.to_double(r.expect("branch_overlap", 1)[0]);
  c.signal_dims = r.to_uint(r.expect("signal_dims", 1)[0]);
  {
    auto f = r.next_fields("nuisance_noise");
    if (f.size() < 2 || f[0] != "nuisance_noise") r.fail("expected 'nuisance_noise <count> <values...>'");
    const std::size_t k = r.to_uint(f[1]);
    if (f.size() != k + 2) r.fail("nuisance_noise lists the wrong number of values");
    for (std::size_t i = 0; i < k; ++i) c.nuisance_noise.push_back(r.to_double(f[i + 2]));
  }
  c.frames = r.to_uint(r.expect("frames", 1)[0]);
  c.seed = r.to_uint(r.expect("seed", 1)[0]);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }

  d.scenes.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    auto head = r.expect("scene", 4);
    ActorScene s;
    s.id = r.to_uint(head[0]);
    const std::size_t n = r.to_uint(head[1]);
    if (n == 0) r.fail("scene with no actors");
    s.activity = r.to_uint(head[2]);
    s.key_actor = r.to_int(head[3]);
    if (s.activity >= c.num_activities) r.fail("activity label out of range");
    if (s.key_actor >= static_cast<std::int64_t>(n) || s.key_actor < -1) r.fail("key actor index out of range");
    for (auto a : r.expect("actions", n)) {
      s.actions.push_back(r.to_uint(a));
      if (s.actions.back() >= c.num_actions) r.fail("action label out of range");
    }
    auto ctr = r.expect("centers", 2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      BoxCenter b{r.to_double(ctr[2 * i]), r.to_double(ctr[2 * i + 1])};
      if (!(b.x >= 0.0 && b.x <= 1.0 && b.y >= 0.0 && b.y <= 1.0)) r.fail("center outside [0,1]^2");
      s.centers.push_back(b);
    }
    for (std::size_t b = 0; b < branches; ++b) {
      Tensor f({n, c.branch_dims[b]});
      for (std::size_t i = 0; i < n; ++i) {
        auto row = r.next_fields("feature row");
        if (row.size() != c.branch_dims[b]) {
          r.fail("feature row has " + std::to_string(row.size()) + " values, expected " +
                 std::to_string(c.branch_dims[b]));
        }
        for (std::size_t j = 0; j < row.size(); ++j) f.at(i, j) = r.to_double(row[j]);
      }
      s.features.push_back(std::move(f));
    }
    d.scenes.push_back(std::move(s));
  }
  auto tail = r.next_fields("end");
  if (tail.size() != 1 || tail[0] != "end") r.fail("expected 'end'");
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, dataset_to_string(data));
}

Dataset load_dataset(const std::filesystem::path& path) { return read_dataset(read_file(path), path.string()); }

}  // namespace gar
