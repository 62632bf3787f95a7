#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>

#include "gar/error.hpp"
#include "gar/io.hpp"
#include "gar/scenes.hpp"

namespace gar {
namespace {

SceneConfig key_config(double noise, std::uint64_t seed = 5) {
  SceneConfig c = SceneConfig::volleyball_like();
  c.noise = noise;
  c.seed = seed;
  return c;
}

double distance2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::size_t nearest_prototype(const Tensor& protos, std::span<const double> x) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < protos.rows(); ++a) {
    const double d = distance2(protos.row(a), x);
    if (d < best_d) best_d = d, best = a;
  }
  return best;
}

// Reads each actor's nearest prototype in branch 0, takes the actor closest to
// a key-action prototype as the key actor, and applies the side rule.
double nearest_prototype_accuracy(SceneGenerator& gen, const Dataset& data) {
  const Tensor& protos = gen.prototypes(0);
  const std::size_t k = data.config.num_key_actions();
  std::size_t hits = 0;
  for (const auto& s : data.scenes) {
    std::size_t best_actor = 0, best_action = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.num_actors(); ++i) {
      for (std::size_t a = 0; a < k; ++a) {
        const double d = distance2(protos.row(a), s.features[0].row(i));
        if (d < best_d) best_d = d, best_actor = i, best_action = a;
      }
    }
    const std::size_t side = s.centers[best_actor].x < 0.5 ? 0 : 1;
    hits += side * k + best_action == s.activity;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TEST(LabelRules, KeyActorSide) {
  const std::vector<std::size_t> actions{5, 2, 7};
  const std::vector<BoxCenter> centers{{0.1, 0.5}, {0.7, 0.2}, {0.3, 0.3}};
  EXPECT_EQ(key_actor_side_label(actions, centers, 1, 4), 4u + 2u);
  EXPECT_EQ(key_actor_side_label(std::vector<std::size_t>{3}, std::vector<BoxCenter>{{0.2, 0.2}}, 0, 4), 3u);
  EXPECT_THROW(key_actor_side_label(actions, centers, 3, 4), DataError);
}

TEST(LabelRules, Majority) {
  EXPECT_EQ(majority_action(std::vector<std::size_t>{1, 1, 2}, 5), 1);
  EXPECT_EQ(majority_action(std::vector<std::size_t>{4, 4, 4, 4}, 5), 4);
  EXPECT_EQ(majority_action(std::vector<std::size_t>{1, 2}, 5), -1);
  EXPECT_EQ(majority_action(std::vector<std::size_t>{0, 0, 3, 3, 1}, 5), -1);
}

TEST(LabelRules, ParseNames) {
  EXPECT_EQ(parse_label_rule("key-actor-side"), LabelRule::kKeyActorSide);
  EXPECT_EQ(parse_label_rule(to_string(LabelRule::kMajorityAction)), LabelRule::kMajorityAction);
  EXPECT_THROW(parse_label_rule("random"), ConfigError);
}

TEST(SceneConfig, Presets) {
  auto vb = SceneConfig::volleyball_like();
  EXPECT_EQ(vb.min_actors, 12u);
  EXPECT_EQ(vb.num_actions, 9u);
  EXPECT_EQ(vb.num_activities, 8u);
  EXPECT_EQ(vb.num_key_actions(), 4u);
  EXPECT_EQ(vb.frames, 10u);
  auto cad = SceneConfig::collective_like();
  EXPECT_EQ(cad.rule, LabelRule::kMajorityAction);
  EXPECT_EQ(cad.min_actors, 2u);
  EXPECT_EQ(cad.max_actors, 12u);
  EXPECT_EQ(cad.num_actions, 5u);
  EXPECT_EQ(cad.num_activities, 5u);
}

TEST(SceneConfig, Validation) {
  auto c = SceneConfig::volleyball_like();
  c.num_activities = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig::volleyball_like();
  c.num_actions = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig::volleyball_like();
  c.branch_dims = {3};
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig::volleyball_like();
  c.noise = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig::volleyball_like();
  c.min_actors = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig::collective_like();
  c.num_activities = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig::volleyball_like();
  c.signal_dims = 17;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig::volleyball_like();
  c.nuisance_noise = {1.0};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(generate_collective_like(SceneConfig::volleyball_like(), 3), ConfigError);
  EXPECT_THROW(generate_volleyball_like(SceneConfig::collective_like(), 3), ConfigError);
}

TEST(VolleyballLike, ScenesAreWellFormed) {
  Dataset d = generate_volleyball_like(key_config(0.5), 300);
  ASSERT_EQ(d.size(), 300u);
  for (const auto& s : d.scenes) {
    ASSERT_EQ(s.num_actors(), 12u);
    ASSERT_EQ(s.features.size(), 2u);
    EXPECT_EQ(s.features[0].shape(), (Shape{12, 16}));
    ASSERT_GE(s.key_actor, 0);
    const auto key = static_cast<std::size_t>(s.key_actor);
    EXPECT_LT(s.actions[key], 4u);
    for (std::size_t i = 0; i < 12; ++i) {
      if (i != key) EXPECT_GE(s.actions[i], 4u);
      EXPECT_LT(s.actions[i], 9u);
      EXPECT_GE(s.centers[i].x, 0.0);
      EXPECT_LE(s.centers[i].x, 1.0);
      EXPECT_GE(s.centers[i].y, 0.0);
      EXPECT_LE(s.centers[i].y, 1.0);
    }
    EXPECT_EQ(s.activity, key_actor_side_label(s.actions, s.centers, key, 4));
  }
}

TEST(VolleyballLike, MirroringFlipsSide) {
  Dataset d = generate_volleyball_like(key_config(0.5), 500);
  for (const auto& s : d.scenes) {
    std::vector<BoxCenter> mirrored = s.centers;
    for (auto& c : mirrored) c.x = 1.0 - c.x;
    const auto key = static_cast<std::size_t>(s.key_actor);
    const std::size_t flipped = key_actor_side_label(s.actions, mirrored, key, 4);
    EXPECT_EQ(flipped % 4, s.activity % 4);
    EXPECT_NE(flipped / 4, s.activity / 4);
  }
}

TEST(VolleyballLike, LabelsNearUniform) {
  Dataset d = generate_volleyball_like(key_config(0.5, 11), 4000);
  std::map<std::size_t, std::size_t> counts;
  for (const auto& s : d.scenes) ++counts[s.activity];
  ASSERT_EQ(counts.size(), 8u);
  for (const auto& [label, n] : counts) EXPECT_NEAR(n / 4000.0, 1.0 / 8.0, 0.03) << "label " << label;
}

TEST(VolleyballLike, NearestPrototypeOracle) {
  std::vector<double> acc;
  for (double noise : {0.0, 0.5, 1.0}) {
    SceneGenerator gen(key_config(noise, 21));
    Dataset d = gen.generate(1000);
    acc.push_back(nearest_prototype_accuracy(gen, d));
  }
  EXPECT_EQ(acc[0], 1.0);
  EXPECT_LE(acc[1], acc[0] + 0.02);
  EXPECT_LE(acc[2], acc[1] + 0.02);
  EXPECT_LT(acc[2], acc[0]);
}

TEST(VolleyballLike, NoiselessFeaturesArePrototypes) {
  SceneGenerator gen(key_config(0.0));
  ActorScene s = gen.next(0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < s.num_actors(); ++i)
      EXPECT_EQ(distance2(s.features[b].row(i), gen.prototypes(b).row(s.actions[i])), 0.0);
}

TEST(VolleyballLike, BranchesHaveDistinctBases) {
  SceneGenerator gen(key_config(0.0));
  EXPECT_GT(max_abs_diff(gen.prototypes(0), gen.prototypes(1)), 0.1);
}

TEST(VolleyballLike, OverlapCollapsesConfusablePair) {
  SceneConfig c = key_config(0.0);
  c.branch_overlap = 1.0;
  SceneGenerator gen(c);
  for (std::size_t b = 0; b < 2; ++b) {
    const auto [first, second] = confusable_pair(b, 4);
    EXPECT_NE(first, second);
    EXPECT_EQ(distance2(gen.prototypes(b).row(first), gen.prototypes(b).row(second)), 0.0);
  }
  const auto p0 = confusable_pair(0, 4), p1 = confusable_pair(1, 4);
  EXPECT_NE(p0, p1);
  // The pair merged in one branch stays separable in the other.
  EXPECT_GT(distance2(gen.prototypes(1).row(p0.first), gen.prototypes(1).row(p0.second)), 0.01);
  EXPECT_GT(distance2(gen.prototypes(0).row(p1.first), gen.prototypes(0).row(p1.second)), 0.01);
}

TEST(VolleyballLike, SignalDimsConfineLabelInformation) {
  SceneConfig c = key_config(0.0);
  c.signal_dims = 6;
  c.nuisance_noise = {0.0, 0.0};
  SceneGenerator gen(c);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t a = 0; a < 9; ++a)
      for (std::size_t j = 6; j < 16; ++j) EXPECT_EQ(gen.prototypes(b).at(a, j), 0.0);
  c.nuisance_noise = {0.0, 2.0};
  ActorScene s = SceneGenerator(c).next(0);
  EXPECT_EQ(s.features[0].at(0, 10), 0.0);
  EXPECT_NE(s.features[1].at(0, 10), 0.0);
  EXPECT_EQ(s.features[1].at(0, 2), gen.prototypes(1).at(s.actions[0], 2));
}

TEST(CollectiveLike, MajorityConsistent) {
  SceneConfig c = SceneConfig::collective_like();
  c.seed = 4;
  Dataset d = generate_collective_like(c, 1000);
  std::map<std::size_t, std::size_t> sizes;
  for (const auto& s : d.scenes) {
    EXPECT_GE(s.num_actors(), 2u);
    EXPECT_LE(s.num_actors(), 12u);
    ++sizes[s.num_actors()];
    EXPECT_EQ(majority_action(s.actions, 5), static_cast<std::int64_t>(s.activity));
    EXPECT_EQ(s.key_actor, -1);
  }
  EXPECT_EQ(sizes.size(), 11u);
}

TEST(Generator, SameSeedSameBytes) {
  const auto a = dataset_to_string(generate_volleyball_like(key_config(0.5, 8), 50));
  const auto b = dataset_to_string(generate_volleyball_like(key_config(0.5, 8), 50));
  const auto c = dataset_to_string(generate_volleyball_like(key_config(0.5, 9), 50));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Generator, ScenesIndependentOfBatchBoundaries) {
  SceneGenerator whole(key_config(0.5));
  Dataset all = whole.generate(10);
  SceneGenerator split(key_config(0.5));
  Dataset first = split.generate(4);
  Dataset rest = split.generate(6, 4);
  EXPECT_EQ(first.scenes[3], all.scenes[3]);
  EXPECT_EQ(rest.scenes[5], all.scenes[9]);
}

TEST(DatasetFile, RoundTrip) {
  SceneConfig c = SceneConfig::collective_like();
  c.branch_dims = {8, 4, 12};
  c.nuisance_noise = {0.25, 0.0, 1.5};
  c.signal_dims = 4;
  c.seed = 99;
  Dataset d = generate_collective_like(c, 40);
  const auto path = std::filesystem::temp_directory_path() / "gar_scenes_test" / "data.txt";
  save_dataset(d, path);
  Dataset back = load_dataset(path);
  EXPECT_EQ(back, d);
  save_dataset(back, path);
  EXPECT_EQ(read_file(path), dataset_to_string(d));
  std::filesystem::remove_all(path.parent_path());
}

TEST(DatasetFile, TruncationIsParseError) {
  const std::string text = dataset_to_string(generate_volleyball_like(key_config(0.5), 5));
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, text.size() / 3, text.size() / 2, text.size() - 5}) {
    try {
      read_dataset(text.substr(0, cut), "cut.txt");
      ADD_FAILURE() << "accepted truncation at " << cut;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find("cut.txt"), std::string::npos) << e.what();
    }
  }
}

TEST(DatasetFile, CorruptionsAreParseErrors) {
  const std::string text = dataset_to_string(generate_volleyball_like(key_config(0.5), 3));
  std::string bad = text;
  bad.replace(bad.find("scene 1"), 7, "scene x");
  EXPECT_THROW(read_dataset(bad), ParseError);
  bad = text;
  bad.replace(0, 11, "gar-dataxet");
  EXPECT_THROW(read_dataset(bad), ParseError);
  bad = text;
  bad.replace(bad.find("centers"), 7, "cenfers");
  EXPECT_THROW(read_dataset(bad), ParseError);
}

}  // namespace
}  // namespace gar
