#include "gar/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "gar/error.hpp"
#include "gar/io.hpp"

namespace gar {

namespace {

// Keys with their default values; an empty default marks an optional key.
const std::vector<std::pair<std::string, std::string>>& key_table() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      // scenes
      {"rule", "key-actor-side"},
      {"num_actors", ""},
      {"min_actors", "12"},
      {"max_actors", "12"},
      {"num_actions", "9"},
      {"num_activities", "8"},
      {"branch_dims", "16,16"},
      {"noise", "0.5"},
      {"branch_overlap", "0"},
      {"signal_dims", "0"},
      {"nuisance_noise", ""},
      {"frames", "10"},
      {"count", "1000"},
      {"train_fraction", "0.72"},
      {"data_seed", ""},
      {"train_data", ""},
      {"test_data", ""},
      // model
      {"input_branches", "0"},
      {"d_model", "128"},
      {"num_heads", "1"},
      {"num_layers", "1"},
      {"d_ff", "256"},
      {"dropout", "0.1"},
      {"aggregation", "transformer"},
      {"use_pe", "1"},
      {"pe_scale", "100"},
      {"pe_placement", "after-fusion"},
      {"fusion", "none"},
      {"late_weights", ""},
      // training
      {"optimizer", "sgd-momentum"},
      {"momentum", "0.9"},
      {"adam_beta1", "0.9"},
      {"adam_beta2", "0.999"},
      {"adam_eps", "1e-10"},
      {"lr_schedule", "0:0.01,10000:0.001"},
      {"batch_size", "16"},
      {"iterations", "20000"},
      {"lambda_g", "1"},
      {"lambda_a", "1"},
      {"log_every", "0"},
      // general
      {"seed", "0"},
      {"scene_ids", ""},
  };
  return table;
}

const std::string* default_for(const std::string& key) {
  for (const auto& [k, v] : key_table()) {
    if (k == key) return &v;
  }
  return nullptr;
}

template <typename T, typename Fn>
T convert(const std::string& key, const std::string& value, Fn fn) {
  try {
    return fn(value);
  } catch (const ParseError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::vector<std::size_t> size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (const auto& f : split(value, ',')) out.push_back(convert<std::size_t>(key, f, parse_uint));
  return out;
}

}  // namespace

// ---- RunConfig -------------------------------------------------------------

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, def] : key_table()) k.push_back(name);
    return k;
  }();
  return keys;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig cfg;
  LineReader r(text, source);
  while (!r.at_end()) {
    std::string_view line = r.next("entry");
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) r.fail("expected key=value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    const bool grid_key = key.rfind("grid.", 0) == 0;
    if (grid_key ? cfg.grid_.count(key.substr(5)) != 0 : cfg.values_.count(key) != 0) {
      r.fail("duplicate key '" + key + "'");
    }
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      r.fail(e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key.rfind("grid.", 0) == 0) {
    const std::string inner = key.substr(5);
    if (!default_for(inner)) throw ConfigError("unknown grid key '" + inner + "'");
    auto alternatives = split(value, '|');
    if (alternatives.empty() || std::any_of(alternatives.begin(), alternatives.end(),
                                            [](const std::string& s) { return s.empty(); })) {
      throw ConfigError("grid key '" + inner + "' has an empty alternative");
    }
    grid_[inner] = std::move(alternatives);
    return;
  }
  if (!default_for(key)) throw ConfigError("unknown config key '" + key + "'");
  if (value.empty()) throw ConfigError("config key '" + key + "' has an empty value");
  values_[key] = value;
}

std::string RunConfig::get(const std::string& key) const {
  if (auto it = values_.find(key); it != values_.end()) return it->second;
  const std::string* def = default_for(key);
  if (!def) throw ConfigError("unknown config key '" + key + "'");
  return *def;
}

std::uint64_t RunConfig::seed() const { return convert<std::uint64_t>("seed", get("seed"), parse_uint); }

std::size_t RunConfig::count() const { return convert<std::size_t>("count", get("count"), parse_uint); }

double RunConfig::train_fraction() const {
  const double f = convert<double>("train_fraction", get("train_fraction"), parse_double);
  if (!(f > 0.0 && f <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
  return f;
}

SceneConfig RunConfig::scene_config() const {
  SceneConfig c;
  c.rule = parse_label_rule(get("rule"));
  if (has("num_actors")) {
    c.min_actors = c.max_actors = convert<std::size_t>("num_actors", get("num_actors"), parse_uint);
    if (has("min_actors") || has("max_actors")) throw ConfigError("num_actors conflicts with min/max_actors");
  } else {
    c.min_actors = convert<std::size_t>("min_actors", get("min_actors"), parse_uint);
    c.max_actors = convert<std::size_t>("max_actors", get("max_actors"), parse_uint);
  }
  c.num_actions = convert<std::size_t>("num_actions", get("num_actions"), parse_uint);
  c.num_activities = convert<std::size_t>("num_activities", get("num_activities"), parse_uint);
  c.branch_dims = size_list("branch_dims", get("branch_dims"));
  c.noise = convert<double>("noise", get("noise"), parse_double);
  c.branch_overlap = convert<double>("branch_overlap", get("branch_overlap"), parse_double);
  c.signal_dims = convert<std::size_t>("signal_dims", get("signal_dims"), parse_uint);
  if (has("nuisance_noise")) {
    for (const auto& v : split(get("nuisance_noise"), ',')) {
      c.nuisance_noise.push_back(convert<double>("nuisance_noise", v, parse_double));
    }
  }
  c.frames = convert<std::size_t>("frames", get("frames"), parse_uint);
  c.seed = has("data_seed") ? convert<std::uint64_t>("data_seed", get("data_seed"), parse_uint)
                            : derive_seed(seed(), "data");
  c.validate();
  return c;
}

ModelConfig RunConfig::model_config(const SceneConfig& data) const {
  ModelConfig m;
  m.input_branches = size_list("input_branches", get("input_branches"));
  m.input_dims.clear();
  for (auto b : m.input_branches) {
    if (b >= data.branch_dims.size()) {
      throw ConfigError("input branch " + std::to_string(b) + " not present in the dataset");
    }
    m.input_dims.push_back(data.branch_dims[b]);
  }
  m.num_actions = data.num_actions;
  m.num_activities = data.num_activities;
  m.encoder.attention.d_model = convert<std::size_t>("d_model", get("d_model"), parse_uint);
  m.encoder.attention.num_heads = convert<std::size_t>("num_heads", get("num_heads"), parse_uint);
  m.encoder.num_layers = convert<std::size_t>("num_layers", get("num_layers"), parse_uint);
  m.encoder.d_ff = convert<std::size_t>("d_ff", get("d_ff"), parse_uint);
  m.encoder.dropout = convert<double>("dropout", get("dropout"), parse_double);
  m.aggregation = parse_aggregation(get("aggregation"));
  const std::string pe = get("use_pe");
  if (pe == "1" || pe == "true" || pe == "on") {
    m.use_pe = true;
  } else if (pe == "0" || pe == "false" || pe == "off") {
    m.use_pe = false;
  } else {
    throw ConfigError("use_pe must be 0 or 1");
  }
  m.pe_scale = convert<double>("pe_scale", get("pe_scale"), parse_double);
  m.pe_placement = parse_pe_placement(get("pe_placement"));
  m.fusion = parse_fusion_mode(get("fusion"));
  if (has("late_weights")) {
    m.late_weights.clear();
    for (const auto& w : split(get("late_weights"), ',')) {
      m.late_weights.push_back(convert<double>("late_weights", w, parse_double));
    }
  } else {
    // Static branch (first input) weighted twice as much as each other branch.
    m.late_weights.assign(m.input_branches.size(), 1.0);
    m.late_weights[0] = 2.0;
  }
  m.validate();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.optimizer = parse_optimizer(get("optimizer"));
  t.momentum = convert<double>("momentum", get("momentum"), parse_double);
  t.adam_beta1 = convert<double>("adam_beta1", get("adam_beta1"), parse_double);
  t.adam_beta2 = convert<double>("adam_beta2", get("adam_beta2"), parse_double);
  t.adam_eps = convert<double>("adam_eps", get("adam_eps"), parse_double);
  t.schedule = LrSchedule::parse(get("lr_schedule"));
  t.batch_sizes = size_list("batch_size", get("batch_size"));
  t.iterations = convert<std::uint64_t>("iterations", get("iterations"), parse_uint);
  t.lambda_group = convert<double>("lambda_g", get("lambda_g"), parse_double);
  t.lambda_action = convert<double>("lambda_a", get("lambda_a"), parse_double);
  t.seed = seed();
  t.validate();
  return t;
}

std::string RunConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  for (const auto& [k, alts] : grid_) {
    out += "grid." + k + "=";
    for (std::size_t i = 0; i < alts.size(); ++i) out += (i ? "|" : "") + alts[i];
    out += "\n";
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw DataError("confusion matrix class out of range");
  ++counts_[truth * classes_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += at(i, i);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t t = 0;
  for (std::size_t j = 0; j < classes_; ++j) t += at(truth, j);
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  return t == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(t);
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "true\\pred";
  for (std::size_t j = 0; j < classes_; ++j) out += "," + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < classes_; ++i) {
    out += std::to_string(i);
    for (std::size_t j = 0; j < classes_; ++j) out += "," + std::to_string(at(i, j));
    out += "\n";
  }
  return out;
}

ConfusionMatrix ConfusionMatrix::from_csv(const std::string& text) {
  LineReader r(text, "<confusion>");
  const auto header = split(trim(r.next("header")), ',');
  if (header.empty() || header[0] != "true\\pred") r.fail("unexpected confusion matrix header");
  const std::size_t c = header.size() - 1;
  ConfusionMatrix m(c);
  for (std::size_t i = 0; i < c; ++i) {
    const auto row = split(trim(r.next("row")), ',');
    if (row.size() != c + 1 || r.to_uint(row[0]) != i) r.fail("malformed confusion matrix row");
    for (std::size_t j = 0; j < c; ++j) m.counts_[i * c + j] = r.to_uint(row[j + 1]);
  }
  return m;
}

std::string EvalReport::summary_csv() const {
  return "metric,value\nscenes," + std::to_string(scenes) + "\nactors," + std::to_string(actors) +
         "\ngroup_accuracy," + format_double(group_accuracy) + "\naction_accuracy," + format_double(action_accuracy) +
         "\n";
}

Summary parse_summary_csv(const std::string& text) {
  LineReader r(text, "<summary>");
  if (trim(r.next("header")) != "metric,value") r.fail("unexpected summary header");
  Summary s;
  while (!r.at_end()) {
    const auto line = trim(r.next("row"));
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 2) r.fail("expected metric,value");
    if (f[0] == "scenes") {
      s.scenes = r.to_uint(f[1]);
    } else if (f[0] == "actors") {
      s.actors = r.to_uint(f[1]);
    } else if (f[0] == "group_accuracy") {
      s.group_accuracy = r.to_double(f[1]);
    } else if (f[0] == "action_accuracy") {
      s.action_accuracy = r.to_double(f[1]);
    } else {
      r.fail("unknown metric '" + f[0] + "'");
    }
  }
  return s;
}

EvalReport evaluate(GarModel& model, const Dataset& data, bool keep_attention) {
  const ModelConfig& mc = model.config();
  EvalReport rep;
  rep.group = ConfusionMatrix(mc.num_activities);
  rep.action = ConfusionMatrix(mc.num_actions);
  for (const auto& s : data.scenes) {
    Graph g(Mode::kInference);
    Prediction p = model.forward(g, s, keep_attention);
    const Decision d = predict(p);
    rep.group.add(s.activity, d.activity);
    for (std::size_t i = 0; i < s.num_actors(); ++i) rep.action.add(s.actions[i], d.actions[i]);
    ++rep.scenes;
    rep.actors += s.num_actors();
    if (keep_attention) rep.attention.push_back({s.id, s.key_actor, std::move(p.attention)});
  }
  rep.group_accuracy = rep.group.accuracy();
  rep.action_accuracy = rep.action.accuracy();
  return rep;
}

std::vector<Tensor> attention_matrices(const SceneAttention& a) {
  std::vector<Tensor> out;
  for (const auto& rec : a.records)
    for (const auto& layer : rec.layers)
      for (const auto& head : layer) out.push_back(head);
  return out;
}

std::size_t top_attended_actor(const std::vector<Tensor>& matrices) {
  if (matrices.empty()) throw DataError("no attention matrices recorded");
  const std::size_t n = matrices.front().cols();
  std::vector<double> column_mass(n, 0.0);
  for (const auto& m : matrices) {
    if (m.cols() != n) throw DimensionError("attention matrices disagree on actor count");
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) column_mass[j] += m.at(i, j);
  }
  return argmax(column_mass);
}

std::string matrix_csv(const Tensor& m) {
  std::string out = "actor";
  for (std::size_t j = 0; j < m.cols(); ++j) out += "," + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out += std::to_string(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out += "," + format_double(m.at(i, j));
    out += "\n";
  }
  return out;
}

Tensor parse_matrix_csv(const std::string& text) {
  LineReader r(text, "<matrix>");
  const auto header = split(trim(r.next("header")), ',');
  if (header.size() < 2 || header[0] != "actor") r.fail("unexpected matrix header");
  const std::size_t cols = header.size() - 1;
  std::vector<double> data;
  std::size_t rows = 0;
  while (!r.at_end()) {
    const auto line = trim(r.next("row"));
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != cols + 1) r.fail("row width differs from header");
    for (std::size_t j = 1; j < f.size(); ++j) data.push_back(r.to_double(f[j]));
    ++rows;
  }
  if (rows == 0) r.fail("matrix has no rows");
  return Tensor({rows, cols}, std::move(data));
}

// ---- commands --------------------------------------------------------------

GenerateOutput make_splits(const RunConfig& cfg) {
  const SceneConfig sc = cfg.scene_config();
  const std::size_t count = cfg.count();
  if (count == 0) throw DataError("count is zero: refusing to generate an empty dataset");
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(count) * cfg.train_fraction()));
  if (n_train == 0) throw DataError("train split would be empty");
  Dataset all = SceneGenerator(sc).generate(count);
  GenerateOutput out{{sc, {}}, {sc, {}}};
  for (auto& s : all.scenes) (s.id < n_train ? out.train : out.test).scenes.push_back(std::move(s));
  return out;
}

GenerateOutput cmd_generate(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  GenerateOutput out = make_splits(cfg);
  save_dataset(out.train, out_dir / "train.txt");
  save_dataset(out.test, out_dir / "test.txt");
  return out;
}

namespace {

Dataset training_data(const RunConfig& cfg) {
  if (cfg.has("train_data")) return load_dataset(cfg.get("train_data"));
  return make_splits(cfg).train;
}

Dataset test_data(const RunConfig& cfg) {
  if (cfg.has("test_data")) return load_dataset(cfg.get("test_data"));
  return make_splits(cfg).test;
}

}  // namespace

TrainOutput cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                      const std::optional<std::filesystem::path>& resume) {
  const Dataset data = training_data(cfg);
  if (data.empty()) throw DataError("training dataset is empty");
  const TrainConfig tc = cfg.train_config();
  const std::uint64_t log_every = parse_uint(cfg.get("log_every"));

  GarModel model;
  std::optional<Checkpoint> previous;
  if (resume) {
    previous = load_checkpoint(*resume);
    model = restore_model(*previous);
  } else {
    model = GarModel(cfg.model_config(data.config), derive_seed(cfg.seed(), "init"));
  }
  Trainer trainer(model, tc);
  if (previous) trainer.load_state(*previous);

  TrainOutput out;
  while (trainer.iteration() < tc.iterations) {
    out.curve.push_back(trainer.step(data));
    const auto& r = out.curve.back();
    if (log_every && (r.iteration % log_every == 0 || trainer.iteration() == tc.iterations)) {
      std::fprintf(stderr, "iter %llu lr %g loss %.6f (activity %.6f, action %.6f)\n",
                   static_cast<unsigned long long>(r.iteration), r.lr, r.total, r.activity, r.action);
    }
  }
  store_weights(model, out.checkpoint);
  trainer.save_state(out.checkpoint);
  save_checkpoint(out.checkpoint, out_dir / "checkpoint.txt");
  write_file_atomic(out_dir / "loss.csv", loss_curve_csv(out.curve));
  return out;
}

EvalReport cmd_evaluate(const std::filesystem::path& checkpoint, const Dataset& data,
                        const std::filesystem::path& out_dir) {
  if (data.empty()) throw DataError("evaluation dataset is empty");
  GarModel model = restore_model(load_checkpoint(checkpoint));
  EvalReport rep = evaluate(model, data);
  write_file_atomic(out_dir / "confusion_group.csv", rep.group.to_csv());
  write_file_atomic(out_dir / "confusion_action.csv", rep.action.to_csv());
  write_file_atomic(out_dir / "summary.csv", rep.summary_csv());
  return rep;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::vector<std::string> columns;
  if (!rows.empty()) {
    for (const auto& [k, v] : rows.front().settings) columns.push_back(k);
  }
  std::string out = "config_key,seed";
  for (const auto& c : columns) out += "," + c;
  out += ",group_accuracy,action_accuracy\n";
  for (const auto& r : rows) {
    out += "\"" + r.key + "\"," + std::to_string(r.seed);
    for (const auto& c : columns) out += "," + r.settings.at(c);
    out += "," + format_double(r.group_accuracy) + "," + format_double(r.action_accuracy) + "\n";
  }
  return out;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.grid().empty()) throw ConfigError("ablate: no grid.<key> entries in the config");
  // Cells share the data of the base configuration.
  const Dataset train = training_data(cfg);
  const Dataset test = test_data(cfg);
  if (train.empty() || test.empty()) throw DataError("ablate: train and test splits must be non-empty");

  std::vector<std::map<std::string, std::string>> cells{{}};
  for (const auto& [key, alternatives] : cfg.grid()) {
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& cell : cells)
      for (const auto& alt : alternatives) {
        auto c = cell;
        c[key] = alt;
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }

  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    RunConfig rc;
    for (const auto& [k, v] : cfg.values()) rc.set(k, v);
    for (const auto& [k, v] : cell) rc.set(k, v);
    AblationRow row;
    for (const auto& [k, v] : cell) row.key += (row.key.empty() ? "" : ";") + k + "=" + v;
    row.seed = rc.seed();
    row.settings = cell;
    GarModel model(rc.model_config(train.config), derive_seed(row.seed, "init"));
    Trainer trainer(model, rc.train_config());
    trainer.run(train);
    const EvalReport rep = evaluate(model, test);
    row.group_accuracy = rep.group_accuracy;
    row.action_accuracy = rep.action_accuracy;
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const AblationRow& a, const AblationRow& b) { return a.key < b.key; });
  write_file_atomic(out_dir / "ablation.csv", ablation_csv(rows));
  return rows;
}

std::vector<AttentionSummaryRow> cmd_attention_dump(const std::filesystem::path& checkpoint, const Dataset& data,
                                                    const std::vector<std::uint64_t>& scene_ids,
                                                    const std::filesystem::path& out_dir) {
  GarModel model = restore_model(load_checkpoint(checkpoint));
  if (model.config().aggregation != Aggregation::kTransformer) {
    throw ConfigError("attention-dump needs a model with a transformer encoder");
  }
  std::vector<const ActorScene*> selected;
  if (scene_ids.empty()) {
    for (const auto& s : data.scenes) selected.push_back(&s);
  } else {
    for (auto id : scene_ids) {
      auto it = std::find_if(data.scenes.begin(), data.scenes.end(), [id](const ActorScene& s) { return s.id == id; });
      if (it == data.scenes.end()) throw DataError("scene id " + std::to_string(id) + " not in dataset");
      selected.push_back(&*it);
    }
  }
  std::vector<AttentionSummaryRow> rows;
  for (const ActorScene* s : selected) {
    Graph g(Mode::kInference);
    Prediction p = model.forward(g, *s, true);
    SceneAttention sa{s->id, s->key_actor, std::move(p.attention)};
    for (std::size_t m = 0; m < sa.records.size(); ++m)
      for (std::size_t l = 0; l < sa.records[m].layers.size(); ++l)
        for (std::size_t h = 0; h < sa.records[m].layers[l].size(); ++h) {
          const auto name = "scene" + std::to_string(s->id) + "_sub" + std::to_string(m) + "_layer" +
                            std::to_string(l) + "_head" + std::to_string(h) + ".csv";
          write_file_atomic(out_dir / "attention" / name, matrix_csv(sa.records[m].layers[l][h]));
        }
    rows.push_back({s->id, s->num_actors(), s->key_actor, top_attended_actor(attention_matrices(sa))});
  }
  std::string csv = "scene_id,actors,key_actor,top_actor\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.scene_id) + "," + std::to_string(r.actors) + "," + std::to_string(r.key_actor) + "," +
           std::to_string(r.top_actor) + "\n";
  }
  write_file_atomic(out_dir / "attention_summary.csv", csv);
  return rows;
}

}  // namespace gar
