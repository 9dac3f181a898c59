#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "error.hpp"

namespace opdf::harness {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  require(j.is_object(), ErrKind::ConfigError, where, " must be a JSON object");
  for (const auto& item : j.items())
    require(known.count(item.key()) > 0, ErrKind::ConfigError, "unknown key '",
            item.key(), "' in ", where);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrKind::ConfigError, "bad value for '", key, "': ", e.what());
  }
}

TaskSpec task_from_json(const json& j) {
  reject_unknown_keys(j, {"generator", "classes", "dim", "train_size",
                          "eval_size", "center_radius", "sigma", "turns",
                          "noise", "csv", "eval_fraction"},
                      "task");
  TaskSpec t;
  if (j.contains("csv") && !j.at("csv").is_null())
    t.csv_path = j.at("csv").get<std::string>();
  t.eval_fraction = get_or(j, "eval_fraction", t.eval_fraction);
  require(t.eval_fraction > 0.0 && t.eval_fraction < 1.0, ErrKind::ConfigError,
          "eval_fraction must be in (0,1)");
  GeneratorSpec& g = t.generator;
  g.generator = get_or<std::string>(j, "generator", g.generator);
  g.classes = get_or(j, "classes", g.classes);
  g.dim = get_or(j, "dim", g.dim);
  g.train_size = get_or(j, "train_size", g.train_size);
  g.eval_size = get_or(j, "eval_size", g.eval_size);
  g.center_radius = get_or(j, "center_radius", g.center_radius);
  g.sigma = get_or(j, "sigma", g.sigma);
  g.turns = get_or(j, "turns", g.turns);
  g.noise = get_or(j, "noise", g.noise);
  if (!t.csv_path) {
    require(g.generator == "gaussian-blobs" || g.generator == "two-spirals",
            ErrKind::UnknownGenerator, "unknown generator '", g.generator, "'");
    require(g.classes >= 2, ErrKind::ConfigError, "classes must be >= 2");
    require(g.sigma > 0.0 && g.noise >= 0.0 && g.center_radius >= 0.0,
            ErrKind::ConfigError, "task noise parameters must be nonnegative");
  }
  return t;
}

model::LayerScheme scheme_from_json(const json& j) {
  reject_unknown_keys(j, {"layer", "in_dims", "out_dims", "bond_cap"}, "scheme");
  model::LayerScheme s;
  try {
    s.layer = j.at("layer").get<std::size_t>();
    s.in_dims = j.at("in_dims").get<std::vector<std::size_t>>();
    s.out_dims = j.at("out_dims").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    fail(ErrKind::ConfigError, "bad scheme entry: ", e.what());
  }
  if (j.contains("bond_cap") && !j.at("bond_cap").is_null())
    s.bond_cap = j.at("bond_cap").get<std::size_t>();
  return s;
}

json scheme_to_json(const model::LayerScheme& s) {
  json j;
  j["layer"] = s.layer;
  j["in_dims"] = s.in_dims;
  j["out_dims"] = s.out_dims;
  if (s.bond_cap) j["bond_cap"] = *s.bond_cap;
  return j;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  reject_unknown_keys(
      j, {"seed", "method", "output_dir", "task", "teacher", "student",
          "distill"},
      "config");
  ExperimentConfig cfg;
  cfg.seed = get_or(j, "seed", cfg.seed);
  cfg.method = get_or<std::string>(j, "method", cfg.method);
  require(cfg.method == "vanilla-kd" || cfg.method == "opdf" ||
              cfg.method == "svd-op",
          ErrKind::ConfigError, "method must be vanilla-kd, opdf or svd-op");
  if (j.contains("output_dir") && !j.at("output_dir").is_null())
    cfg.output_dir = j.at("output_dir").get<std::string>();

  if (j.contains("task")) cfg.task = task_from_json(j.at("task"));

  if (j.contains("teacher")) {
    const json& t = j.at("teacher");
    reject_unknown_keys(
        t, {"hidden", "activation", "epochs", "learning_rate", "checkpoint"},
        "teacher");
    cfg.teacher.hidden = get_or(t, "hidden", cfg.teacher.hidden);
    cfg.teacher.activation =
        get_or<std::string>(t, "activation", cfg.teacher.activation);
    cfg.teacher.epochs = get_or(t, "epochs", cfg.teacher.epochs);
    cfg.teacher.learning_rate =
        get_or(t, "learning_rate", cfg.teacher.learning_rate);
    if (t.contains("checkpoint") && !t.at("checkpoint").is_null())
      cfg.teacher.checkpoint = t.at("checkpoint").get<std::string>();
    model::activation_from_name(cfg.teacher.activation);
    require(cfg.teacher.learning_rate > 0.0, ErrKind::ConfigError,
            "teacher.learning_rate must be > 0");
  }

  if (j.contains("student")) {
    const json& s = j.at("student");
    reject_unknown_keys(s, {"hidden", "activation"}, "student");
    cfg.student.hidden = get_or(s, "hidden", cfg.student.hidden);
    cfg.student.activation =
        get_or<std::string>(s, "activation", cfg.student.activation);
    model::activation_from_name(cfg.student.activation);
  }

  if (j.contains("distill")) {
    const json& d = j.at("distill");
    reject_unknown_keys(
        d,
        {"temperature", "alpha", "lambda_aux", "epochs", "batch_size",
         "learning_rate", "optimizer", "momentum", "beta1", "beta2", "epsilon",
         "rebalance_cores", "strict_aux", "schemes"},
        "distill");
    DistillSpec& ds = cfg.distill;
    ds.temperature = get_or(d, "temperature", ds.temperature);
    ds.alpha = get_or(d, "alpha", ds.alpha);
    ds.lambda_aux = get_or(d, "lambda_aux", ds.lambda_aux);
    ds.epochs = get_or(d, "epochs", ds.epochs);
    ds.batch_size = get_or(d, "batch_size", ds.batch_size);
    ds.learning_rate = get_or(d, "learning_rate", ds.learning_rate);
    ds.optimizer = get_or<std::string>(d, "optimizer", ds.optimizer);
    ds.momentum = get_or(d, "momentum", ds.momentum);
    ds.beta1 = get_or(d, "beta1", ds.beta1);
    ds.beta2 = get_or(d, "beta2", ds.beta2);
    ds.epsilon = get_or(d, "epsilon", ds.epsilon);
    ds.rebalance_cores = get_or(d, "rebalance_cores", ds.rebalance_cores);
    ds.strict_aux = get_or(d, "strict_aux", ds.strict_aux);
    if (d.contains("schemes"))
      for (const json& s : d.at("schemes"))
        ds.schemes.push_back(scheme_from_json(s));
    require(ds.temperature > 0.0, ErrKind::NonPositiveTemperature,
            "temperature must be > 0");
    require(ds.alpha >= 0.0 && ds.alpha <= 1.0, ErrKind::ConfigError,
            "alpha must be in [0,1]");
    require(ds.lambda_aux >= 0.0, ErrKind::ConfigError,
            "lambda_aux must be >= 0");
    require(ds.batch_size >= 1, ErrKind::ConfigError, "batch_size must be >= 1");
    require(ds.learning_rate > 0.0, ErrKind::ConfigError,
            "learning_rate must be > 0");
    require(ds.optimizer == "sgd" || ds.optimizer == "adam",
            ErrKind::ConfigError, "optimizer must be sgd or adam");
  }
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["method"] = cfg.method;
  if (cfg.output_dir) j["output_dir"] = *cfg.output_dir;

  json task;
  if (cfg.task.csv_path) {
    task["csv"] = *cfg.task.csv_path;
    task["eval_fraction"] = cfg.task.eval_fraction;
  }
  const GeneratorSpec& g = cfg.task.generator;
  task["generator"] = g.generator;
  task["classes"] = g.classes;
  task["dim"] = g.dim;
  task["train_size"] = g.train_size;
  task["eval_size"] = g.eval_size;
  task["center_radius"] = g.center_radius;
  task["sigma"] = g.sigma;
  task["turns"] = g.turns;
  task["noise"] = g.noise;
  j["task"] = std::move(task);

  json teacher;
  teacher["hidden"] = cfg.teacher.hidden;
  teacher["activation"] = cfg.teacher.activation;
  teacher["epochs"] = cfg.teacher.epochs;
  teacher["learning_rate"] = cfg.teacher.learning_rate;
  if (cfg.teacher.checkpoint) teacher["checkpoint"] = *cfg.teacher.checkpoint;
  j["teacher"] = std::move(teacher);

  json student;
  student["hidden"] = cfg.student.hidden;
  student["activation"] = cfg.student.activation;
  j["student"] = std::move(student);

  json distill;
  const DistillSpec& ds = cfg.distill;
  distill["temperature"] = ds.temperature;
  distill["alpha"] = ds.alpha;
  distill["lambda_aux"] = ds.lambda_aux;
  distill["epochs"] = ds.epochs;
  distill["batch_size"] = ds.batch_size;
  distill["learning_rate"] = ds.learning_rate;
  distill["optimizer"] = ds.optimizer;
  distill["momentum"] = ds.momentum;
  distill["beta1"] = ds.beta1;
  distill["beta2"] = ds.beta2;
  distill["epsilon"] = ds.epsilon;
  distill["rebalance_cores"] = ds.rebalance_cores;
  distill["strict_aux"] = ds.strict_aux;
  json schemes = json::array();
  for (const model::LayerScheme& s : ds.schemes)
    schemes.push_back(scheme_to_json(s));
  distill["schemes"] = std::move(schemes);
  j["distill"] = std::move(distill);
  return j;
}

ExperimentConfig load_config(const std::string& path, const json& overrides) {
  std::ifstream is(path);
  require(is.good(), ErrKind::IoError, "cannot open config: ", path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    fail(ErrKind::ConfigError, "config is not valid JSON: ", e.what());
  }
  if (!overrides.is_null() && !overrides.empty()) j.merge_patch(overrides);
  return config_from_json(j);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return config_to_json(a) == config_to_json(b);
}

}  // namespace opdf::harness
