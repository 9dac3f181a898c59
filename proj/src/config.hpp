#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "model.hpp"

namespace opdf::harness {

struct TaskSpec {
  // generator-backed task (default) or CSV-backed when csv_path is set
  GeneratorSpec generator;
  std::optional<std::string> csv_path;
  double eval_fraction = 0.2;  // csv tasks: held-out share after a seeded shuffle
};

struct StudentSpec {
  std::vector<std::size_t> hidden = {16};
  std::string activation = "tanh";
};

struct TeacherSpec {
  std::vector<std::size_t> hidden = {64, 64};
  std::string activation = "tanh";
  std::size_t epochs = 50;
  double learning_rate = 0.01;
  std::optional<std::string> checkpoint;  // load instead of training in-run
};

struct DistillSpec {
  double temperature = 2.0;
  double alpha = 0.5;
  double lambda_aux = 1.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  std::string optimizer = "adam";  // sgd | adam
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool rebalance_cores = false;
  // fail instead of warn when lambda_aux > 0 and nothing matches
  bool strict_aux = false;
  std::vector<model::LayerScheme> schemes;
};

/// Declarative run description. Parsing rejects unknown keys; the resolved
/// form (defaults applied) is echoed into the run directory and re-parses to
/// an equal structure.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string method = "vanilla-kd";  // vanilla-kd | opdf | svd-op
  std::optional<std::string> output_dir;
  TaskSpec task;
  TeacherSpec teacher;
  StudentSpec student;
  DistillSpec distill;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Reads a config file and applies a JSON merge patch (RFC 7386) of
/// overrides on top; override values win.
ExperimentConfig load_config(const std::string& path,
                             const nlohmann::json& overrides);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace opdf::harness
