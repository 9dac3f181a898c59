#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace opdf::harness {

/// One training-epoch summary line; persisted as JSON Lines. All fields are
/// finite; wall_ms is the only field that varies between reruns of the same
/// seed (determinism comparisons canonicalize it away).
struct MetricsRecord {
  std::size_t epoch = 0;
  double task_loss = 0.0;
  double kd_loss = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
  double train_acc = 0.0;
  double eval_acc = 0.0;
  double wall_ms = 0.0;
  std::uint64_t seed = 0;
};

nlohmann::json metrics_to_json(const MetricsRecord& r);
MetricsRecord metrics_from_json(const nlohmann::json& j);

void write_metrics_jsonl(const std::string& path,
                         const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path);

}  // namespace opdf::harness
