#include "metrics.hpp"

#include <cmath>
#include <fstream>

#include "error.hpp"

namespace opdf::harness {

using nlohmann::json;

json metrics_to_json(const MetricsRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["task_loss"] = r.task_loss;
  j["kd_loss"] = r.kd_loss;
  j["aux_loss"] = r.aux_loss;
  j["total_loss"] = r.total_loss;
  j["train_acc"] = r.train_acc;
  j["eval_acc"] = r.eval_acc;
  j["wall_ms"] = r.wall_ms;
  j["seed"] = r.seed;
  return j;
}

MetricsRecord metrics_from_json(const json& j) {
  MetricsRecord r;
  try {
    r.epoch = j.at("epoch").get<std::size_t>();
    r.task_loss = j.at("task_loss").get<double>();
    r.kd_loss = j.at("kd_loss").get<double>();
    r.aux_loss = j.at("aux_loss").get<double>();
    r.total_loss = j.at("total_loss").get<double>();
    r.train_acc = j.at("train_acc").get<double>();
    r.eval_acc = j.at("eval_acc").get<double>();
    r.wall_ms = j.at("wall_ms").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrKind::FormatError, "bad metrics record: ", e.what());
  }
  for (double v : {r.task_loss, r.kd_loss, r.aux_loss, r.total_loss,
                   r.train_acc, r.eval_acc, r.wall_ms})
    require(std::isfinite(v), ErrKind::FormatError,
            "non-finite value in metrics record");
  return r;
}

void write_metrics_jsonl(const std::string& path,
                         const std::vector<MetricsRecord>& records) {
  std::ofstream os(path);
  require(os.good(), ErrKind::IoError, "cannot open for write: ", path);
  for (const MetricsRecord& r : records) os << metrics_to_json(r).dump() << "\n";
  os.flush();
  require(os.good(), ErrKind::IoError, "write failed: ", path);
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), ErrKind::IoError, "cannot open: ", path);
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrKind::FormatError, "bad JSONL line in ", path, ": ", e.what());
    }
    out.push_back(metrics_from_json(j));
  }
  return out;
}

}  // namespace opdf::harness
