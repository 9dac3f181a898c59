#pragma once

#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace opdf::harness {

struct DataTable {
  Tensor features;  // [n, d]
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.order() == 2 ? features.extent(1) : 0; }
};

struct DataSplit {
  DataTable train;
  DataTable eval;
};

/// Synthetic task description. generator is "gaussian-blobs" (class centers
/// on a circle of center_radius, isotropic noise sigma) or "two-spirals"
/// (class arms with the given number of turns and radial noise).
struct GeneratorSpec {
  std::string generator = "gaussian-blobs";
  std::size_t classes = 3;
  std::size_t dim = 2;
  std::size_t train_size = 2000;
  std::size_t eval_size = 500;
  double center_radius = 2.0;  // gaussian-blobs
  double sigma = 1.0;          // gaussian-blobs
  double turns = 3.0;          // two-spirals
  double noise = 0.2;          // two-spirals
};

/// Deterministic per rng stream; features standardized to zero mean / unit
/// variance on the train statistics (applied to both splits).
DataSplit gen_dataset(const GeneratorSpec& spec, Rng64 rng);

/// UTF-8 CSV with a header row; the last column is an integer class label,
/// all other columns are numeric features. The loaded table is standardized
/// on its own statistics.
DataTable load_csv(const std::string& path);

/// Parses without standardizing (used when a split must share train stats).
DataTable parse_csv(const std::string& path);

void write_csv(const std::string& path, const DataTable& table);

/// Zero-mean/unit-variance transform with stats taken from `stats_source`;
/// constant columns are only centered.
void standardize(const DataTable& stats_source, std::vector<DataTable*> targets);

}  // namespace opdf::harness
