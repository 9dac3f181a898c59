#include "dataset.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace opdf::harness {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

DataTable draw_blobs(const GeneratorSpec& spec, std::size_t count, Rng64& rng) {
  DataTable t;
  t.class_count = spec.classes;
  t.features = Tensor({count, spec.dim});
  t.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = i % spec.classes;  // balanced round-robin
    t.labels[i] = cls;
    const double angle = kTau * static_cast<double>(cls) /
                         static_cast<double>(spec.classes);
    for (std::size_t d = 0; d < spec.dim; ++d) {
      double center = 0.0;
      if (d == 0) center = spec.center_radius * std::cos(angle);
      if (d == 1) center = spec.center_radius * std::sin(angle);
      t.features[i * spec.dim + d] = center + spec.sigma * rng.gaussian();
    }
  }
  return t;
}

DataTable draw_spirals(const GeneratorSpec& spec, std::size_t count, Rng64& rng) {
  require(spec.dim >= 2, ErrKind::ConfigError, "two-spirals needs dim >= 2");
  DataTable t;
  t.class_count = spec.classes;
  t.features = Tensor({count, spec.dim});
  t.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = i % spec.classes;
    t.labels[i] = cls;
    const double u = rng.uniform();  // position along the arm
    const double theta = u * spec.turns * kTau;
    const double radius = 0.2 + u;  // grows outward, avoids the origin pileup
    const double rot = kTau * static_cast<double>(cls) /
                       static_cast<double>(spec.classes);
    t.features[i * spec.dim + 0] =
        radius * std::cos(theta + rot) + spec.noise * rng.gaussian();
    t.features[i * spec.dim + 1] =
        radius * std::sin(theta + rot) + spec.noise * rng.gaussian();
    for (std::size_t d = 2; d < spec.dim; ++d)
      t.features[i * spec.dim + d] = spec.noise * rng.gaussian();
  }
  return t;
}

}  // namespace

void standardize(const DataTable& stats_source, std::vector<DataTable*> targets) {
  const std::size_t n = stats_source.size();
  const std::size_t d = stats_source.dim();
  require(n > 0, ErrKind::EmptyDataset, "cannot standardize an empty table");
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += stats_source.features[i * d + c];
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const double v = stats_source.features[i * d + c] - mean[c];
      sd[c] += v * v;
    }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(n));
  for (DataTable* t : targets) {
    require(t->dim() == d, ErrKind::DataShapeMismatch,
            "feature width mismatch during standardization");
    for (std::size_t i = 0; i < t->size(); ++i)
      for (std::size_t c = 0; c < d; ++c) {
        double& v = t->features[i * t->dim() + c];
        v = (v - mean[c]) / (sd[c] > 0.0 ? sd[c] : 1.0);
      }
  }
}

DataSplit gen_dataset(const GeneratorSpec& spec, Rng64 rng) {
  require(spec.classes >= 2, ErrKind::ConfigError, "class count must be >= 2");
  require(spec.train_size > 0 && spec.eval_size > 0, ErrKind::ConfigError,
          "train/eval sizes must be positive");
  Rng64 data_rng = rng.substream("data");

  DataSplit out;
  if (spec.generator == "gaussian-blobs") {
    out.train = draw_blobs(spec, spec.train_size, data_rng);
    out.eval = draw_blobs(spec, spec.eval_size, data_rng);
  } else if (spec.generator == "two-spirals") {
    out.train = draw_spirals(spec, spec.train_size, data_rng);
    out.eval = draw_spirals(spec, spec.eval_size, data_rng);
  } else {
    fail(ErrKind::UnknownGenerator, "unknown generator '", spec.generator, "'");
  }
  standardize(out.train, {&out.train, &out.eval});
  return out;
}

DataTable parse_csv(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), ErrKind::IoError, "cannot open CSV: ", path);
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), ErrKind::EmptyDataset,
          "CSV has no header row: ", path);

  std::size_t columns = 1;
  for (char c : line)
    if (c == ',') ++columns;
  require(columns >= 2, ErrKind::ParseError,
          "CSV needs at least one feature column and a label column");
  const std::size_t d = columns - 1;

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t row = 0;  // 1-based data row index (header excluded)
  std::size_t max_label = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    ++row;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      require(col <= columns, ErrKind::ParseError, "row ", row,
              " has more than ", columns, " columns");
      errno = 0;
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      const bool numeric = end != cell.c_str() && *end == '\0' && errno == 0;
      if (col <= d) {
        require(numeric, ErrKind::ParseError, "non-numeric feature at row ",
                row, ", column ", col, ": '", cell, "'");
        require(std::isfinite(v), ErrKind::NonNumericFeature,
                "non-finite feature at row ", row, ", column ", col);
        values.push_back(v);
      } else {
        const bool integral = numeric && std::isfinite(v) &&
                              v == std::floor(v) && v >= 0.0;
        require(integral, ErrKind::ParseError, "label at row ", row,
                " must be a nonnegative integer, got '", cell, "'");
        labels.push_back(static_cast<std::size_t>(v));
        max_label = std::max(max_label, labels.back());
      }
    }
    require(col == columns, ErrKind::ParseError, "row ", row, " has ", col,
            " columns, expected ", columns);
  }
  require(!labels.empty(), ErrKind::EmptyDataset, "CSV has no data rows: ",
          path);

  DataTable t;
  t.features = Tensor({labels.size(), d}, std::move(values));
  t.labels = std::move(labels);
  t.class_count = max_label + 1;
  return t;
}

DataTable load_csv(const std::string& path) {
  DataTable t = parse_csv(path);
  standardize(t, {&t});
  return t;
}

void write_csv(const std::string& path, const DataTable& table) {
  std::ofstream os(path);
  require(os.good(), ErrKind::IoError, "cannot open for write: ", path);
  const std::size_t d = table.dim();
  for (std::size_t c = 0; c < d; ++c) os << "f" << c << ",";
  os << "label\n";
  char buf[64];
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", table.features[i * d + c]);
      os << buf << ",";
    }
    os << table.labels[i] << "\n";
  }
  os.flush();
  require(os.good(), ErrKind::IoError, "write failed: ", path);
}

}  // namespace opdf::harness
