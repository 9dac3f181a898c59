#include "mpo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "linalg.hpp"

namespace opdf::mpo {

namespace fs = std::filesystem;
using nlohmann::json;

MpoPlan plan(std::size_t rows, std::size_t cols, std::vector<std::size_t> in_dims,
             std::vector<std::size_t> out_dims,
             std::optional<std::size_t> bond_cap) {
  require(!in_dims.empty(), ErrKind::EmptyFactorization,
          "factorization needs at least one core");
  require(in_dims.size() == out_dims.size(), ErrKind::DimProductMismatch,
          "in_dims has ", in_dims.size(), " entries, out_dims has ",
          out_dims.size());
  std::size_t pi = 1, pj = 1;
  for (std::size_t d : in_dims) {
    require(d >= 1, ErrKind::DimProductMismatch, "in_dims entries must be >= 1");
    pi *= d;
  }
  for (std::size_t d : out_dims) {
    require(d >= 1, ErrKind::DimProductMismatch, "out_dims entries must be >= 1");
    pj *= d;
  }
  require(pi == rows, ErrKind::DimProductMismatch, "in_dims product ", pi,
          " != rows ", rows);
  require(pj == cols, ErrKind::DimProductMismatch, "out_dims product ", pj,
          " != cols ", cols);
  if (bond_cap)
    require(*bond_cap >= 1, ErrKind::DimProductMismatch, "bond_cap must be >= 1");

  const std::size_t n = in_dims.size();
  MpoPlan p;
  p.rows = rows;
  p.cols = cols;
  p.in_dims = std::move(in_dims);
  p.out_dims = std::move(out_dims);
  p.bond_cap = bond_cap;
  p.bond_dims.assign(n + 1, 1);
  for (std::size_t k = 1; k < n; ++k) {
    // d_k = min(prod_{m<=k} i_m j_m, prod_{m>k} i_m j_m)
    std::size_t left = 1, right = 1;
    for (std::size_t m = 0; m < k; ++m) left *= p.in_dims[m] * p.out_dims[m];
    for (std::size_t m = k; m < n; ++m) right *= p.in_dims[m] * p.out_dims[m];
    std::size_t d = std::min(left, right);
    if (bond_cap) d = std::min(d, *bond_cap);
    p.bond_dims[k] = d;
  }
  return p;
}

std::size_t planned_params(const MpoPlan& p) {
  std::size_t total = 0;
  for (std::size_t k = 0; k < p.core_count(); ++k)
    total += p.in_dims[k] * p.out_dims[k] * p.bond_dims[k] * p.bond_dims[k + 1];
  return total;
}

long long added_params(const MpoPlan& p) {
  return static_cast<long long>(planned_params(p)) -
         static_cast<long long>(p.rows) * static_cast<long long>(p.cols);
}

std::size_t pick_central_index(const std::vector<Tensor>& cores) {
  std::size_t best = 0;
  std::size_t best_count = 0;
  for (std::size_t k = 0; k < cores.size(); ++k) {
    if (cores[k].size() > best_count) {
      best_count = cores[k].size();
      best = k;
    }
  }
  return best + 1;
}

MpoFactors decompose(const Tensor& w, const MpoPlan& plan,
                     std::optional<double> tol, bool rebalance) {
  require(w.order() == 2, ErrKind::ShapeMismatch, "decompose expects a matrix");
  require(w.extent(0) == plan.rows && w.extent(1) == plan.cols,
          ErrKind::ShapeMismatch, "matrix is ", shape_str(w.shape()),
          " but the plan expects [", plan.rows, ",", plan.cols, "]");

  const std::size_t n = plan.core_count();

  // (i_1..i_n, j_1..j_n) -> (i_1, j_1, ..., i_n, j_n)
  Shape split_shape;
  split_shape.insert(split_shape.end(), plan.in_dims.begin(), plan.in_dims.end());
  split_shape.insert(split_shape.end(), plan.out_dims.begin(), plan.out_dims.end());
  Tensor t = reshape(w, split_shape);
  std::vector<std::size_t> interleave(2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    interleave[2 * k] = k;
    interleave[2 * k + 1] = n + k;
  }
  t = permute(t, interleave);

  MpoFactors f;
  f.plan = plan;
  f.cores.reserve(n);
  f.truncation.reserve(n - 1);

  // remaining element count of the carry past pair k
  std::size_t rest = 1;
  for (std::size_t k = 0; k < n; ++k) rest *= plan.in_dims[k] * plan.out_dims[k];

  Tensor carry = reshape(t, {1, rest});
  std::size_t d_prev = 1;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const std::size_t pair = plan.in_dims[k] * plan.out_dims[k];
    rest /= pair;
    Tensor m = reshape(carry, {d_prev * pair, rest});
    auto tr = linalg::truncated_svd(m, plan.bond_dims[k + 1], tol);
    const std::size_t d_k = tr.kept_rank;
    f.truncation.push_back(tr.epsilon);
    f.cores.push_back(
        reshape(tr.kept.u, {d_prev, plan.in_dims[k], plan.out_dims[k], d_k}));
    // carry = diag(s) * vt
    Tensor next = tr.kept.vt;
    for (std::size_t r = 0; r < d_k; ++r)
      for (std::size_t c = 0; c < rest; ++c) next[r * rest + c] *= tr.kept.s[r];
    carry = std::move(next);
    d_prev = d_k;
  }
  f.cores.push_back(
      reshape(carry, {d_prev, plan.in_dims[n - 1], plan.out_dims[n - 1], 1}));
  f.central_index = pick_central_index(f.cores);

  if (rebalance) {
    // rescale cores to a common Frobenius norm; the scale factors multiply
    // to one, so the chain product is preserved
    std::vector<double> norms(n);
    double log_sum = 0.0;
    bool ok = true;
    for (std::size_t k = 0; k < n; ++k) {
      norms[k] = frobenius_norm(f.cores[k]);
      if (norms[k] <= 0.0) ok = false;
      else log_sum += std::log(norms[k]);
    }
    if (ok) {
      const double target = std::exp(log_sum / static_cast<double>(n));
      for (std::size_t k = 0; k < n; ++k)
        f.cores[k] = opdf::scale(f.cores[k], target / norms[k]);
    }
  }
  return f;
}

Tensor reconstruct(const MpoFactors& f) {
  const std::size_t n = f.cores.size();
  require(n >= 1, ErrKind::EmptyFactorization, "no cores");
  for (const Tensor& c : f.cores)
    require(c.order() == 4, ErrKind::BondMismatch, "core is not 4-order");
  require(f.cores.front().extent(0) == 1 && f.cores.back().extent(3) == 1,
          ErrKind::BondMismatch, "terminal bonds must have extent 1");

  Tensor acc = f.cores[0];
  for (std::size_t k = 1; k < n; ++k) {
    require(acc.extent(acc.order() - 1) == f.cores[k].extent(0),
            ErrKind::BondMismatch, "bond extent ", acc.extent(acc.order() - 1),
            " of core ", k, " != ", f.cores[k].extent(0), " of core ", k + 1);
    const std::size_t last = acc.order() - 1;
    const std::size_t a_axes[1] = {last};
    const std::size_t b_axes[1] = {0};
    acc = contract(acc, f.cores[k], a_axes, b_axes);
  }
  // acc: (1, i_1, j_1, ..., i_n, j_n, 1)
  Shape inter(acc.shape().begin() + 1, acc.shape().end() - 1);
  acc = reshape(acc, inter);
  std::vector<std::size_t> to_blocks(2 * n);
  std::size_t rows = 1, cols = 1;
  for (std::size_t k = 0; k < n; ++k) {
    to_blocks[k] = 2 * k;
    to_blocks[n + k] = 2 * k + 1;
    rows *= inter[2 * k];
    cols *= inter[2 * k + 1];
  }
  acc = permute(acc, to_blocks);
  return reshape(acc, {rows, cols});
}

double error_bound(const MpoFactors& f) {
  double s = 0.0;
  for (double e : f.truncation) s += e * e;
  return std::sqrt(s);
}

CoreSplit split_cores(const MpoFactors& f) {
  require(!f.cores.empty(), ErrKind::EmptyFactorization, "no cores");
  require(f.central_index >= 1 && f.central_index <= f.cores.size(),
          ErrKind::BondMismatch, "central_index out of range");
  CoreSplit out;
  out.central_index = f.central_index;
  out.central = f.cores[f.central_index - 1];
  for (std::size_t k = 0; k < f.cores.size(); ++k)
    if (k + 1 != f.central_index) out.auxiliary.emplace_back(k + 1, f.cores[k]);
  return out;
}

std::pair<Tensor, Tensor> svd_overparam(const Tensor& w) {
  require(w.order() == 2, ErrKind::ShapeMismatch,
          "svd_overparam expects a matrix");
  linalg::SvdResult r = linalg::svd(w);
  const std::size_t rows = w.extent(0), cols = w.extent(1), rank = r.s.size();
  Tensor a({rows, rank});
  Tensor b({rank, cols});
  for (std::size_t k = 0; k < rank; ++k) {
    const double root = std::sqrt(r.s[k]);
    for (std::size_t i = 0; i < rows; ++i) a[i * rank + k] = r.u[i * rank + k] * root;
    for (std::size_t j = 0; j < cols; ++j) b[k * cols + j] = r.vt[k * cols + j] * root;
  }
  return {std::move(a), std::move(b)};
}

MpoFactors svd_overparam_factors(const Tensor& w) {
  auto [a, b] = svd_overparam(w);
  const std::size_t rows = w.extent(0), cols = w.extent(1);
  const std::size_t rank = a.extent(1);
  MpoFactors f;
  f.plan = plan(rows, cols, {rows, 1}, {1, cols});
  f.cores.push_back(reshape(a, {1, rows, 1, rank}));
  f.cores.push_back(reshape(b, {rank, 1, cols, 1}));
  f.truncation = {0.0};  // the full-rank split discards nothing
  f.central_index = pick_central_index(f.cores);
  return f;
}

void write_bundle(const std::string& dir, const MpoFactors& f) {
  fs::create_directories(dir);
  json manifest;
  manifest["source_shape"] = {f.plan.rows, f.plan.cols};
  manifest["in_dims"] = f.plan.in_dims;
  manifest["out_dims"] = f.plan.out_dims;
  std::vector<std::size_t> actual_bonds;
  actual_bonds.push_back(f.cores.front().extent(0));
  for (const Tensor& c : f.cores) actual_bonds.push_back(c.extent(3));
  manifest["bond_dims"] = actual_bonds;
  manifest["central_index"] = f.central_index;
  manifest["truncation"] = f.truncation;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < f.cores.size(); ++k) {
    std::string name = "core_" + std::to_string(k + 1) + ".tnsr";
    write_tnsr((fs::path(dir) / name).string(), f.cores[k]);
    names.push_back(std::move(name));
  }
  manifest["cores"] = names;
  std::ofstream os(fs::path(dir) / "manifest.json");
  require(os.good(), ErrKind::IoError, "cannot write manifest in ", dir);
  os << manifest.dump(2) << "\n";
}

MpoFactors read_bundle(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream is(mpath);
  require(is.good(), ErrKind::IoError, "cannot open ", mpath.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    fail(ErrKind::FormatError, "bad bundle manifest ", mpath.string(), ": ",
         e.what());
  }

  MpoFactors f;
  try {
    const auto shape = manifest.at("source_shape");
    std::vector<std::size_t> in_dims = manifest.at("in_dims");
    std::vector<std::size_t> out_dims = manifest.at("out_dims");
    f.plan = plan(shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(),
                  std::move(in_dims), std::move(out_dims));
    f.truncation = manifest.at("truncation").get<std::vector<double>>();
    f.central_index = manifest.at("central_index").get<std::size_t>();
    const std::vector<std::size_t> bonds = manifest.at("bond_dims");
    const std::vector<std::string> names = manifest.at("cores");
    require(names.size() == f.plan.core_count(), ErrKind::FormatError,
            "manifest lists ", names.size(), " cores, plan has ",
            f.plan.core_count());
    require(bonds.size() == names.size() + 1, ErrKind::FormatError,
            "manifest bond_dims length mismatch");
    for (std::size_t k = 0; k < names.size(); ++k) {
      Tensor core = read_tnsr((fs::path(dir) / names[k]).string());
      require(core.order() == 4, ErrKind::FormatError, "core ", names[k],
              " is not 4-order");
      const Shape expect = {bonds[k], f.plan.in_dims[k], f.plan.out_dims[k],
                            bonds[k + 1]};
      require(core.shape() == expect, ErrKind::FormatError, "core ", names[k],
              " is ", shape_str(core.shape()), ", manifest expects ",
              shape_str(expect));
      f.cores.push_back(std::move(core));
    }
    require(f.truncation.size() + 1 == names.size() || names.size() == 1,
            ErrKind::FormatError, "manifest truncation length mismatch");
    require(f.central_index >= 1 && f.central_index <= names.size(),
            ErrKind::FormatError, "manifest central_index out of range");
  } catch (const json::exception& e) {
    fail(ErrKind::FormatError, "bad bundle manifest ", mpath.string(), ": ",
         e.what());
  }
  return f;
}

}  // namespace opdf::mpo
