#include "linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace opdf::linalg {

namespace {

constexpr double kOffDiagTol = 1e-12;
constexpr int kMaxSweeps = 100;

struct ColumnMajor {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;  // column-major working copy

  double* col(std::size_t j) { return a.data() + j * rows; }
  const double* col(std::size_t j) const { return a.data() + j * rows; }
};

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

// One-sided Jacobi on the columns of b (rows >= cols expected for
// efficiency, not required for correctness). On return the columns of b are
// mutually orthogonal and v holds the accumulated rotations, so that
// original_b = b * v^T with v orthogonal.
void jacobi_sweep_loop(ColumnMajor& b, ColumnMajor& v) {
  const std::size_t n = b.cols;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double worst = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* bp = b.col(p);
        double* bq = b.col(q);
        const double app = dot(bp, bp, b.rows);
        const double aqq = dot(bq, bq, b.rows);
        const double apq = dot(bp, bq, b.rows);
        if (app == 0.0 || aqq == 0.0) continue;
        const double rel = std::abs(apq) / std::sqrt(app * aqq);
        worst = std::max(worst, rel);
        if (rel <= kOffDiagTol) continue;

        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < b.rows; ++i) {
          const double x = bp[i], y = bq[i];
          bp[i] = c * x - s * y;
          bq[i] = s * x + c * y;
        }
        double* vp = v.col(p);
        double* vq = v.col(q);
        for (std::size_t i = 0; i < v.rows; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (worst <= kOffDiagTol) return;
  }
  fail(ErrKind::ConvergenceFailure,
       "Jacobi SVD did not reach off-diagonal tolerance ", kOffDiagTol,
       " within ", kMaxSweeps, " sweeps");
}

// Fills column j of u with a unit vector orthogonal to columns 0..j-1,
// derived deterministically from the canonical basis.
void complete_basis_column(ColumnMajor& u, std::size_t j) {
  const std::size_t m = u.rows;
  std::vector<double> cand(m);
  for (std::size_t seed = 0; seed < m; ++seed) {
    std::fill(cand.begin(), cand.end(), 0.0);
    cand[seed] = 1.0;
    for (std::size_t k = 0; k < j; ++k) {
      const double proj = dot(cand.data(), u.col(k), m);
      const double* uk = u.col(k);
      for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * uk[i];
    }
    const double nrm = std::sqrt(dot(cand.data(), cand.data(), m));
    if (nrm > 0.5) {
      double* uj = u.col(j);
      for (std::size_t i = 0; i < m; ++i) uj[i] = cand[i] / nrm;
      return;
    }
  }
  fail(ErrKind::ConvergenceFailure, "orthonormal completion failed");
}

// Core kernel for rows >= cols. Returns u (rows x cols), s (cols), vt
// (cols x cols); sign convention applied by the caller.
void svd_tall(const Tensor& m, ColumnMajor& u, std::vector<double>& s,
              ColumnMajor& vt) {
  const std::size_t rows = m.extent(0), cols = m.extent(1);

  ColumnMajor b{rows, cols, std::vector<double>(rows * cols)};
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) b.col(j)[i] = m[i * cols + j];

  ColumnMajor v{cols, cols, std::vector<double>(cols * cols, 0.0)};
  for (std::size_t j = 0; j < cols; ++j) v.col(j)[j] = 1.0;

  jacobi_sweep_loop(b, v);

  std::vector<double> norms(cols);
  for (std::size_t j = 0; j < cols; ++j)
    norms[j] = std::sqrt(dot(b.col(j), b.col(j), rows));

  // sort nonincreasing; stable on ties for determinism
  std::vector<std::size_t> ord(cols);
  std::iota(ord.begin(), ord.end(), 0);
  std::stable_sort(ord.begin(), ord.end(), [&](std::size_t x, std::size_t y) {
    return norms[x] > norms[y];
  });

  u = ColumnMajor{rows, cols, std::vector<double>(rows * cols, 0.0)};
  vt = ColumnMajor{cols, cols, std::vector<double>(cols * cols, 0.0)};
  s.assign(cols, 0.0);

  const double smax = cols ? norms[ord[0]] : 0.0;
  const double zero_thr =
      smax * static_cast<double>(std::max(rows, cols)) *
      std::numeric_limits<double>::epsilon();

  for (std::size_t j = 0; j < cols; ++j) {
    const std::size_t src = ord[j];
    s[j] = norms[src];
    // vt row j = v column src
    for (std::size_t i = 0; i < cols; ++i) vt.col(i)[j] = v.col(src)[i];
    if (s[j] > zero_thr && s[j] > 0.0) {
      const double inv = 1.0 / s[j];
      const double* bsrc = b.col(src);
      double* uj = u.col(j);
      for (std::size_t i = 0; i < rows; ++i) uj[i] = bsrc[i] * inv;
    } else {
      complete_basis_column(u, j);
    }
  }
}

}  // namespace

Tensor SvdResult::reconstruct() const {
  const std::size_t rows = u.extent(0), r = u.extent(1), cols = vt.extent(1);
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < r; ++k) {
      const double w = u[i * r + k] * s[k];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < cols; ++j)
        out[i * cols + j] += w * vt[k * cols + j];
    }
  return out;
}

SvdResult svd(const Tensor& m) {
  require(m.order() == 2, ErrKind::ExtentMismatch, "svd expects a 2-order tensor");
  require(m.all_finite(), ErrKind::ExtentMismatch, "svd input has non-finite entries");
  const std::size_t rows = m.extent(0), cols = m.extent(1);

  ColumnMajor ucm, vtcm;
  std::vector<double> s;
  bool transposed = false;
  if (rows >= cols) {
    svd_tall(m, ucm, s, vtcm);
  } else {
    svd_tall(transpose(m), ucm, s, vtcm);
    transposed = true;
  }

  const std::size_t r = s.size();
  SvdResult out;
  out.s = std::move(s);
  if (!transposed) {
    Tensor u({rows, r});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < r; ++j) u[i * r + j] = ucm.col(j)[i];
    Tensor vt({r, cols});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < cols; ++j) vt[i * cols + j] = vtcm.col(j)[i];
    out.u = std::move(u);
    out.vt = std::move(vt);
  } else {
    // m^T = U' S V'^T  =>  m = V' S U'^T
    Tensor u({rows, r});  // rows here = original rows = cols of m^T
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < r; ++j) u[i * r + j] = vtcm.col(i)[j];
    Tensor vt({r, cols});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < cols; ++j) vt[i * cols + j] = ucm.col(i)[j];
    out.u = std::move(u);
    out.vt = std::move(vt);
  }

  // sign convention: largest-magnitude entry of each u column positive,
  // ties broken by lowest row index
  for (std::size_t j = 0; j < r; ++j) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double a = std::abs(out.u[i * r + j]);
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (out.u[best * r + j] < 0.0) {
      for (std::size_t i = 0; i < rows; ++i) out.u[i * r + j] = -out.u[i * r + j];
      for (std::size_t i = 0; i < cols; ++i)
        out.vt[j * cols + i] = -out.vt[j * cols + i];
    }
  }
  return out;
}

TruncatedSvd truncated_svd(const Tensor& m, std::optional<std::size_t> max_rank,
                           std::optional<double> tol) {
  require(max_rank.has_value() || tol.has_value(), ErrKind::ExtentMismatch,
          "truncated_svd needs max_rank and/or tol");
  if (max_rank) {
    require(*max_rank >= 1, ErrKind::ExtentMismatch, "max_rank must be >= 1");
  }
  SvdResult full = svd(m);
  const std::size_t r = full.s.size();

  // suffix[i] = sum of s[j]^2 for j >= i
  std::vector<double> suffix(r + 1, 0.0);
  for (std::size_t i = r; i-- > 0;)
    suffix[i] = suffix[i + 1] + full.s[i] * full.s[i];

  const double smax = r ? full.s[0] : 0.0;
  const double zero_thr =
      smax * static_cast<double>(std::max(m.extent(0), m.extent(1))) *
      std::numeric_limits<double>::epsilon();

  std::size_t keep = r;
  while (keep > 0 && full.s[keep - 1] <= zero_thr) --keep;
  if (max_rank) keep = std::min(keep, *max_rank);
  if (tol) {
    std::size_t k = 0;
    while (k < keep && std::sqrt(suffix[k]) > *tol) ++k;
    keep = k;
  }
  keep = std::max<std::size_t>(keep, 1);

  TruncatedSvd out;
  out.kept_rank = keep;
  out.epsilon = std::sqrt(suffix[keep]);
  out.kept.s.assign(full.s.begin(), full.s.begin() + keep);

  const std::size_t rows = full.u.extent(0), cols = full.vt.extent(1);
  Tensor u({rows, keep});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < keep; ++j) u[i * keep + j] = full.u[i * r + j];
  Tensor vt({keep, cols});
  for (std::size_t i = 0; i < keep; ++i)
    for (std::size_t j = 0; j < cols; ++j) vt[i * cols + j] = full.vt[i * cols + j];
  out.kept.u = std::move(u);
  out.kept.vt = std::move(vt);
  return out;
}

}  // namespace opdf::linalg
